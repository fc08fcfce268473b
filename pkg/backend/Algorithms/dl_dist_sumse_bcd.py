from __future__ import annotations

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

from Algorithms.coefficients import SinrCoefficients
from Algorithms.dl_cent_sumse_bcd import solve_convex
from Algorithms.dl_dist_maxmin_bisection import LinkIndex, equal_split
from Algorithms.ul_sumse_bcd import UplinkSumSEBCD
from services.errors import NumericalError


class DistributedDownlinkSumSEBCD(UplinkSumSEBCD):
    """Sum-SE block coordinate descent over per-link square-root powers.

    The power step is a convex QCQP with one ball constraint per AP.
    """

    name = "DistributedDownlinkSumSEBCD"
    forms = ("dl-distributed",)

    def _full(self, coeffs: SinrCoefficients) -> np.ndarray:
        return equal_split(coeffs)

    def _project(self, coeffs: SinrCoefficients, x: np.ndarray) -> np.ndarray:
        usage = (x**2 * coeffs.serving).sum(axis=0)
        scale = np.sqrt(np.divide(coeffs.max_power, usage, out=np.zeros(usage.shape), where=usage > 0))
        return x * scale[None, :] * coeffs.serving

    def _weights(self, coeffs: SinrCoefficients, x: np.ndarray):
        signal = (coeffs.b * x).sum(axis=1)
        coherent = np.abs(np.einsum("kil,il->ki", coeffs.mu, x)) ** 2
        spread = np.einsum("kil,il->ki", coeffs.var, x**2)
        total = (coherent + spread).sum(axis=1) + coeffs.noise
        u = signal / total
        e = u**2 * total - 2.0 * u * signal + 1.0
        return u, 1.0 / e

    def _update(self, coeffs: SinrCoefficients, x: np.ndarray, u: np.ndarray, d: np.ndarray) -> np.ndarray:
        links = LinkIndex(coeffs.serving)
        wu = d * u**2
        # sum_k wu_k sum_i x_i^T C_ki x_i = ||F x||^2
        F = sp.vstack([links.interference_rows(coeffs, k, float(wu[k])) for k in range(coeffs.num_ues) if wu[k] > 0])
        lin = sum((d[k] * u[k]) * links.signal_row(coeffs, k) for k in range(coeffs.num_ues))

        root = cp.Variable(links.size, nonneg=True)
        constraints = [cp.sum_squares(root[members]) <= coeffs.max_power for members in links.ap_groups() if members.size]
        problem = cp.Problem(cp.Minimize(cp.sum_squares(F @ root) - 2 * lin @ root), constraints)
        status = solve_convex(problem, self.name)
        if status not in ("optimal", "optimal_inaccurate") or root.value is None:
            raise NumericalError(f"{self.name}: power subproblem ended with status {status}")
        values = links.to_matrix(np.clip(root.value, 0.0, None))
        usage = (values**2).sum(axis=0)
        over = usage > coeffs.max_power
        if np.any(over):
            values[:, over] *= np.sqrt(coeffs.max_power / usage[over])[None, :]
        return values
