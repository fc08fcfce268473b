from __future__ import annotations

import logging
import math

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

from Algorithms.base import BasePowerAlgorithm, PowerVector
from Algorithms.coefficients import SinrCoefficients
from Algorithms.dl_cent_sumse_bcd import SOLVED, solve_convex
from services.errors import ConfigurationError, NumericalError

logger = logging.getLogger(__name__)


class LinkIndex:
    """Flat indexing of the served (UE, AP) pairs, the only non-zero powers."""

    def __init__(self, serving: np.ndarray):
        self.serving = serving
        self.ues, self.aps = np.nonzero(serving)
        self.size = self.ues.size

    def to_matrix(self, flat: np.ndarray) -> np.ndarray:
        out = np.zeros(self.serving.shape)
        out[self.ues, self.aps] = flat
        return out

    def to_flat(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[self.ues, self.aps]

    def interference_rows(self, coeffs: SinrCoefficients, k: int, weight: float = 1.0) -> sp.csr_matrix:
        """Rows whose squared norm at x is weight * (sum_i x_i^T C_ki x_i)."""
        K = coeffs.num_ues
        mu = coeffs.mu[k, self.ues, self.aps] * math.sqrt(weight)
        coherent = sp.csr_matrix((np.concatenate([mu.real, mu.imag]), (np.concatenate([self.ues, self.ues + K]), np.tile(np.arange(self.size), 2))), shape=(2 * K, self.size))
        spread = sp.diags(np.sqrt(weight * coeffs.var[k, self.ues, self.aps]))
        return sp.vstack([coherent, spread]).tocsr()

    def signal_row(self, coeffs: SinrCoefficients, k: int) -> np.ndarray:
        row = np.zeros(self.size)
        own = self.ues == k
        row[own] = coeffs.b[k, self.aps[own]]
        return row

    def ap_groups(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.aps == l) for l in range(self.serving.shape[1])]


def equal_split(coeffs: SinrCoefficients) -> np.ndarray:
    """Square-root powers spending rho_max evenly over the UEs of every AP."""
    load = coeffs.serving.sum(axis=0)
    per_link = np.divide(coeffs.max_power, load, out=np.zeros(load.shape), where=load > 0)
    return np.sqrt(per_link)[None, :] * coeffs.serving


class DistributedDownlinkMaxMinBisection(BasePowerAlgorithm):
    """Max-min fairness over per-link powers by bisection on the common SINR target.

    Each feasibility test is a second-order cone program minimizing the total
    power; the SINR constraint of UE k, scaled by its noise level sigma_k, reads
    ||A_k x / sigma_k, 1|| <= sqrt((1+t)/t) b_k^T x / sigma_k. The lower end of
    the bracket only moves to targets whose solution passes a direct SINR and
    per-AP power check.
    """

    name = "DistributedDownlinkMaxMinBisection"
    forms = ("dl-distributed",)
    certify_rtol = 1e-6

    def __init__(self, tol: float = 1e-5, max_iter: int = 200):
        super().__init__(tol, max_iter)

    def upper_bound(self, coeffs: SinrCoefficients) -> float:
        sizes = coeffs.serving.sum(axis=1)
        return float(np.min(sizes * coeffs.max_power * (coeffs.b**2).sum(axis=1) / coeffs.noise))

    def _build(self, coeffs: SinrCoefficients, links: LinkIndex):
        x = cp.Variable(links.size, nonneg=True)
        slack = cp.Parameter(nonneg=True)
        constraints = []
        for k in range(coeffs.num_ues):
            scale = 1.0 / math.sqrt(coeffs.noise[k])
            rows = links.interference_rows(coeffs, k, scale**2)
            stacked = cp.hstack([rows @ x, np.ones(1)])
            constraints.append(cp.SOC(slack * ((scale * links.signal_row(coeffs, k)) @ x), stacked))
        for members in links.ap_groups():
            if members.size:
                constraints.append(cp.norm(x[members]) <= math.sqrt(coeffs.max_power))
        return cp.Problem(cp.Minimize(cp.sum_squares(x)), constraints), x, slack

    def _certify(self, coeffs: SinrCoefficients, links: LinkIndex, flat, target: float):
        """Solver point pulled inside the per-AP limits, or None if it misses the target."""
        if flat is None:
            return None
        values = links.to_matrix(np.clip(flat, 0.0, None))
        usage = (values**2 * coeffs.serving).sum(axis=0)
        shrink = np.sqrt(np.divide(coeffs.max_power, usage, out=np.ones(usage.shape), where=usage > coeffs.max_power))
        values = values * np.minimum(shrink, 1.0)[None, :]
        if coeffs.sinr(values).min() < target * (1.0 - self.certify_rtol):
            return None
        return values

    def solve(self, coeffs: SinrCoefficients, init=None) -> PowerVector:
        self._check_form(coeffs)
        if np.any(coeffs.b.sum(axis=1) <= 0):
            raise ConfigurationError("every UE needs a positive signal coefficient at a serving AP")
        links = LinkIndex(coeffs.serving)
        problem, x, slack = self._build(coeffs, links)

        lower, upper = 0.0, self.upper_bound(coeffs)
        best = None
        it = 0
        while upper - lower > self.tol and it < self.max_iter:
            it += 1
            target = 0.5 * (lower + upper)
            slack.value = math.sqrt((1.0 + target) / target)
            try:
                status = solve_convex(problem, self.name)
            except NumericalError as exc:
                if best is None:
                    raise
                # near the optimum the cone is barely feasible
                logger.warning("%s: no certificate at target %.6g (%s), keeping %.6g", self.name, target, exc, lower)
                upper = target
                self._record(it, lower, np.array([lower, upper]))
                continue

            candidate = self._certify(coeffs, links, x.value, target) if status in SOLVED else None
            if candidate is not None:
                lower, best = target, candidate
            elif status in SOLVED or status in ("infeasible", "infeasible_inaccurate") or best is not None:
                upper = target
            else:
                raise NumericalError(f"{self.name}: cone program ended with status {status}")
            self._record(it, lower, np.array([lower, upper]))

        if best is None:
            raise NumericalError(f"{self.name}: no feasible SINR target above zero was found")
        sinr = coeffs.sinr(best)
        return PowerVector(best, float(sinr.min()), it, upper - lower <= self.tol, self.name, sinr, [lower])
