from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np

from Algorithms.base import BasePowerAlgorithm, PowerVector
from Algorithms.coefficients import SinrCoefficients
from services.errors import ConfigurationError, ConvergenceError

logger = logging.getLogger(__name__)


def positive_coupling(c: np.ndarray) -> np.ndarray:
    """Copy of c whose zero off-diagonal entries are lifted to 1e-12 max(c)."""
    c = c.copy()
    off = ~np.eye(c.shape[0], dtype=bool)
    zeros = off & (c <= 0)
    if np.any(zeros):
        lift = 1e-12 * (c.max() if c.max() > 0 else 1.0)
        logger.warning("perturbing %d zero interference coefficients by %.3g", int(zeros.sum()), lift)
        c[zeros] = lift
    return c


class UplinkMaxMinFixedPoint(BasePowerAlgorithm):
    """Max-min fairness by the normalized fixed-point iteration p <- p / SINR(p)."""

    name = "UplinkMaxMinFixedPoint"
    forms = ("ul-generic",)

    def _normalize(self, coeffs: SinrCoefficients, x: np.ndarray) -> np.ndarray:
        return coeffs.max_power * x / x.max()

    def solve(self, coeffs: SinrCoefficients, init=None) -> PowerVector:
        self._check_form(coeffs)
        if np.any(coeffs.b <= 0):
            raise ConfigurationError("max-min fairness needs a positive signal gain for every UE")

        work = replace(coeffs, c=positive_coupling(coeffs.c))
        x = self._normalize(work, np.ones(coeffs.num_ues) if init is None else np.asarray(init, dtype=float))
        history = []
        for it in range(1, self.max_iter + 1):
            sinr = work.sinr(x)
            history.append(float(sinr.min()))
            self._record(it, sinr.min(), sinr)
            if sinr.max() - sinr.min() <= self.tol:
                return PowerVector(x, float(sinr.min()), it, True, self.name, coeffs.sinr(x), history)
            x = self._normalize(work, x / sinr)
        raise ConvergenceError(f"{self.name} did not equalize the SINRs in {self.max_iter} iterations", self.max_iter)
