from __future__ import annotations

import logging

import numpy as np

from Algorithms.base import BasePowerAlgorithm, PowerVector
from Algorithms.coefficients import SinrCoefficients
from services.errors import ConfigurationError, ConvergenceError

logger = logging.getLogger(__name__)


def wmmse_objective(sinr: np.ndarray) -> float:
    """sum_k (d_k e_k - ln d_k) at the optimal receive scalars and weights."""
    return float(sinr.size - np.sum(np.log1p(sinr)))


class UplinkSumSEBCD(BasePowerAlgorithm):
    """Local sum-SE maximization by block coordinate descent on the weighted MMSE reformulation.

    Each iteration updates the receive scalars u, the weights d = 1/e and then
    the powers; the objective never increases.
    """

    name = "UplinkSumSEBCD"
    forms = ("ul-generic",)

    def __init__(self, tol: float = 1e-6, max_iter: int = 1000, init: str = "full", seed: int | None = None):
        super().__init__(tol, max_iter)
        if init not in ("full", "random"):
            raise ConfigurationError(f"unknown initialization {init!r}")
        self.init = init
        self.seed = seed

    # ---------- per-form hooks ----------

    def _full(self, coeffs: SinrCoefficients) -> np.ndarray:
        return np.full(coeffs.num_ues, coeffs.max_power)

    def _project(self, coeffs: SinrCoefficients, x: np.ndarray) -> np.ndarray:
        """Scale a non-negative point onto the boundary of the feasible set."""
        return coeffs.max_power * x / x.max()

    def _weights(self, coeffs: SinrCoefficients, x: np.ndarray):
        signal = coeffs.b * x
        total = signal + coeffs.c @ x + coeffs.noise
        u = np.sqrt(signal) / total
        e = u**2 * total - 2.0 * u * np.sqrt(signal) + 1.0
        return u, 1.0 / e

    def _update(self, coeffs: SinrCoefficients, x: np.ndarray, u: np.ndarray, d: np.ndarray) -> np.ndarray:
        wu = d * u**2
        own = wu * coeffs.b
        denominator = own + coeffs.c.T @ wu
        candidate = np.divide(d**2 * u**2 * coeffs.b, denominator**2, out=np.zeros_like(own), where=denominator > 0)
        return np.minimum(coeffs.max_power, candidate)

    # ---------- driver ----------

    def _initial(self, coeffs: SinrCoefficients, init) -> np.ndarray:
        if init is not None:
            x = np.asarray(init, dtype=float)
            if not coeffs.feasible(x):
                raise ConfigurationError(f"{self.name}: initial point violates the power constraints")
            return x
        if self.init == "random":
            rng = np.random.default_rng(self.seed)
            template = self._full(coeffs)
            return self._project(coeffs, rng.uniform(0.0, 1.0, template.shape) * (template > 0))
        return self._full(coeffs)

    def solve(self, coeffs: SinrCoefficients, init=None) -> PowerVector:
        self._check_form(coeffs)
        x = self._initial(coeffs, init)
        sinr = coeffs.sinr(x)
        objective = wmmse_objective(sinr)
        history = [objective]
        self._record(0, objective, sinr)

        for it in range(1, self.max_iter + 1):
            u, d = self._weights(coeffs, x)
            candidate = self._update(coeffs, x, u, d)
            candidate_sinr = coeffs.sinr(candidate)
            candidate_objective = wmmse_objective(candidate_sinr)
            improvement = objective - candidate_objective
            self._record(it, candidate_objective, candidate_sinr)

            if improvement <= 0:
                return PowerVector(x, objective, it, True, self.name, sinr, history)
            x, sinr, objective = candidate, candidate_sinr, candidate_objective
            history.append(objective)
            if improvement < self.tol * max(abs(objective), 1.0):
                return PowerVector(x, objective, it, True, self.name, sinr, history)
        raise ConvergenceError(f"{self.name} hit the iteration cap", self.max_iter)
