from __future__ import annotations

import logging

import cvxpy as cp
import numpy as np

from Algorithms.coefficients import SinrCoefficients
from Algorithms.ul_sumse_bcd import UplinkSumSEBCD
from services.errors import NumericalError

logger = logging.getLogger(__name__)

SOLVED = ("optimal", "optimal_inaccurate")
FALLBACK_SOLVERS = ("SCS",)


def solve_convex(problem: cp.Problem, label: str, fallbacks=FALLBACK_SOLVERS):
    """Solve with cvxpy's default solver, then with each installed fallback, before giving up."""
    try:
        problem.solve()
        return problem.status
    except cp.error.SolverError as exc:
        failure = exc
    installed = set(cp.installed_solvers())
    for solver in fallbacks:
        if solver not in installed:
            continue
        logger.warning("%s: default solver failed (%s), retrying with %s", label, failure, solver)
        try:
            problem.solve(solver=solver)
            return problem.status
        except cp.error.SolverError as exc:
            failure = exc
    raise NumericalError(f"{label}: convex solver failed: {failure}") from failure


class CentralizedDownlinkSumSEBCD(UplinkSumSEBCD):
    """Sum-SE block coordinate descent with per-AP power limits.

    The power step is a convex quadratic program in x = sqrt(rho) with
    constraints that are linear in rho, solved with cvxpy.
    """

    name = "CentralizedDownlinkSumSEBCD"
    forms = ("dl-centralized",)

    def _full(self, coeffs: SinrCoefficients) -> np.ndarray:
        return self._project(coeffs, np.ones(coeffs.num_ues))

    def _project(self, coeffs: SinrCoefficients, x: np.ndarray) -> np.ndarray:
        return coeffs.max_power * x / coeffs.usage(x).max()

    def _update(self, coeffs: SinrCoefficients, x: np.ndarray, u: np.ndarray, d: np.ndarray) -> np.ndarray:
        wu = d * u**2
        quad = wu * coeffs.b + coeffs.c.T @ wu
        lin = d * u * np.sqrt(coeffs.b)
        load = (coeffs.share * coeffs.serving).T  # (L, K)

        root = cp.Variable(coeffs.num_ues, nonneg=True)
        problem = cp.Problem(
            cp.Minimize(quad @ cp.square(root) - 2 * lin @ root),
            [load @ cp.square(root) <= coeffs.max_power],
        )
        status = solve_convex(problem, self.name)
        if status not in SOLVED or root.value is None:
            raise NumericalError(f"{self.name}: power subproblem ended with status {status}")
        rho = np.clip(root.value, 0.0, None) ** 2
        # solver tolerance can leave the limit slightly exceeded
        peak = coeffs.usage(rho).max()
        return rho * min(1.0, coeffs.max_power / peak) if peak > 0 else rho
