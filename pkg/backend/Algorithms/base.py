from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List

import numpy as np

from Algorithms.coefficients import SinrCoefficients
from services.errors import ConfigurationError

logger = logging.getLogger(__name__)

TRACE_FIELDS = ("algorithm", "iteration", "objective", "min_sinr", "max_sinr")


@dataclass
class PowerVector:
    values: np.ndarray  # p, rho (K,) or per-link square roots (K, L)
    objective: float
    iterations: int
    converged: bool
    algorithm: str
    sinr: np.ndarray | None = None
    history: List[float] = field(default_factory=list)

    @property
    def powers(self) -> np.ndarray:
        """Powers in watts; squares the square-root parameterization of per-link powers."""
        return self.values**2 if self.values.ndim == 2 else self.values

    def to_dict(self) -> Dict[str, Any]:
        return {
            "algorithm": self.algorithm,
            "powers": self.powers.tolist(),
            "objective": None if np.isnan(self.objective) else float(self.objective),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "min_sinr": None if self.sinr is None else float(self.sinr.min()),
            "max_sinr": None if self.sinr is None else float(self.sinr.max()),
        }


class BasePowerAlgorithm:

    name = "BasePowerAlgorithm"
    forms: tuple = ()

    def __init__(self, tol: float = 1e-5, max_iter: int = 10_000):
        self.tol = tol
        self.max_iter = max_iter
        self.trace: List[Dict[str, Any]] = []

    def solve(self, coeffs: SinrCoefficients, init=None) -> PowerVector:
        raise NotImplementedError("Implement in subclass")

    def _check_form(self, coeffs: SinrCoefficients):
        if coeffs.form not in self.forms:
            raise ConfigurationError(f"{self.name} does not handle {coeffs.form} coefficients")

    def _record(self, iteration: int, objective: float, sinr: np.ndarray):
        row = {
            "algorithm": self.name,
            "iteration": iteration,
            "objective": float(objective),
            "min_sinr": float(np.min(sinr)),
            "max_sinr": float(np.max(sinr)),
        }
        logger.debug("%(algorithm)s it=%(iteration)d obj=%(objective).6g min=%(min_sinr).4g max=%(max_sinr).4g", row)
        self.trace.append(row)


def write_trace(rows: List[Dict[str, Any]], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    return path
