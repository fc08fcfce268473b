from __future__ import annotations


class CellFreeError(Exception):
    """Base class for every error raised by the simulator."""


class ConfigurationError(CellFreeError, ValueError):
    """Invalid parameters or inputs that do not match the requested operation."""


class NumericalError(CellFreeError, ArithmeticError):
    """Factorization, quadrature or convex-solver failure."""


class InfeasibleError(CellFreeError):
    """A power allocation problem has no solution for the given inputs."""


class ConvergenceError(CellFreeError):
    """An iterative algorithm hit its iteration cap."""

    def __init__(self, message: str, iterations: int):
        super().__init__(message)
        self.iterations = iterations

    def __reduce__(self):
        return type(self), (str(self), self.iterations)


class SetupError(CellFreeError):
    """Wraps an error raised while simulating one network setup."""

    def __init__(self, setup_index: int, cause: Exception):
        super().__init__(f"setup {setup_index}: {type(cause).__name__}: {cause}")
        self.setup_index = setup_index
        self.cause = cause

    def __reduce__(self):
        return type(self), (self.setup_index, self.cause)
