"""Batched Hermitian linear algebra shared by the estimation and processing modules.

All functions operate on stacks of matrices: the last two axes hold the matrix
and every leading axis is a batch axis.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.linalg import solve_triangular

from services.errors import NumericalError

logger = logging.getLogger(__name__)


def hermitian(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A)
    return 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))


def herm(A: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(A, -1, -2))


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Samples of CN(0, 1)."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _cholesky(A: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(hermitian(A))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("matrix is not Hermitian positive definite") from exc


def hermitian_solve(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve A X = B for Hermitian positive-definite A via its Cholesky factor.

    B may be a stack of vectors (one axis fewer than A) or of matrices.
    Both triangular solves broadcast over the batch axes (scipy 1.15 or later).
    """
    A = np.asarray(A)
    B = np.asarray(B)
    vector = B.ndim == A.ndim - 1
    if vector:
        B = B[..., None]
    chol = _cholesky(A)
    y = solve_triangular(chol, B, lower=True)
    x = solve_triangular(herm(chol), y, lower=False)
    return x[..., 0] if vector else x


def hermitian_inverse(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A)
    chol = _cholesky(A)
    eye = np.broadcast_to(np.eye(A.shape[-1], dtype=chol.dtype), A.shape)
    chol_inv = solve_triangular(chol, eye, lower=True)
    return hermitian(herm(chol_inv) @ chol_inv)


def psd_sqrt(A: np.ndarray) -> np.ndarray:
    """Hermitian square root S with S S^H = A; negative eigenvalues are clipped."""
    w, V = np.linalg.eigh(hermitian(A))
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)[..., None, :]) @ herm(V)


def repair_psd(A: np.ndarray, rel_tol: float = 1e-9) -> np.ndarray:
    """Clip eigenvalues below -rel_tol * trace and restore the original trace."""
    A = hermitian(A)
    w, V = np.linalg.eigh(A)
    trace = np.real(np.trace(A, axis1=-2, axis2=-1))
    bad = w.min(axis=-1) < -rel_tol * np.abs(trace)
    if not np.any(bad):
        return A
    logger.warning("PSD repair applied to %d matrices", int(np.count_nonzero(bad)))
    clipped = np.clip(w, 0.0, None)
    scale = np.where(clipped.sum(axis=-1) > 0, trace / np.maximum(clipped.sum(axis=-1), 1e-300), 1.0)
    fixed = (V * (clipped * scale[..., None])[..., None, :]) @ herm(V)
    out = np.where(bad[..., None, None], fixed, A)
    return hermitian(out)


def fourth_moment(A: np.ndarray, B: np.ndarray) -> float:
    """E{|x^H B x|^2} for x ~ CN(0, A)."""
    BA = B @ A
    return float(np.abs(np.trace(BA)) ** 2 + np.real(np.trace(BA @ herm(B) @ A)))
