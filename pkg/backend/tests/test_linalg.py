import logging

import numpy as np
import pytest

from services.errors import NumericalError
from services.linalg import (
    complex_normal,
    fourth_moment,
    hermitian,
    hermitian_inverse,
    hermitian_solve,
    psd_sqrt,
    repair_psd,
)


def _hpd(rng, batch, n):
    X = complex_normal(rng, batch + (n, n))
    return X @ np.conj(np.swapaxes(X, -1, -2)) + 0.1 * np.eye(n)


def test_complex_normal_has_unit_variance(rng):
    z = complex_normal(rng, 200_000)
    assert np.mean(np.abs(z) ** 2) == pytest.approx(1.0, rel=0.02)
    assert abs(np.mean(z)) < 0.01


def test_hermitian_solve_matches_dense_solve(rng):
    A = _hpd(rng, (5,), 4)
    B = complex_normal(rng, (5, 4, 3))
    np.testing.assert_allclose(hermitian_solve(A, B), np.linalg.solve(A, B), rtol=1e-9, atol=1e-12)


def test_hermitian_solve_accepts_vectors(rng):
    A = _hpd(rng, (3,), 4)
    b = complex_normal(rng, (3, 4))
    x = hermitian_solve(A, b)
    np.testing.assert_allclose(np.einsum("nab,nb->na", A, x), b, rtol=1e-9, atol=1e-12)


def test_hermitian_solve_rejects_indefinite_matrix():
    with pytest.raises(NumericalError):
        hermitian_solve(-np.eye(3), np.ones(3))


def test_hermitian_inverse(rng):
    A = _hpd(rng, (2,), 5)
    np.testing.assert_allclose(hermitian_inverse(A) @ A, np.broadcast_to(np.eye(5), A.shape), atol=1e-9)


def test_psd_sqrt_squares_back(rng):
    A = _hpd(rng, (4,), 3)
    S = psd_sqrt(A)
    np.testing.assert_allclose(S @ S, A, rtol=1e-9, atol=1e-10)
    np.testing.assert_allclose(S, hermitian(S), atol=1e-12)


def test_repair_psd_clips_negative_eigenvalues_and_keeps_trace(rng, caplog):
    V, _ = np.linalg.qr(complex_normal(rng, (3, 3)))
    A = (V * np.array([1.0, 0.5, -0.01])) @ np.conj(V.T)
    with caplog.at_level(logging.WARNING):
        fixed = repair_psd(A)
    assert "PSD repair" in caplog.text
    assert np.linalg.eigvalsh(fixed).min() >= -1e-12
    assert np.real(np.trace(fixed)) == pytest.approx(np.real(np.trace(A)))


def test_repair_psd_leaves_valid_matrices_alone(rng):
    A = _hpd(rng, (), 3)
    np.testing.assert_allclose(repair_psd(A), hermitian(A))


def test_fourth_moment_matches_sampling(rng):
    A = _hpd(rng, (), 4)
    B = complex_normal(rng, (4, 4))
    x = complex_normal(rng, (200_000, 4)) @ psd_sqrt(A).T
    sampled = np.mean(np.abs(np.einsum("na,ab,nb->n", np.conj(x), B, x)) ** 2)
    assert sampled == pytest.approx(fourth_moment(A, B), rel=0.03)


@pytest.mark.slow
def test_fourth_moment_matches_sampling_tightly():
    rng = np.random.default_rng(99)
    A = _hpd(rng, (), 4)
    B = complex_normal(rng, (4, 4))
    x = complex_normal(rng, (1_000_000, 4)) @ psd_sqrt(A).T
    sampled = np.mean(np.abs(np.einsum("na,ab,nb->n", np.conj(x), B, x)) ** 2)
    assert sampled == pytest.approx(fourth_moment(A, B), rel=0.01)


def test_hermitian_solve_over_nested_batches(rng):
    A = _hpd(rng, (3, 2), 4)
    B = complex_normal(rng, (3, 2, 4, 2))
    np.testing.assert_allclose(hermitian_solve(A, B), np.linalg.solve(A, B), rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(hermitian_inverse(A), np.linalg.inv(A), rtol=1e-9, atol=1e-12)
