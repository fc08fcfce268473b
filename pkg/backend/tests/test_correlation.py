import math

import numpy as np
import pytest

from services.correlation import (
    AngularProfile,
    build_channel_statistics,
    local_scattering,
    local_scattering_batch,
    uncorrelated,
)
from services.errors import ConfigurationError


def test_zero_spread_gives_rank_one_steering_matrix():
    R = local_scattering(4, AngularProfile.from_degrees(30.0, 0.0), beta=2.0)
    eigenvalues = np.linalg.eigvalsh(R)
    assert eigenvalues[-1] == pytest.approx(8.0)
    np.testing.assert_allclose(eigenvalues[:-1], 0.0, atol=1e-9)
    phase = math.pi * math.sin(math.radians(30.0))
    assert R[1, 0] == pytest.approx(2.0 * np.exp(1j * phase))


def test_trace_and_toeplitz_structure():
    R = local_scattering(6, AngularProfile.from_degrees(-20.0, -5.0, 15.0, 15.0), beta=0.5)
    assert np.real(np.trace(R)) == pytest.approx(3.0)
    np.testing.assert_allclose(R, np.conj(R.T), atol=1e-12)
    for lag in range(1, 6):
        np.testing.assert_allclose(np.diag(R, -lag), R[lag, 0], atol=1e-9)
    assert np.linalg.eigvalsh(R).min() > -1e-9


def test_larger_spread_decorrelates_the_array():
    narrow = local_scattering(8, AngularProfile.from_degrees(10.0, 0.0, 5.0, 0.0), beta=1.0)
    wide = local_scattering(8, AngularProfile.from_degrees(10.0, 0.0, 30.0, 0.0), beta=1.0)
    assert abs(wide[1, 0]) < abs(narrow[1, 0])


def test_batch_matches_single_calls():
    azimuth = np.radians([[10.0, 50.0], [-30.0, 80.0]])
    elevation = np.radians([[-5.0, -10.0], [-2.0, -20.0]])
    beta = np.array([[1.0, 0.1], [0.01, 2.0]])
    sigma = math.radians(15.0)
    batch = local_scattering_batch(3, azimuth, elevation, sigma, sigma, beta)
    assert batch.shape == (2, 2, 3, 3)
    single = local_scattering(3, AngularProfile(azimuth[1, 0], elevation[1, 0], sigma, sigma), beta[1, 0])
    np.testing.assert_allclose(batch[1, 0], single, atol=1e-7)


def test_negative_spread_is_rejected():
    with pytest.raises(ConfigurationError):
        AngularProfile(0.0, 0.0, -0.1, 0.0)


def test_uncorrelated_is_scaled_identity():
    R = uncorrelated(3, np.array([[1.0, 2.0]]))
    assert R.shape == (1, 2, 3, 3)
    np.testing.assert_allclose(R[0, 1], 2.0 * np.eye(3))


def test_channel_statistics_shapes(small_network):
    channels = small_network.channels
    config = small_network.config
    assert channels.R.shape == (config.num_ues, config.num_aps, config.antennas_per_ap, config.antennas_per_ap)
    traces = np.real(np.trace(channels.R, axis1=-2, axis2=-1))
    np.testing.assert_allclose(traces, config.antennas_per_ap * channels.beta, rtol=1e-9)


def test_dominant_eigenvalue_for_narrow_spread():
    R = local_scattering(8, AngularProfile.from_degrees(30.0, -15.0, 5.0, 5.0), beta=1.0)
    assert np.linalg.eigvalsh(R)[-1] == pytest.approx(0.8 * 8, abs=0.03 * 8)
