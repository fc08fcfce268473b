"""Spatial correlation matrices for half-wavelength uniform linear arrays.

The Gaussian local scattering model spreads the multipath around a nominal
azimuth/elevation pair. Entry (m, l) of R depends on m - l only, so the
first column is integrated numerically and the Hermitian Toeplitz matrix is
assembled from it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from services.errors import ConfigurationError, NumericalError
from services.geometry import LargeScaleFading, NetworkConfig
from services.linalg import repair_psd

logger = logging.getLogger(__name__)

QUADRATURE_TOL = 1e-8
_START_NODES = 16
_MAX_NODES = 2048
_TRUNCATION = 4.0
_CHUNK_BUDGET = 2**22


@dataclass(frozen=True)
class AngularProfile:
    azimuth: float
    elevation: float
    asd_azimuth: float = 0.0
    asd_elevation: float = 0.0

    def __post_init__(self):
        if self.asd_azimuth < 0 or self.asd_elevation < 0:
            raise ConfigurationError("angular standard deviations must be non-negative")

    @classmethod
    def from_degrees(cls, azimuth: float, elevation: float, asd_azimuth: float = 0.0, asd_elevation: float = 0.0):
        return cls(*(math.radians(v) for v in (azimuth, elevation, asd_azimuth, asd_elevation)))


def _gauss_nodes(sigma: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Offsets and normalized weights of a Gaussian truncated at +-4 sigma."""
    if sigma == 0.0:
        return np.zeros(1), np.ones(1)
    x, w = leggauss(n)
    w = w * np.exp(-0.5 * (_TRUNCATION * x) ** 2)
    return _TRUNCATION * sigma * x, w / w.sum()


def _first_columns(N: int, azimuth: np.ndarray, elevation: np.ndarray, sigma_az: float, sigma_el: float, n: int):
    da, wa = _gauss_nodes(sigma_az, n)
    de, we = _gauss_nodes(sigma_el, n)
    weights = wa[:, None] * we[None, :]
    columns = np.empty((azimuth.size, N), dtype=complex)
    chunk = max(1, _CHUNK_BUDGET // weights.size)

    for start in range(0, azimuth.size, chunk):
        stop = start + chunk
        phi = azimuth[start:stop, None] + da[None, :]
        theta = elevation[start:stop, None] + de[None, :]
        phase = np.exp(1j * math.pi * np.sin(phi)[:, :, None] * np.cos(theta)[:, None, :])
        power = np.ones_like(phase)
        for lag in range(N):
            columns[start:stop, lag] = np.einsum("lij,ij->l", power, weights)
            power = power * phase
    return columns


def _converged_columns(N: int, azimuth: np.ndarray, elevation: np.ndarray, sigma_az: float, sigma_el: float):
    if sigma_az == 0.0 and sigma_el == 0.0:
        return _first_columns(N, azimuth, elevation, 0.0, 0.0, 1)

    n = _START_NODES
    previous = _first_columns(N, azimuth, elevation, sigma_az, sigma_el, n)
    while True:
        n *= 2
        if n > _MAX_NODES:
            raise NumericalError(f"local scattering quadrature did not reach {QUADRATURE_TOL} with {_MAX_NODES} nodes")
        current = _first_columns(N, azimuth, elevation, sigma_az, sigma_el, n)
        if np.max(np.abs(current - previous)) <= QUADRATURE_TOL:
            return current
        previous = current


def _toeplitz(columns: np.ndarray) -> np.ndarray:
    N = columns.shape[-1]
    lags = np.arange(N)[:, None] - np.arange(N)[None, :]
    entries = columns[..., np.abs(lags)]
    return np.where(lags >= 0, entries, np.conj(entries))


def local_scattering_batch(
    N: int,
    azimuth: np.ndarray,
    elevation: np.ndarray,
    asd_azimuth: float,
    asd_elevation: float,
    beta: np.ndarray,
) -> np.ndarray:
    """Correlation matrices (..., N, N) for arrays of nominal angles sharing one angular spread."""
    if asd_azimuth < 0 or asd_elevation < 0:
        raise ConfigurationError("angular standard deviations must be non-negative")
    shape = np.shape(beta)
    az = np.broadcast_to(azimuth, shape).ravel()
    el = np.broadcast_to(elevation, shape).ravel()

    # links refine together within a chunk
    chunk = 256
    columns = np.empty((az.size, N), dtype=complex)
    for start in range(0, az.size, chunk):
        stop = start + chunk
        columns[start:stop] = _converged_columns(N, az[start:stop], el[start:stop], asd_azimuth, asd_elevation)

    R = _toeplitz(columns) * np.ravel(beta)[:, None, None]
    return repair_psd(R).reshape(shape + (N, N))


def local_scattering(N: int, profile: AngularProfile, beta: float) -> np.ndarray:
    return local_scattering_batch(
        N,
        np.array([profile.azimuth]),
        np.array([profile.elevation]),
        profile.asd_azimuth,
        profile.asd_elevation,
        np.array([beta]),
    )[0]


def uncorrelated(N: int, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    return beta[..., None, None] * np.eye(N, dtype=complex)


@dataclass
class ChannelStatistics:
    R: np.ndarray  # (K, L, N, N)
    beta: np.ndarray  # (K, L)

    @property
    def num_ues(self) -> int:
        return self.R.shape[0]

    @property
    def num_aps(self) -> int:
        return self.R.shape[1]

    @property
    def antennas(self) -> int:
        return self.R.shape[-1]


def build_channel_statistics(fading: LargeScaleFading, config: NetworkConfig) -> ChannelStatistics:
    N = config.antennas_per_ap
    if config.correlation_model == "uncorrelated":
        R = uncorrelated(N, fading.beta)
    else:
        R = local_scattering_batch(
            N,
            fading.azimuth,
            fading.elevation,
            math.radians(config.asd_azimuth_deg),
            math.radians(config.asd_elevation_deg),
            fading.beta,
        )
    logger.debug("built %d correlation matrices of size %d", fading.beta.size, N)
    return ChannelStatistics(R=R, beta=fading.beta.copy())
