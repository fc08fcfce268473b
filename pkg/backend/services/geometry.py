from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Literal, Mapping

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.linalg import cho_factor, cho_solve

from services.errors import ConfigurationError

logger = logging.getLogger(__name__)


def dbm_to_watt(value_dbm: float) -> float:
    return 10.0 ** ((value_dbm - 30.0) / 10.0)


def watt_to_dbm(value_watt: float) -> float:
    return 10.0 * math.log10(value_watt) + 30.0


class NetworkConfig(BaseModel):
    """Static scenario parameters. Powers in watts, lengths in meters, angles in degrees."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    num_aps: int = Field(100, gt=0)
    antennas_per_ap: int = Field(4, gt=0)
    num_ues: int = Field(40, gt=0)
    area_side: float = Field(1000.0, gt=0)
    coherence_block: int = Field(200, gt=0)
    pilot_length: int = Field(10, ge=1)
    ul_data: int = Field(95, gt=0)
    dl_data: int = Field(95, gt=0)
    max_ul_power: float = Field(0.1, gt=0)
    max_dl_power: float = Field(0.2, gt=0)
    pilot_power: float = Field(0.1, gt=0)
    noise_power_ul: float = Field(default_factory=lambda: dbm_to_watt(-94.0), gt=0)
    noise_power_dl: float = Field(default_factory=lambda: dbm_to_watt(-94.0), gt=0)
    ap_height: float = Field(10.0, gt=0)
    shadow_std: float = Field(4.0, ge=0)
    shadow_decorrelation: float = Field(9.0, gt=0)
    pathloss_intercept: float = -30.5
    pathloss_exponent_coeff: float = Field(36.7, gt=0)
    layout_mode: Literal["uniform-random", "square-grid"] = "uniform-random"
    wrap_around: bool = True
    correlation_model: Literal["local-scattering", "uncorrelated"] = "local-scattering"
    asd_azimuth_deg: float = Field(15.0, ge=0)
    asd_elevation_deg: float = Field(15.0, ge=0)
    rng_seed: int = 0

    @model_validator(mode="after")
    def _check_coherence_block(self) -> "NetworkConfig":
        total = self.pilot_length + self.ul_data + self.dl_data
        if total != self.coherence_block:
            raise ValueError(
                f"pilot_length + ul_data + dl_data = {total} must equal coherence_block = {self.coherence_block}"
            )
        return self

    @property
    def ul_prelog(self) -> float:
        return self.ul_data / self.coherence_block

    @property
    def dl_prelog(self) -> float:
        return self.dl_data / self.coherence_block


def parse_network_config(data: Mapping[str, Any]) -> NetworkConfig:
    try:
        return NetworkConfig.model_validate(dict(data))
    except ValidationError as exc:
        raise ConfigurationError(f"invalid network config: {exc}") from exc


@dataclass
class Deployment:
    ap_positions: np.ndarray  # (L, 2)
    ue_positions: np.ndarray  # (K, 2)
    layout_mode: str
    area_side: float
    wrap_around: bool = True


@dataclass
class LargeScaleFading:
    beta: np.ndarray  # (K, L) linear gains
    shadow: np.ndarray  # (K, L) dB
    distances: np.ndarray  # (K, L) 3D distances in meters
    azimuth: np.ndarray  # (K, L) radians, AP -> UE
    elevation: np.ndarray  # (K, L) radians

    @property
    def beta_db(self) -> np.ndarray:
        return 10.0 * np.log10(self.beta)

    @property
    def num_ues(self) -> int:
        return self.beta.shape[0]

    @property
    def num_aps(self) -> int:
        return self.beta.shape[1]


def deploy(config: NetworkConfig, rng: np.random.Generator) -> Deployment:
    L, K, side = config.num_aps, config.num_ues, config.area_side

    if config.layout_mode == "square-grid":
        per_row = math.isqrt(L)
        if per_row * per_row != L:
            raise ConfigurationError(f"square-grid layout needs a square number of APs, got {L}")
        coords = (np.arange(per_row) + 0.5) * side / per_row
        xx, yy = np.meshgrid(coords, coords)
        ap_positions = np.column_stack([xx.ravel(), yy.ravel()])
    else:
        ap_positions = rng.uniform(0.0, side, size=(L, 2))

    ue_positions = rng.uniform(0.0, side, size=(K, 2))
    return Deployment(ap_positions, ue_positions, config.layout_mode, side, config.wrap_around)


_SHIFTS = np.array([(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)], dtype=float)


def wrap_displacement(p: np.ndarray, q: np.ndarray, area_side: float, wrap: bool = True) -> np.ndarray:
    """Shortest displacement from p to the translated copies of q; broadcasts over leading axes."""
    diff = np.asarray(q, dtype=float) - np.asarray(p, dtype=float)
    if not wrap:
        return diff
    candidates = diff[..., None, :] + area_side * _SHIFTS
    best = np.argmin(np.linalg.norm(candidates, axis=-1), axis=-1)
    return np.take_along_axis(candidates, best[..., None, None], axis=-2)[..., 0, :]


def wrap_distance(p, q, area_side: float) -> float:
    return float(np.linalg.norm(wrap_displacement(np.asarray(p), np.asarray(q), area_side)))


def _conditional_weights(prev_cov: np.ndarray, cross_cov: np.ndarray) -> np.ndarray:
    try:
        factor = cho_factor(prev_cov, lower=True)
    except np.linalg.LinAlgError:
        logger.warning("singular shadow covariance (co-located UEs), adding 1e-9 jitter")
        factor = cho_factor(prev_cov + 1e-9 * np.eye(prev_cov.shape[0]), lower=True)
    return cho_solve(factor, cross_cov)


def correlated_shadowing(
    ue_positions: np.ndarray,
    num_aps: int,
    config: NetworkConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Shadow terms F (K, L) in dB, drawn UE by UE from the conditional Gaussian law.

    Terms of different APs are independent, so one set of conditioning weights
    serves all L columns.
    """
    K = ue_positions.shape[0]
    sigma = config.shadow_std
    shadow = np.zeros((K, num_aps))
    if sigma == 0.0:
        return shadow

    disp = wrap_displacement(ue_positions[:, None, :], ue_positions[None, :, :], config.area_side, config.wrap_around)
    cov = sigma**2 * 2.0 ** (-np.linalg.norm(disp, axis=-1) / config.shadow_decorrelation)

    for k in range(K):
        if k == 0:
            shadow[0] = sigma * rng.standard_normal(num_aps)
            continue
        weights = _conditional_weights(cov[:k, :k], cov[:k, k])
        mean = weights @ shadow[:k]
        variance = max(sigma**2 - float(cov[:k, k] @ weights), 0.0)
        shadow[k] = mean + math.sqrt(variance) * rng.standard_normal(num_aps)
    return shadow


def pathloss_db(distance: np.ndarray, config: NetworkConfig) -> np.ndarray:
    return config.pathloss_intercept - config.pathloss_exponent_coeff * np.log10(distance)


def large_scale_fading(deployment: Deployment, config: NetworkConfig, rng: np.random.Generator) -> LargeScaleFading:
    ue, ap = deployment.ue_positions, deployment.ap_positions
    if ap.shape[0] != config.num_aps or ue.shape[0] != config.num_ues:
        raise ConfigurationError("deployment does not match the network config")

    # UE -> AP displacement, taken to the nearest wrapped copy
    disp = wrap_displacement(ue[:, None, :], ap[None, :, :], deployment.area_side, deployment.wrap_around)
    horizontal = np.linalg.norm(disp, axis=-1)
    distances = np.sqrt(horizontal**2 + config.ap_height**2)

    shadow = correlated_shadowing(ue, config.num_aps, config, rng)
    beta = 10.0 ** ((pathloss_db(distances, config) + shadow) / 10.0)

    azimuth = np.arctan2(-disp[..., 1], -disp[..., 0])
    elevation = -np.arcsin(config.ap_height / distances)
    return LargeScaleFading(beta=beta, shadow=shadow, distances=distances, azimuth=azimuth, elevation=elevation)
