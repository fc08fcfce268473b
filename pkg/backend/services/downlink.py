from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from services.cluster import ClusterState
from services.errors import ConfigurationError, InfeasibleError
from services.estimation import ChannelDraw, EstimationStatistics
from services.uplink import CombinerDraw, CombinerMoments, DistributedExpectations, UplinkSEResult, uatf_sinr

logger = logging.getLogger(__name__)

DOWNLINK_MODES = ("centralized", "distributed", "mr-closed-form", "genie")


class DownlinkSEResult(UplinkSEResult):
    pass


@dataclass
class PrecoderDraw:
    """Precoders w = sqrt(rho) v / sqrt(E{||v||^2}), centralized (rho per UE) or per AP (rho per link)."""

    w: np.ndarray  # (n, K, L, N)
    power: np.ndarray  # (K,) or (K, L)
    norm: np.ndarray  # (K,) or (K, L) normalization denominators
    ap_share: np.ndarray  # (K, L) E{||w'_kl||^2} of the unit-power precoder

    @property
    def centralized(self) -> bool:
        return self.power.ndim == 1


def ap_share(moments: CombinerMoments) -> np.ndarray:
    """Fraction of the unit-power centralized precoder of UE k radiated by AP l."""
    norm = moments.norm[:, None]
    return np.divide(moments.ap_norm, norm, out=np.zeros_like(moments.ap_norm), where=norm > 0)


def _scale(power: np.ndarray, norm: np.ndarray) -> np.ndarray:
    if np.any((power > 0) & (norm <= 0)):
        raise ConfigurationError("cannot normalize a zero-norm combiner")
    return np.sqrt(np.divide(power, norm, out=np.zeros_like(power, dtype=float), where=norm > 0))


def precoder_from_combiner(combiner: CombinerDraw, powers, moments: CombinerMoments) -> PrecoderDraw:
    power = np.asarray(powers, dtype=float)
    if np.any(power < 0):
        raise ConfigurationError("downlink powers must be non-negative")
    if power.ndim == 1:
        scale = _scale(power, moments.norm)
        w = combiner.v * scale[None, :, None, None]
        return PrecoderDraw(w, power, moments.norm.copy(), ap_share(moments))
    scale = _scale(power, moments.ap_norm)
    w = combiner.v * scale[None, :, :, None]
    unit = (moments.ap_norm > 0).astype(float)
    return PrecoderDraw(w, power, moments.ap_norm.copy(), unit)


def _clamped_ratio(signal: np.ndarray, denominator: np.ndarray, noise_power: float) -> np.ndarray:
    floor = noise_power * 1e-6
    low = denominator < floor
    if np.any(low):
        logger.warning("clamping %d negative downlink denominators", int(np.count_nonzero(low)))
        denominator = np.where(low, floor, denominator)
    return np.clip(signal / denominator, 0.0, None)


def centralized_downlink_sinr(moments: CombinerMoments, powers, noise_power: float) -> np.ndarray:
    rho = np.asarray(powers, dtype=float)
    norm = np.where(moments.norm > 0, moments.norm, np.inf)
    signal = rho * np.abs(np.diag(moments.gain_mean)) ** 2 / norm
    # gain_power[i, k] = E{|v_i^H h_k|^2}
    received = (moments.gain_power.T * (rho / norm)[None, :]).sum(axis=1)
    return _clamped_ratio(signal, received - signal + noise_power, noise_power)


def distributed_terms(moments: CombinerMoments):
    ap_norm = np.where(moments.ap_norm > 0, moments.ap_norm, np.inf)[None, :, :]
    # mu[k, i, l] = E{h_kl^H v_il} / sqrt(E{||v_il||^2})
    mean = np.swapaxes(moments.ap_gain_mean, 0, 1)
    power = np.swapaxes(moments.ap_gain_power, 0, 1)
    mu = np.conj(mean) / np.sqrt(ap_norm)
    var = np.clip(power - np.abs(mean) ** 2, 0.0, None) / ap_norm
    return mu, var


def distributed_downlink_sinr(moments: CombinerMoments, powers, noise_power: float) -> np.ndarray:
    rho = np.asarray(powers, dtype=float)
    mu, var = distributed_terms(moments)
    root = np.sqrt(rho)
    coherent = np.abs(np.einsum("kil,il->ki", mu, root)) ** 2
    spread = np.einsum("kil,il->ki", var, rho)
    signal = np.diag(coherent).copy()
    denominator = (coherent + spread).sum(axis=1) - signal + noise_power
    return _clamped_ratio(signal, denominator, noise_power)


def genie_downlink_sinr(precoder: PrecoderDraw, draw: ChannelDraw, noise_power: float) -> np.ndarray:
    proj = np.einsum("nkla,nila->nki", np.conj(draw.h), precoder.w)
    received = np.abs(proj) ** 2
    signal = np.einsum("nkk->nk", received)
    return np.clip(signal / (received.sum(axis=-1) - signal + noise_power), 0.0, None)


def single_antenna_mr_downlink_sinr(stats: EstimationStatistics, cluster: ClusterState, powers, noise_power: float) -> np.ndarray:
    """Closed-form distributed MR SINR for single-antenna APs; powers are (K, L)."""
    if stats.antennas != 1:
        raise ConfigurationError("the closed-form MR expression needs single-antenna APs")
    rho = np.asarray(powers, dtype=float) * cluster.serving
    beta = np.real(stats.R[..., 0, 0])
    psi = np.real(stats.psi[..., 0, 0])[stats.pilots]
    gamma = stats.pilot_powers[:, None] * stats.num_pilots * beta**2 / psi

    signal = np.sqrt(rho * gamma).sum(axis=1) ** 2
    spread = beta @ rho.sum(axis=0)  # sum_i sum_{l in M_i} rho_il beta_kl
    coherent = np.einsum("kl,il->ki", np.sqrt(gamma), np.sqrt(rho)) ** 2
    leak = (coherent * (cluster.pilot_sharing & ~np.eye(rho.shape[0], dtype=bool))).sum(axis=1)
    return np.clip(signal / (spread + leak + noise_power), 0.0, None)


def downlink_se(
    mode: str,
    *,
    prelog: float,
    powers,
    noise_power: float,
    moments: CombinerMoments | None = None,
    expectations: DistributedExpectations | None = None,
    precoder: PrecoderDraw | None = None,
    draw: ChannelDraw | None = None,
) -> DownlinkSEResult:
    """Downlink SE per UE. Centralized powers are (K,), distributed ones (K, L)."""
    rho = np.asarray(powers, dtype=float)
    if mode == "centralized":
        if moments is None:
            raise ConfigurationError("centralized downlink SE needs combiner moments")
        return DownlinkSEResult(mode, prelog, centralized_downlink_sinr(moments, rho, noise_power))
    if mode == "distributed":
        if moments is None:
            raise ConfigurationError("distributed downlink SE needs combiner moments")
        return DownlinkSEResult(mode, prelog, distributed_downlink_sinr(moments, rho, noise_power))
    if mode == "mr-closed-form":
        if expectations is None:
            raise ConfigurationError("closed-form downlink SE needs MR expectations")
        exact = CombinerMoments.from_expectations(expectations)
        sinr = centralized_downlink_sinr(exact, rho, noise_power) if rho.ndim == 1 else distributed_downlink_sinr(exact, rho, noise_power)
        return DownlinkSEResult(mode, prelog, sinr)
    if mode == "genie":
        if precoder is None or draw is None:
            raise ConfigurationError("genie downlink SE needs precoders and channel draws")
        return DownlinkSEResult(mode, prelog, genie_downlink_sinr(precoder, draw, noise_power), True)
    raise ConfigurationError(f"unknown downlink mode {mode!r}")


@dataclass
class DualityMatrices:
    gamma_matrix: np.ndarray  # (K, K) diagonal
    sigma_matrix: np.ndarray  # (K, K)
    rho: np.ndarray  # (K,)
    target_sinr: np.ndarray  # (K,)


def duality_power_allocation(
    moments: CombinerMoments,
    ul_powers,
    noise_ul: float,
    noise_dl: float,
    target_sinr=None,
) -> DualityMatrices:
    """Downlink powers that reproduce the uplink UatF SINRs with normalized combiners as precoders."""
    gamma = uatf_sinr(moments, ul_powers, noise_ul) if target_sinr is None else np.asarray(target_sinr, dtype=float)
    if np.any(gamma <= 0) or np.any(moments.norm <= 0):
        raise InfeasibleError("duality needs positive uplink SINRs and non-zero combiners")

    b = np.abs(np.diag(moments.gain_mean)) ** 2 / moments.norm
    sigma = moments.gain_power.T / moments.norm[None, :]
    sigma[np.diag_indices_from(sigma)] -= b
    gamma_matrix = np.diag(b / gamma)

    try:
        rho = np.linalg.solve(gamma_matrix - sigma, noise_dl * np.ones(b.size))
    except np.linalg.LinAlgError as exc:
        raise InfeasibleError("singular duality system") from exc
    if np.any(rho <= 0) or not np.all(np.isfinite(rho)):
        raise InfeasibleError(f"duality yields non-positive powers: {rho}")
    return DualityMatrices(gamma_matrix, sigma, rho, gamma)


@dataclass
class PowerUsage:
    usage: np.ndarray  # (L,) watts
    violations: np.ndarray  # (L,) bool
    max_power: float

    @property
    def feasible(self) -> bool:
        return not bool(self.violations.any())


def per_ap_power_usage(cluster: ClusterState, powers, max_power: float, share=None) -> PowerUsage:
    """E{||x_l||^2} per AP. Centralized (K,) powers need the per-AP share of each precoder."""
    rho = np.asarray(powers, dtype=float)
    if rho.ndim == 2:
        usage = (rho * cluster.serving).sum(axis=0)
    else:
        if share is None:
            raise ConfigurationError("centralized power usage needs the per-AP precoder share")
        usage = (rho[:, None] * np.asarray(share) * cluster.serving).sum(axis=0)
    return PowerUsage(usage, usage > max_power * (1.0 + 1e-9), max_power)
