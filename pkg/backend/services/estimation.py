"""MMSE channel estimation: statistics, NMSE and channel realizations."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from services.cluster import ClusterState
from services.correlation import ChannelStatistics
from services.errors import ConfigurationError
from services.linalg import complex_normal, hermitian, hermitian_inverse, herm, psd_sqrt

logger = logging.getLogger(__name__)

SamplingMode = Literal["direct", "pilot-path"]


@dataclass
class EstimationStatistics:
    R: np.ndarray  # (K, L, N, N)
    pilots: np.ndarray  # (K,)
    num_pilots: int
    pilot_powers: np.ndarray  # (K,) eta_k
    noise_power: float
    psi: np.ndarray  # (tau_p, L, N, N)
    psi_inv: np.ndarray
    est_corr: np.ndarray  # (K, L, N, N)
    err_corr: np.ndarray  # (K, L, N, N)
    _factors: dict = field(default_factory=dict, repr=False)

    @property
    def num_ues(self) -> int:
        return self.R.shape[0]

    @property
    def num_aps(self) -> int:
        return self.R.shape[1]

    @property
    def antennas(self) -> int:
        return self.R.shape[-1]

    @property
    def pilot_gain(self) -> np.ndarray:
        """sqrt(eta_k tau_p) per UE."""
        return np.sqrt(self.pilot_powers * self.num_pilots)

    def pilot_groups(self) -> list[tuple[int, np.ndarray]]:
        groups = []
        for t in range(self.num_pilots):
            members = np.flatnonzero(self.pilots == t)
            if members.size:
                groups.append((t, members))
        return groups

    def psi_inv_R(self) -> np.ndarray:
        """Psi_{t_k l}^{-1} R_kl for every link."""
        if "psi_inv_R" not in self._factors:
            self._factors["psi_inv_R"] = self.psi_inv[self.pilots] @ self.R
        return self._factors["psi_inv_R"]

    def _direct_factors(self):
        if "direct" in self._factors:
            return self._factors["direct"]
        psi_sqrt = psd_sqrt(self.psi)
        error_sqrt = {}
        N, L = self.antennas, self.num_aps
        for t, members in self.pilot_groups():
            m = members.size
            scaled = self.pilot_gain[members][:, None, None, None] * self.R[members]
            # cross[l, i, :, j, :] = sqrt(eta_i eta_j) tau_p R_il Psi^-1 R_jl
            cross = np.einsum("ilab,lbc,jlcd->liajd", scaled, self.psi_inv[t], herm(scaled))
            cov = -cross.reshape(L, m * N, m * N)
            for pos, k in enumerate(members):
                block = slice(pos * N, (pos + 1) * N)
                cov[:, block, block] += self.R[k]
            error_sqrt[t] = psd_sqrt(cov)
        self._factors["direct"] = (psi_sqrt, error_sqrt)
        return self._factors["direct"]

    def _channel_sqrt(self) -> np.ndarray:
        if "R_sqrt" not in self._factors:
            self._factors["R_sqrt"] = psd_sqrt(self.R)
        return self._factors["R_sqrt"]


def build_estimation_statistics(
    channels: ChannelStatistics,
    cluster: ClusterState,
    pilot_powers,
    noise_power: float,
) -> EstimationStatistics:
    if noise_power <= 0:
        raise ConfigurationError("noise power must be positive")
    K, L, N = channels.num_ues, channels.num_aps, channels.antennas
    if cluster.num_ues != K or cluster.num_aps != L:
        raise ConfigurationError("cluster does not match the channel statistics")

    tau_p = cluster.num_pilots
    eta = np.broadcast_to(np.asarray(pilot_powers, dtype=float), (K,)).copy()
    R = channels.R

    psi = np.zeros((tau_p, L, N, N), dtype=complex)
    np.add.at(psi, cluster.pilots, (eta * tau_p)[:, None, None, None] * R)
    psi += noise_power * np.eye(N)
    psi_inv = hermitian_inverse(psi)

    Q = psi_inv[cluster.pilots] @ R
    est_corr = hermitian((eta * tau_p)[:, None, None, None] * (R @ Q))
    err_corr = hermitian(R - est_corr)

    stats = EstimationStatistics(
        R=R,
        pilots=cluster.pilots.copy(),
        num_pilots=tau_p,
        pilot_powers=eta,
        noise_power=float(noise_power),
        psi=psi,
        psi_inv=psi_inv,
        est_corr=est_corr,
        err_corr=err_corr,
    )
    stats._factors["psi_inv_R"] = Q
    return stats


def nmse(stats: EstimationStatistics, k: int, l: int | None = None, aps=None) -> float:
    """NMSE of one link, or the collective NMSE of UE k over `aps` (all APs if omitted)."""
    if l is not None:
        selected = [l]
    else:
        selected = list(range(stats.num_aps)) if aps is None else list(aps)
    err = np.real(np.trace(stats.err_corr[k, selected], axis1=-2, axis2=-1)).sum()
    tot = np.real(np.trace(stats.R[k, selected], axis1=-2, axis2=-1)).sum()
    if tot <= 0:
        raise ConfigurationError(f"NMSE of UE {k} is undefined for a zero channel")
    return float(np.clip(err / tot, 0.0, 1.0))


def nmse_from_eigenvalues(eigenvalues, snr_scale: float) -> float:
    """NMSE of a pilot-contamination-free link with correlation eigenvalues and SNR scale eta tau_p / sigma^2."""
    lam = np.asarray(eigenvalues, dtype=float)
    return float(np.sum(lam / (snr_scale * lam + 1.0)) / np.sum(lam))


@dataclass
class ChannelDraw:
    h: np.ndarray  # (n, K, L, N) true channels
    hhat: np.ndarray  # (n, K, L, N) MMSE estimates

    @property
    def herr(self) -> np.ndarray:
        return self.h - self.hhat

    @property
    def num_draws(self) -> int:
        return self.h.shape[0]


def _sample_direct(stats: EstimationStatistics, rng: np.random.Generator, n: int) -> ChannelDraw:
    K, L, N = stats.num_ues, stats.num_aps, stats.antennas
    psi_sqrt, error_sqrt = stats._direct_factors()
    h = np.empty((n, K, L, N), dtype=complex)
    hhat = np.empty((n, K, L, N), dtype=complex)

    for t, members in stats.pilot_groups():
        m = members.size
        y = np.einsum("lab,nlb->nla", psi_sqrt[t], complex_normal(rng, (n, L, N)))
        whitened = np.einsum("lab,nlb->nla", stats.psi_inv[t], y)
        est = np.einsum("klab,nlb->nkla", stats.R[members], whitened)
        est *= stats.pilot_gain[members][None, :, None, None]
        err = np.einsum("lab,nlb->nla", error_sqrt[t], complex_normal(rng, (n, L, m * N)))
        hhat[:, members] = est
        h[:, members] = est + err.reshape(n, L, m, N).transpose(0, 2, 1, 3)
    return ChannelDraw(h=h, hhat=hhat)


def _sample_pilot_path(stats: EstimationStatistics, rng: np.random.Generator, n: int) -> ChannelDraw:
    K, L, N = stats.num_ues, stats.num_aps, stats.antennas
    tau_p = stats.num_pilots
    h = np.einsum("klab,nklb->nkla", stats._channel_sqrt(), complex_normal(rng, (n, K, L, N)))

    book = np.fft.fft(np.eye(tau_p))  # column t is pilot t, unit-modulus entries
    sent = np.sqrt(stats.pilot_powers)[:, None] * book[:, stats.pilots].T  # (K, tau_p)
    received = np.einsum("nkla,ks->nlas", h, sent)
    received += math.sqrt(stats.noise_power) * complex_normal(rng, received.shape)

    despread = np.einsum("nlas,st->ntla", received, np.conj(book)) / math.sqrt(tau_p)
    whitened = np.einsum("tlab,ntlb->ntla", stats.psi_inv, despread)
    hhat = np.einsum("klab,nklb->nkla", stats.R, whitened[:, stats.pilots])
    hhat *= stats.pilot_gain[None, :, None, None]
    return ChannelDraw(h=h, hhat=hhat)


def sample_channel_draw(
    stats: EstimationStatistics,
    rng: np.random.Generator,
    num_draws: int = 1,
    mode: SamplingMode = "direct",
) -> ChannelDraw:
    """Draw `num_draws` independent coherence blocks of (h, hhat).

    Both modes give identically distributed draws. Estimates of pilot-sharing
    UEs come from the same received pilot signal, so they stay correlated.
    """
    if num_draws < 1:
        raise ConfigurationError("num_draws must be at least 1")
    if mode == "direct":
        return _sample_direct(stats, rng, num_draws)
    if mode == "pilot-path":
        return _sample_pilot_path(stats, rng, num_draws)
    raise ConfigurationError(f"unknown sampling mode {mode!r}")
