"""Uplink receive combining, large-scale fading decoding and spectral efficiency.

Combining vectors of every scheme are stored as one (n, K, L, N) array: draw,
UE, AP, antenna. Blocks outside the serving set of a UE are exactly zero, so
the same SINR code serves centralized and distributed operation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.linalg import block_diag

from services.cluster import ClusterState
from services.errors import ConfigurationError, NumericalError
from services.estimation import ChannelDraw, EstimationStatistics
from services.linalg import hermitian, hermitian_solve, herm

logger = logging.getLogger(__name__)

CENTRALIZED_SCHEMES = ("MMSE", "P-MMSE", "P-RZF", "MR")
LOCAL_SCHEMES = ("L-MMSE", "LP-MMSE", "MR-local")
LSFD_MODES = ("opt", "n-opt", "none")
UPLINK_BOUNDS = (
    "centralized",
    "c-UatF",
    "distributed",
    "genie-centralized",
    "genie-distributed",
    "cellular",
    "mr-closed-form",
)

LsfdMode = Literal["opt", "n-opt", "none"]


@dataclass
class CombinerDraw:
    v: np.ndarray  # (n, K, L, N)
    scheme: str

    @property
    def centralized(self) -> bool:
        return self.scheme in CENTRALIZED_SCHEMES

    @property
    def num_draws(self) -> int:
        return self.v.shape[0]


def _check_powers(powers, K: int) -> np.ndarray:
    p = np.broadcast_to(np.asarray(powers, dtype=float), (K,)).copy()
    if np.any(p < 0):
        raise ConfigurationError("transmit powers must be non-negative")
    return p


def centralized_combiner(
    scheme: str,
    draw: ChannelDraw,
    stats: EstimationStatistics,
    cluster: ClusterState,
    powers,
    noise_power: float,
) -> CombinerDraw:
    """Centralized combining; linear algebra runs on the N|M_k| active block only."""
    if scheme not in CENTRALIZED_SCHEMES:
        raise ConfigurationError(f"unknown centralized scheme {scheme!r}")
    hhat = draw.hhat
    n, K, L, N = hhat.shape
    p = _check_powers(powers, K)
    serving = cluster.serving

    if scheme == "MR":
        return CombinerDraw(v=hhat * serving[None, :, :, None], scheme=scheme)

    coservice = cluster.coservice
    v = np.zeros_like(hhat)
    for k in range(K):
        aps = np.flatnonzero(serving[k])
        m = aps.size
        dim = m * N
        active = hhat[:, :, aps, :].reshape(n, K, dim)
        users = np.arange(K) if scheme == "MMSE" else np.flatnonzero(coservice[k])

        if scheme == "P-RZF":
            order = np.concatenate([[k], users[users != k]])
            if np.any(p[order] <= 0):
                raise ConfigurationError("P-RZF needs positive powers for every UE in the partial set")
            X = np.swapaxes(active[:, order, :], 1, 2)  # (n, dim, |S_k|)
            gram = herm(X) @ X + noise_power * np.diag(1.0 / p[order])
            first = np.zeros((n, order.size), dtype=complex)
            first[:, 0] = 1.0
            vk = np.einsum("nds,ns->nd", X, hermitian_solve(gram, first))
        else:
            H = active[:, users, :]
            A = np.einsum("u,nua,nub->nab", p[users], H, np.conj(H))
            err = np.einsum("u,ulab->lab", p[users], stats.err_corr[users][:, aps])
            A += block_diag(*err) + noise_power * np.eye(dim)
            vk = p[k] * hermitian_solve(A, active[:, k, :])

        v[:, k, aps, :] = vk.reshape(n, m, N)
    return CombinerDraw(v=v, scheme=scheme)


def local_combiner(
    scheme: str,
    draw: ChannelDraw,
    stats: EstimationStatistics,
    cluster: ClusterState,
    powers,
    noise_power: float,
) -> CombinerDraw:
    """Per-AP combining with N x N inversions; zero outside each serving set."""
    if scheme not in LOCAL_SCHEMES:
        raise ConfigurationError(f"unknown local scheme {scheme!r}")
    hhat = draw.hhat
    n, K, L, N = hhat.shape
    p = _check_powers(powers, K)
    mask = cluster.serving

    if scheme == "MR-local":
        return CombinerDraw(v=hhat * mask[None, :, :, None], scheme=scheme)

    weights = p[:, None] * (np.ones((K, L)) if scheme == "L-MMSE" else mask)
    A = np.einsum("kl,nkla,nklb->nlab", weights, hhat, np.conj(hhat))
    A += np.einsum("kl,klab->lab", weights, stats.err_corr)[None] + noise_power * np.eye(N)
    solved = hermitian_solve(A[:, None], hhat)  # (n, K, L, N)
    v = solved * (p[:, None] * mask)[None, :, :, None]
    return CombinerDraw(v=v, scheme=scheme)


@dataclass
class CombinerMoments:
    """Channel-realization averages of a combiner against the true channels.

    gain_mean[k, i] = E{v_k^H h_i}, gain_power[k, i] = E{|v_k^H h_i|^2},
    the ap_* arrays hold the same per serving AP, norm[k] = E{||v_k||^2}.
    """

    gain_mean: np.ndarray  # (K, K)
    gain_power: np.ndarray  # (K, K)
    norm: np.ndarray  # (K,)
    ap_norm: np.ndarray  # (K, L)
    ap_gain_mean: np.ndarray  # (K, K, L)
    ap_gain_power: np.ndarray  # (K, K, L)
    count: int = 0  # 0 marks exact values

    @classmethod
    def from_draws(cls, combiner: CombinerDraw, draw: ChannelDraw) -> "CombinerMoments":
        v, h = combiner.v, draw.h
        n, K, L, _ = v.shape
        ap_gain_mean = np.empty((K, K, L), dtype=complex)
        ap_gain_power = np.empty((K, K, L))
        gain_mean = np.empty((K, K), dtype=complex)
        gain_power = np.empty((K, K))
        for k in range(K):
            g = np.einsum("nla,nila->nil", np.conj(v[:, k]), h)
            total = g.sum(axis=-1)
            ap_gain_mean[k] = g.mean(axis=0)
            ap_gain_power[k] = (np.abs(g) ** 2).mean(axis=0)
            gain_mean[k] = total.mean(axis=0)
            gain_power[k] = (np.abs(total) ** 2).mean(axis=0)
        ap_norm = (np.abs(v) ** 2).sum(axis=-1).mean(axis=0)
        return cls(gain_mean, gain_power, ap_norm.sum(axis=1), ap_norm, ap_gain_mean, ap_gain_power, n)

    @classmethod
    def from_expectations(cls, expectations: "DistributedExpectations", lsfd=None) -> "CombinerMoments":
        """Moments of the LSFD-weighted combiner a_kl v_kl (all-ones weights by default)."""
        a = expectations.default_weights() if lsfd is None else np.asarray(getattr(lsfd, "a", lsfd))
        ca = np.conj(a)[:, None, :]
        weight = (np.abs(a) ** 2)[:, None, :]
        gain_mean = np.einsum("kil,kl->ki", expectations.g_mean, np.conj(a))
        gain_power = np.abs(gain_mean) ** 2 + (weight * expectations.g_var).sum(axis=-1)
        ap_norm = np.abs(a) ** 2 * expectations.ap_norm
        return cls(
            gain_mean=gain_mean,
            gain_power=gain_power,
            norm=ap_norm.sum(axis=1),
            ap_norm=ap_norm,
            ap_gain_mean=ca * expectations.g_mean,
            ap_gain_power=weight * expectations.g_power,
            count=0,
        )

    def merge(self, other: "CombinerMoments") -> "CombinerMoments":
        if self.count == 0 or other.count == 0:
            raise ConfigurationError("exact moments cannot be merged")
        total = self.count + other.count
        a, b = self.count / total, other.count / total

        def mix(x, y):
            return a * x + b * y

        return CombinerMoments(
            mix(self.gain_mean, other.gain_mean),
            mix(self.gain_power, other.gain_power),
            mix(self.norm, other.norm),
            mix(self.ap_norm, other.ap_norm),
            mix(self.ap_gain_mean, other.ap_gain_mean),
            mix(self.ap_gain_power, other.ap_gain_power),
            total,
        )


@dataclass
class DistributedExpectations:
    """Per-AP moments of g_ki = [v_kl^H h_il]_l. Entries of different APs are independent."""

    g_mean: np.ndarray  # (K, K, L) E{g_ki}
    g_power: np.ndarray  # (K, K, L) E{|[g_ki]_l|^2}
    ap_norm: np.ndarray  # (K, L) E{||v_kl||^2}
    serving: np.ndarray  # (K, L)
    noise_power: float

    @property
    def g_var(self) -> np.ndarray:
        return np.clip(self.g_power - np.abs(self.g_mean) ** 2, 0.0, None)

    @property
    def F(self) -> np.ndarray:
        """Diagonals of the noise-scaling matrices, (K, L)."""
        return self.noise_power * self.ap_norm

    def g_corr(self, k: int, i: int) -> np.ndarray:
        m = self.g_mean[k, i]
        return np.outer(m, np.conj(m)) + np.diag(self.g_var[k, i])

    def default_weights(self) -> np.ndarray:
        return self.serving.astype(complex)


def _closed_form_mr(stats: EstimationStatistics, cluster: ClusterState, noise_power: float) -> DistributedExpectations:
    R = stats.R
    Q = stats.psi_inv_R()
    tau = stats.num_pilots
    eta = stats.pilot_powers
    share = cluster.pilot_sharing[:, :, None]
    serve = cluster.serving[:, None, :]

    T1 = np.einsum("ilab,klba->kil", R, Q)  # tr(R_il Psi^-1 R_kl)
    T2 = np.einsum("ilab,klba->kil", R, R @ Q)  # tr(R_il R_kl Psi^-1 R_kl)
    pair = np.sqrt(np.outer(eta, eta))[:, :, None]

    g_mean = pair * tau * T1 * share * serve
    g_power = (eta[:, None, None] * tau * np.real(T2) + share * (pair * tau * np.abs(T1)) ** 2) * serve
    ap_norm = eta[:, None] * tau * np.real(np.trace(R @ Q, axis1=-2, axis2=-1)) * cluster.serving
    return DistributedExpectations(g_mean, g_power, ap_norm, cluster.serving.copy(), noise_power)


def distributed_expectations(
    method: str,
    *,
    moments: CombinerMoments | None = None,
    stats: EstimationStatistics | None = None,
    cluster: ClusterState | None = None,
    noise_power: float,
    scheme: str = "MR-local",
) -> DistributedExpectations:
    if method == "closed-form-MR":
        if scheme not in ("MR", "MR-local"):
            raise ConfigurationError(f"closed-form expectations exist for MR only, not {scheme}")
        if stats is None or cluster is None:
            raise ConfigurationError("closed-form expectations need estimation statistics and the cluster")
        return _closed_form_mr(stats, cluster, noise_power)
    if method == "monte-carlo":
        if moments is None or cluster is None:
            raise ConfigurationError("Monte Carlo expectations need combiner moments and the cluster")
        return DistributedExpectations(
            moments.ap_gain_mean, moments.ap_gain_power, moments.ap_norm, cluster.serving.copy(), noise_power
        )
    raise ConfigurationError(f"unknown expectation method {method!r}")


@dataclass
class LsfdWeights:
    a: np.ndarray  # (K, L), zero outside M_k
    mode: str


def _solve_with_jitter(B: np.ndarray, rhs: np.ndarray, k: int) -> np.ndarray:
    try:
        return hermitian_solve(B, rhs)
    except NumericalError:
        scale = float(np.real(np.trace(B))) or 1.0
        logger.warning("singular LSFD system for UE %d, adding 1e-12 trace jitter", k)
        return hermitian_solve(B + 1e-12 * scale * np.eye(B.shape[0]), rhs)


def lsfd_weights(
    mode: str,
    expectations: DistributedExpectations,
    powers,
    cluster: ClusterState,
) -> LsfdWeights:
    if mode not in LSFD_MODES:
        raise ConfigurationError(f"unknown LSFD mode {mode!r}")
    serving = cluster.serving
    if mode == "none":
        return LsfdWeights(serving.astype(complex), mode)

    K = serving.shape[0]
    p = _check_powers(powers, K)
    coservice = cluster.coservice
    var = expectations.g_var
    F = expectations.F
    a = np.zeros(serving.shape, dtype=complex)
    for k in range(K):
        aps = np.flatnonzero(serving[k])
        users = np.arange(K) if mode == "opt" else np.flatnonzero(coservice[k])
        mean = expectations.g_mean[k][users][:, aps]
        B = np.einsum("u,ua,ub->ab", p[users], mean, np.conj(mean))
        B += np.diag(p[users] @ var[k][users][:, aps] + F[k, aps])
        a[k, aps] = p[k] * _solve_with_jitter(hermitian(B), expectations.g_mean[k, k, aps], k)
    return LsfdWeights(a, mode)


@dataclass
class UplinkSEResult:
    bound: str
    prelog: float
    sinr: np.ndarray  # (n, K) per-draw samples or (K,) deterministic
    samples: bool = field(default=False)

    @property
    def se(self) -> np.ndarray:
        rates = np.log2(1.0 + self.sinr)
        return self.prelog * (rates.mean(axis=0) if self.samples else rates)

    @property
    def stderr(self) -> np.ndarray:
        if not self.samples or self.sinr.shape[0] < 2:
            return np.zeros(self.sinr.shape[-1])
        rates = np.log2(1.0 + self.sinr)
        return self.prelog * rates.std(axis=0, ddof=1) / np.sqrt(rates.shape[0])

    def merge(self, other: "UplinkSEResult") -> "UplinkSEResult":
        if not (self.samples and other.samples) or self.bound != other.bound:
            raise ConfigurationError("only sampled results of the same bound can be merged")
        return UplinkSEResult(self.bound, self.prelog, np.concatenate([self.sinr, other.sinr]), True)


def _ratio(signal: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    out = np.zeros_like(signal, dtype=float)
    np.divide(signal, denominator, out=out, where=denominator > 0)
    return np.clip(out, 0.0, None)


def instantaneous_sinr(
    combiner: CombinerDraw,
    draw: ChannelDraw,
    powers,
    noise_power: float,
    stats: EstimationStatistics | None = None,
    genie: bool = False,
) -> np.ndarray:
    """Per-draw SINR (n, K) using estimates plus error statistics, or the true channels when genie."""
    v = combiner.v
    K = v.shape[1]
    p = _check_powers(powers, K)
    channels = draw.h if genie else draw.hhat
    proj = np.einsum("nkla,nila->nki", np.conj(v), channels)
    received = np.abs(proj) ** 2 * p[None, None, :]
    signal = np.einsum("nkk->nk", received)
    denominator = received.sum(axis=-1) - signal + noise_power * (np.abs(v) ** 2).sum(axis=(-2, -1))
    if not genie:
        if stats is None:
            raise ConfigurationError("the centralized bound needs the error correlation matrices")
        err = np.einsum("i,ilab->lab", p, stats.err_corr)
        denominator = denominator + np.real(np.einsum("nkla,lab,nklb->nk", np.conj(v), err, v))
    return _ratio(signal, denominator)


def uatf_sinr(moments: CombinerMoments, powers, noise_power: float) -> np.ndarray:
    K = moments.norm.shape[0]
    p = _check_powers(powers, K)
    signal = p * np.abs(np.diag(moments.gain_mean)) ** 2
    denominator = moments.gain_power @ p - signal + noise_power * moments.norm
    return _ratio(signal, denominator)


def distributed_sinr(expectations: DistributedExpectations, lsfd: LsfdWeights, powers) -> np.ndarray:
    a = lsfd.a
    K = a.shape[0]
    p = _check_powers(powers, K)
    am = np.einsum("kil,kl->ki", expectations.g_mean, np.conj(a))
    spread = np.einsum("kil,kl->ki", expectations.g_var, np.abs(a) ** 2)
    signal = p * np.abs(np.diag(am)) ** 2
    denominator = (np.abs(am) ** 2 + spread) @ p + (np.abs(a) ** 2 * expectations.F).sum(axis=1) - signal
    return _ratio(signal, denominator)


def single_antenna_mr_sinr(stats: EstimationStatistics, cluster: ClusterState, lsfd: LsfdWeights, powers) -> np.ndarray:
    """Closed-form distributed MR SINR for single-antenna APs."""
    if stats.antennas != 1:
        raise ConfigurationError("the closed-form MR expression needs single-antenna APs")
    K = stats.num_ues
    p = _check_powers(powers, K)
    beta = np.real(stats.R[..., 0, 0])
    eta, tau = stats.pilot_powers, stats.num_pilots
    sigma2 = stats.noise_power
    psi = np.real(stats.psi[..., 0, 0])[stats.pilots]  # (K, L)
    gamma = eta[:, None] * tau * beta**2 / psi * cluster.serving
    a = lsfd.a * cluster.serving
    wa = np.abs(a) ** 2

    coherent = np.abs((np.conj(a) * gamma).sum(axis=1)) ** 2
    spread = (wa * gamma) @ beta.T  # [k, i] = sum_l |a_kl|^2 gamma_kl beta_il
    # [k, i] = sum_l conj(a_kl) gamma_kl beta_il / beta_kl, scaled by sqrt(eta_i / eta_k)
    leak = np.einsum("kl,il->ki", np.conj(a) * gamma / beta, beta)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.sqrt(np.where(eta[:, None] > 0, eta[None, :] / eta[:, None], 0.0))
    leak = np.abs(leak * scale) ** 2 * (cluster.pilot_sharing & ~np.eye(K, dtype=bool))

    signal = p * coherent
    denominator = spread @ p + leak @ p + sigma2 * (wa * gamma).sum(axis=1)
    return _ratio(signal, denominator)


def lsfd_weighted_combiner(combiner: CombinerDraw, lsfd: LsfdWeights) -> CombinerDraw:
    return CombinerDraw(v=combiner.v * lsfd.a[None, :, :, None], scheme=combiner.scheme)


def _require(bound: str, **inputs):
    missing = [name for name, value in inputs.items() if value is None]
    if missing:
        raise ConfigurationError(f"bound {bound!r} needs {', '.join(missing)}")


def uplink_se(
    bound: str,
    *,
    prelog: float,
    powers,
    noise_power: float,
    combiner: CombinerDraw | None = None,
    draw: ChannelDraw | None = None,
    stats: EstimationStatistics | None = None,
    cluster: ClusterState | None = None,
    moments: CombinerMoments | None = None,
    expectations: DistributedExpectations | None = None,
    lsfd: LsfdWeights | None = None,
) -> UplinkSEResult:
    if bound == "centralized":
        _require(bound, combiner=combiner, draw=draw, stats=stats)
        return UplinkSEResult(bound, prelog, instantaneous_sinr(combiner, draw, powers, noise_power, stats), True)
    if bound == "genie-centralized":
        _require(bound, combiner=combiner, draw=draw)
        return UplinkSEResult(bound, prelog, instantaneous_sinr(combiner, draw, powers, noise_power, genie=True), True)
    if bound == "genie-distributed":
        _require(bound, combiner=combiner, draw=draw, lsfd=lsfd)
        weighted = lsfd_weighted_combiner(combiner, lsfd)
        return UplinkSEResult(bound, prelog, instantaneous_sinr(weighted, draw, powers, noise_power, genie=True), True)
    if bound == "cellular":
        _require(bound, combiner=combiner, draw=draw, stats=stats, cluster=cluster)
        if np.any(cluster.cluster_sizes() != 1):
            raise ConfigurationError("the cellular bound needs exactly one serving AP per UE")
        return UplinkSEResult(bound, prelog, instantaneous_sinr(combiner, draw, powers, noise_power, stats), True)
    if bound == "c-UatF":
        _require(bound, moments=moments)
        return UplinkSEResult(bound, prelog, uatf_sinr(moments, powers, noise_power))
    if bound == "distributed":
        _require(bound, expectations=expectations, lsfd=lsfd)
        return UplinkSEResult(bound, prelog, distributed_sinr(expectations, lsfd, powers))
    if bound == "mr-closed-form":
        _require(bound, stats=stats, cluster=cluster)
        weights = lsfd if lsfd is not None else LsfdWeights(cluster.serving.astype(complex), "none")
        return UplinkSEResult(bound, prelog, single_antenna_mr_sinr(stats, cluster, weights, powers))
    raise ConfigurationError(f"unknown uplink bound {bound!r}")
