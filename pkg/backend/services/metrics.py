"""Channel hardening and favorable propagation diagnostics, fronthaul and complexity accounting."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable

import numpy as np

from services.cluster import ClusterState
from services.errors import ConfigurationError
from services.linalg import complex_normal, psd_sqrt

logger = logging.getLogger(__name__)

COMBINING_SCHEMES = ("MMSE", "P-MMSE", "P-RZF", "MR", "L-MMSE", "LP-MMSE", "MR-local", "opt-LSFD", "n-opt-LSFD")
SCALABILITY_GRID = (20, 40, 80)


def _gain(R: np.ndarray) -> np.ndarray:
    return np.real(np.trace(R, axis1=-2, axis2=-1)) / R.shape[-1]


def _coherent_scale(R_k: np.ndarray, rho_k: np.ndarray, serving_k: np.ndarray) -> float:
    rho = np.where(serving_k, np.asarray(rho_k, dtype=float), 0.0)
    if np.any(rho < 0) or not np.any(rho > 0):
        raise ConfigurationError("at least one positive power is needed on the serving APs")
    return float(np.sqrt(rho * _gain(R_k)).sum())


def hardening_metric(R_k: np.ndarray, rho_k, serving_k) -> float:
    """Var/mean^2 of the effective channel of UE k under normalized MR precoding.

    R_k is (L, N, N), rho_k and serving_k are length L.
    """
    N = R_k.shape[-1]
    scale = _coherent_scale(R_k, rho_k, serving_k)
    rho = np.where(serving_k, rho_k, 0.0)
    beta = _gain(R_k)
    fourth = np.real(np.einsum("lab,lba->l", R_k, R_k))
    numerator = np.sum(np.divide(rho * fourth, N * beta, out=np.zeros_like(beta), where=beta > 0))
    return float(numerator / (N * scale**2))


def favorable_metric(R_k: np.ndarray, R_i: np.ndarray, rho_k, rho_i, serving_k, serving_i) -> float:
    N = R_k.shape[-1]
    scale = _coherent_scale(R_k, rho_k, serving_k)
    rho = np.where(serving_i, np.asarray(rho_i, dtype=float), 0.0)
    beta_i = _gain(R_i)
    overlap = np.real(np.einsum("lab,lba->l", R_i, R_k))
    numerator = np.sum(np.divide(rho * overlap, N * beta_i, out=np.zeros_like(beta_i), where=beta_i > 0))
    return float(numerator / (N * scale**2))


def hardening_samples(R_k: np.ndarray, rho_k, serving_k, rng: np.random.Generator, num_draws: int) -> np.ndarray:
    """Effective channel gain of UE k divided by its mean; its variance is the hardening metric."""
    N = R_k.shape[-1]
    aps = np.flatnonzero(serving_k)
    beta = _gain(R_k[aps])
    h = np.einsum("lab,nlb->nla", psd_sqrt(R_k[aps]), complex_normal(rng, (num_draws, aps.size, N)))
    weights = np.sqrt(np.asarray(rho_k, dtype=float)[aps] / (N * beta))
    gain = (np.sum(np.abs(h) ** 2, axis=-1) * weights).sum(axis=-1)
    return gain / (np.sqrt(N) * _coherent_scale(R_k, rho_k, serving_k))


def favorable_samples(
    R_k: np.ndarray, R_i: np.ndarray, rho_k, rho_i, serving_k, serving_i, rng: np.random.Generator, num_draws: int
) -> np.ndarray:
    """Interfering effective channel of UE i at UE k over the mean desired gain; E{|x|^2} is the favorable metric."""
    N = R_k.shape[-1]
    aps = np.flatnonzero(serving_i)
    beta_i = _gain(R_i[aps])
    h_k = np.einsum("lab,nlb->nla", psd_sqrt(R_k[aps]), complex_normal(rng, (num_draws, aps.size, N)))
    h_i = np.einsum("lab,nlb->nla", psd_sqrt(R_i[aps]), complex_normal(rng, (num_draws, aps.size, N)))
    weights = np.sqrt(np.asarray(rho_i, dtype=float)[aps] / (N * beta_i))
    cross = (np.einsum("nla,nla->nl", np.conj(h_k), h_i) * weights).sum(axis=-1)
    return cross / (np.sqrt(N) * _coherent_scale(R_k, rho_k, serving_k))


def fronthaul_count(
    mode: str,
    cluster: ClusterState,
    tau_p: int,
    tau_u: int,
    tau_d: int,
    N: int,
    lsfd: str = "none",
    link: str = "uplink",
) -> Dict[str, float]:
    """Complex scalars over all fronthaul links: per coherence block and per statistics realization."""
    L = cluster.num_aps
    load = cluster.load()
    if mode == "centralized":
        per_block = (tau_p + tau_u) * N * L if link == "uplink" else tau_d * N * L
        return {"per_block": float(per_block), "statistics": 0.0}
    if mode != "distributed":
        raise ConfigurationError(f"unknown operation mode {mode!r}")
    if link != "uplink":
        return {"per_block": float(tau_d * load.sum()), "statistics": 0.0}

    K = cluster.num_ues
    if lsfd == "opt":
        statistics = (3 * K + 1) / 2 * load.sum()
    elif lsfd == "n-opt":
        per_ue = (3 * cluster.coservice.sum(axis=1) + 1) / 2
        statistics = float((cluster.serving * per_ue[:, None]).sum())
    elif lsfd == "none":
        statistics = 0.0
    else:
        raise ConfigurationError(f"unknown LSFD mode {lsfd!r}")
    return {"per_block": float(tau_u * load.sum()), "statistics": float(statistics)}


def complexity_breakdown(scheme: str, cluster: ClusterState, N: int, tau_p: int) -> tuple[np.ndarray, np.ndarray]:
    """(estimation, combining) complex multiplications per UE and coherence block."""
    K = cluster.num_ues
    M = cluster.cluster_sizes().astype(float)
    S = cluster.coservice.sum(axis=1).astype(float)
    served = (cluster.serving * cluster.load()[None, :]).sum(axis=1).astype(float)  # sum_{l in M_k} |D_l|
    unit = N * tau_p + N**2
    NM = N * M

    def inversion(size, users):
        return (size**2 + size) / 2 * users + size**2 + (size**3 - size) / 3

    if scheme == "MMSE":
        return unit * K * M, inversion(NM, K)
    if scheme == "P-MMSE":
        return unit * S * M, inversion(NM, S)
    if scheme == "P-RZF":
        return unit * S * M, (S**2 + S) / 2 * NM + S**2 + S * NM + (S**3 - S) / 3
    if scheme in ("MR", "MR-local"):
        return unit * M, np.zeros(K)
    if scheme == "L-MMSE":
        return unit * K * M, (N**2 + N) / 2 * K * M + N**2 * M + (N**3 - N) / 3 * M
    if scheme == "LP-MMSE":
        return unit * served, (N**2 + N) / 2 * served + N**2 * M + (N**3 - N) / 3 * M
    if scheme in ("opt-LSFD", "n-opt-LSFD"):
        return np.zeros(K), M**2 + (M**3 - M) / 3
    raise ConfigurationError(f"unknown combining scheme {scheme!r}")


def complexity_count(scheme: str, cluster: ClusterState, N: int, tau_p: int) -> np.ndarray:
    estimation, combining = complexity_breakdown(scheme, cluster, N, tau_p)
    return estimation + combining


def block_clusters(num_ues: int, tau_p: int, aps_per_group: int = 4) -> ClusterState:
    """Synthetic network where every group of tau_p UEs owns aps_per_group APs; sizes do not depend on K."""
    if num_ues % tau_p:
        raise ConfigurationError("num_ues must be a multiple of tau_p")
    groups = num_ues // tau_p
    serving = np.zeros((num_ues, groups * aps_per_group), dtype=bool)
    for g in range(groups):
        serving[g * tau_p : (g + 1) * tau_p, g * aps_per_group : (g + 1) * aps_per_group] = True
    pilots = np.tile(np.arange(tau_p), groups)
    return ClusterState(pilots=pilots, serving=serving, num_pilots=tau_p)


def scalability_flags(
    N: int,
    tau_p: int,
    tau_u: int,
    tau_d: int,
    grid: Iterable[int] = SCALABILITY_GRID,
) -> Dict[str, bool]:
    """A scheme is scalable iff its per-UE multiplications and per-AP fronthaul stay constant over the K grid."""
    clusters = [block_clusters(K, tau_p) for K in grid]

    def constant(values) -> bool:
        return bool(np.allclose(values, values[0]))

    flags: Dict[str, bool] = {}
    for scheme in COMBINING_SCHEMES:
        per_ue = [complexity_count(scheme, c, N, tau_p).mean() for c in clusters]
        if scheme.endswith("-LSFD"):
            lsfd = scheme.removesuffix("-LSFD")
            per_ap = [fronthaul_count("distributed", c, tau_p, tau_u, tau_d, N, lsfd)["statistics"] / c.num_aps for c in clusters]
            flags[scheme] = constant(per_ue) and constant(per_ap)
            continue
        mode = "centralized" if scheme in ("MMSE", "P-MMSE", "P-RZF", "MR") else "distributed"
        per_ap = [fronthaul_count(mode, c, tau_p, tau_u, tau_d, N)["per_block"] / c.num_aps for c in clusters]
        flags[scheme] = constant(per_ue) and constant(per_ap)
    return flags


@dataclass
class ScalabilityReport:
    fronthaul: Dict[str, Dict[str, float]] = field(default_factory=dict)
    complexity: Dict[str, list] = field(default_factory=dict)
    scalable: Dict[str, bool] = field(default_factory=dict)
    hardening: list = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def build_scalability_report(
    cluster: ClusterState,
    N: int,
    tau_p: int,
    tau_u: int,
    tau_d: int,
    schemes: Iterable[str] = COMBINING_SCHEMES,
    R=None,
    rho=None,
) -> ScalabilityReport:
    """Counts for one setup keyed by scheme; hardening per UE when R (K, L, N, N) and rho (K, L) are given."""
    report = ScalabilityReport()
    report.fronthaul["centralized-uplink"] = fronthaul_count("centralized", cluster, tau_p, tau_u, tau_d, N)
    report.fronthaul["centralized-downlink"] = fronthaul_count("centralized", cluster, tau_p, tau_u, tau_d, N, link="downlink")
    report.fronthaul["distributed-downlink"] = fronthaul_count("distributed", cluster, tau_p, tau_u, tau_d, N, link="downlink")
    for lsfd in ("opt", "n-opt", "none"):
        report.fronthaul[f"distributed-uplink-{lsfd}"] = fronthaul_count("distributed", cluster, tau_p, tau_u, tau_d, N, lsfd)
    for scheme in schemes:
        report.complexity[scheme] = complexity_count(scheme, cluster, N, tau_p).tolist()
    report.scalable = scalability_flags(N, tau_p, tau_u, tau_d)
    if R is not None and rho is not None:
        report.hardening = [hardening_metric(R[k], rho[k], cluster.serving[k]) for k in range(cluster.num_ues)]
    return report
