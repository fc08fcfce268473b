"""Scalable power heuristics computed from large-scale fading only."""

from __future__ import annotations

import numpy as np

from Algorithms.base import PowerVector
from services.cluster import ClusterState
from services.errors import ConfigurationError

UPLINK_POLICIES = ("full", "fpc")
CENTRALIZED_POLICIES = ("equal", "fpa")
DISTRIBUTED_POLICIES = ("equal", "fpa")


def _check_exponents(upsilon: float, kappa: float = 0.0):
    if not -1.0 <= upsilon <= 1.0:
        raise ConfigurationError(f"upsilon must lie in [-1, 1], got {upsilon}")
    if not 0.0 <= kappa <= 1.0:
        raise ConfigurationError(f"kappa must lie in [0, 1], got {kappa}")


def _served_gain(beta: np.ndarray, cluster: ClusterState) -> np.ndarray:
    return (beta * cluster.serving).sum(axis=1)


def uplink_fractional_power(beta, cluster: ClusterState, max_power: float, upsilon: float = 0.5) -> np.ndarray:
    _check_exponents(upsilon)
    weighted = _served_gain(np.asarray(beta, dtype=float), cluster) ** upsilon
    peak = np.where(cluster.coservice, weighted[None, :], -np.inf).max(axis=1)
    return max_power * weighted / peak


def centralized_fractional_power(
    beta,
    cluster: ClusterState,
    max_power: float,
    upsilon: float = -0.5,
    kappa: float = 0.5,
    share=None,
) -> np.ndarray:
    """rho_k = rho_max g_k^u w_k^-kappa / max_{l in M_k} sum_{i in D_l} g_i^u w_i^(1-kappa).

    g_k is the gain summed over M_k and w_k the largest per-AP share of the
    unit-power precoder (1 without a share).
    """
    _check_exponents(upsilon, kappa)
    serving = cluster.serving
    weighted = _served_gain(np.asarray(beta, dtype=float), cluster) ** upsilon
    omega = np.ones(serving.shape[0]) if share is None else np.where(serving, share, 0.0).max(axis=1)
    omega = np.where(omega > 0, omega, 1.0)

    per_ap = serving.T.astype(float) @ (weighted * omega ** (1.0 - kappa))  # (L,)
    worst = np.where(serving, per_ap[None, :], -np.inf).max(axis=1)
    return max_power * weighted * omega ** (-kappa) / worst


def centralized_equal_power(cluster: ClusterState, max_power: float) -> np.ndarray:
    return np.full(cluster.num_ues, max_power / cluster.num_pilots)


def distributed_fractional_power(beta, cluster: ClusterState, max_power: float, upsilon: float = 0.5) -> np.ndarray:
    """rho_kl = rho_max beta_kl^u / sum_{i in D_l} beta_il^u on served links."""
    _check_exponents(upsilon)
    weighted = np.where(cluster.serving, np.asarray(beta, dtype=float) ** upsilon, 0.0)
    per_ap = weighted.sum(axis=0)
    return max_power * np.divide(weighted, per_ap[None, :], out=np.zeros_like(weighted), where=per_ap > 0)


def distributed_equal_power(cluster: ClusterState, max_power: float) -> np.ndarray:
    load = cluster.load()
    per_link = np.divide(max_power, load, out=np.zeros(load.shape), where=load > 0)
    return per_link[None, :] * cluster.serving


def heuristic_power(
    policy: str,
    beta,
    cluster: ClusterState,
    max_power: float,
    *,
    link: str = "uplink",
    upsilon: float | None = None,
    kappa: float = 0.5,
    share=None,
) -> PowerVector:
    """Dispatch by link ("uplink", "centralized", "distributed") and policy name."""
    if link == "uplink":
        if policy == "full":
            values = np.full(cluster.num_ues, float(max_power))
        elif policy == "fpc":
            values = uplink_fractional_power(beta, cluster, max_power, 0.5 if upsilon is None else upsilon)
        else:
            raise ConfigurationError(f"unknown uplink heuristic {policy!r}")
    elif link == "centralized":
        if policy == "equal":
            values = centralized_equal_power(cluster, max_power)
        elif policy == "fpa":
            values = centralized_fractional_power(beta, cluster, max_power, -0.5 if upsilon is None else upsilon, kappa, share)
        else:
            raise ConfigurationError(f"unknown centralized downlink heuristic {policy!r}")
    elif link == "distributed":
        if policy == "equal":
            rho = distributed_equal_power(cluster, max_power)
        elif policy == "fpa":
            rho = distributed_fractional_power(beta, cluster, max_power, 0.5 if upsilon is None else upsilon)
        else:
            raise ConfigurationError(f"unknown distributed downlink heuristic {policy!r}")
        values = np.sqrt(rho)
    else:
        raise ConfigurationError(f"unknown link {link!r}")
    return PowerVector(values, float("nan"), 0, True, f"{link}-{policy}")
