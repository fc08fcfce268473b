from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any

import numpy as np

from services.errors import ConfigurationError

logger = logging.getLogger(__name__)


@dataclass
class ClusterState:
    """Pilot book and serving relation of one setup.

    `serving[k, l]` is True iff AP l is in the serving set M_k of UE k. The
    remaining index sets (D_l, P_k, S_k) are derived from it. Indices are 0-based.
    """

    pilots: np.ndarray  # (K,) int in [0, num_pilots)
    serving: np.ndarray  # (K, L) bool
    num_pilots: int

    @property
    def num_ues(self) -> int:
        return self.serving.shape[0]

    @property
    def num_aps(self) -> int:
        return self.serving.shape[1]

    @property
    def serving_sets(self) -> list[list[int]]:
        return [np.flatnonzero(row).tolist() for row in self.serving]

    @property
    def served_sets(self) -> list[list[int]]:
        return [np.flatnonzero(col).tolist() for col in self.serving.T]

    @property
    def pilot_sharing(self) -> np.ndarray:
        """(K, K) bool, True iff the two UEs use the same pilot."""
        return self.pilots[:, None] == self.pilots[None, :]

    @property
    def pilot_peers(self) -> list[list[int]]:
        return [np.flatnonzero(row).tolist() for row in self.pilot_sharing]

    @property
    def coservice(self) -> np.ndarray:
        """(K, K) bool, True iff the two UEs share at least one serving AP."""
        return compute_coservice_sets(self)

    @property
    def coservice_sets(self) -> list[list[int]]:
        return [np.flatnonzero(row).tolist() for row in self.coservice]

    def cluster_sizes(self) -> np.ndarray:
        return self.serving.sum(axis=1)

    def load(self) -> np.ndarray:
        return self.serving.sum(axis=0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "num_pilots": int(self.num_pilots),
            "pilots": self.pilots.astype(int).tolist(),
            "num_aps": int(self.num_aps),
            "serving_sets": self.serving_sets,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ClusterState":
        pilots = np.asarray(data["pilots"], dtype=int)
        serving = np.zeros((pilots.size, int(data["num_aps"])), dtype=bool)
        for k, aps in enumerate(data["serving_sets"]):
            serving[k, aps] = True
        return cls(pilots=pilots, serving=serving, num_pilots=int(data["num_pilots"]))


def _greedy_pilots(beta: np.ndarray, num_pilots: int) -> np.ndarray:
    K = beta.shape[0]
    masters = np.argmax(beta, axis=1)
    pilots = np.empty(K, dtype=int)
    for k in range(K):
        if k < num_pilots:
            pilots[k] = k
            continue
        # pilot power already seen by the master AP of k
        load = np.bincount(pilots[:k], weights=beta[:k, masters[k]], minlength=num_pilots)
        pilots[k] = int(np.argmin(load))
    return pilots


def _ensure_master(serving: np.ndarray, beta: np.ndarray) -> np.ndarray:
    masters = np.argmax(beta, axis=1)
    for k in np.flatnonzero(~serving.any(axis=1)):
        logger.warning("UE %d had no serving AP, forcing service at master AP %d", k, masters[k])
        serving[k, masters[k]] = True
    return serving


def assign_pilots_and_dcc(beta: np.ndarray, num_pilots: int) -> ClusterState:
    """Greedy pilot assignment followed by one UE per pilot at every AP."""
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 2 or beta.shape[0] < 1:
        raise ConfigurationError("beta must be a (K, L) array with K >= 1")
    if num_pilots < 1:
        raise ConfigurationError("num_pilots must be at least 1")

    K, L = beta.shape
    pilots = _greedy_pilots(beta, num_pilots)

    serving = np.zeros((K, L), dtype=bool)
    for t in range(num_pilots):
        users = np.flatnonzero(pilots == t)
        if users.size == 0:
            continue
        strongest = users[np.argmax(beta[users], axis=0)]
        serving[strongest, np.arange(L)] = True

    return ClusterState(pilots=pilots, serving=_ensure_master(serving, beta), num_pilots=num_pilots)


def threshold_dcc(
    beta: np.ndarray,
    delta: float,
    num_pilots: int | None = None,
    pilots: np.ndarray | None = None,
) -> ClusterState:
    """Serve UE k from every AP with beta_kl >= delta (linear), master AP always included."""
    if delta <= 0:
        raise ConfigurationError(f"threshold must be positive, got {delta}")
    beta = np.asarray(beta, dtype=float)
    if pilots is None:
        num_pilots = beta.shape[0] if num_pilots is None else num_pilots
        pilots = _greedy_pilots(beta, num_pilots)
    else:
        pilots = np.asarray(pilots, dtype=int)
        num_pilots = int(pilots.max()) + 1 if num_pilots is None else num_pilots

    serving = beta >= delta
    serving[np.arange(beta.shape[0]), np.argmax(beta, axis=1)] = True
    return ClusterState(pilots=pilots, serving=serving, num_pilots=num_pilots)


def compute_coservice_sets(state: ClusterState) -> np.ndarray:
    overlap = state.serving.astype(int) @ state.serving.T.astype(int)
    return overlap > 0


def small_cell_selection(state: ClusterState, beta: np.ndarray) -> np.ndarray:
    masked = np.where(state.serving, beta, -np.inf)
    return np.argmax(masked, axis=1)


def single_ap_clusters(state: ClusterState, aps: np.ndarray) -> ClusterState:
    """Same pilots, each UE served only by aps[k]."""
    K, L = state.serving.shape
    serving = np.zeros((K, L), dtype=bool)
    serving[np.arange(K), np.asarray(aps, dtype=int)] = True
    return ClusterState(pilots=state.pilots.copy(), serving=serving, num_pilots=state.num_pilots)


def cellular_clusters(beta: np.ndarray, num_pilots: int) -> ClusterState:
    """Cellular baseline: greedy pilots, each UE served by its strongest AP only."""
    beta = np.asarray(beta, dtype=float)
    pilots = _greedy_pilots(beta, num_pilots)
    serving = np.zeros(beta.shape, dtype=bool)
    serving[np.arange(beta.shape[0]), np.argmax(beta, axis=1)] = True
    return ClusterState(pilots=pilots, serving=serving, num_pilots=num_pilots)
