"""SINR coefficients in the generic forms the power-control algorithms work with.

ul-generic / dl-centralized:  SINR_k = b_k x_k / (sum_i c_ki x_i + noise_k)
dl-distributed:               SINR_k = (b_k^T x_k)^2 / (sum_i |mu_ki^T x_i|^2
                                        + sum_i sum_l var_kil x_il^2 - (b_k^T x_k)^2 + noise)
with x the per-link square roots of the powers in the distributed case.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from services.cluster import ClusterState
from services.downlink import ap_share, distributed_terms
from services.errors import ConfigurationError, NumericalError
from services.uplink import CombinerMoments

logger = logging.getLogger(__name__)

FORMS = ("ul-generic", "dl-centralized", "dl-distributed")


@dataclass
class SinrCoefficients:
    form: str
    b: np.ndarray  # (K,) or (K, L) for dl-distributed
    c: np.ndarray  # (K, K); unused for dl-distributed
    noise: np.ndarray  # (K,)
    max_power: float
    serving: np.ndarray  # (K, L)
    share: np.ndarray | None = None  # (K, L) dl-centralized per-AP weights
    mu: np.ndarray | None = None  # (K, K, L) rotated, dl-distributed
    var: np.ndarray | None = None  # (K, K, L) dl-distributed

    @property
    def num_ues(self) -> int:
        return self.serving.shape[0]

    @property
    def distributed(self) -> bool:
        return self.form == "dl-distributed"

    def sinr(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.distributed:
            signal = (self.b * x).sum(axis=1) ** 2
            coherent = np.abs(np.einsum("kil,il->ki", self.mu, x)) ** 2
            spread = np.einsum("kil,il->ki", self.var, x**2)
            denominator = (coherent + spread).sum(axis=1) - signal + self.noise
        else:
            signal = self.b * x
            denominator = self.c @ x + self.noise
        return np.clip(signal / denominator, 0.0, None)

    def interference_matrix(self, k: int, i: int) -> np.ndarray:
        """Real L x L matrix C_ki with x_i^T C_ki x_i the interference of UE i at UE k."""
        m = self.mu[k, i]
        return np.real(np.outer(m, np.conj(m))) + np.diag(self.var[k, i])

    def usage(self, x) -> np.ndarray:
        """Per-AP transmit power; for ul-generic the per-UE power itself."""
        x = np.asarray(x, dtype=float)
        if self.form == "ul-generic":
            return x
        if self.form == "dl-centralized":
            return (x[:, None] * self.share * self.serving).sum(axis=0)
        return (x**2 * self.serving).sum(axis=0)

    def feasible(self, x, rtol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= -rtol) and np.all(self.usage(x) <= self.max_power * (1.0 + rtol)))

    def normalized(self) -> "SinrCoefficients":
        """Same SINRs with every UE's noise term scaled to one."""
        scale = np.divide(1.0, self.noise, out=np.ones_like(self.noise, dtype=float), where=self.noise > 0)
        if self.distributed:
            root = np.sqrt(scale)
            return replace(
                self,
                b=self.b * root[:, None],
                noise=self.noise * scale,
                mu=self.mu * root[:, None, None],
                var=self.var * scale[:, None, None],
            )
        return replace(self, b=self.b * scale, c=self.c * scale[:, None], noise=self.noise * scale)


def _raw_coefficients(
    form: str,
    moments: CombinerMoments,
    cluster: ClusterState,
    noise_power: float,
    max_power: float,
) -> SinrCoefficients:
    K = moments.norm.shape[0]
    diag_gain = np.abs(np.diag(moments.gain_mean)) ** 2

    if form == "ul-generic":
        c = moments.gain_power.copy()
        c[np.diag_indices(K)] -= diag_gain
        return SinrCoefficients(
            form, diag_gain, np.clip(c, 0.0, None), noise_power * moments.norm, max_power, cluster.serving.copy()
        )

    if form == "dl-centralized":
        norm = np.where(moments.norm > 0, moments.norm, np.inf)
        b = diag_gain / norm
        c = moments.gain_power.T / norm[None, :]
        c[np.diag_indices(K)] -= b
        return SinrCoefficients(
            form,
            b,
            np.clip(c, 0.0, None),
            np.full(K, noise_power),
            max_power,
            cluster.serving.copy(),
            share=ap_share(moments),
        )

    mu, var = distributed_terms(moments)
    own = mu[np.arange(K), np.arange(K)]  # (K, L)
    magnitude = np.abs(own)
    phase = np.divide(np.conj(own), magnitude, out=np.ones_like(own), where=magnitude > 0)
    mu = mu * phase[None, :, :]
    rotated = mu[np.arange(K), np.arange(K)]
    if np.max(np.abs(rotated.imag), initial=0.0) > 1e-8 * max(np.max(magnitude, initial=0.0), 1e-300):
        raise NumericalError("signal coefficients are not real after phase rotation")
    b = np.real(rotated) * cluster.serving
    return SinrCoefficients(
        form,
        b,
        np.zeros((K, K)),
        np.full(K, noise_power),
        max_power,
        cluster.serving.copy(),
        mu=mu,
        var=var,
    )


def extract_coefficients(
    form: str,
    moments: CombinerMoments,
    cluster: ClusterState,
    noise_power: float,
    max_power: float,
) -> SinrCoefficients:
    """Coefficients from combiner moments (Monte Carlo or closed-form, LSFD weights applied), scaled to unit noise."""
    if form not in FORMS:
        raise ConfigurationError(f"unknown coefficient form {form!r}")
    return _raw_coefficients(form, moments, cluster, noise_power, max_power).normalized()
