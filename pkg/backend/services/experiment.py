"""Monte Carlo experiment harness.

Each setup deploys a network, builds the channel statistics and clusters,
draws coherence blocks in batches and reduces them to one SE value per UE.
The per-UE values of all setups are pooled into a CDF table.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import reduce
from itertools import repeat
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Mapping, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from Algorithms.base import BasePowerAlgorithm, PowerVector
from Algorithms.coefficients import extract_coefficients
from Algorithms.dl_cent_maxmin_fixedpoint import CentralizedDownlinkMaxMin
from Algorithms.dl_cent_sumse_bcd import CentralizedDownlinkSumSEBCD
from Algorithms.dl_dist_maxmin_bisection import DistributedDownlinkMaxMinBisection
from Algorithms.dl_dist_sumse_bcd import DistributedDownlinkSumSEBCD
from Algorithms.heuristic import UPLINK_POLICIES, heuristic_power
from Algorithms.ul_maxmin_fixedpoint import UplinkMaxMinFixedPoint
from Algorithms.ul_sumse_bcd import UplinkSumSEBCD
from services.cluster import (
    ClusterState,
    assign_pilots_and_dcc,
    cellular_clusters,
    single_ap_clusters,
    small_cell_selection,
)
from services.correlation import ChannelStatistics, build_channel_statistics
from services.downlink import (
    ap_share,
    downlink_se,
    duality_power_allocation,
    per_ap_power_usage,
    precoder_from_combiner,
)
from services.errors import CellFreeError, ConfigurationError, SetupError
from services.estimation import ChannelDraw, EstimationStatistics, build_estimation_statistics, sample_channel_draw
from services.geometry import (
    LargeScaleFading,
    NetworkConfig,
    deploy,
    large_scale_fading,
    parse_network_config,
    pathloss_db,
    wrap_displacement,
)
from services.metrics import ScalabilityReport, build_scalability_report
from services.presets import preset_overrides
from services.uplink import (
    CENTRALIZED_SCHEMES,
    LOCAL_SCHEMES,
    CombinerDraw,
    CombinerMoments,
    UplinkSEResult,
    centralized_combiner,
    distributed_expectations,
    local_combiner,
    lsfd_weights,
    uplink_se,
)

logger = logging.getLogger(__name__)

VERSION = "0.1.0"
QUANTILES = (0.05, 0.10, 0.50)
MODES = ("centralized", "distributed", "cellular", "small-cell", "snr")
SNR_ARCHITECTURES = ("cell-free", "small-cell", "co-located")

CENTRALIZED_DL_POLICIES = ("equal", "fpa", "maxmin", "sumse", "duality")
DISTRIBUTED_DL_POLICIES = ("equal", "fpa", "maxmin", "sumse")

_UPLINK_BOUNDS = {
    "centralized": ("centralized", "c-UatF", "genie-centralized"),
    "distributed": ("distributed", "genie-distributed", "mr-closed-form"),
    "cellular": ("cellular",),
    "small-cell": ("cellular",),
}
_DOWNLINK_BOUNDS = {
    "centralized": ("centralized", "genie"),
    "distributed": ("distributed", "mr-closed-form", "genie"),
    "cellular": ("distributed", "genie"),
    "small-cell": ("distributed", "genie"),
}
_PER_DRAW_UPLINK = ("centralized", "genie-centralized", "genie-distributed", "cellular")

_ALGORITHMS = {
    ("ul-generic", "maxmin"): UplinkMaxMinFixedPoint,
    ("ul-generic", "sumse"): UplinkSumSEBCD,
    ("dl-centralized", "maxmin"): CentralizedDownlinkMaxMin,
    ("dl-centralized", "sumse"): CentralizedDownlinkSumSEBCD,
    ("dl-distributed", "maxmin"): DistributedDownlinkMaxMinBisection,
    ("dl-distributed", "sumse"): DistributedDownlinkSumSEBCD,
}


def _env_int(name: str, default: int) -> int:
    return int(os.environ.get(name, default))


# ---------- Experiment spec ----------

class ExperimentSpec(BaseModel):
    """One experiment. `network` overrides fields of the named scenario preset."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    scenario: Optional[str] = "running-example-100x4"
    network: Dict[str, Any] = Field(default_factory=dict)
    mode: Literal["centralized", "distributed", "cellular", "small-cell", "snr"] = "centralized"
    link: Literal["uplink", "downlink"] = "uplink"
    scheme: Optional[str] = None
    lsfd: Literal["opt", "n-opt", "none"] = "n-opt"
    bound: Optional[str] = None
    power: Optional[str] = None
    upsilon: Optional[float] = Field(None, ge=-1.0, le=1.0)
    kappa: float = Field(0.5, ge=0.0, le=1.0)
    expectations: Literal["monte-carlo", "closed-form-MR"] = "monte-carlo"
    sampling: Literal["direct", "pilot-path"] = "direct"
    num_setups: int = Field(default_factory=lambda: _env_int("CELLFREE_DEFAULT_SETUPS", 50), ge=0)
    draws_per_setup: int = Field(default_factory=lambda: _env_int("CELLFREE_DEFAULT_DRAWS", 500), ge=1)
    batch_size: int = Field(default_factory=lambda: _env_int("CELLFREE_DRAW_BATCH", 50), ge=1)
    workers: int = Field(1, ge=1)
    seed: int = Field(0, ge=0)
    output: Optional[str] = None
    format: Literal["csv", "json"] = "csv"

    @model_validator(mode="before")
    @classmethod
    def _fill_defaults(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        mode = data.get("mode", "centralized")
        link = data.get("link", "uplink")
        if mode == "snr":
            return data
        if data.get("scheme") is None:
            data["scheme"] = "MMSE" if mode == "centralized" else "L-MMSE"
        if data.get("bound") is None:
            table = _UPLINK_BOUNDS if link == "uplink" else _DOWNLINK_BOUNDS
            data["bound"] = table.get(mode, ("centralized",))[0]
        if data.get("power") is None:
            data["power"] = "full" if link == "uplink" else "fpa"
        return data

    @model_validator(mode="after")
    def _check_combination(self) -> "ExperimentSpec":
        if self.mode == "snr":
            if self.link != "uplink":
                raise ValueError("the SNR benchmark is uplink only")
            return self
        schemes = CENTRALIZED_SCHEMES if self.mode == "centralized" else LOCAL_SCHEMES
        if self.scheme not in schemes:
            raise ValueError(f"scheme {self.scheme!r} is not available in {self.mode} mode, expected one of {schemes}")

        bounds = (_UPLINK_BOUNDS if self.link == "uplink" else _DOWNLINK_BOUNDS)[self.mode]
        if self.bound not in bounds:
            raise ValueError(f"bound {self.bound!r} is not available for {self.mode} {self.link}, expected one of {bounds}")

        if self.link == "uplink":
            policies = UPLINK_POLICIES + ("maxmin", "sumse")
        else:
            policies = CENTRALIZED_DL_POLICIES if self.mode == "centralized" else DISTRIBUTED_DL_POLICIES
        if self.power not in policies:
            raise ValueError(f"power policy {self.power!r} is not available here, expected one of {policies}")

        closed = self.expectations == "closed-form-MR" or self.bound == "mr-closed-form"
        if closed and self.scheme not in ("MR", "MR-local"):
            raise ValueError("closed-form expectations exist for MR combining only")
        return self


def parse_experiment_spec(data: Mapping[str, Any]) -> ExperimentSpec:
    try:
        return ExperimentSpec.model_validate(dict(data))
    except ValidationError as exc:
        raise ConfigurationError(f"invalid experiment spec: {exc}") from exc


def resolve_network_config(spec: ExperimentSpec) -> NetworkConfig:
    base = preset_overrides(spec.scenario) if spec.scenario else {}
    return parse_network_config({**base, **spec.network, "rng_seed": spec.seed})


# ---------- CDF table ----------

@dataclass
class CdfTable:
    samples: np.ndarray  # sorted ascending
    stderr: np.ndarray  # Monte Carlo standard error of each sample, 0 for exact values
    value_column: str = "se_bits_per_hz"

    @classmethod
    def from_samples(cls, samples, stderr=None, value_column: str = "se_bits_per_hz") -> "CdfTable":
        samples = np.asarray(samples, dtype=float).ravel()
        if samples.size == 0:
            raise ConfigurationError("cannot build a CDF from an empty sample set")
        stderr = np.zeros(samples.size) if stderr is None else np.asarray(stderr, dtype=float).ravel()
        if stderr.shape != samples.shape:
            raise ConfigurationError("one standard error per sample is required")
        order = np.argsort(samples, kind="stable")
        return cls(samples[order], stderr[order], value_column)

    @property
    def count(self) -> int:
        return int(self.samples.size)

    @property
    def cdf_values(self) -> np.ndarray:
        return np.arange(1, self.count + 1) / self.count

    def quantile(self, level: float) -> float:
        # inverted_cdf returns a sample whose cdf_value is the first one >= level
        return float(np.quantile(self.samples, level, method="inverted_cdf"))

    def quantiles(self, levels=QUANTILES) -> Dict[str, float]:
        return {f"{q:g}": self.quantile(q) for q in levels}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "value_column": self.value_column,
            "count": self.count,
            "mean": float(self.samples.mean()),
            "mean_stderr": float(self.stderr.mean()),
            "quantiles": self.quantiles(),
            "samples": self.samples.tolist(),
            "stderr": self.stderr.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CdfTable":
        return cls.from_samples(data["samples"], data.get("stderr"), data.get("value_column", "se_bits_per_hz"))


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    config: NetworkConfig
    tables: Dict[str, CdfTable]
    report: ScalabilityReport | None = None
    powers: Dict[str, Any] | None = None  # power vector of the first setup
    trace: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def table(self) -> CdfTable:
        return next(iter(self.tables.values()))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "version": VERSION,
            "seed": self.spec.seed,
            "spec": self.spec.model_dump(),
            "network": self.config.model_dump(),
            "tables": {name: table.to_dict() for name, table in self.tables.items()},
            "scalability": None if self.report is None else self.report.to_dict(),
            "powers": self.powers,
        }


# ---------- one setup ----------

@dataclass
class SetupState:
    index: int
    config: NetworkConfig
    fading: LargeScaleFading
    channels: ChannelStatistics
    cluster: ClusterState
    stats: EstimationStatistics
    draw_seed: np.random.SeedSequence


@dataclass
class SetupOutcome:
    index: int
    se: np.ndarray
    stderr: np.ndarray
    power: Dict[str, Any]
    report: ScalabilityReport | None = None
    trace: List[Dict[str, Any]] = field(default_factory=list)


def build_clusters(mode: str, beta: np.ndarray, num_pilots: int) -> ClusterState:
    if mode == "cellular":
        return cellular_clusters(beta, num_pilots)
    state = assign_pilots_and_dcc(beta, num_pilots)
    if mode == "small-cell":
        return single_ap_clusters(state, small_cell_selection(state, beta))
    return state


def build_setup(spec: ExperimentSpec, config: NetworkConfig, index: int, seed: np.random.SeedSequence) -> SetupState:
    geometry_seed, draw_seed = seed.spawn(2)
    rng = np.random.default_rng(geometry_seed)
    deployment = deploy(config, rng)
    fading = large_scale_fading(deployment, config, rng)
    channels = build_channel_statistics(fading, config)
    cluster = build_clusters(spec.mode, fading.beta, config.pilot_length)
    stats = build_estimation_statistics(channels, cluster, config.pilot_power, config.noise_power_ul)
    return SetupState(index, config, fading, channels, cluster, stats, draw_seed)


def _combiner(setup: SetupState, scheme: str, draw: ChannelDraw, powers) -> CombinerDraw:
    build = centralized_combiner if scheme in CENTRALIZED_SCHEMES else local_combiner
    return build(scheme, draw, setup.stats, setup.cluster, powers, setup.config.noise_power_ul)


def _draw_pass(
    setup: SetupState,
    spec: ExperimentSpec,
    combiner_powers,
    evaluate: Callable[[CombinerDraw, ChannelDraw], Any] | None = None,
    need_moments: bool = True,
):
    """One sweep over the draws of a setup. Every sweep replays the same draws."""
    rng = np.random.default_rng(setup.draw_seed)
    moments = None
    parts = []
    remaining = spec.draws_per_setup
    while remaining > 0:
        n = min(spec.batch_size, remaining)
        remaining -= n
        draw = sample_channel_draw(setup.stats, rng, n, spec.sampling)
        combiner = _combiner(setup, spec.scheme, draw, combiner_powers)
        if need_moments:
            batch = CombinerMoments.from_draws(combiner, draw)
            moments = batch if moments is None else moments.merge(batch)
        if evaluate is not None:
            parts.append(evaluate(combiner, draw))
    return moments, parts


def _optimize(form: str, policy: str, coeffs, trace: list) -> PowerVector:
    algorithm: BasePowerAlgorithm = _ALGORITHMS[(form, policy)]()
    result = algorithm.solve(coeffs)
    trace.extend(algorithm.trace)
    logger.debug("%s finished after %d iterations", algorithm.name, result.iterations)
    return result


def _closed_form_expectations(setup: SetupState, spec: ExperimentSpec):
    return distributed_expectations(
        "closed-form-MR",
        stats=setup.stats,
        cluster=setup.cluster,
        noise_power=setup.config.noise_power_ul,
        scheme=spec.scheme,
    )


def _uplink(setup: SetupState, spec: ExperimentSpec, trace: list):
    config, cluster, stats = setup.config, setup.cluster, setup.stats
    K = cluster.num_ues
    noise = config.noise_power_ul
    bound = spec.bound
    distributed = spec.mode == "distributed"
    heuristic = spec.power in UPLINK_POLICIES

    pv = heuristic_power(spec.power, setup.fading.beta, cluster, config.max_ul_power, link="uplink", upsilon=spec.upsilon) if heuristic else None
    # optimized powers keep the combiners computed at full power
    combiner_powers = pv.values if heuristic else np.full(K, config.max_ul_power)

    closed = spec.expectations == "closed-form-MR" or bound == "mr-closed-form"
    if distributed:
        needs_expectations = bound == "distributed" or spec.lsfd != "none" or not heuristic
        needs_moments = needs_expectations and not closed
    else:
        needs_expectations = False
        needs_moments = not heuristic or bound == "c-UatF"

    moments = _draw_pass(setup, spec, combiner_powers)[0] if needs_moments else None
    expectations = None
    if needs_expectations:
        if closed:
            expectations = _closed_form_expectations(setup, spec)
        else:
            expectations = distributed_expectations("monte-carlo", moments=moments, cluster=cluster, noise_power=noise)

    if not heuristic:
        if distributed:
            weights = lsfd_weights(spec.lsfd, expectations, combiner_powers, cluster)
            source = CombinerMoments.from_expectations(expectations, weights)
        else:
            source = moments
        coeffs = extract_coefficients("ul-generic", source, cluster, noise, config.max_ul_power)
        pv = _optimize("ul-generic", spec.power, coeffs, trace)
    p = pv.powers

    lsfd = lsfd_weights(spec.lsfd, expectations, p, cluster) if distributed else None
    common = dict(prelog=config.ul_prelog, powers=p, noise_power=noise, stats=stats, cluster=cluster)
    if bound in _PER_DRAW_UPLINK:
        _, parts = _draw_pass(
            setup,
            spec,
            combiner_powers,
            lambda combiner, draw: uplink_se(bound, combiner=combiner, draw=draw, lsfd=lsfd, **common),
            need_moments=False,
        )
        result = reduce(UplinkSEResult.merge, parts)
    else:
        result = uplink_se(bound, moments=moments, expectations=expectations, lsfd=lsfd, **common)
    return result, pv


def _downlink(setup: SetupState, spec: ExperimentSpec, trace: list):
    config, cluster = setup.config, setup.cluster
    K = cluster.num_ues
    noise_ul, noise_dl, rho_max = config.noise_power_ul, config.noise_power_dl, config.max_dl_power
    centralized = spec.mode == "centralized"
    ul_powers = np.full(K, config.max_ul_power)

    expectations = None
    if spec.expectations == "closed-form-MR" or spec.bound == "mr-closed-form":
        expectations = _closed_form_expectations(setup, spec)
        moments = CombinerMoments.from_expectations(expectations)
    else:
        moments = _draw_pass(setup, spec, ul_powers)[0]
    share = ap_share(moments) if centralized else None

    if spec.power in ("equal", "fpa"):
        link = "centralized" if centralized else "distributed"
        pv = heuristic_power(spec.power, setup.fading.beta, cluster, rho_max, link=link, upsilon=spec.upsilon, kappa=spec.kappa, share=share)
    elif spec.power == "duality":
        duality = duality_power_allocation(moments, ul_powers, noise_ul, noise_dl)
        pv = PowerVector(duality.rho, float("nan"), 0, True, "duality", duality.target_sinr)
    else:
        form = "dl-centralized" if centralized else "dl-distributed"
        coeffs = extract_coefficients(form, moments, cluster, noise_dl, rho_max)
        pv = _optimize(form, spec.power, coeffs, trace)
    rho = pv.powers

    usage = per_ap_power_usage(cluster, rho, rho_max, share)
    if not usage.feasible:
        logger.warning(
            "setup %d: %d APs exceed rho_max with %s powers", setup.index, int(usage.violations.sum()), pv.algorithm
        )

    prelog = config.dl_prelog
    if spec.bound == "genie":

        def evaluate(combiner, draw):
            precoder = precoder_from_combiner(combiner, rho, moments)
            return downlink_se("genie", prelog=prelog, powers=rho, noise_power=noise_dl, precoder=precoder, draw=draw)

        _, parts = _draw_pass(setup, spec, ul_powers, evaluate, need_moments=False)
        result = reduce(UplinkSEResult.merge, parts)
    else:
        result = downlink_se(spec.bound, prelog=prelog, powers=rho, noise_power=noise_dl, moments=moments, expectations=expectations)
    return result, pv


def run_setup(spec: ExperimentSpec, config: NetworkConfig, index: int, seed: np.random.SeedSequence) -> SetupOutcome:
    """Simulate one setup; any simulator error comes back wrapped with the setup index."""
    try:
        setup = build_setup(spec, config, index, seed)
        trace: list = []
        if spec.link == "uplink":
            result, pv = _uplink(setup, spec, trace)
        else:
            result, pv = _downlink(setup, spec, trace)
        report = None
        if index == 0:
            report = build_scalability_report(
                setup.cluster,
                config.antennas_per_ap,
                config.pilot_length,
                config.ul_data,
                config.dl_data,
                R=setup.channels.R,
                rho=setup.cluster.serving.astype(float),
            )
    except SetupError:
        raise
    except (CellFreeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise SetupError(index, exc) from exc

    se = result.se
    logger.info("setup %d: mean SE %.3f, min SE %.3f (%s)", index, float(se.mean()), float(se.min()), pv.algorithm)
    return SetupOutcome(index, se, result.stderr, pv.to_dict(), report, trace if index == 0 else [])


# ---------- SNR benchmark ----------

def snr_benchmark(
    config: NetworkConfig,
    num_drops: int,
    rng: np.random.Generator,
    colocated_antennas: int | None = None,
) -> Dict[str, np.ndarray]:
    """Uplink SNR in dB of single-UE drops for cell-free, small-cell and co-located arrays.

    The co-located array sits at the centre of the area and has as many
    antennas as the distributed deployment (unless given).
    """
    if num_drops < 1:
        raise ConfigurationError("the SNR benchmark needs at least one drop")
    side, height = config.area_side, config.ap_height
    N = config.antennas_per_ap
    M = config.num_aps * N if colocated_antennas is None else colocated_antennas
    snr_scale = config.max_ul_power / config.noise_power_ul

    aps = deploy(config, rng).ap_positions
    ues = rng.uniform(0.0, side, size=(num_drops, 2))
    disp = wrap_displacement(ues[:, None, :], aps[None, :, :], side, config.wrap_around)
    gain_db = pathloss_db(np.sqrt(np.sum(disp**2, axis=-1) + height**2), config)
    if config.shadow_std > 0:
        gain_db = gain_db + config.shadow_std * rng.standard_normal(gain_db.shape)
    beta = 10.0 ** (gain_db / 10.0)

    centre = np.full(2, side / 2.0)
    central = np.sqrt(np.sum((ues - centre) ** 2, axis=-1) + height**2)
    beta_central = 10.0 ** (pathloss_db(central, config) / 10.0)

    def db(x):
        return 10.0 * np.log10(snr_scale * x)

    return {
        "cell-free": db(N * beta.sum(axis=1)),
        "small-cell": db(N * beta.max(axis=1)),
        "co-located": db(M * beta_central),
    }


def _snr_experiment(spec: ExperimentSpec, config: NetworkConfig) -> ExperimentResult:
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    drops = spec.num_setups * spec.draws_per_setup
    snr = snr_benchmark(config, drops, rng)
    tables = {name: CdfTable.from_samples(values, value_column="snr_db") for name, values in snr.items()}
    for name, table in tables.items():
        logger.info("%s: 5%% quantile %.2f dB over %d drops", name, table.quantile(0.05), drops)
    return ExperimentResult(spec, config, tables)


# ---------- driver ----------

def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    if spec.num_setups == 0:
        raise ConfigurationError("num_setups is 0, the CDF table would be empty")
    config = resolve_network_config(spec)
    if spec.mode == "snr":
        return _snr_experiment(spec, config)

    seeds = np.random.SeedSequence(spec.seed).spawn(spec.num_setups)
    indices = range(spec.num_setups)
    logger.info(
        "running %d setups x %d draws: %s %s %s, power %s",
        spec.num_setups, spec.draws_per_setup, spec.mode, spec.link, spec.scheme, spec.power,
    )
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            outcomes = list(pool.map(run_setup, repeat(spec), repeat(config), indices, seeds))
    else:
        outcomes = [run_setup(spec, config, i, s) for i, s in zip(indices, seeds)]

    table = CdfTable.from_samples(
        np.concatenate([o.se for o in outcomes]),
        np.concatenate([o.stderr for o in outcomes]),
    )
    first = outcomes[0]
    return ExperimentResult(spec, config, {"se": table}, first.report, first.power, first.trace)


def emit(result: ExperimentResult, fmt: str, path: str | Path) -> Path:
    """Write the CDF tables as CSV (one row per sample) or the full result as JSON."""
    if not result.tables or any(t.count == 0 for t in result.tables.values()):
        raise ConfigurationError("refusing to write an empty table")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "json":
            with open(path, "w", encoding="utf-8") as f:
                json.dump(result.to_dict(), f, indent=2)
        elif fmt == "csv":
            with open(path, "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f)
                labelled = len(result.tables) > 1
                column = result.table.value_column
                writer.writerow((["architecture"] if labelled else []) + ["sample_index", column, "cdf_value"])
                for name, table in result.tables.items():
                    for i, (value, cdf) in enumerate(zip(table.samples, table.cdf_values)):
                        writer.writerow(([name] if labelled else []) + [i, repr(float(value)), repr(float(cdf))])
        else:
            raise ConfigurationError(f"unknown output format {fmt!r}")
    except OSError as exc:
        raise ConfigurationError(f"cannot write results to {path}: {exc}") from exc
    logger.info("wrote %s results to %s", fmt, path)
    return path
