import csv
import logging

import cvxpy as cp
import numpy as np
import pytest

from Algorithms.base import TRACE_FIELDS, BasePowerAlgorithm, PowerVector, write_trace
from Algorithms.coefficients import SinrCoefficients, extract_coefficients
from Algorithms.dl_cent_maxmin_fixedpoint import CentralizedDownlinkMaxMin
from Algorithms.dl_cent_sumse_bcd import CentralizedDownlinkSumSEBCD, solve_convex
import Algorithms.dl_dist_maxmin_bisection as bisection
from Algorithms.dl_dist_maxmin_bisection import DistributedDownlinkMaxMinBisection, equal_split
from Algorithms.dl_dist_sumse_bcd import DistributedDownlinkSumSEBCD
from Algorithms.heuristic import heuristic_power
from Algorithms.ul_maxmin_fixedpoint import UplinkMaxMinFixedPoint, positive_coupling
from Algorithms.ul_sumse_bcd import UplinkSumSEBCD
from services.downlink import centralized_downlink_sinr, distributed_downlink_sinr
from services.errors import ConfigurationError, ConvergenceError, NumericalError
from services.uplink import CombinerMoments, distributed_expectations, uatf_sinr


def _ul(b, c, noise, max_power=1.0):
    b = np.asarray(b, dtype=float)
    return SinrCoefficients("ul-generic", b, np.asarray(c, dtype=float), np.asarray(noise, dtype=float), max_power,
                            np.ones((b.size, 1), dtype=bool))


@pytest.fixture
def uplink_coeffs():
    c = [[0.0, 0.1, 0.05], [0.2, 0.0, 0.1], [0.05, 0.3, 0.0]]
    return _ul([1.0, 2.0, 0.5], c, [0.05, 0.05, 0.05])


@pytest.fixture
def centralized_coeffs():
    share = np.array([[0.5, 0.5], [0.8, 0.2], [0.3, 0.7]])
    c = np.array([[0.0, 0.05, 0.1], [0.1, 0.0, 0.05], [0.02, 0.08, 0.0]])
    return SinrCoefficients("dl-centralized", np.array([1.0, 1.5, 0.8]), c, np.full(3, 0.05), 1.0,
                            np.ones((3, 2), dtype=bool), share=share)


@pytest.fixture
def distributed_coeffs():
    mu = np.zeros((2, 2, 2), dtype=complex)
    mu[0, 0] = [1.0, 0.5]
    mu[1, 1] = [0.4, 1.0]
    mu[0, 1] = [0.1, 0.05j]
    mu[1, 0] = [0.05, 0.1]
    var = np.full((2, 2, 2), 0.01)
    b = np.real(np.stack([mu[0, 0], mu[1, 1]]))
    return SinrCoefficients("dl-distributed", b, np.zeros((2, 2)), np.ones(2), 1.0, np.ones((2, 2), dtype=bool),
                            mu=mu, var=var)


@pytest.fixture
def closed_form_moments(small_network):
    net = small_network
    exp = distributed_expectations("closed-form-MR", stats=net.stats, cluster=net.cluster, noise_power=net.config.noise_power_ul)
    return CombinerMoments.from_expectations(exp)


# ---------- coefficients ----------

def test_uplink_coefficients_reproduce_uatf(small_network, closed_form_moments):
    config = small_network.config
    coeffs = extract_coefficients("ul-generic", closed_form_moments, small_network.cluster, config.noise_power_ul, config.max_ul_power)
    p = np.linspace(0.01, 0.1, config.num_ues)
    np.testing.assert_allclose(coeffs.sinr(p), uatf_sinr(closed_form_moments, p, config.noise_power_ul), rtol=1e-9)
    np.testing.assert_allclose(coeffs.noise, 1.0)


def test_centralized_coefficients_reproduce_downlink(small_network, closed_form_moments):
    config = small_network.config
    coeffs = extract_coefficients("dl-centralized", closed_form_moments, small_network.cluster, config.noise_power_dl, config.max_dl_power)
    rho = np.linspace(0.02, 0.2, config.num_ues)
    expected = centralized_downlink_sinr(closed_form_moments, rho, config.noise_power_dl)
    np.testing.assert_allclose(coeffs.sinr(rho), expected, rtol=1e-9)


def test_distributed_coefficients_reproduce_downlink(small_network, closed_form_moments):
    config = small_network.config
    cluster = small_network.cluster
    coeffs = extract_coefficients("dl-distributed", closed_form_moments, cluster, config.noise_power_dl, config.max_dl_power)
    rho = np.random.default_rng(0).uniform(0.01, 0.05, cluster.serving.shape) * cluster.serving
    expected = distributed_downlink_sinr(closed_form_moments, rho, config.noise_power_dl)
    np.testing.assert_allclose(coeffs.sinr(np.sqrt(rho)), expected, rtol=1e-7)
    assert np.all(coeffs.b[~cluster.serving] == 0)
    assert np.all(coeffs.b[cluster.serving] > 0)


def test_unknown_form(closed_form_moments, small_network):
    with pytest.raises(ConfigurationError, match="unknown coefficient form"):
        extract_coefficients("ul-distributed", closed_form_moments, small_network.cluster, 1e-13, 0.1)


def test_normalization_keeps_sinrs(uplink_coeffs, distributed_coeffs):
    x = np.array([0.3, 1.0, 0.7])
    np.testing.assert_allclose(uplink_coeffs.normalized().sinr(x), uplink_coeffs.sinr(x))
    scaled = SinrCoefficients(**{**distributed_coeffs.__dict__, "noise": np.array([2.0, 0.5])})
    roots = np.sqrt(np.array([[0.4, 0.6], [0.6, 0.4]]))
    np.testing.assert_allclose(scaled.normalized().sinr(roots), scaled.sinr(roots))


# ---------- fixed point ----------

def test_uplink_maxmin_equalizes_sinrs(uplink_coeffs):
    result = UplinkMaxMinFixedPoint(tol=1e-9).solve(uplink_coeffs)
    assert result.converged
    assert result.values.max() == pytest.approx(1.0)
    assert result.sinr.max() - result.sinr.min() <= 1e-8
    assert result.sinr.min() >= uplink_coeffs.sinr(np.ones(3)).min()


def test_uplink_maxmin_single_ue_uses_full_power():
    result = UplinkMaxMinFixedPoint().solve(_ul([2.0], [[0.0]], [0.1], max_power=0.1))
    assert result.iterations == 1
    np.testing.assert_allclose(result.values, [0.1])
    assert result.objective == pytest.approx(2.0)


def test_symmetric_ues_share_full_power():
    result = UplinkMaxMinFixedPoint().solve(_ul([1.0, 1.0], [[0.0, 0.1], [0.1, 0.0]], [0.01, 0.01]))
    np.testing.assert_allclose(result.values, [1.0, 1.0])


def test_zero_coupling_is_lifted(caplog):
    with caplog.at_level(logging.WARNING):
        lifted = positive_coupling(np.array([[0.5, 0.0], [0.2, 0.0]]))
    assert "perturbing 1 zero interference coefficients" in caplog.text
    assert lifted[0, 1] > 0 and lifted[1, 1] == 0


def test_maxmin_rejects_zero_signal():
    with pytest.raises(ConfigurationError, match="positive signal gain"):
        UplinkMaxMinFixedPoint().solve(_ul([1.0, 0.0], np.zeros((2, 2)), [1.0, 1.0]))


def test_maxmin_iteration_cap(uplink_coeffs):
    with pytest.raises(ConvergenceError) as info:
        UplinkMaxMinFixedPoint(tol=1e-12, max_iter=1).solve(uplink_coeffs)
    assert info.value.iterations == 1


def test_centralized_maxmin_saturates_worst_ap(centralized_coeffs):
    result = CentralizedDownlinkMaxMin(tol=1e-9).solve(centralized_coeffs)
    assert centralized_coeffs.usage(result.values).max() == pytest.approx(1.0)
    assert result.sinr.max() - result.sinr.min() <= 1e-8


def test_wrong_form_is_rejected(distributed_coeffs):
    with pytest.raises(ConfigurationError, match="does not handle"):
        UplinkMaxMinFixedPoint().solve(distributed_coeffs)


# ---------- sum SE ----------

def test_uplink_sumse_history_is_monotone(uplink_coeffs):
    result = UplinkSumSEBCD().solve(uplink_coeffs)
    assert result.converged
    assert np.all(np.diff(result.history) <= 1e-12)
    full = np.log2(1 + uplink_coeffs.sinr(np.ones(3))).sum()
    assert np.log2(1 + result.sinr).sum() >= full - 1e-9
    assert uplink_coeffs.feasible(result.values)


def test_uplink_sumse_random_start_is_reproducible(uplink_coeffs):
    first = UplinkSumSEBCD(init="random", seed=5).solve(uplink_coeffs)
    second = UplinkSumSEBCD(init="random", seed=5).solve(uplink_coeffs)
    np.testing.assert_array_equal(first.values, second.values)


def test_uplink_sumse_rejects_bad_starts(uplink_coeffs):
    with pytest.raises(ConfigurationError):
        UplinkSumSEBCD(init="zeros")
    with pytest.raises(ConfigurationError, match="initial point"):
        UplinkSumSEBCD().solve(uplink_coeffs, init=np.full(3, 2.0))


def test_centralized_sumse_respects_ap_limits(centralized_coeffs):
    algorithm = CentralizedDownlinkSumSEBCD()
    result = algorithm.solve(centralized_coeffs)
    assert centralized_coeffs.feasible(result.values, rtol=1e-6)
    assert np.all(np.diff(result.history) <= 1e-12)
    assert algorithm.trace[0]["iteration"] == 0


def test_distributed_maxmin_beats_equal_split(distributed_coeffs):
    result = DistributedDownlinkMaxMinBisection(tol=1e-6).solve(distributed_coeffs)
    baseline = distributed_coeffs.sinr(equal_split(distributed_coeffs)).min()
    assert result.sinr.min() >= baseline * (1 - 1e-3)
    assert distributed_coeffs.feasible(result.values, rtol=1e-4)
    assert result.powers.shape == (2, 2)


def _random_two_ue_coeffs(rng, noise=0.2):
    mu = np.zeros((2, 2, 2), dtype=complex)
    own = rng.uniform(0.5, 1.0, (2, 2))
    mu[0, 0], mu[1, 1] = own[0], own[1]
    for k, i in ((0, 1), (1, 0)):
        mu[k, i] = rng.uniform(0.05, 0.3, 2) * np.exp(2j * np.pi * rng.uniform(size=2))
    var = rng.uniform(0.005, 0.02, (2, 2, 2))
    return SinrCoefficients("dl-distributed", own.copy(), np.zeros((2, 2)), np.full(2, noise), 1.0,
                            np.ones((2, 2), dtype=bool), mu=mu, var=var)


def _grid_maxmin(coeffs, n=25):
    """Best min-SINR over a grid of per-AP power fractions and splits."""
    r = np.linspace(0.0, 1.0, n)
    theta = np.linspace(0.0, 0.5 * np.pi, n)
    r0, t0, r1, t1 = (a.ravel() for a in np.meshgrid(r, theta, r, theta, indexing="ij"))
    x = np.empty((r0.size, 2, 2))
    x[:, 0, 0], x[:, 1, 0] = np.sqrt(r0) * np.cos(t0), np.sqrt(r0) * np.sin(t0)
    x[:, 0, 1], x[:, 1, 1] = np.sqrt(r1) * np.cos(t1), np.sqrt(r1) * np.sin(t1)
    signal = np.einsum("kl,gkl->gk", coeffs.b, x) ** 2
    coherent = np.abs(np.einsum("kil,gil->gki", coeffs.mu, x)) ** 2
    spread = np.einsum("kil,gil->gk", coeffs.var, x**2)
    sinr = signal / (coherent.sum(axis=2) + spread - signal + coeffs.noise)
    return float(sinr.min(axis=1).max())


def test_distributed_maxmin_survives_barely_feasible_targets():
    rng = np.random.default_rng(31)
    for _ in range(20):
        coeffs = _random_two_ue_coeffs(rng)
        result = DistributedDownlinkMaxMinBisection().solve(coeffs)
        assert result.converged
        assert coeffs.feasible(result.values, rtol=1e-9)
        assert result.sinr.min() >= result.history[-1] * (1 - 1e-5)


def test_distributed_maxmin_matches_grid_search():
    rng = np.random.default_rng(32)
    for _ in range(3):
        coeffs = _random_two_ue_coeffs(rng)
        result = DistributedDownlinkMaxMinBisection(tol=1e-6).solve(coeffs)
        assert result.sinr.min() >= _grid_maxmin(coeffs) * (1 - 0.02)


def test_distributed_maxmin_keeps_its_best_point_when_the_solver_fails(monkeypatch, caplog, distributed_coeffs):
    real = bisection.solve_convex
    solved = []

    def flaky(problem, label):
        # fail every call after the first solved target
        if solved:
            raise NumericalError(f"{label}: convex solver failed")
        status = real(problem, label)
        if status == "optimal":
            solved.append(status)
        return status

    monkeypatch.setattr(bisection, "solve_convex", flaky)
    with caplog.at_level(logging.WARNING):
        result = DistributedDownlinkMaxMinBisection().solve(distributed_coeffs)
    assert result.converged
    assert result.sinr.min() > 0
    assert distributed_coeffs.feasible(result.values, rtol=1e-9)
    assert "no certificate" in caplog.text


def test_distributed_maxmin_raises_when_nothing_was_certified(monkeypatch, distributed_coeffs):
    def broken(problem, label):
        raise NumericalError(f"{label}: convex solver failed")

    monkeypatch.setattr(bisection, "solve_convex", broken)
    with pytest.raises(NumericalError):
        DistributedDownlinkMaxMinBisection().solve(distributed_coeffs)


def test_distributed_sumse_improves_on_equal_split(distributed_coeffs):
    result = DistributedDownlinkSumSEBCD().solve(distributed_coeffs)
    baseline = np.log2(1 + distributed_coeffs.sinr(equal_split(distributed_coeffs))).sum()
    assert np.log2(1 + result.sinr).sum() >= baseline - 1e-9
    assert distributed_coeffs.feasible(result.values, rtol=1e-6)


# ---------- heuristics ----------

def test_uplink_heuristics(small_network):
    net = small_network
    full = heuristic_power("full", net.fading.beta, net.cluster, 0.1)
    np.testing.assert_allclose(full.values, 0.1)
    fpc = heuristic_power("fpc", net.fading.beta, net.cluster, 0.1, upsilon=0.5)
    assert np.all(fpc.values <= 0.1 + 1e-15)
    assert fpc.values.max() == pytest.approx(0.1)


def test_distributed_heuristics_fill_every_ap(small_network):
    net = small_network
    for policy in ("equal", "fpa"):
        pv = heuristic_power(policy, net.fading.beta, net.cluster, 0.2, link="distributed")
        np.testing.assert_allclose((pv.powers * net.cluster.serving).sum(axis=0), 0.2)
        assert np.all(pv.powers[~net.cluster.serving] == 0)


def test_centralized_heuristics_are_feasible(small_network, closed_form_moments):
    from services.downlink import ap_share, per_ap_power_usage

    net = small_network
    share = ap_share(closed_form_moments)
    equal = heuristic_power("equal", net.fading.beta, net.cluster, 0.2, link="centralized")
    np.testing.assert_allclose(equal.values, 0.2 / net.cluster.num_pilots)
    fpa = heuristic_power("fpa", net.fading.beta, net.cluster, 0.2, link="centralized", share=share)
    assert per_ap_power_usage(net.cluster, fpa.powers, 0.2, share).feasible


def test_heuristic_validation(small_network):
    net = small_network
    with pytest.raises(ConfigurationError, match="upsilon"):
        heuristic_power("fpc", net.fading.beta, net.cluster, 0.1, upsilon=2.0)
    with pytest.raises(ConfigurationError, match="kappa"):
        heuristic_power("fpa", net.fading.beta, net.cluster, 0.1, link="centralized", kappa=1.5)
    with pytest.raises(ConfigurationError):
        heuristic_power("maxmin", net.fading.beta, net.cluster, 0.1)
    with pytest.raises(ConfigurationError, match="unknown link"):
        heuristic_power("full", net.fading.beta, net.cluster, 0.1, link="sidelink")


# ---------- base ----------

def test_base_algorithm_is_abstract(uplink_coeffs):
    with pytest.raises(NotImplementedError):
        BasePowerAlgorithm().solve(uplink_coeffs)


def test_power_vector_serialization():
    pv = PowerVector(np.array([[0.5, 0.0], [0.1, 0.2]]), float("nan"), 0, True, "distributed-equal")
    data = pv.to_dict()
    assert data["objective"] is None
    assert data["powers"] == pytest.approx([[0.25, 0.0], [0.01, 0.04]])
    assert data["min_sinr"] is None


def test_write_trace(tmp_path, uplink_coeffs):
    algorithm = UplinkMaxMinFixedPoint()
    algorithm.solve(uplink_coeffs)
    path = write_trace(algorithm.trace, tmp_path / "traces" / "maxmin.csv")
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0].keys()) == TRACE_FIELDS
    assert len(rows) == len(algorithm.trace)
    assert rows[0]["algorithm"] == "UplinkMaxMinFixedPoint"


def test_uplink_maxmin_matches_grid_search():
    coeffs = _ul([1.0, 0.6], [[0.0, 0.3], [0.5, 0.0]], [0.05, 0.02])
    result = UplinkMaxMinFixedPoint(tol=1e-10).solve(coeffs)
    grid = np.linspace(0.0, 1.0, 20001)
    # the max-min point has one UE at full power
    candidates = np.concatenate([np.column_stack([np.ones_like(grid), grid]), np.column_stack([grid, np.ones_like(grid)])])
    best = max(coeffs.sinr(p).min() for p in candidates)
    assert result.sinr.min() == pytest.approx(best, rel=0.01)
    assert result.sinr.min() >= best * (1 - 1e-6)


def test_wmmse_weights_equal_one_plus_sinr(uplink_coeffs):
    x = np.array([0.2, 0.9, 0.5])
    _, d = UplinkSumSEBCD()._weights(uplink_coeffs, x)
    np.testing.assert_allclose(d, 1.0 + uplink_coeffs.sinr(x), rtol=1e-10)


def test_distributed_wmmse_weights_equal_one_plus_sinr(distributed_coeffs):
    x = np.sqrt(np.array([[0.3, 0.6], [0.5, 0.2]]))
    _, d = DistributedDownlinkSumSEBCD()._weights(distributed_coeffs, x)
    np.testing.assert_allclose(d, 1.0 + distributed_coeffs.sinr(x), rtol=1e-10)


class _FlakyProblem:
    status = None

    def __init__(self, working=("SCS",)):
        self.working = working
        self.tried = []

    def solve(self, solver=None):
        self.tried.append(solver)
        if solver not in self.working:
            raise cp.error.SolverError(f"{solver} failed")
        self.status = "optimal"


def test_solve_convex_retries_with_a_fallback_solver(monkeypatch, caplog):
    monkeypatch.setattr(cp, "installed_solvers", lambda: ["CLARABEL", "SCS"])
    problem = _FlakyProblem()
    with caplog.at_level(logging.WARNING):
        assert solve_convex(problem, "power step") == "optimal"
    assert problem.tried == [None, "SCS"]
    assert "retrying with SCS" in caplog.text


def test_solve_convex_reports_when_every_solver_fails(monkeypatch):
    monkeypatch.setattr(cp, "installed_solvers", lambda: ["CLARABEL", "SCS"])
    with pytest.raises(NumericalError, match="convex solver failed"):
        solve_convex(_FlakyProblem(working=()), "power step")
