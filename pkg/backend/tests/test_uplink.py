import numpy as np
import pytest

from services.errors import ConfigurationError
from services.estimation import sample_channel_draw
from services.uplink import (
    CENTRALIZED_SCHEMES,
    CombinerMoments,
    LsfdWeights,
    UplinkSEResult,
    centralized_combiner,
    distributed_expectations,
    distributed_sinr,
    local_combiner,
    lsfd_weights,
    single_antenna_mr_sinr,
    uplink_se,
)


def _setup(net, num_draws=50, seed=3):
    config = net.config
    draw = sample_channel_draw(net.stats, np.random.default_rng(seed), num_draws)
    return config, draw, np.full(config.num_ues, config.max_ul_power)


@pytest.mark.parametrize("scheme", CENTRALIZED_SCHEMES)
def test_centralized_combiner_is_zero_outside_serving_set(small_network, scheme):
    config, draw, p = _setup(small_network, 5)
    combiner = centralized_combiner(scheme, draw, small_network.stats, small_network.cluster, p, config.noise_power_ul)
    outside = ~small_network.cluster.serving
    assert np.all(combiner.v[:, outside] == 0)
    assert combiner.centralized


def test_mmse_maximizes_the_centralized_sinr(small_network):
    net = small_network
    config, draw, p = _setup(net)
    sigma2 = config.noise_power_ul

    def se(scheme):
        combiner = centralized_combiner(scheme, draw, net.stats, net.cluster, p, sigma2)
        return uplink_se("centralized", prelog=config.ul_prelog, powers=p, noise_power=sigma2,
                         combiner=combiner, draw=draw, stats=net.stats).sinr

    best = se("MMSE")
    for scheme in ("P-MMSE", "P-RZF", "MR"):
        assert np.all(best >= se(scheme) * (1 - 1e-8) - 1e-12), scheme


def test_p_rzf_needs_positive_powers(small_network):
    config, draw, p = _setup(small_network, 2)
    p[0] = 0.0
    with pytest.raises(ConfigurationError, match="P-RZF"):
        centralized_combiner("P-RZF", draw, small_network.stats, small_network.cluster, p, config.noise_power_ul)


def test_unknown_schemes_are_rejected(small_network):
    config, draw, p = _setup(small_network, 1)
    with pytest.raises(ConfigurationError):
        centralized_combiner("L-MMSE", draw, small_network.stats, small_network.cluster, p, 1e-13)
    with pytest.raises(ConfigurationError):
        local_combiner("MMSE", draw, small_network.stats, small_network.cluster, p, 1e-13)


def test_negative_powers_are_rejected(small_network):
    config, draw, p = _setup(small_network, 1)
    with pytest.raises(ConfigurationError, match="non-negative"):
        local_combiner("L-MMSE", draw, small_network.stats, small_network.cluster, -p, 1e-13)


@pytest.mark.parametrize("scheme", ["L-MMSE", "LP-MMSE", "MR-local"])
def test_local_combiner_respects_serving_sets(small_network, scheme):
    config, draw, p = _setup(small_network, 4)
    combiner = local_combiner(scheme, draw, small_network.stats, small_network.cluster, p, config.noise_power_ul)
    assert np.all(combiner.v[:, ~small_network.cluster.serving] == 0)
    assert not combiner.centralized


def test_closed_form_mr_own_gain_is_estimate_power(small_network):
    net = small_network
    exp = distributed_expectations("closed-form-MR", stats=net.stats, cluster=net.cluster, noise_power=net.config.noise_power_ul)
    traces = np.real(np.trace(net.stats.est_corr, axis1=-2, axis2=-1)) * net.cluster.serving
    own = np.real(np.einsum("kkl->kl", exp.g_mean))
    np.testing.assert_allclose(own, traces, rtol=1e-9)
    np.testing.assert_allclose(exp.ap_norm, traces, rtol=1e-9)


def test_monte_carlo_expectations_approach_closed_form(small_network):
    net = small_network
    config, draw, p = _setup(net, 20_000, seed=12)
    combiner = local_combiner("MR-local", draw, net.stats, net.cluster, p, config.noise_power_ul)
    moments = CombinerMoments.from_draws(combiner, draw)
    sampled = distributed_expectations("monte-carlo", moments=moments, cluster=net.cluster, noise_power=config.noise_power_ul)
    exact = distributed_expectations("closed-form-MR", stats=net.stats, cluster=net.cluster, noise_power=config.noise_power_ul)
    # per-UE totals; weak links are dominated by estimation noise
    own_sampled = np.real(np.einsum("kkl->kl", sampled.g_mean)).sum(axis=1)
    own_exact = np.real(np.einsum("kkl->kl", exact.g_mean)).sum(axis=1)
    np.testing.assert_allclose(own_sampled, own_exact, rtol=0.03)
    np.testing.assert_allclose(sampled.ap_norm.sum(axis=1), exact.ap_norm.sum(axis=1), rtol=0.03)


def test_closed_form_needs_mr(small_network):
    with pytest.raises(ConfigurationError, match="MR only"):
        distributed_expectations("closed-form-MR", stats=small_network.stats, cluster=small_network.cluster,
                                 noise_power=1e-13, scheme="L-MMSE")
    with pytest.raises(ConfigurationError):
        distributed_expectations("analytic", noise_power=1e-13)


def test_optimal_lsfd_dominates(small_network):
    net = small_network
    p = np.full(net.config.num_ues, net.config.max_ul_power)
    exp = distributed_expectations("closed-form-MR", stats=net.stats, cluster=net.cluster, noise_power=net.config.noise_power_ul)
    sinr = {mode: distributed_sinr(exp, lsfd_weights(mode, exp, p, net.cluster), p) for mode in ("opt", "n-opt", "none")}
    assert np.all(sinr["opt"] >= sinr["n-opt"] * (1 - 1e-9))
    assert np.all(sinr["opt"] >= sinr["none"] * (1 - 1e-9))


def test_lsfd_weights_vanish_outside_serving_set(small_network):
    net = small_network
    p = np.full(net.config.num_ues, net.config.max_ul_power)
    exp = distributed_expectations("closed-form-MR", stats=net.stats, cluster=net.cluster, noise_power=net.config.noise_power_ul)
    weights = lsfd_weights("n-opt", exp, p, net.cluster)
    assert np.all(weights.a[~net.cluster.serving] == 0)
    with pytest.raises(ConfigurationError):
        lsfd_weights("partial", exp, p, net.cluster)


@pytest.mark.parametrize("mode", ["none", "n-opt"])
def test_single_antenna_closed_form_matches_expectations(single_antenna_network, mode):
    net = single_antenna_network
    p = np.linspace(0.02, 0.1, net.config.num_ues)
    exp = distributed_expectations("closed-form-MR", stats=net.stats, cluster=net.cluster, noise_power=net.config.noise_power_ul)
    weights = lsfd_weights(mode, exp, p, net.cluster)
    np.testing.assert_allclose(
        single_antenna_mr_sinr(net.stats, net.cluster, weights, p), distributed_sinr(exp, weights, p), rtol=1e-9
    )


def test_single_antenna_closed_form_rejects_arrays(small_network):
    weights = LsfdWeights(small_network.cluster.serving.astype(complex), "none")
    with pytest.raises(ConfigurationError, match="single-antenna"):
        single_antenna_mr_sinr(small_network.stats, small_network.cluster, weights, 0.1)


def test_uatf_is_below_the_centralized_bound_on_average(small_network):
    net = small_network
    config, draw, p = _setup(net, 2000, seed=21)
    combiner = centralized_combiner("MMSE", draw, net.stats, net.cluster, p, config.noise_power_ul)
    moments = CombinerMoments.from_draws(combiner, draw)
    common = dict(prelog=config.ul_prelog, powers=p, noise_power=config.noise_power_ul)
    uatf = uplink_se("c-UatF", moments=moments, **common)
    cent = uplink_se("centralized", combiner=combiner, draw=draw, stats=net.stats, **common)
    assert uatf.se.sum() < cent.se.sum()
    assert np.all(uatf.stderr == 0)
    assert np.all(cent.stderr > 0)


def test_moments_merge_weights_by_count(small_network):
    net = small_network
    config, draw, p = _setup(net, 10)
    combiner = local_combiner("MR-local", draw, net.stats, net.cluster, p, config.noise_power_ul)
    first = CombinerMoments.from_draws(type(combiner)(combiner.v[:4], combiner.scheme), type(draw)(draw.h[:4], draw.hhat[:4]))
    second = CombinerMoments.from_draws(type(combiner)(combiner.v[4:], combiner.scheme), type(draw)(draw.h[4:], draw.hhat[4:]))
    merged = first.merge(second)
    whole = CombinerMoments.from_draws(combiner, draw)
    assert merged.count == 10
    np.testing.assert_allclose(merged.gain_power, whole.gain_power, rtol=1e-10)
    exp = distributed_expectations("closed-form-MR", stats=net.stats, cluster=net.cluster, noise_power=1e-13)
    with pytest.raises(ConfigurationError):
        CombinerMoments.from_expectations(exp).merge(whole)


def test_result_merge_and_averaging():
    a = UplinkSEResult("centralized", 0.5, np.array([[1.0, 3.0], [3.0, 1.0]]), True)
    b = UplinkSEResult("centralized", 0.5, np.array([[1.0, 1.0]]), True)
    merged = a.merge(b)
    assert merged.sinr.shape == (3, 2)
    np.testing.assert_allclose(a.se, [0.75, 0.75])
    with pytest.raises(ConfigurationError):
        a.merge(UplinkSEResult("c-UatF", 0.5, np.ones(2)))


def test_uplink_se_reports_missing_inputs():
    with pytest.raises(ConfigurationError, match="needs"):
        uplink_se("centralized", prelog=0.5, powers=0.1, noise_power=1e-13)
    with pytest.raises(ConfigurationError, match="unknown uplink bound"):
        uplink_se("optimal", prelog=0.5, powers=0.1, noise_power=1e-13)
