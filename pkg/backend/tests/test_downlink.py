import numpy as np
import pytest

from services.downlink import (
    ap_share,
    centralized_downlink_sinr,
    downlink_se,
    duality_power_allocation,
    per_ap_power_usage,
    precoder_from_combiner,
    single_antenna_mr_downlink_sinr,
)
from services.errors import ConfigurationError, InfeasibleError
from services.estimation import sample_channel_draw
from services.uplink import CombinerMoments, centralized_combiner, distributed_expectations, local_combiner, uatf_sinr


@pytest.fixture
def mmse(small_network):
    net = small_network
    config = net.config
    draw = sample_channel_draw(net.stats, np.random.default_rng(4), 300)
    p = np.full(config.num_ues, config.max_ul_power)
    combiner = centralized_combiner("MMSE", draw, net.stats, net.cluster, p, config.noise_power_ul)
    return draw, combiner, CombinerMoments.from_draws(combiner, draw), p


def test_duality_reproduces_uplink_sinrs(small_network, mmse):
    config = small_network.config
    _, _, moments, p = mmse
    duality = duality_power_allocation(moments, p, config.noise_power_ul, config.noise_power_dl)
    target = uatf_sinr(moments, p, config.noise_power_ul)
    np.testing.assert_allclose(duality.target_sinr, target)
    achieved = centralized_downlink_sinr(moments, duality.rho, config.noise_power_dl)
    np.testing.assert_allclose(achieved, target, rtol=1e-6)
    # total power scales with the noise ratio
    assert duality.rho.sum() / config.noise_power_dl == pytest.approx(p.sum() / config.noise_power_ul, rel=1e-6)


def test_duality_rejects_zero_targets(mmse, small_network):
    _, _, moments, p = mmse
    with pytest.raises(InfeasibleError):
        duality_power_allocation(moments, p, 1e-13, 1e-13, target_sinr=np.zeros(small_network.config.num_ues))


def test_centralized_precoders_have_the_requested_power(mmse):
    draw, combiner, moments, _ = mmse
    rho = np.linspace(0.05, 0.2, combiner.v.shape[1])
    precoder = precoder_from_combiner(combiner, rho, moments)
    assert precoder.centralized
    np.testing.assert_allclose((np.abs(precoder.w) ** 2).sum(axis=(-2, -1)).mean(axis=0), rho, rtol=1e-9)
    np.testing.assert_allclose(precoder.ap_share.sum(axis=1), 1.0)


def test_distributed_precoders_have_the_requested_link_power(small_network):
    net = small_network
    config = net.config
    draw = sample_channel_draw(net.stats, np.random.default_rng(6), 100)
    p = np.full(config.num_ues, config.max_ul_power)
    combiner = local_combiner("LP-MMSE", draw, net.stats, net.cluster, p, config.noise_power_ul)
    moments = CombinerMoments.from_draws(combiner, draw)
    rho = 0.05 * net.cluster.serving
    precoder = precoder_from_combiner(combiner, rho, moments)
    assert not precoder.centralized
    np.testing.assert_allclose((np.abs(precoder.w) ** 2).sum(axis=-1).mean(axis=0), rho, rtol=1e-9, atol=1e-15)


def test_negative_powers_are_rejected(mmse):
    _, combiner, moments, _ = mmse
    with pytest.raises(ConfigurationError):
        precoder_from_combiner(combiner, -np.ones(combiner.v.shape[1]), moments)


def test_single_antenna_closed_form_matches_expectations(single_antenna_network):
    net = single_antenna_network
    config = net.config
    exp = distributed_expectations("closed-form-MR", stats=net.stats, cluster=net.cluster, noise_power=config.noise_power_ul)
    rho = np.random.default_rng(1).uniform(0.01, 0.1, net.cluster.serving.shape) * net.cluster.serving
    result = downlink_se("mr-closed-form", prelog=config.dl_prelog, powers=rho, noise_power=config.noise_power_dl, expectations=exp)
    expected = single_antenna_mr_downlink_sinr(net.stats, net.cluster, rho, config.noise_power_dl)
    np.testing.assert_allclose(result.sinr, expected, rtol=1e-9)
    assert result.se.shape == (config.num_ues,)


def test_single_antenna_closed_form_needs_single_antennas(small_network):
    with pytest.raises(ConfigurationError, match="single-antenna"):
        single_antenna_mr_downlink_sinr(small_network.stats, small_network.cluster, 0.1, 1e-13)


def test_genie_bound_returns_per_draw_samples(small_network, mmse):
    config = small_network.config
    draw, combiner, moments, _ = mmse
    rho = np.full(config.num_ues, 0.1)
    precoder = precoder_from_combiner(combiner, rho, moments)
    result = downlink_se("genie", prelog=config.dl_prelog, powers=rho, noise_power=config.noise_power_dl, precoder=precoder, draw=draw)
    assert result.samples
    assert result.sinr.shape == (draw.num_draws, config.num_ues)
    assert np.all(result.se > 0)
    assert np.all(result.stderr > 0)


def test_downlink_se_reports_missing_inputs():
    for mode in ("centralized", "distributed", "mr-closed-form", "genie"):
        with pytest.raises(ConfigurationError):
            downlink_se(mode, prelog=0.5, powers=np.ones(2), noise_power=1e-13)
    with pytest.raises(ConfigurationError, match="unknown downlink mode"):
        downlink_se("cellular", prelog=0.5, powers=np.ones(2), noise_power=1e-13)


def test_per_ap_usage(small_network, mmse):
    cluster = small_network.cluster
    _, _, moments, _ = mmse
    distributed = per_ap_power_usage(cluster, 0.5 * cluster.serving, 1.0)
    np.testing.assert_allclose(distributed.usage, 0.5 * cluster.load())
    assert distributed.feasible == bool(np.all(0.5 * cluster.load() <= 1.0))

    share = ap_share(moments)
    rho = np.full(cluster.num_ues, 0.2)
    centralized = per_ap_power_usage(cluster, rho, 0.2, share)
    np.testing.assert_allclose(centralized.usage, (0.2 * share * cluster.serving).sum(axis=0))
    with pytest.raises(ConfigurationError, match="share"):
        per_ap_power_usage(cluster, rho, 0.2)
