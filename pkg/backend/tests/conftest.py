import os
import sys
from types import SimpleNamespace

import numpy as np
import pytest

# ensure the backend dir is on sys.path so `services.*` and `Algorithms.*` imports work
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from services.cluster import assign_pilots_and_dcc
from services.correlation import build_channel_statistics
from services.estimation import build_estimation_statistics
from services.geometry import NetworkConfig, deploy, large_scale_fading


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: large Monte Carlo runs and reduced-scale acceptance scenarios")


def build_network(config: NetworkConfig, seed: int = 7) -> SimpleNamespace:
    rng = np.random.default_rng(seed)
    deployment = deploy(config, rng)
    fading = large_scale_fading(deployment, config, rng)
    channels = build_channel_statistics(fading, config)
    cluster = assign_pilots_and_dcc(fading.beta, config.pilot_length)
    stats = build_estimation_statistics(channels, cluster, config.pilot_power, config.noise_power_ul)
    return SimpleNamespace(
        config=config, deployment=deployment, fading=fading, channels=channels, cluster=cluster, stats=stats
    )


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


@pytest.fixture
def small_config():
    """9 APs with 2 antennas, 6 UEs and 3 pilots: every pilot is shared."""
    return NetworkConfig(
        num_aps=9,
        antennas_per_ap=2,
        num_ues=6,
        area_side=300.0,
        pilot_length=3,
        ul_data=98,
        dl_data=99,
        layout_mode="square-grid",
    )


@pytest.fixture
def small_network(small_config):
    return build_network(small_config)


@pytest.fixture
def single_antenna_network():
    config = NetworkConfig(
        num_aps=9,
        antennas_per_ap=1,
        num_ues=5,
        area_side=300.0,
        pilot_length=2,
        ul_data=99,
        dl_data=99,
        layout_mode="square-grid",
    )
    return build_network(config, seed=11)


@pytest.fixture
def network_factory():
    return build_network
