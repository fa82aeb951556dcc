import hypothesis
import numpy as np
import pytest

from cfnoma.config import SystemConfig
from cfnoma.network import ClusteringState, NetworkState

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=5)
hypothesis.settings.register_profile("debugger", report_multiple_bugs=False)

# -174 dBm/Hz over 10 MHz plus a 9 dB noise figure
NOISE_DBM = -95.0


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run statistical and end-to-end checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte Carlo or multi-seed runs")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def desk_config():
    return SystemConfig(num_aps=20, num_ues=8, num_clusters=4, antennas_per_ap=4, rng_seed=7)


@pytest.fixture
def make_config():
    """Scenario whose pilot power is 1 and maximum AP power 10, both relative to the noise."""

    def make(**overrides) -> SystemConfig:
        base = dict(
            num_aps=2,
            num_ues=2,
            num_clusters=1,
            antennas_per_ap=2,
            pilot_power_dbm=NOISE_DBM,
            max_dl_power_dbm=NOISE_DBM + 10.0,
            min_rate_bps=0.0,
        )
        base.update(overrides)
        return SystemConfig(**base)

    return make


@pytest.fixture
def make_net():
    """NetworkState from an explicit β matrix, optionally assigned to a clustering."""

    def make(beta, config=None, pi=None, num_clusters=None) -> NetworkState:
        beta = np.asarray(beta, dtype=float)
        M, N = beta.shape
        net = NetworkState(ap_positions=np.zeros((M, 2)), ue_positions=np.zeros((N, 2)), beta=beta)
        if pi is None:
            return net
        clustering = ClusteringState(pi=np.asarray(pi), num_clusters=num_clusters or config.num_clusters)
        return net.assign(clustering, config)

    return make


@pytest.fixture
def random_instance(make_config, make_net):
    """Small random scenario: (config, clustering, assigned network, power)."""

    def make(M=3, N=4, G=2, L=2, seed=0, **overrides):
        config = make_config(num_aps=M, num_ues=N, num_clusters=G, antennas_per_ap=L, **overrides)
        rng = np.random.default_rng(seed)
        beta = rng.uniform(0.2, 2.0, size=(M, N))
        pi = np.arange(N) % G
        net = make_net(beta, config, pi)
        P = rng.uniform(0.1, config.max_dl_power / N, size=(M, N))
        return config, net.clustering, net, P

    return make
