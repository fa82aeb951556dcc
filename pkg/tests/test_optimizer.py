from pathlib import Path

import numpy as np
import pytest

from cfnoma.config import OptimizerSettings, PowerSettings, ProfileLoader
from cfnoma.errors import ConfigError, InfeasibleScenarioError
from cfnoma.network import balanced_sizes, generate_deployment
from cfnoma.optimizer import (
    baseline,
    brpa_clustering,
    gale_shapley_clustering,
    initial_clustering,
    optimize,
)
from cfnoma.rate import asr


REPO_PROFILES = Path(__file__).resolve().parent.parent / "profiles"


def test_gale_shapley_one_ue_per_cluster(make_config, make_net):
    config = make_config(num_aps=2, num_ues=4, num_clusters=4)
    net = make_net([[1.0, 3.0, 0.5, 2.0], [0.2, 0.1, 0.4, 0.3]])
    clustering = gale_shapley_clustering(net, config)
    assert sorted(clustering.pi.tolist()) == [0, 1, 2, 3]


def test_gale_shapley_alternates_identical_ues(make_config, make_net):
    config = make_config(num_aps=1, num_ues=4, num_clusters=2)
    net = make_net([[1.0, 1.0, 1.0, 1.0]])
    assert gale_shapley_clustering(net, config).pi.tolist() == [0, 1, 0, 1]


def test_gale_shapley_evicts_to_the_rejecting_cluster(make_config, make_net):
    config = make_config(num_aps=1, num_ues=4, num_clusters=2)
    # UE 0 alone fills cluster 0's load, so 1..3 pile into cluster 1 until 3 is evicted
    net = make_net([[10.0, 1.0, 1.0, 1.0]])
    assert gale_shapley_clustering(net, config).pi.tolist() == [0, 1, 1, 0]


def test_gale_shapley_respects_capacity(desk_config):
    clustering = gale_shapley_clustering(generate_deployment(desk_config), desk_config)
    assert clustering.sizes().max() <= 2


def test_brpa_is_balanced_and_seeded():
    a = brpa_clustering(7, 3, seed=5)
    assert sorted(a.sizes().tolist(), reverse=True) == balanced_sizes(7, 3)
    assert a == brpa_clustering(7, 3, seed=5)


def test_brpa_places_each_ue_uniformly():
    share = np.mean([brpa_clustering(4, 2, seed=s).pi[0] == 0 for s in range(2000)])
    assert share == pytest.approx(0.5, abs=0.05)


def test_unknown_initial_clustering(random_instance):
    config, _, net, _ = random_instance()
    with pytest.raises(ConfigError):
        initial_clustering(net, config, "k-means")


def test_baseline_runs_one_power_pass(random_instance):
    config, _, net, _ = random_instance(M=3, N=4, G=2, seed=3)
    result = baseline(net, config, "gale-shapley", power=PowerSettings(max_iter=5))
    assert result.iterations == 0
    assert len(result.trace) == 1
    assert result.detector == "gale-shapley"
    assert result.asr == pytest.approx(asr(result.power, result.clustering, result.net, config))
    assert result.asr_bps == pytest.approx(result.asr * config.bandwidth)
    assert result.feasible


@pytest.mark.parametrize("detector", ["ebfa", "gsa"])
def test_optimize_never_loses_to_its_starting_point(random_instance, detector):
    config, _, net, _ = random_instance(M=3, N=5, G=2, seed=6)
    power = PowerSettings(max_iter=5)
    start = baseline(net, config, "gale-shapley", power=power)
    result = optimize(net, config, detector, max_iter=3, power=power)
    assert result.asr >= start.asr - 1e-9
    values = np.array([point.asr for point in result.trace])
    assert np.all(np.diff(values) >= -1e-9)
    assert result.termination in {"converged", "max-iter", "clustering-stable", "clustering-rejected"}
    assert result.iterations <= 3


def test_optimize_summary(random_instance):
    config, _, net, _ = random_instance(M=3, N=4, G=2, seed=1)
    result = optimize(net, config, "gsa", max_iter=2, power=PowerSettings(max_iter=4))
    summary = result.summary()
    assert summary["detector"] == "gsa"
    assert summary["asr"] == result.asr
    assert len(summary["clustering"]) == 4
    assert summary["trace"][0][0] == "spa"
    assert summary["iterations"] == result.iterations


def test_optimize_from_random_baseline(random_instance):
    config, _, net, _ = random_instance(M=3, N=4, G=2, seed=2)
    settings = OptimizerSettings(initial_clustering="brpa", max_iter=2)
    result = optimize(net, config, "ebfa", optimizer=settings, power=PowerSettings(max_iter=4))
    start = baseline(net, config, "brpa", power=PowerSettings(max_iter=4))
    assert result.asr >= start.asr - 1e-9


@pytest.mark.slow
def test_optimize_dominates_gale_shapley_over_many_seeds(random_instance):
    for seed in range(20):
        config, _, net, _ = random_instance(M=4, N=6, G=3, seed=seed)
        start = baseline(net, config, "gale-shapley")
        assert optimize(net, config, "gsa").asr >= start.asr - 1e-9


@pytest.mark.slow
@pytest.mark.parametrize("detector", ["ebfa", "gsa"])
def test_desk_runs_climb_and_stop_within_ten_rounds(detector):
    profile = ProfileLoader(REPO_PROFILES).get("desk")
    finished = 0
    for seed in range(20):
        config = profile.system.model_copy(update={"rng_seed": seed})
        net = generate_deployment(config)
        try:
            result = optimize(
                net, config, detector, power=profile.power, clustering=profile.clustering,
                optimizer=profile.optimizer, solver=profile.solver,
            )
        except InfeasibleScenarioError:
            continue
        values = np.array([point.asr for point in result.trace])
        assert np.all(np.diff(values) >= -1e-9 * np.abs(values[:-1]).clip(1.0)), f"seed {seed}"
        assert result.iterations <= 10
        finished += 1
    assert finished > 0
