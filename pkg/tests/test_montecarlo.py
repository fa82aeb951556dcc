import numpy as np
import pytest

from cfnoma.config import MonteCarloSettings
from cfnoma.errors import DomainError, OrderingViolationError
from cfnoma.montecarlo import (
    ChannelRealization,
    draw_channels,
    empirical_ergodic_rate,
    instantaneous_sinr,
    omega_sample_mean,
)
from cfnoma.rate import effective_sinrs, lb_rates, union_lb_rates, union_sinrs


@pytest.fixture
def scenario(random_instance):
    return random_instance(M=3, N=4, G=2, L=2, seed=12, epsilon=0.5)


@pytest.mark.parametrize("mode", ["statistics", "pilots"])
def test_co_cluster_estimates_share_a_direction(scenario, mode):
    config, clustering, net, _ = scenario
    real = draw_channels(net, clustering, config, seed=1, trials=5, mode=mode)
    a, b = clustering.members(0)[:2]
    for m in range(3):
        np.testing.assert_allclose(
            real.h_hat[:, m, a] / np.sqrt(net.theta[m, a]), real.h_hat[:, m, b] / np.sqrt(net.theta[m, b])
        )
    np.testing.assert_allclose(real.h, real.h_hat + real.error)


@pytest.mark.parametrize("mode", ["statistics", "pilots"])
def test_estimate_and_error_have_the_pilot_statistics(scenario, mode):
    config, clustering, net, _ = scenario
    real = draw_channels(net, clustering, config, seed=2, trials=20_000, mode=mode)
    np.testing.assert_allclose(np.mean(np.abs(real.h_hat) ** 2, axis=(0, 3)), net.theta, rtol=0.05)
    np.testing.assert_allclose(np.mean(np.abs(real.error) ** 2, axis=(0, 3)), net.beta - net.theta, rtol=0.05)


def test_sample_omega_matches_closed_form(scenario):
    config, clustering, net, _ = scenario
    real = draw_channels(net, clustering, config, seed=3, trials=20_000)
    np.testing.assert_allclose(omega_sample_mean(real, net, clustering), net.omega, rtol=0.03)


def test_unknown_channel_mode(scenario):
    config, clustering, net, _ = scenario
    with pytest.raises(DomainError):
        draw_channels(net, clustering, config, seed=0, mode="rays")


def test_channel_draws_are_reproducible(scenario):
    config, clustering, net, _ = scenario
    a = draw_channels(net, clustering, config, seed=4, trials=3, batch=2)
    b = draw_channels(net, clustering, config, seed=4, trials=3, batch=2)
    c = draw_channels(net, clustering, config, seed=4, trials=3, batch=3)
    np.testing.assert_array_equal(a.h, b.h)
    assert not np.array_equal(a.h, c.h)


def _single_link(make_config, make_net, L, error):
    config = make_config(num_aps=1, num_ues=1, num_clusters=1, antennas_per_ap=L, sic_coeff=1.0)
    net = make_net([[2.0]], config, [0])
    nu = np.ones((1, 1, 1, L), dtype=complex)
    h_hat = np.sqrt(net.theta[0, 0]) * nu
    err = np.full((1, 1, 1, L), error, dtype=complex)
    real = ChannelRealization(nu=nu, h_hat=h_hat, error=err, h=h_hat + err)
    return config, net, real


def test_noise_limited_link_gets_full_array_gain(make_config, make_net):
    config, net, real = _single_link(make_config, make_net, L=4, error=0.0)
    P = np.array([[3.0]])
    gamma = instantaneous_sinr(real, P, net.clustering, net, config, 0, 0)
    assert gamma[0] == pytest.approx(4 * 3.0 * net.theta[0, 0])


def test_estimation_error_counts_as_uncertainty(make_config, make_net):
    config, net, real = _single_link(make_config, make_net, L=1, error=0.5 + 0.5j)
    P = np.array([[3.0]])
    theta = net.theta[0, 0]
    gamma = instantaneous_sinr(real, P, net.clustering, net, config, 0, 0)
    assert gamma[0] == pytest.approx(3.0 * theta / (3.0 * 0.5 + 1.0))


def test_instantaneous_sinr_checks_the_pair(scenario):
    config, clustering, net, P = scenario
    real = draw_channels(net, clustering, config, seed=0, trials=2)
    strong, weak = net.ordered_members(0)[:2]
    with pytest.raises(OrderingViolationError):
        instantaneous_sinr(real, P, clustering, net, config, strong, weak)
    other = clustering.members(1)[0]
    with pytest.raises(DomainError):
        instantaneous_sinr(real, P, clustering, net, config, strong, other)


def test_harmonic_mean_sinr_recovers_the_closed_form_bound(scenario):
    config, clustering, net, P = scenario
    estimate = empirical_ergodic_rate(net, clustering, P, config, trials=20_000, seed=5)
    np.testing.assert_allclose(estimate.harmonic_sinr, effective_sinrs(P, clustering, net, config), rtol=0.05)


def test_closed_form_rate_is_a_lower_bound(scenario):
    config, clustering, net, P = scenario
    estimate = empirical_ergodic_rate(net, clustering, P, config, trials=5000, seed=6, observer_min="per-observer")
    bound = lb_rates(P, clustering, net, config)
    assert np.all(estimate.mean + 3 * estimate.ci_half_width / 1.96 >= bound)
    assert estimate.observer_min == "per-observer"


def test_per_trial_minimum_never_exceeds_per_observer(scenario):
    config, clustering, net, P = scenario
    a = empirical_ergodic_rate(net, clustering, P, config, trials=2000, seed=7, observer_min="per-observer")
    b = empirical_ergodic_rate(net, clustering, P, config, trials=2000, seed=7, observer_min="per-trial")
    assert np.all(b.mean <= a.mean + 1e-12)


def test_too_few_trials(scenario):
    config, clustering, net, P = scenario
    with pytest.raises(DomainError):
        empirical_ergodic_rate(net, clustering, P, config, trials=999)


def test_confidence_interval_shrinks_with_trials(scenario):
    config, clustering, net, P = scenario
    small = empirical_ergodic_rate(net, clustering, P, config, trials=2000, seed=8)
    large = empirical_ergodic_rate(net, clustering, P, config, trials=8000, seed=8)
    assert large.ci_half_width.sum() / small.ci_half_width.sum() == pytest.approx(0.5, abs=0.1)


def test_estimate_is_deterministic_in_either_mode(scenario):
    config, clustering, net, P = scenario
    a = empirical_ergodic_rate(net, clustering, P, config, trials=2000, seed=9)
    b = empirical_ergodic_rate(net, clustering, P, config, trials=2000, seed=9)
    np.testing.assert_array_equal(a.mean, b.mean)
    pilots = empirical_ergodic_rate(
        net, clustering, P, config, trials=2000, seed=9, settings=MonteCarloSettings(batch=500, mode="pilots")
    )
    assert pilots.trials == 2000
    assert np.all(pilots.mean > 0)


def test_worst_observer_is_taken_inside_each_trial_by_default(scenario):
    config, clustering, net, P = scenario
    estimate = empirical_ergodic_rate(net, clustering, P, config, trials=2000, seed=6)
    assert estimate.observer_min == "per-trial"


def test_union_bound_holds_under_the_per_trial_rule(scenario):
    config, clustering, net, P = scenario
    estimate = empirical_ergodic_rate(net, clustering, P, config, trials=5000, seed=6)
    bound = union_lb_rates(P, clustering, net, config)
    assert np.all(estimate.mean + 3 * estimate.ci_half_width / 1.96 >= bound)
    assert np.all(bound <= lb_rates(P, clustering, net, config) + 1e-12)


def test_closed_form_holds_per_trial_for_ues_with_one_observer(scenario):
    config, clustering, net, P = scenario
    estimate = empirical_ergodic_rate(net, clustering, P, config, trials=5000, seed=6)
    bound = lb_rates(P, clustering, net, config)
    firsts = [net.ordered_members(g)[0] for g in range(clustering.num_clusters)]
    for n in firsts:
        assert estimate.mean[n] + 3 * estimate.ci_half_width[n] / 1.96 >= bound[n]


def test_worst_observer_harmonic_mean_sits_between_the_bounds(scenario):
    config, clustering, net, P = scenario
    estimate = empirical_ergodic_rate(net, clustering, P, config, trials=20_000, seed=5)
    # the mean of a max is at least the max of the means, sample by sample
    assert np.all(estimate.trial_harmonic_sinr <= estimate.harmonic_sinr * (1 + 1e-12))
    assert np.all(estimate.trial_harmonic_sinr >= union_sinrs(P, clustering, net, config) * 0.95)


def test_unknown_observer_rule(scenario):
    config, clustering, net, P = scenario
    with pytest.raises(DomainError):
        empirical_ergodic_rate(net, clustering, P, config, trials=1000, observer_min="per-ue")
