"""Instantaneous-channel simulation of the downlink, used to check the closed-form rate bound.

Per realization, symbol expectations are taken analytically: every term
below is the power of a received component given the channels, with the
data symbols and the SIC estimation error averaged out.
"""
import logging
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from opentelemetry import trace

from .config.types import MonteCarloSettings, SystemConfig
from .errors import DomainError, OrderingViolationError
from .network import ClusteringState, NetworkState, cluster_load
from .rate import RateParams, fbc_rate
from .seeding import substream


logger = logging.getLogger(__name__)
tracer = trace.get_tracer("cfnoma")

Z95 = 1.96


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """A batch of B channel draws.

    nu: (B, M, G, L) estimate directions, one per AP and cluster.
    h_hat, error, h: (B, M, N, L).
    """

    nu: np.ndarray
    h_hat: np.ndarray
    error: np.ndarray
    h: np.ndarray

    @property
    def trials(self) -> int:
        return self.nu.shape[0]


def complex_normal(rng: np.random.Generator, shape, variance=1.0) -> np.ndarray:
    scale = np.sqrt(np.asarray(variance, dtype=float) / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_channels(
    net: NetworkState,
    clustering: ClusteringState,
    config: SystemConfig,
    seed: int,
    trials: int = 1,
    mode: Literal["statistics", "pilots"] = "statistics",
    batch: int = 0,
) -> ChannelRealization:
    """Draw `trials` realizations from stream (seed, montecarlo, batch).

    In "statistics" mode ĥ = √θ·ν and the error ~ CN(0, β − θ) are drawn
    directly. "pilots" draws the true channels, forms each AP's received
    pilot per cluster and applies the MMSE estimator.
    """
    net.require(clustering)
    rng = substream(seed, "montecarlo", batch)
    M, N, G, L = net.num_aps, net.num_ues, clustering.num_clusters, config.antennas_per_ap
    sqrt_theta = np.sqrt(net.theta)[None, :, :, None]

    if mode == "statistics":
        nu = complex_normal(rng, (trials, M, G, L))
        h_hat = sqrt_theta * nu[:, :, clustering.pi, :]
        error = complex_normal(rng, (trials, M, N, L), (net.beta - net.theta)[None, :, :, None])
        return ChannelRealization(nu=nu, h_hat=h_hat, error=error, h=h_hat + error)

    if mode == "pilots":
        h = complex_normal(rng, (trials, M, N, L), net.beta[None, :, :, None])
        gain = G * config.pilot_power
        received = np.sqrt(gain) * np.einsum("bmnl,gn->bmgl", h, clustering.x) + complex_normal(rng, (trials, M, G, L))
        load = cluster_load(net.beta, clustering)
        nu = received / np.sqrt(gain * load + 1.0)[None, :, :, None]
        h_hat = sqrt_theta * nu[:, :, clustering.pi, :]
        return ChannelRealization(nu=nu, h_hat=h_hat, error=h - h_hat, h=h)

    raise DomainError(f"unknown channel mode: {mode}")


def mean_gains(net: NetworkState, clustering: ClusteringState, config: SystemConfig, u: int) -> np.ndarray:
    """E{ι_{m,u,k}} per (m, k): √(L θ_mu) for co-cluster k, 0 otherwise."""
    same = clustering.pi == clustering.pi[u]
    return np.sqrt(config.antennas_per_ap * net.theta[:, u])[:, None] * same[None, :]


def mean_amplitudes(P: np.ndarray, net: NetworkState, clustering: ClusteringState, config: SystemConfig, u: int) -> np.ndarray:
    return (np.sqrt(P) * mean_gains(net, clustering, config, u)).sum(axis=0)


def amplitudes(real: ChannelRealization, P: np.ndarray, clustering: ClusteringState, config: SystemConfig, u: int) -> np.ndarray:
    """Σ_m √p_mk ι_{m,u,k} for every UE k, shape (B, N), with ι = h_mu^H ν_{m,π_k} / √L."""
    proj = np.einsum("bml,bmgl->bmg", real.h[:, :, u, :].conj(), real.nu) / np.sqrt(config.antennas_per_ap)
    return np.einsum("bmn,mn->bn", proj[:, :, clustering.pi], np.sqrt(P))


def _sinr_from(A: np.ndarray, A_bar: np.ndarray, n: int, later: np.ndarray, c: float) -> np.ndarray:
    power = np.abs(A) ** 2
    residual = np.abs(A_bar) ** 2 - 2.0 * c * np.real(A * np.conj(A_bar))
    interference = power + later[None, :] * residual
    interference[:, n] = 0.0
    desired = np.abs(A_bar[n]) ** 2
    uncertainty = np.abs(A[:, n] - A_bar[n]) ** 2
    return desired / (uncertainty + interference.sum(axis=1) + 1.0)


def instantaneous_sinr(
    real: ChannelRealization,
    P: np.ndarray,
    clustering: ClusteringState,
    net: NetworkState,
    config: SystemConfig,
    n: int,
    u: int,
) -> np.ndarray:
    """SINR of UE n's signal at observer u for every realization, shape (B,)."""
    net.require(clustering)
    if clustering.pi[n] != clustering.pi[u]:
        raise DomainError(f"UE {u} does not share a cluster with UE {n}")
    if net.rank[u] > net.rank[n]:
        raise OrderingViolationError(f"observer UE {u} is decoded after UE {n}", signal=int(n), observer=int(u))
    A = amplitudes(real, P, clustering, config, u)
    A_bar = mean_amplitudes(P, net, clustering, config, u)
    return _sinr_from(A, A_bar, n, _later_mask(clustering, net, n), config.sic_coeff)


def _later_mask(clustering: ClusteringState, net: NetworkState, n: int) -> np.ndarray:
    """Co-cluster UEs decoded before n (weaker, later in the order)."""
    return ((clustering.pi == clustering.pi[n]) & (net.rank > net.rank[n])).astype(float)


@dataclass(frozen=True, eq=False)
class ErgodicEstimate:
    mean: np.ndarray
    ci_half_width: np.ndarray
    harmonic_sinr: np.ndarray
    trial_harmonic_sinr: np.ndarray
    trials: int
    observer_min: str


def empirical_ergodic_rate(
    net: NetworkState,
    clustering: ClusteringState,
    P: np.ndarray,
    config: SystemConfig,
    trials: Optional[int] = None,
    seed: Optional[int] = None,
    settings: Optional[MonteCarloSettings] = None,
    observer_min: Literal["per-observer", "per-trial"] = "per-trial",
) -> ErgodicEstimate:
    """Per-UE sample mean of max(R(γ), 0) in bits per channel use, with a 95% normal CI.

    "per-trial" takes the worst SIC observer inside every realization, the
    rate a UE actually gets when each of its observers must decode it.
    "per-observer" takes, for each UE, the observer with the smallest mean
    rate, which is the quantity the pairwise closed-form bound covers.
    `harmonic_sinr` is min_u E⁻¹{1/γᵘ}; `trial_harmonic_sinr` is E⁻¹{1/min_u γᵘ}.
    """
    settings = settings or MonteCarloSettings()
    trials = settings.trials if trials is None else trials
    seed = config.rng_seed if seed is None else seed
    if trials < 1000:
        raise DomainError(f"need at least 1000 trials, got {trials}")
    if observer_min not in ("per-trial", "per-observer"):
        raise DomainError(f"unknown observer rule: {observer_min}")
    net.require(clustering)
    params = RateParams.from_config(config)
    N, c = net.num_ues, config.sic_coeff

    pairs = [
        (n, u)
        for n in range(N)
        for u in range(N)
        if clustering.pi[u] == clustering.pi[n] and net.rank[u] <= net.rank[n]
    ]
    later = {n: _later_mask(clustering, net, n) for n in range(N)}
    bar = {u: mean_amplitudes(P, net, clustering, config, u) for u in range(N)}

    sums = {pair: [] for pair in pairs}
    trial_sums = [[] for _ in range(N)]
    done, batch = 0, 0
    with tracer.start_as_current_span("montecarlo.estimate") as span:
        span.set_attribute("trials", trials)
        span.set_attribute("mode", settings.mode)
        while done < trials:
            size = min(settings.batch, trials - done)
            real = draw_channels(net, clustering, config, seed, size, settings.mode, batch)
            gammas = {}
            for u in range(N):
                A = amplitudes(real, P, clustering, config, u)
                for n in range(N):
                    if (n, u) in sums:
                        gammas[n, u] = _sinr_from(A, bar[u], n, later[n], c)
            for (n, u), gamma in gammas.items():
                rate = np.asarray(fbc_rate(gamma, params))
                sums[n, u].append((rate.sum(), (rate**2).sum(), (1.0 / gamma).sum()))
            for n in range(N):
                worst = np.min([gammas[n, u] for u in range(N) if (n, u) in gammas], axis=0)
                rate = np.asarray(fbc_rate(worst, params))
                trial_sums[n].append((rate.sum(), (rate**2).sum(), (1.0 / worst).sum()))
            done += size
            batch += 1
            logger.debug(f"Monte Carlo batch {batch}: {done}/{trials} trials")

    mean = np.zeros(N)
    half = np.zeros(N)
    harmonic = np.full(N, np.inf)
    trial_harmonic = np.zeros(N)
    for n in range(N):
        candidates = []
        for u in range(N):
            if (n, u) not in sums:
                continue
            totals = np.sum(np.array(sums[n, u]), axis=0)
            m1, m2 = totals[0] / trials, totals[1] / trials
            candidates.append((m1, m2))
            harmonic[n] = min(harmonic[n], trials / totals[2])
        worst_totals = np.sum(np.array(trial_sums[n]), axis=0)
        trial_harmonic[n] = trials / worst_totals[2]
        if observer_min == "per-trial":
            m1, m2 = worst_totals[0] / trials, worst_totals[1] / trials
        else:
            m1, m2 = min(candidates)
        mean[n] = m1
        half[n] = Z95 * np.sqrt(max(m2 - m1**2, 0.0) / trials)

    logger.info(f"Monte Carlo estimate over {trials} trials: mean rate sum {mean.sum():.6f} bits/use")
    return ErgodicEstimate(
        mean=mean, ci_half_width=half, harmonic_sinr=harmonic, trial_harmonic_sinr=trial_harmonic,
        trials=trials, observer_min=observer_min,
    )


def omega_sample_mean(real: ChannelRealization, net: NetworkState, clustering: ClusteringState) -> np.ndarray:
    """Per-UE sample mean of |Σ_m ν_{m,π_n}^H ĥ_mn|²."""
    nu = real.nu[:, :, clustering.pi, :]
    inner = np.einsum("bmnl,bmnl->bn", nu.conj(), real.h_hat)
    return np.mean(np.abs(inner) ** 2, axis=0)
