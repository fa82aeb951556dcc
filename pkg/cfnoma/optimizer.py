"""Alternating power/clustering optimization and the baseline clusterings it is compared with."""
import logging
import math
import time
from collections import deque
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np
from opentelemetry import trace

from .clustering import clustering_design
from .clustering.design import meets_qos
from .config.types import ClusteringSettings, OptimizerSettings, PowerSettings, SolverSettings, SystemConfig
from .errors import ConfigError, InfeasibleScenarioError
from .network import ClusteringState, NetworkState
from .power import initial_power, spa
from .rate import asr, effective_sinrs, lb_rates
from .seeding import substream


logger = logging.getLogger(__name__)
tracer = trace.get_tracer("cfnoma")

BASELINES = ("gale-shapley", "brpa")


@dataclass(frozen=True)
class TracePoint:
    stage: str
    asr: float
    asr_bps: float


@dataclass
class OptimizationResult:
    power: np.ndarray
    clustering: ClusteringState
    net: NetworkState
    trace: List[TracePoint]
    rates: np.ndarray
    sinrs: np.ndarray
    iterations: int
    spa_iterations: int
    wall_ms: float
    detector: str
    termination: str
    feasible: bool

    @property
    def asr(self) -> float:
        return self.trace[-1].asr

    @property
    def asr_bps(self) -> float:
        return self.trace[-1].asr_bps

    def summary(self) -> Dict[str, Any]:
        return {
            "detector": self.detector,
            "termination": self.termination,
            "iterations": self.iterations,
            "spa_iterations": self.spa_iterations,
            "asr": self.asr,
            "asr_bps": self.asr_bps,
            "feasible": self.feasible,
            "wall_ms": round(self.wall_ms, 3),
            "clustering": self.clustering.pi.tolist(),
            "rates": self.rates.tolist(),
            "trace": [[p.stage, p.asr] for p in self.trace],
        }


def gale_shapley_clustering(net: NetworkState, config: SystemConfig) -> ClusteringState:
    """Deferred acceptance with cluster capacity ⌈N/G⌉.

    A UE proposes to the cluster with the least tentative Σβ load among those
    that have not rejected it (ties to the lower index); an over-full cluster
    evicts its member with the largest Σ_m β (ties to the larger index).
    """
    N, G = net.num_ues, config.num_clusters
    strength = net.beta.sum(axis=0)
    capacity = math.ceil(N / G)
    members: List[List[int]] = [[] for _ in range(G)]
    rejected: List[set] = [set() for _ in range(N)]
    free = deque(range(N))

    while free:
        n = free.popleft()
        load = [float(strength[members[g]].sum()) for g in range(G)]
        g = min((g for g in range(G) if g not in rejected[n]), key=lambda g: (load[g], g))
        members[g].append(n)
        if len(members[g]) > capacity:
            evicted = max(members[g], key=lambda k: (strength[k], k))
            members[g].remove(evicted)
            rejected[evicted].add(g)
            free.append(evicted)

    pi = np.empty(N, dtype=np.int64)
    for g, ues in enumerate(members):
        pi[ues] = g
    return ClusteringState(pi=pi, num_clusters=G)


def brpa_clustering(N: int, G: int, seed: int) -> ClusteringState:
    """Uniformly random balanced assignment."""
    perm = substream(seed, "clustering-baseline").permutation(N)
    pi = np.empty(N, dtype=np.int64)
    pi[perm] = np.arange(N) % G
    return ClusteringState(pi=pi, num_clusters=G)


def initial_clustering(net: NetworkState, config: SystemConfig, name: str, seed: Optional[int] = None) -> ClusteringState:
    if name == "gale-shapley":
        return gale_shapley_clustering(net, config)
    if name == "brpa":
        return brpa_clustering(net.num_ues, config.num_clusters, config.rng_seed if seed is None else seed)
    raise ConfigError(f"unknown clustering baseline: {name}", choices=list(BASELINES))


def _point(stage: str, value: float, config: SystemConfig) -> TracePoint:
    return TracePoint(stage=stage, asr=value, asr_bps=value * config.bandwidth)


def _result(P, clustering, net, config, trace_points, iterations, spa_iterations, started, detector, termination):
    rates = np.asarray(lb_rates(P, clustering, net, config))
    return OptimizationResult(
        power=P,
        clustering=clustering,
        net=net,
        trace=trace_points,
        rates=rates,
        sinrs=effective_sinrs(P, clustering, net, config),
        iterations=iterations,
        spa_iterations=spa_iterations,
        wall_ms=(time.perf_counter() - started) * 1000.0,
        detector=detector,
        termination=termination,
        feasible=meets_qos(rates, config.min_rate_per_use()),
    )


def baseline(
    net: NetworkState,
    config: SystemConfig,
    name: str,
    seed: Optional[int] = None,
    power: Optional[PowerSettings] = None,
    solver: Optional[SolverSettings] = None,
) -> OptimizationResult:
    """Baseline clustering followed by a single SPA pass."""
    started = time.perf_counter()
    clustering = initial_clustering(net, config, name, seed)
    assigned = net.assign(clustering, config)
    result = spa(initial_power(clustering, assigned, config), clustering, assigned, config, power, solver)
    value = asr(result.power, clustering, assigned, config)
    logger.info(f"Baseline {name}: ASR={value:.6f} bits/use after {result.iterations} SPA iteration(s)")
    return _result(
        result.power, clustering, assigned, config, [_point("spa", value, config)],
        0, result.iterations, started, name, result.termination,
    )


def optimize(
    net: NetworkState,
    config: SystemConfig,
    detector: Optional[str] = None,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    *,
    power: Optional[PowerSettings] = None,
    clustering: Optional[ClusteringSettings] = None,
    optimizer: Optional[OptimizerSettings] = None,
    solver: Optional[SolverSettings] = None,
) -> OptimizationResult:
    """Alternate SPA for fixed clustering and loop-based clustering for fixed power.

    Stops when |ASR(t) − ASR(t−1)| ≤ tol (bits per channel use), when the
    clustering step changes nothing, or after `max_iter` rounds. A round
    whose SPA half-step ends below the clustering half-step is discarded.
    """
    optimizer = optimizer or OptimizerSettings()
    clustering = clustering or ClusteringSettings()
    if detector is not None:
        clustering = clustering.model_copy(update={"detector": detector})
    tol = optimizer.xi if tol is None else tol
    max_iter = optimizer.max_iter if max_iter is None else max_iter
    started = time.perf_counter()

    X = initial_clustering(net, config, optimizer.initial_clustering)
    current_net = net.assign(X, config)
    first = spa(initial_power(X, current_net, config), X, current_net, config, power, solver)
    P = first.power
    objective = asr(P, X, current_net, config)
    points = [_point("spa", objective, config)]
    spa_iterations = first.iterations
    termination = "max-iter"
    rounds = 0
    logger.info(f"Optimize start ({clustering.detector}): ASR={objective:.6f} bits/use")

    for t in range(1, max_iter + 1):
        rounds = t
        with tracer.start_as_current_span("optimize.round") as span:
            span.set_attribute("round", t)
            X_new = clustering_design(X, P, current_net, config, clustering)
            if X_new == X:
                termination = "clustering-stable"
                break

            new_net = net.assign(X_new, config)
            clustered = asr(P, X_new, new_net, config)
            try:
                result = spa(P, X_new, new_net, config, power, solver)
            except InfeasibleScenarioError as e:
                logger.warning(f"Round {t}: SPA infeasible after reclustering ({e.reason}); keeping previous state")
                termination = "clustering-rejected"
                break
            value = asr(result.power, X_new, new_net, config)
            spa_iterations += result.iterations
            if value < clustered - 1e-12 * max(1.0, abs(clustered)):
                logger.warning(f"Round {t}: SPA ended below the clustering step ({value:.6f} < {clustered:.6f})")
                termination = "clustering-rejected"
                break

            points += [_point("clustering", clustered, config), _point("spa", value, config)]
            previous = objective
            X, current_net, P, objective = X_new, new_net, result.power, value
            span.set_attribute("asr", objective)
            logger.info(f"Round {t}: ASR={objective:.6f} bits/use (change {objective - previous:.3e})")
            if abs(objective - previous) <= tol:
                termination = "converged"
                break

    logger.info(f"Optimize stop after {rounds} round(s) ({termination}): ASR={objective:.6f} bits/use")
    return _result(P, X, current_net, config, points, rounds, spa_iterations, started, clustering.detector, termination)
