"""Negative-loop driven clustering refinement for fixed power."""
import logging
from typing import Optional, Set, Tuple

import numpy as np
from opentelemetry import trace

from ..config.types import ClusteringSettings, SystemConfig
from ..errors import InvalidLoopError
from ..network import ClusteringState, NetworkState
from ..rate import asr, lb_rates
from .detectors import Loop, detect_negative_loop_ebfa, detect_negative_loop_gsa
from .graph import GraphBuilder, WeightedDigraph


logger = logging.getLogger(__name__)
tracer = trace.get_tracer("cfnoma")

QOS_TOL = 1e-9


def apply_loop(clustering: ClusteringState, loop: Loop) -> ClusteringState:
    """Move every real node of the loop into the cluster of its successor.

    Virtual nodes (index ≥ N) stay put; a hop into one is a pure insertion
    and a hop out of one a pure removal.
    """
    N, G = clustering.num_ues, clustering.num_clusters
    nodes = list(loop.nodes)
    if len(nodes) < 2:
        raise InvalidLoopError("a loop needs at least two nodes", nodes=nodes)
    if min(nodes) < 0 or max(nodes) >= N + G:
        raise InvalidLoopError(f"loop nodes must lie in [0, {N + G})", nodes=nodes)

    def cluster_of(v: int) -> int:
        return int(clustering.pi[v]) if v < N else v - N

    clusters = [cluster_of(v) for v in nodes]
    if len(set(clusters)) != len(clusters):
        raise InvalidLoopError("loop visits a cluster twice", nodes=nodes, clusters=clusters)

    moves = {}
    for k, v in enumerate(nodes):
        if v < N:
            moves[v] = clusters[(k + 1) % len(nodes)]
    return clustering.moved(moves)


def detect(graph: WeightedDigraph, settings: ClusteringSettings, exclude: Set[Tuple[int, ...]]) -> Optional[Loop]:
    if settings.detector == "ebfa":
        return detect_negative_loop_ebfa(graph, exclude, label_cap=settings.label_cap, tol=settings.negative_tol)
    return detect_negative_loop_gsa(graph, settings.alpha, exclude, tol=settings.negative_tol)


def meets_qos(rates: np.ndarray, required: np.ndarray) -> bool:
    return bool(np.all(rates >= required - QOS_TOL * np.maximum(required, 1.0)))


def clustering_design(
    clustering0: ClusteringState,
    P: np.ndarray,
    net: NetworkState,
    config: SystemConfig,
    settings: Optional[ClusteringSettings] = None,
    qos: Optional[np.ndarray] = None,
) -> ClusteringState:
    """Apply improving negative differ-cluster loops until none is admissible.

    `qos` is the per-UE rate requirement in bits per channel use; a loop whose
    application would leave any UE below it joins the invalid set and is
    skipped. The invalid set is cleared after every applied loop unless
    `settings.persist_invalid` is set.
    """
    settings = settings or ClusteringSettings()
    required = config.min_rate_per_use() if qos is None else np.asarray(qos, dtype=float)
    builder = GraphBuilder(net, config)

    clustering = clustering0
    current = asr(P, clustering, net.assign(clustering, config), config)
    invalid: Set[Tuple[int, ...]] = set()
    applied = rejected = 0

    with tracer.start_as_current_span("clustering.design") as span:
        span.set_attribute("detector", settings.detector)
        for attempt in range(settings.max_loops):
            graph = builder.build(clustering, P)
            loop = detect(graph, settings, invalid)
            if loop is None:
                break

            candidate = apply_loop(clustering, loop)
            candidate_net = net.assign(candidate, config)
            value = asr(P, candidate, candidate_net, config)
            if value <= current or not meets_qos(lb_rates(P, candidate, candidate_net, config), required):
                logger.debug(f"Loop {loop.nodes} (weight {loop.weight:.3e}) rejected")
                invalid.add(loop.nodes)
                rejected += 1
                continue

            logger.info(
                f"Applied {len(loop)}-node loop {loop.nodes}: ASR {current:.6f} -> {value:.6f} bits/use"
            )
            clustering, current = candidate, value
            applied += 1
            if not settings.persist_invalid:
                invalid = set()
        else:
            logger.warning(f"Clustering design stopped after {settings.max_loops} detector calls")

        span.set_attribute("applied", applied)
        span.set_attribute("rejected", rejected)
        span.set_attribute("asr", current)
    logger.info(f"Clustering design done: {applied} loop(s) applied, {rejected} rejected")
    return clustering
