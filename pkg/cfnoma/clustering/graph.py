"""Weighted digraph over UEs and per-cluster virtual UEs.

Edge i -> j stands for "i takes j's place in cluster π_j"; its weight is the
drop of that cluster's rate variable, so a cycle's weight is the drop of
the whole sum (in nats, scaled by ln2/η).
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..config.types import SystemConfig
from ..network import ClusteringState, NetworkState, effective_gain_omega, order_by_omega, theta_for_members
from ..rate import RateParams, cluster_sinr_block, nats_rate


logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class WeightedDigraph:
    Z: np.ndarray
    cluster: np.ndarray
    num_real: int
    omega: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.Z.shape[0]

    @property
    def num_clusters(self) -> int:
        return self.omega.size

    def is_virtual(self, node: int) -> bool:
        return node >= self.num_real

    def edges(self) -> List[Tuple[int, int, float]]:
        rows, cols = np.nonzero(np.isfinite(self.Z))
        return [(int(i), int(j), float(self.Z[i, j])) for i, j in zip(rows, cols)]

    def label(self, node: int) -> str:
        if self.is_virtual(node):
            return f"v{node - self.num_real}"
        return f"ue{node}"


def members_rate(
    members: np.ndarray,
    P: np.ndarray,
    net: NetworkState,
    config: SystemConfig,
    params: RateParams,
    total_power: Optional[np.ndarray] = None,
) -> float:
    """Rate variable of a cluster made of `members`, with θ and SIC order rebuilt for that membership."""
    members = np.asarray(members, dtype=np.int64)
    if members.size == 0:
        return 0.0
    total_power = P.sum(axis=1) if total_power is None else total_power
    theta = theta_for_members(net.beta, members, config.pilot_power, config.num_clusters)
    perm = order_by_omega(effective_gain_omega(theta, config.antennas_per_ap), index=members)
    order = members[perm]
    block = cluster_sinr_block(
        P[:, order], theta[:, perm], net.beta[:, order], total_power, config.antennas_per_ap, config.sic_coeff
    )
    return float(np.sum(nats_rate(block.min(axis=0), params)))


def cluster_rate(g: int, clustering: ClusteringState, P: np.ndarray, net: NetworkState, config: SystemConfig) -> float:
    return members_rate(clustering.members(g), P, net, config, RateParams.from_config(config))


def build_graph(clustering: ClusteringState, P: np.ndarray, net: NetworkState, config: SystemConfig) -> WeightedDigraph:
    params = RateParams.from_config(config)
    N, G = clustering.num_ues, clustering.num_clusters
    total = P.sum(axis=1)
    cluster = np.concatenate([clustering.pi, np.arange(G)])
    members = [clustering.members(g) for g in range(G)]
    omega = np.array([members_rate(members[g], P, net, config, params, total) for g in range(G)])

    Z = np.full((N + G, N + G), np.inf)
    for j in range(N + G):
        g = cluster[j]
        base = members[g] if j >= N else members[g][members[g] != j]
        for i in range(N + G):
            if cluster[i] == g:
                continue
            if i >= N and j >= N:
                Z[i, j] = 0.0
                continue
            updated = base if i >= N else np.sort(np.append(base, i))
            Z[i, j] = omega[g] - members_rate(updated, P, net, config, params, total)
    logger.debug(f"Built graph: {N} UEs + {G} virtual, {np.isfinite(Z).sum()} finite edges")
    return WeightedDigraph(Z=Z, cluster=cluster, num_real=N, omega=omega)


class GraphBuilder:
    """build_graph with a cache keyed by (clustering, power) bytes."""

    def __init__(self, net: NetworkState, config: SystemConfig, max_entries: int = 64):
        self.net = net
        self.config = config
        self.max_entries = max_entries
        self._cache: Dict[Tuple[bytes, bytes], WeightedDigraph] = {}
        self.hits = 0

    def build(self, clustering: ClusteringState, P: np.ndarray) -> WeightedDigraph:
        key = (clustering.key(), np.ascontiguousarray(P).tobytes())
        if key in self._cache:
            self.hits += 1
            return self._cache[key]
        graph = build_graph(clustering, P, self.net, self.config)
        if len(self._cache) >= self.max_entries:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = graph
        return graph


def to_dot(graph: WeightedDigraph) -> str:
    lines = ["digraph clustering {"]
    for node in range(graph.num_nodes):
        shape = "box" if graph.is_virtual(node) else "ellipse"
        lines.append(f'  n{node} [label="{graph.label(node)} (g{graph.cluster[node]})", shape={shape}];')
    for i, j, w in graph.edges():
        lines.append(f'  n{i} -> n{j} [label="{w:.6g}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
