import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Set, Tuple

import numpy as np

from .graph import WeightedDigraph


logger = logging.getLogger(__name__)

NEGATIVE_TOL = 1e-12


@dataclass(frozen=True)
class Loop:
    nodes: Tuple[int, ...]
    weight: float
    complete: bool = True

    def __post_init__(self):
        object.__setattr__(self, "nodes", canonical(self.nodes))

    def __len__(self) -> int:
        return len(self.nodes)


def canonical(nodes: Iterable[int]) -> Tuple[int, ...]:
    """Rotation of a cycle that starts at its smallest node."""
    nodes = tuple(int(v) for v in nodes)
    if not nodes:
        return nodes
    k = nodes.index(min(nodes))
    return nodes[k:] + nodes[:k]


def loop_weight(graph: WeightedDigraph, nodes: Iterable[int]) -> float:
    nodes = list(nodes)
    return float(sum(graph.Z[a, b] for a, b in zip(nodes, nodes[1:] + nodes[:1])))


def is_differ_cluster(graph: WeightedDigraph, nodes: Iterable[int]) -> bool:
    clusters = [graph.cluster[v] for v in nodes]
    return len(set(clusters)) == len(clusters)


def detect_negative_loop_ebfa(
    graph: WeightedDigraph,
    exclude: Optional[Set[Tuple[int, ...]]] = None,
    label_cap: int = 100_000,
    tol: float = NEGATIVE_TOL,
) -> Optional[Loop]:
    """Minimum-weight negative differ-cluster loop by label correcting.

    A label is (start, node, cluster set) -> shortest distance, with paths
    leaving `start` only through larger node indices; each cycle is thereby
    found once, from its smallest node. Cluster sets only grow along a path,
    so labels are settled layer by layer. A node holds at most `label_cap`
    labels per start; labels beyond that are dropped and the loop is
    reported as incomplete.
    """
    exclude = exclude or set()
    finite = np.isfinite(graph.Z)
    n = graph.num_nodes
    successors = [np.flatnonzero(finite[v]) for v in range(n)]
    bit = [1 << int(c) for c in graph.cluster]

    candidates: List[Tuple[float, Tuple[int, ...]]] = []
    complete = True

    for start in range(n):
        labels: Dict[Tuple[int, int], Tuple[float, Optional[Tuple[int, int]]]] = {(start, bit[start]): (0.0, None)}
        layer = [(start, bit[start])]
        per_node = np.zeros(n, dtype=np.int64)
        per_node[start] = 1
        while layer:
            following: Dict[Tuple[int, int], None] = {}
            for key in layer:
                v, mask = key
                dist = labels[key][0]
                if v != start and finite[v, start]:
                    closed = dist + graph.Z[v, start]
                    if closed < -tol:
                        candidates.append((closed, _trace(labels, key)))
                for w in successors[v]:
                    if w <= start or mask & bit[w]:
                        continue
                    nxt = (int(w), mask | bit[w])
                    d = dist + graph.Z[v, w]
                    if nxt in labels:
                        if d < labels[nxt][0]:
                            labels[nxt] = (d, key)
                    elif per_node[w] < label_cap:
                        per_node[w] += 1
                        labels[nxt] = (d, key)
                        following[nxt] = None
                    elif complete:
                        logger.warning(f"EBFA: node {int(w)} reached {label_cap} labels; result is best effort")
                        complete = False
            layer = list(following)

    for weight, nodes in sorted(candidates):
        nodes = canonical(nodes)
        if nodes not in exclude:
            return Loop(nodes=nodes, weight=float(weight), complete=complete)
    return None


def _trace(labels, key) -> Tuple[int, ...]:
    path = []
    while key is not None:
        path.append(key[0])
        key = labels[key][1]
    return tuple(reversed(path))


def detect_negative_loop_gsa(
    graph: WeightedDigraph,
    alpha: float = 1.0,
    exclude: Optional[Set[Tuple[int, ...]]] = None,
    tol: float = NEGATIVE_TOL,
) -> Optional[Loop]:
    """Greedy loop growth from negative seed edges, smallest first.

    From each seed the path is closed as soon as the return edge makes the
    cycle negative, otherwise extended along the cheapest edge into an
    unused cluster. The total number of extensions is ⌈α·N·G⌉; once it is
    spent, the remaining seeds are still closed but no longer extended.
    """
    exclude = exclude or set()
    budget = math.ceil(alpha * graph.num_real * graph.num_clusters)
    seeds = sorted((w, i, j) for i, j, w in graph.edges() if w < 0)

    for _, a, b in seeds:
        path = [a, b]
        used = {graph.cluster[a], graph.cluster[b]}
        weight = graph.Z[a, b]
        while True:
            tail, head = path[-1], path[0]
            closed = weight + graph.Z[tail, head]
            if closed < -tol and canonical(path) not in exclude:
                return Loop(nodes=tuple(path), weight=float(closed))
            if budget <= 0:
                break
            row = graph.Z[tail]
            options = [(row[w], w) for w in np.flatnonzero(np.isfinite(row)) if graph.cluster[w] not in used]
            if not options:
                break
            step, nxt = min(options)
            budget -= 1
            path.append(int(nxt))
            used.add(graph.cluster[nxt])
            weight += step
    return None


def enumerate_negative_loops(graph: WeightedDigraph, tol: float = NEGATIVE_TOL) -> List[Loop]:
    """Every negative differ-cluster cycle by depth-first search; small graphs only."""
    finite = np.isfinite(graph.Z)
    found: List[Loop] = []

    def extend(path: List[int], used: Set[int], weight: float):
        start, tail = path[0], path[-1]
        if len(path) > 1 and finite[tail, start]:
            closed = weight + graph.Z[tail, start]
            if closed < -tol:
                found.append(Loop(nodes=tuple(path), weight=float(closed)))
        for w in np.flatnonzero(finite[tail]):
            if w > start and graph.cluster[w] not in used:
                path.append(int(w))
                used.add(graph.cluster[w])
                extend(path, used, weight + graph.Z[tail, w])
                used.discard(graph.cluster[w])
                path.pop()

    for start in range(graph.num_nodes):
        extend([start], {graph.cluster[start]}, 0.0)
    return sorted(found, key=lambda loop: loop.weight)
