from .design import apply_loop, clustering_design
from .detectors import (
    Loop,
    canonical,
    detect_negative_loop_ebfa,
    detect_negative_loop_gsa,
    enumerate_negative_loops,
    is_differ_cluster,
    loop_weight,
)
from .graph import GraphBuilder, WeightedDigraph, build_graph, cluster_rate, members_rate, to_dot

__all__ = [
    "GraphBuilder",
    "Loop",
    "WeightedDigraph",
    "apply_loop",
    "build_graph",
    "canonical",
    "cluster_rate",
    "clustering_design",
    "detect_negative_loop_ebfa",
    "detect_negative_loop_gsa",
    "enumerate_negative_loops",
    "is_differ_cluster",
    "loop_weight",
    "members_rate",
    "to_dot",
]
