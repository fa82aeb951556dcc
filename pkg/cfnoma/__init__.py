"""Achievable-sum-rate maximization for NOMA-aided cell-free massive MIMO under finite blocklength."""
from .config import Profile, ProfileLoader, SystemConfig
from .errors import CfnomaError
from .network import ClusteringState, NetworkState, generate_deployment
from .optimizer import OptimizationResult, baseline, optimize

__all__ = [
    "CfnomaError",
    "ClusteringState",
    "NetworkState",
    "OptimizationResult",
    "Profile",
    "ProfileLoader",
    "SystemConfig",
    "baseline",
    "generate_deployment",
    "optimize",
]

__version__ = "0.1.0"
