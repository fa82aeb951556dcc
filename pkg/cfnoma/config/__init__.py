from .loader import ProfileLoader, build_profile
from .types import (
    ClusteringSettings,
    ExperimentSpec,
    MonteCarloSettings,
    OptimizerSettings,
    PathLossModel,
    PowerSettings,
    Profile,
    SolverSettings,
    SystemConfig,
)

__all__ = [
    "ClusteringSettings",
    "ExperimentSpec",
    "MonteCarloSettings",
    "OptimizerSettings",
    "PathLossModel",
    "PowerSettings",
    "Profile",
    "ProfileLoader",
    "SolverSettings",
    "SystemConfig",
    "build_profile",
]
