import math
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class PathLossModel(BaseModel):
    model_config = ConfigDict(frozen=True)

    d0_m: float = Field(10.0, gt=0)
    d1_m: float = Field(50.0, gt=0)
    l_bar_db: float = 140.7
    # distances are divided by this before taking logarithms (1000 m: km convention)
    reference_m: float = Field(1000.0, gt=0)

    @model_validator(mode="after")
    def _check_breakpoints(self) -> "PathLossModel":
        if self.d0_m >= self.d1_m:
            raise ValueError(f"d0_m ({self.d0_m}) must be smaller than d1_m ({self.d1_m})")
        return self


class SystemConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    num_aps: int = Field(120, ge=1)
    num_ues: int = Field(40, ge=1)
    num_clusters: int = Field(20, ge=1)
    antennas_per_ap: int = Field(12, ge=1)
    area_side: float = Field(1000.0, gt=0)
    bandwidth: float = Field(10e6, gt=0)
    noise_psd_dbm: float = -174.0
    noise_figure_db: float = 9.0
    coherence_len: int = Field(200, ge=2)
    epsilon: float = Field(1e-6, gt=0, le=0.5)
    pilot_power_dbm: float = 20.0
    max_dl_power_dbm: float = 23.0
    min_rate_bps: float = Field(1e6, ge=0)
    min_rate_bps_per_ue: Optional[List[float]] = None
    sic_coeff: float = Field(0.5, gt=0, le=1)
    shadow_sigma_db: float = Field(8.0, ge=0)
    rng_seed: int = Field(0, ge=0, lt=2**64)
    path_loss: PathLossModel = PathLossModel()

    @model_validator(mode="before")
    @classmethod
    def _default_clusters(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("num_clusters") is None:
            data = dict(data)
            data["num_clusters"] = max(1, int(data.get("num_ues", 40)) // 2)
        return data

    @model_validator(mode="after")
    def _check_scenario(self) -> "SystemConfig":
        if self.num_clusters > self.num_ues:
            raise ValueError(f"num_clusters ({self.num_clusters}) exceeds num_ues ({self.num_ues})")
        if self.coherence_len - self.num_clusters <= 0:
            raise ValueError(
                f"coherence_len ({self.coherence_len}) leaves no data symbols for {self.num_clusters} pilots"
            )
        if self.min_rate_bps_per_ue is not None and len(self.min_rate_bps_per_ue) != self.num_ues:
            raise ValueError(
                f"min_rate_bps_per_ue has {len(self.min_rate_bps_per_ue)} entries, expected {self.num_ues}"
            )
        return self

    @property
    def pilot_len(self) -> int:
        return self.num_clusters

    @property
    def data_len(self) -> int:
        return self.coherence_len - self.num_clusters

    @property
    def eta(self) -> float:
        return self.data_len / self.coherence_len

    @property
    def noise_power_dbm(self) -> float:
        return self.noise_psd_dbm + 10 * math.log10(self.bandwidth) + self.noise_figure_db

    @property
    def noise_power_mw(self) -> float:
        return 10 ** (self.noise_power_dbm / 10)

    @property
    def pilot_power(self) -> float:
        return 10 ** ((self.pilot_power_dbm - self.noise_power_dbm) / 10)

    @property
    def max_dl_power(self) -> float:
        return 10 ** ((self.max_dl_power_dbm - self.noise_power_dbm) / 10)

    def min_rate_per_use(self) -> np.ndarray:
        """Per-UE rate requirement in bits per channel use."""
        if self.min_rate_bps_per_ue is not None:
            rates = np.asarray(self.min_rate_bps_per_ue, dtype=float)
        else:
            rates = np.full(self.num_ues, self.min_rate_bps, dtype=float)
        return rates / self.bandwidth


class SolverSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    tol: float = Field(1e-8, gt=0)
    log_box: float = Field(40.0, gt=0)
    mu0: float = Field(1.0, gt=0)
    mu_factor: float = Field(10.0, gt=1)
    max_newton_iters: int = Field(5000, ge=1)


class PowerSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    xi: float = Field(1e-3, gt=0)
    max_iter: int = Field(20, ge=1)
    power_floor: float = Field(1e-12, gt=0, lt=1)
    feasibility_max_iter: int = Field(20, ge=1)
    feasibility_tol: float = Field(1e-6, gt=0)
    # duality gap of each GP subproblem, relative in the surrogate objective
    gp_tol: float = Field(1e-7, gt=0)


class ClusteringSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    detector: Literal["ebfa", "gsa"] = "gsa"
    alpha: float = Field(1.0, gt=0)
    label_cap: int = Field(100_000, ge=1)
    negative_tol: float = Field(1e-12, ge=0)
    persist_invalid: bool = False
    max_loops: int = Field(1000, ge=1)


class OptimizerSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    xi: float = Field(1e-3, gt=0)
    max_iter: int = Field(10, ge=1)
    initial_clustering: Literal["gale-shapley", "brpa"] = "gale-shapley"


class MonteCarloSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    trials: int = Field(10_000, ge=1)
    batch: int = Field(1000, ge=1)
    mode: Literal["statistics", "pilots"] = "statistics"


class Profile(BaseModel):
    name: str
    version: int = 1
    system: SystemConfig = SystemConfig()
    solver: SolverSettings = SolverSettings()
    power: PowerSettings = PowerSettings()
    clustering: ClusteringSettings = ClusteringSettings()
    optimizer: OptimizerSettings = OptimizerSettings()
    montecarlo: MonteCarloSettings = MonteCarloSettings()

    def validate_profile(self) -> Optional[str]:
        if self.version <= 0:
            return f"version must be positive, got {self.version}"
        if not self.name:
            return "profile name is required"
        if self.montecarlo.trials < 1000:
            return f"montecarlo.trials must be at least 1000, got {self.montecarlo.trials}"
        if self.montecarlo.batch > self.montecarlo.trials:
            return f"montecarlo.batch ({self.montecarlo.batch}) exceeds trials ({self.montecarlo.trials})"
        return None


SweepVariable = Literal["num_ues", "num_aps", "antennas_per_ap", "max_dl_power", "min_rate_req"]
Algorithm = Literal["s-ebfa", "s-gsa", "gale-shapley", "brpa"]

SWEEP_FIELDS: Dict[str, str] = {
    "num_ues": "num_ues",
    "num_aps": "num_aps",
    "antennas_per_ap": "antennas_per_ap",
    "max_dl_power": "max_dl_power_dbm",
    "min_rate_req": "min_rate_bps",
}

COUNT_FIELDS = {"num_ues", "num_aps", "antennas_per_ap"}


class ExperimentSpec(BaseModel):
    scenario: str
    base: Profile
    sweep_var: SweepVariable
    sweep_values: List[float]
    algorithms: List[Algorithm] = ["s-ebfa", "s-gsa", "gale-shapley", "brpa"]
    seeds: List[int]
    trials: int = Field(10_000, ge=1)
    out: str = "results/sweep.csv"
    record_timing: bool = False
    # per-iteration ASR of every run, written next to the CSV
    trace: bool = False

    @field_validator("sweep_values")
    @classmethod
    def _sorted_values(cls, values: List[float]) -> List[float]:
        if not values:
            raise ValueError("sweep_values must not be empty")
        if list(values) != sorted(values):
            raise ValueError(f"sweep_values must be sorted, got {values}")
        return values

    @field_validator("seeds")
    @classmethod
    def _nonempty_seeds(cls, seeds: List[int]) -> List[int]:
        if not seeds:
            raise ValueError("seeds must not be empty")
        return seeds

    @field_validator("algorithms")
    @classmethod
    def _nonempty_algorithms(cls, algorithms: List[str]) -> List[str]:
        if not algorithms:
            raise ValueError("algorithms must not be empty")
        return algorithms

    def config_at(self, value: float) -> SystemConfig:
        """Base scenario with the sweep variable set to `value`."""
        base = self.base.system
        field = SWEEP_FIELDS[self.sweep_var]
        update: Dict[str, Any] = {field: int(value) if self.sweep_var in COUNT_FIELDS else float(value)}
        if self.sweep_var == "num_ues":
            ratio = base.num_clusters / base.num_ues
            update["num_clusters"] = max(1, min(int(value), int(round(int(value) * ratio))))
        return SystemConfig.model_validate({**base.model_dump(), **update})
