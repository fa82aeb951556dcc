"""Parameter sweeps over the optimizers and lower-bound validation runs, written as CSV."""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence

import numpy as np
import pandas as pd
import yaml
from opentelemetry import trace
from pydantic import ValidationError

from .config.types import ExperimentSpec, MonteCarloSettings, Profile, SystemConfig
from .errors import ConfigError, InfeasibleScenarioError
from .montecarlo import empirical_ergodic_rate
from .network import generate_deployment
from .optimizer import baseline, gale_shapley_clustering, optimize
from .power import initial_power, spa
from .rate import lb_rates, union_lb_rates


logger = logging.getLogger(__name__)
tracer = trace.get_tracer("cfnoma")

SWEEP_COLUMNS = [
    "sweep_var", "value", "algorithm", "seed", "asr_bps", "asr_norm", "iters", "wall_ms", "feasible",
]
TRACE_COLUMNS = ["sweep_var", "value", "algorithm", "seed", "step", "stage", "asr_bps"]
LB_COLUMNS = [
    "num_aps", "antennas_per_ap", "ue", "lb_rate", "union_lb_rate", "empirical_rate", "ci_half_width",
    "relative_gap", "valid", "closed_form_valid",
]
FLOAT_FORMAT = "%.9g"
TIGHTNESS_GUARD = 0.10
VALIDITY_SIGMAS = 3.0


@dataclass(frozen=True)
class SweepTask:
    profile: Profile
    config: SystemConfig
    sweep_var: str
    value: float
    algorithm: str
    seed: int
    record_timing: bool


@dataclass
class TaskOutcome:
    row: Dict[str, Any]
    trace: List[Dict[str, Any]] = field(default_factory=list)


def run_task(task: SweepTask) -> TaskOutcome:
    """One (sweep value, algorithm, seed) point; infeasible scenarios give a feasible=False row."""
    config = task.config.model_copy(update={"rng_seed": task.seed})
    profile = task.profile
    key = {"sweep_var": task.sweep_var, "value": task.value, "algorithm": task.algorithm, "seed": task.seed}
    row: Dict[str, Any] = {
        **key,
        "asr_bps": np.nan,
        "asr_norm": np.nan,
        "iters": 0,
        "wall_ms": 0.0,
        "feasible": False,
    }
    with tracer.start_as_current_span("sweep.task") as span:
        span.set_attribute("algorithm", task.algorithm)
        span.set_attribute("value", task.value)
        span.set_attribute("seed", task.seed)
        net = generate_deployment(config)
        try:
            if task.algorithm.startswith("s-"):
                result = optimize(
                    net, config, detector=task.algorithm[2:],
                    power=profile.power, clustering=profile.clustering,
                    optimizer=profile.optimizer, solver=profile.solver,
                )
            else:
                result = baseline(net, config, task.algorithm, seed=task.seed, power=profile.power, solver=profile.solver)
        except InfeasibleScenarioError as e:
            logger.warning(f"{task.sweep_var}={task.value} {task.algorithm} seed={task.seed}: infeasible ({e.reason})")
            return TaskOutcome(row=row)
        row.update(
            asr_bps=result.asr_bps,
            asr_norm=result.asr,
            iters=result.iterations,
            wall_ms=result.wall_ms if task.record_timing else 0.0,
            feasible=result.feasible,
        )
        span.set_attribute("asr_bps", result.asr_bps)
    points = [
        {**key, "step": step, "stage": point.stage, "asr_bps": point.asr_bps}
        for step, point in enumerate(result.trace)
    ]
    return TaskOutcome(row=row, trace=points)


def _aggregate(rows: pd.DataFrame) -> pd.DataFrame:
    """Two rows per (value, algorithm): seed "mean" and seed "std" over the feasible seeds."""
    out = []
    numeric = ["asr_bps", "asr_norm", "iters", "wall_ms"]
    for (value, algorithm), group in rows.groupby(["value", "algorithm"], sort=False):
        ok = group[group["feasible"].astype(bool)]
        head = {"sweep_var": group["sweep_var"].iloc[0], "value": value, "algorithm": algorithm}
        counted = f"{len(ok)}/{len(group)}"
        out.append({**head, "seed": "mean", "feasible": counted,
                    **{c: ok[c].mean() if len(ok) else np.nan for c in numeric}})
        out.append({**head, "seed": "std", "feasible": counted,
                    **{c: ok[c].std(ddof=0) if len(ok) else np.nan for c in numeric}})
    return pd.DataFrame(out, columns=SWEEP_COLUMNS)


def sweep_tasks(spec: ExperimentSpec) -> List[SweepTask]:
    tasks = []
    for value in spec.sweep_values:
        try:
            config = spec.config_at(value)
        except ValidationError as e:
            raise ConfigError(f"{spec.sweep_var}={value} gives an invalid scenario: {e}", value=value)
        for algorithm in spec.algorithms:
            for seed in spec.seeds:
                tasks.append(SweepTask(spec.base, config, spec.sweep_var, value, algorithm, seed, spec.record_timing))
    return tasks


def write_metadata(out: Path, payload: Dict[str, Any]) -> Path:
    meta = out.with_name(out.name + ".meta.yaml")
    with open(meta, "w") as f:
        yaml.safe_dump(payload, f, sort_keys=True)
    return meta


def run_sweep(
    spec: ExperimentSpec,
    jobs: int = 1,
    out: Optional[str] = None,
    on_row: Optional[Callable[[Dict[str, Any]], None]] = None,
) -> pd.DataFrame:
    """Runs every task, writes data rows followed by aggregate rows, and a metadata sidecar.

    Rows come back in task order whatever `jobs` is, so the CSV is
    reproducible when timing is off. With `spec.trace` set, the ASR after
    every half-step of every run goes to `<out>.trace.csv`.
    """
    tasks = sweep_tasks(spec)
    path = Path(out or spec.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    logger.info(f"Sweep {spec.scenario}: {len(tasks)} task(s) on {jobs} worker(s)")

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run_task, tasks))
    else:
        outcomes = [run_task(task) for task in tasks]
    rows = [outcome.row for outcome in outcomes]
    if on_row:
        for row in rows:
            on_row(row)

    data = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    table = pd.concat([data, _aggregate(data)], ignore_index=True)
    table.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    meta: Dict[str, Any] = {"experiment": spec.model_dump(mode="json"), "columns": SWEEP_COLUMNS}
    if spec.trace:
        trace_path = path.with_name(path.name + ".trace.csv")
        points = pd.DataFrame([p for outcome in outcomes for p in outcome.trace], columns=TRACE_COLUMNS)
        points.to_csv(trace_path, index=False, float_format=FLOAT_FORMAT)
        meta["trace"] = {"path": trace_path.name, "columns": TRACE_COLUMNS}
    write_metadata(path, meta)
    logger.info(f"Sweep {spec.scenario}: wrote {len(table)} rows to {path}")
    return table


@dataclass
class LbReport:
    table: pd.DataFrame
    summary: Dict[str, Any]


def _operating_point(net, clustering, config, profile: Profile):
    try:
        return spa(initial_power(clustering, net, config), clustering, net, config, profile.power, profile.solver).power
    except InfeasibleScenarioError as e:
        logger.warning(f"Operating point infeasible ({e.reason}); validating at the initial power")
        return initial_power(clustering, net, config)


def _mean_gap(group: pd.DataFrame) -> float:
    positive = group[group["lb_rate"] > 0]
    return float(positive["relative_gap"].mean()) if len(positive) else 0.0


def validate_lb(
    profile: Profile,
    trials: Optional[int] = None,
    aps: Optional[Sequence[int]] = None,
    seed: Optional[int] = None,
    out: Optional[str] = None,
    observer_min: Literal["per-trial", "per-observer"] = "per-trial",
    antennas: Optional[Sequence[int]] = None,
) -> LbReport:
    """Compare each UE's closed-form rate bound with a Monte Carlo ergodic rate.

    Runs once per (AP count, antennas per AP) pair. The operating point is
    Gale-Shapley clustering with SPA power.

    Validity is judged against the bound that holds for the observer rule:
    the pairwise bound `lb_rate` under "per-observer", the union bound
    `union_lb_rate` under "per-trial". A UE is valid when that bound is at
    most the empirical mean plus 3 CI half-widths. `closed_form_violations`
    counts UEs whose `lb_rate` misses that margin whatever the rule.
    """
    base = profile.system
    settings: MonteCarloSettings = profile.montecarlo
    trials = settings.trials if trials is None else trials
    seed = base.rng_seed if seed is None else seed
    records = []
    for num_aps, L in product(aps or [base.num_aps], antennas or [base.antennas_per_ap]):
        config = base.model_copy(update={"num_aps": int(num_aps), "antennas_per_ap": int(L), "rng_seed": seed})
        net = generate_deployment(config)
        clustering = gale_shapley_clustering(net, config)
        net = net.assign(clustering, config)
        P = _operating_point(net, clustering, config, profile)
        bound = np.asarray(lb_rates(P, clustering, net, config))
        union = np.asarray(union_lb_rates(P, clustering, net, config))
        judged = union if observer_min == "per-trial" else bound
        estimate = empirical_ergodic_rate(net, clustering, P, config, trials, seed, settings, observer_min)
        for n in range(net.num_ues):
            empirical = float(estimate.mean[n])
            margin = empirical + VALIDITY_SIGMAS * estimate.ci_half_width[n]
            records.append({
                "num_aps": int(num_aps),
                "antennas_per_ap": int(L),
                "ue": n,
                "lb_rate": float(bound[n]),
                "union_lb_rate": float(union[n]),
                "empirical_rate": empirical,
                "ci_half_width": float(estimate.ci_half_width[n]),
                "relative_gap": (empirical - bound[n]) / empirical if empirical > 0 else 0.0,
                "valid": bool(judged[n] <= margin),
                "closed_form_valid": bool(bound[n] <= margin),
            })

    table = pd.DataFrame(records, columns=LB_COLUMNS)
    mean_gap = _mean_gap(table)
    summary = {
        "trials": trials,
        "observer_min": observer_min,
        "all_valid": bool(table["valid"].all()),
        "closed_form_violations": int((~table["closed_form_valid"]).sum()),
        "mean_relative_gap": mean_gap,
        "tight": mean_gap <= TIGHTNESS_GUARD,
        "gap_by_aps": {int(m): _mean_gap(g) for m, g in table.groupby("num_aps")},
        "gap_by_antennas": {int(L): _mean_gap(g) for L, g in table.groupby("antennas_per_ap")},
    }
    summary["passed"] = summary["all_valid"] and summary["tight"]

    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        write_metadata(path, {"profile": profile.model_dump(mode="json"), "summary": summary, "columns": LB_COLUMNS})
    logger.info(
        f"LB validation over {trials} trials ({observer_min}): all_valid={summary['all_valid']}, "
        f"closed-form violations {summary['closed_form_violations']}, mean gap {mean_gap:.4f}"
    )
    return LbReport(table=table, summary=summary)
