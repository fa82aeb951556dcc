import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

from .clustering import build_graph, to_dot
from .config import ProfileLoader, Profile
from .config.loader import read_yaml
from .errors import CfnomaError, ConfigError
from .experiments import run_sweep, validate_lb
from .gp import parse_gp_text, solve_gp, verify_kkt
from .network import generate_deployment
from .optimizer import BASELINES, baseline, optimize
from .telemetry import Telemetry


logger = logging.getLogger(__name__)

ALGORITHMS = ("s-ebfa", "s-gsa", "gale-shapley", "brpa")


def _csv_list(cast):
    def parse(text: str) -> List[Any]:
        return [cast(item) for item in text.split(",") if item.strip()]
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfnoma", description="Sum-rate maximization for NOMA cell-free massive MIMO")
    parser.add_argument("--config", help="YAML overrides merged section by section onto the profile")
    parser.add_argument("--profile", default="desk", help="named profile (paper or desk ship with the repo)")
    parser.add_argument("--seed", type=int, help="root seed (0 <= seed < 2^64)")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    opt = sub.add_parser("optimize", help="run one optimization and print a JSON summary")
    opt.add_argument("--algo", default="s-gsa", choices=ALGORITHMS)
    opt.add_argument("--detector", choices=["ebfa", "gsa"], help="overrides the detector implied by --algo")
    opt.add_argument("--alpha", type=float, help="GSA iteration coefficient")
    opt.add_argument("--dump-graph", metavar="PATH", help="write the final clustering graph as DOT")
    opt.add_argument("--out", help="also write the JSON summary to this path")

    sweep = sub.add_parser("sweep", help="run an experiment file and write CSV")
    sweep.add_argument("experiment", metavar="EXPERIMENT_FILE")
    sweep.add_argument("--algo", type=_csv_list(str), help="comma-separated subset of " + ",".join(ALGORITHMS))
    sweep.add_argument("--out")
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.add_argument("--alpha", type=float)
    sweep.add_argument("--timing", action="store_true", help="record wall_ms (off by default for byte-stable output)")
    sweep.add_argument("--trace", action="store_true", help="also write the per-iteration ASR of every run")

    lb = sub.add_parser("validate-lb", help="compare rate bounds with Monte Carlo ergodic rates")
    lb.add_argument("--trials", type=int)
    lb.add_argument("--aps", type=_csv_list(int), help="comma-separated AP counts")
    lb.add_argument("--antennas", type=_csv_list(int), help="comma-separated antennas per AP")
    lb.add_argument("--observer-min", default="per-trial", choices=["per-trial", "per-observer"],
                    help="take the worst SIC observer inside each trial or by mean rate")
    lb.add_argument("--out")

    gp = sub.add_parser("gp-solve", help="solve a GP given in the text format")
    gp.add_argument("file", metavar="FILE")
    gp.add_argument("--tol", type=float)
    return parser


def _load_profile(args, loader: ProfileLoader) -> Profile:
    overrides: Dict[str, Any] = read_yaml(Path(args.config)) if args.config else {}
    if args.seed is not None:
        overrides.setdefault("system", {})["rng_seed"] = args.seed
    if getattr(args, "alpha", None) is not None:
        overrides.setdefault("clustering", {})["alpha"] = args.alpha
    return loader.get(args.profile, overrides)


def cmd_optimize(args, loader: ProfileLoader, telemetry: Telemetry) -> int:
    profile = _load_profile(args, loader)
    config = profile.system
    started = time.perf_counter()
    net = generate_deployment(config)
    if args.algo in BASELINES:
        result = baseline(net, config, args.algo, power=profile.power, solver=profile.solver)
    else:
        result = optimize(
            net, config, detector=args.detector or args.algo[2:],
            power=profile.power, clustering=profile.clustering,
            optimizer=profile.optimizer, solver=profile.solver,
        )
    summary = result.summary()
    if args.dump_graph:
        Path(args.dump_graph).write_text(to_dot(build_graph(result.clustering, result.power, result.net, config)))
        summary["graph"] = args.dump_graph
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(summary, indent=2))
    telemetry.record_run(
        "optimize", profile.model_dump(mode="json"),
        {k: summary[k] for k in ("detector", "termination", "iterations", "asr_bps", "feasible")},
        (time.perf_counter() - started) * 1000.0,
    )
    print(json.dumps(summary, indent=2))
    return 0


def cmd_sweep(args, loader: ProfileLoader, telemetry: Telemetry) -> int:
    overrides: Dict[str, Any] = read_yaml(Path(args.config)) if args.config else {}
    if args.algo:
        overrides["algorithms"] = args.algo
    if args.timing:
        overrides["record_timing"] = True
    if args.trace:
        overrides["trace"] = True
    if args.alpha is not None:
        overrides.setdefault("clustering", {})["alpha"] = args.alpha
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    spec = loader.load_experiment(args.experiment, overrides)
    profile = spec.base.model_dump(mode="json")

    def audit(row: Dict[str, Any]):
        telemetry.record_run("sweep-task", profile, row, float(row["wall_ms"]), scenario=spec.scenario)

    table = run_sweep(spec, jobs=args.jobs, out=args.out, on_row=audit)
    print(json.dumps({"scenario": spec.scenario, "rows": len(table), "out": args.out or spec.out}))
    return 0


def cmd_validate_lb(args, loader: ProfileLoader, telemetry: Telemetry) -> int:
    profile = _load_profile(args, loader)
    started = time.perf_counter()
    report = validate_lb(profile, trials=args.trials, aps=args.aps, out=args.out,
                         observer_min=args.observer_min, antennas=args.antennas)
    telemetry.record_run("validate-lb", profile.model_dump(mode="json"), report.summary,
                         (time.perf_counter() - started) * 1000.0)
    print(json.dumps(report.summary, indent=2))
    return 0 if report.summary["all_valid"] else 1


def cmd_gp_solve(args, loader: ProfileLoader, telemetry: Telemetry) -> int:
    try:
        text = Path(args.file).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read {args.file}: {e}", path=args.file)
    problem = parse_gp_text(text)
    solution = solve_gp(problem, tol=args.tol)
    kkt = verify_kkt(problem, solution.values)
    print(json.dumps({**solution.model_dump(), "kkt": kkt.model_dump()}, indent=2))
    return 0


COMMANDS = {
    "optimize": cmd_optimize,
    "sweep": cmd_sweep,
    "validate-lb": cmd_validate_lb,
    "gp-solve": cmd_gp_solve,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    profile_dir = os.getenv("CFNOMA_PROFILE_DIR", "./profiles")
    log_dir = os.getenv("CFNOMA_LOG_DIR", "logs")
    otel_endpoint = os.getenv("OTEL_ENDPOINT", "")

    telemetry = Telemetry(otel_endpoint=otel_endpoint or None, log_dir=log_dir)
    try:
        return COMMANDS[args.command](args, ProfileLoader(profile_dir), telemetry)
    except ConfigError as e:
        print(json.dumps(e.to_dict(), default=str), file=sys.stderr)
        return 2
    except CfnomaError as e:
        print(json.dumps(e.to_dict(), default=str), file=sys.stderr)
        return 1
    finally:
        telemetry.shutdown()
