"""Command-line entry point wiring generation, calibration, scheduling,
simulation, bootstrap evaluation, and report aggregation.

Configuration may come from a JSON file (``--config``), with explicit flags
taking precedence; unknown config keys are rejected. Every run writes a
manifest recording the resolved configuration, seeds, and version, from
which the run can be reproduced exactly (``--config manifest.json``).

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from .datagen import (
    GeneratorParams,
    SchemaError,
    atomic_write_text,
    generate_instance,
    load_instance,
    params_to_dict,
    save_instance,
)
from .deterministic import SolveFailed, calibrate_capacity, offline_run
from .domain import DomainError, Instance, Schedule, validate_schedule
from .los import LosError, baseline_predictor, fit_error_distribution
from .milp import DEFAULT_REL_GAP, DEFAULT_TIME_LIMIT
from .rolling import CADENCES, BatchRunError
from .sim import (
    AlgoSpec,
    MetricsReport,
    bootstrap_evaluate,
    default_eval_window,
    evaluate,
    original_schedule,
    run_algorithm,
    summarize,
)

try:  # installed package metadata, if available
    from importlib.metadata import version as _pkg_version

    VERSION = _pkg_version("icusched")
except Exception:  # pragma: no cover
    VERSION = "0.1.0"


class ConfigError(Exception):
    pass


SCHEDULE_DEFAULTS = {
    "algo": "rdo",
    "beta": 10.0,
    "n_omega": 10,
    "eta": 0.75,
    "alpha": 0.2,
    "max_ccg_iters": 10,
    "batch": "monthly",
    "seed": 0,
    "predictor": "file",
    "train": None,
    "time_limit": DEFAULT_TIME_LIMIT,
    "rel_gap": DEFAULT_REL_GAP,
    "dump_lp": False,
    "out": "run",
    "instance": None,
}

GEN_DEFAULTS = {
    "n_patients": 400,
    "horizon": 540,
    "n_surgeons": 3,
    "tail_weight": 0.05,
    "drift": 0.0,
    "par_fraction": 0.06,
    "capacity": 8,
    "seed": 0,
    "out": "instance",
}

BOOTSTRAP_DEFAULTS = {
    "algos": "rdo,srso,crso,rro",
    "betas": "10",
    "n_reps": 100,
    "n_omega": 10,
    "eta": 0.75,
    "alpha": 0.2,
    "max_ccg_iters": 10,
    "batch": "monthly",
    "seed": 0,
    "jobs": 1,
    "warmup_days": None,
    "time_limit": DEFAULT_TIME_LIMIT,
    "rel_gap": DEFAULT_REL_GAP,
    "train": None,
    "out": "bootstrap",
    "instance": None,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icusched",
        description="Surgical scheduling under ICU constraints with long-tailed LOS",
    )
    parser.add_argument("--version", action="version", version=f"icusched {VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file (or a previous manifest)")

    g = sub.add_parser("gen", help="generate a synthetic instance")
    add_common(g)
    g.add_argument("--n-patients", type=int, dest="n_patients")
    g.add_argument("--horizon", type=int)
    g.add_argument("--n-surgeons", type=int, dest="n_surgeons")
    g.add_argument("--tail-weight", type=float, dest="tail_weight")
    g.add_argument("--drift", type=float)
    g.add_argument("--par-fraction", type=float, dest="par_fraction")
    g.add_argument("--capacity", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out")

    c = sub.add_parser("calibrate", help="retrospective min-max peak capacity")
    add_common(c)
    c.add_argument("--instance")
    c.add_argument("--time-limit", type=float, dest="time_limit")
    c.add_argument("--out")

    s = sub.add_parser("schedule", help="run one scheduling algorithm")
    add_common(s)
    s.add_argument("--instance")
    s.add_argument("--algo", choices=["offline", "rdo", "srso", "crso", "rro"])
    s.add_argument("--beta", type=float)
    s.add_argument("--n-omega", type=int, dest="n_omega")
    s.add_argument("--eta", type=float)
    s.add_argument("--alpha", type=float)
    s.add_argument("--max-ccg-iters", type=int, dest="max_ccg_iters")
    s.add_argument("--batch", choices=sorted(CADENCES))
    s.add_argument("--seed", type=int)
    s.add_argument("--predictor", choices=["baseline", "file"])
    s.add_argument("--train", help="instance directory for fitting the error distribution")
    s.add_argument("--time-limit", type=float, dest="time_limit")
    s.add_argument("--rel-gap", type=float, dest="rel_gap")
    s.add_argument("--dump-lp", action="store_const", const=True, dest="dump_lp")
    s.add_argument("--out")

    m = sub.add_parser("simulate", help="replay a schedule against realized LOS")
    add_common(m)
    m.add_argument("--instance")
    m.add_argument("--schedule", dest="schedule_file")
    m.add_argument("--warmup-days", type=int, dest="warmup_days")
    m.add_argument("--out")

    b = sub.add_parser("bootstrap", help="bootstrap evaluation across algorithms")
    add_common(b)
    b.add_argument("--instance")
    b.add_argument("--algos")
    b.add_argument("--betas")
    b.add_argument("--n-reps", type=int, dest="n_reps")
    b.add_argument("--n-omega", type=int, dest="n_omega")
    b.add_argument("--eta", type=float)
    b.add_argument("--alpha", type=float)
    b.add_argument("--max-ccg-iters", type=int, dest="max_ccg_iters")
    b.add_argument("--batch", choices=sorted(CADENCES))
    b.add_argument("--seed", type=int)
    b.add_argument("--jobs", type=int)
    b.add_argument("--warmup-days", type=int, dest="warmup_days")
    b.add_argument("--time-limit", type=float, dest="time_limit")
    b.add_argument("--rel-gap", type=float, dest="rel_gap")
    b.add_argument("--train")
    b.add_argument("--out")

    r = sub.add_parser("report", help="aggregate bootstrap reports into a summary CSV")
    add_common(r)
    r.add_argument("--input", dest="input_file")
    r.add_argument("--out")

    return parser


def resolve_config(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge defaults, config-file values, and explicit flags (flags win)."""
    file_values: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if "config" in loaded and "command" in loaded:  # a manifest
            loaded = loaded["config"]
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        file_values = loaded

    config = dict(defaults)
    config.update(file_values)
    for key in defaults:
        flag = getattr(args, key, None)
        if flag is not None:
            config[key] = flag
    return config


def write_manifest(out_dir: Path, command: str, config: dict, results: dict) -> Path:
    manifest = {
        "version": VERSION,
        "command": command,
        "config": config,
        "results": results,
    }
    path = out_dir / "manifest.json"
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _require_instance(config: dict) -> Instance:
    if not config.get("instance"):
        raise ConfigError("an --instance directory is required")
    path = Path(config["instance"])
    if not path.exists():
        raise ConfigError(f"instance directory not found: {path}")
    return load_instance(path)


def _error_distribution(instance: Instance, config: dict):
    """Fit the relative-error multiset, from a training instance when given,
    otherwise from the instance's own records (the paper-style simplification
    that keeps conditional sampling well supplied)."""
    source = instance
    if config.get("train"):
        source = load_instance(Path(config["train"]))
    pairs = [(p.true_los, p.predicted_los) for p in source.patients]
    return fit_error_distribution(pairs)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def cmd_gen(args) -> int:
    config = resolve_config(args, GEN_DEFAULTS)
    params = GeneratorParams(
        n_patients=config["n_patients"],
        horizon=config["horizon"],
        n_surgeons=config["n_surgeons"],
        tail_weight=config["tail_weight"],
        drift=config["drift"],
        par_fraction=config["par_fraction"],
        capacity=config["capacity"],
        seed=config["seed"],
    )
    instance = generate_instance(params)
    out = Path(config["out"])
    save_instance(instance, out)
    write_manifest(out, "gen", config, {"params": params_to_dict(params),
                                        "n_patients": len(instance.patients)})
    print(f"wrote instance with {len(instance.patients)} patients to {out}")
    return 0


def cmd_calibrate(args) -> int:
    config = resolve_config(
        args, {"instance": None, "time_limit": DEFAULT_TIME_LIMIT, "out": "calibrate"}
    )
    instance = _require_instance(config)
    capacity = calibrate_capacity(instance, time_limit=config["time_limit"])
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "calibrate", config, {"capacity": capacity})
    print(f"calibrated capacity: c = {capacity}")
    return 0


def cmd_schedule(args) -> int:
    config = resolve_config(args, SCHEDULE_DEFAULTS)
    instance = _require_instance(config)
    if config["predictor"] == "baseline":
        from dataclasses import replace

        predict = baseline_predictor(instance.patients)
        instance = instance.with_patients(
            replace(p, predicted_los=predict(p)) for p in instance.patients
        )
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    cadence = CADENCES[config["batch"]]
    algo = config["algo"]

    if algo == "offline":
        solution = offline_run(
            instance, config["beta"],
            time_limit=config["time_limit"], rel_gap=config["rel_gap"],
        )
        assignment = solution.assignment
        results = {"objective": solution.objective}
        gap_rows = []
        logs = []
    else:
        error_dist = _error_distribution(instance, config)
        spec = AlgoSpec(
            name=algo, beta=config["beta"], n_omega=config["n_omega"],
            eta=config["eta"], alpha=config["alpha"],
            max_ccg_iters=config["max_ccg_iters"],
        )
        rolled = run_algorithm(
            spec, instance, error_dist, seed=config["seed"], cadence=cadence,
            time_limit=config["time_limit"], rel_gap=config["rel_gap"],
        )
        assignment = dict(rolled.schedule.assignment)
        results = {"total_objective": rolled.total_objective,
                   "batches": len(rolled.logs)}
        gap_rows = rolled.gap_rows
        logs = rolled.logs
        report = validate_schedule(rolled.schedule, instance, rolled.windows)
        if not report.ok:
            print(f"warning: schedule has {len(report)} constraint violations",
                  file=sys.stderr)

    _write_csv(
        out / "schedule.csv",
        ["patient_id", "day"],
        [[pid, assignment[pid]] for pid in sorted(assignment)],
    )
    if logs:
        _write_csv(
            out / "batch_log.csv",
            ["batch", "schedule_day", "n_new", "n_past", "objective", "solve_seconds"],
            [
                [log.batch_index, log.schedule_day, log.n_new, log.n_past,
                 f"{log.objective:.6f}", f"{log.solve_seconds:.3f}"]
                for log in logs
            ],
        )
    if gap_rows:
        _write_csv(
            out / "ccg_gaps.csv",
            ["batch", "iter", "lb", "ub", "gap"],
            [[b, t, f"{lb:.6f}", f"{ub:.6f}", f"{gap:.6g}"] for b, t, lb, ub, gap in gap_rows],
        )
    write_manifest(out, "schedule", config, results)
    print(f"scheduled {len(assignment)} patients with {algo}; outputs in {out}")
    return 0


def _load_schedule_csv(path: Path) -> Schedule:
    if not path.exists():
        raise ConfigError(f"schedule file not found: {path}")
    assignment = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for col in ("patient_id", "day"):
            if col not in (reader.fieldnames or []):
                raise SchemaError(f"schedule CSV is missing column '{col}'")
        for row_num, row in enumerate(reader, start=2):
            try:
                assignment[row["patient_id"]] = int(row["day"])
            except ValueError:
                raise SchemaError(f"row {row_num}: invalid day {row['day']!r}") from None
    return Schedule(assignment)


def cmd_simulate(args) -> int:
    config = resolve_config(
        args,
        {"instance": None, "schedule_file": None, "warmup_days": None, "out": "simulate"},
    )
    instance = _require_instance(config)
    if not config.get("schedule_file"):
        raise ConfigError("a --schedule CSV is required")
    schedule = _load_schedule_csv(Path(config["schedule_file"]))
    window = default_eval_window(instance, config["warmup_days"])
    report = evaluate(
        schedule, instance.true_trace(), original_schedule(instance), instance, window
    )
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "metrics.json", json.dumps(report.to_json_dict(), indent=2) + "\n")
    write_manifest(out, "simulate", config, {
        "high_occupancy_days_10": report.high_occupancy_days_10,
        "high_occupancy_days_12": report.high_occupancy_days_12,
        "wait_delta_mean": report.wait_delta_mean,
        "wait_delta_median": report.wait_delta_median,
    })
    print(
        f"high-occupancy days: >=10: {report.high_occupancy_days_10}, "
        f">=12: {report.high_occupancy_days_12}; "
        f"wait delta mean {report.wait_delta_mean:+.2f}, "
        f"median {report.wait_delta_median:+.2f}"
    )
    return 0


def cmd_bootstrap(args) -> int:
    config = resolve_config(args, BOOTSTRAP_DEFAULTS)
    instance = _require_instance(config)
    error_dist = _error_distribution(instance, config)
    try:
        betas = [float(x) for x in str(config["betas"]).split(",") if x]
        algos = [a.strip() for a in config["algos"].split(",") if a.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad algos/betas: {exc}") from None
    specs = [
        AlgoSpec(
            name=a, beta=beta, n_omega=config["n_omega"], eta=config["eta"],
            alpha=config["alpha"], max_ccg_iters=config["max_ccg_iters"],
        )
        for beta in betas
        for a in algos
    ]
    reports = bootstrap_evaluate(
        instance, specs, error_dist,
        n_reps=config["n_reps"], seed=config["seed"],
        cadence=CADENCES[config["batch"]], warmup_days=config["warmup_days"],
        jobs=config["jobs"], time_limit=config["time_limit"], rel_gap=config["rel_gap"],
    )
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(r.to_json_dict(), sort_keys=True) for r in reports]
    atomic_write_text(out / "reps.jsonl", "\n".join(lines) + "\n")
    _write_summary(out / "summary.csv", summarize(reports))
    n_failed = sum(1 for r in reports if r.failed)
    write_manifest(out, "bootstrap", config, {
        "n_reports": len(reports), "n_failed": n_failed,
    })
    print(f"wrote {len(reports)} replication reports ({n_failed} failed) to {out}")
    return 0


def _write_summary(path: Path, rows: list[dict]) -> None:
    header = ["algo", "beta", "metric", "p25", "median", "p75", "min", "max", "n", "failed"]
    _write_csv(path, header, [[row[h] for h in header] for row in rows])


def cmd_report(args) -> int:
    config = resolve_config(args, {"input_file": None, "out": "summary.csv"})
    if not config.get("input_file"):
        raise ConfigError("an --input reps.jsonl file is required")
    path = Path(config["input_file"])
    if not path.exists():
        raise ConfigError(f"input file not found: {path}")
    reports = []
    for line_num, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
            payload["census"] = {int(k): v for k, v in payload.get("census", {}).items()}
            reports.append(MetricsReport(**payload))
        except (json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"line {line_num}: invalid report: {exc}") from None
    _write_summary(Path(config["out"]), summarize(reports))
    print(f"wrote summary for {len(reports)} reports to {config['out']}")
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "calibrate": cmd_calibrate,
    "schedule": cmd_schedule,
    "simulate": cmd_simulate,
    "bootstrap": cmd_bootstrap,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, SchemaError, DomainError, LosError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (BatchRunError, SolveFailed) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
