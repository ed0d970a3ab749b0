"""Trace replay, performance metrics, and the bootstrap evaluation harness.

A schedule is scored against one realized LOS trace: days with at least 10
(and 12) elective patients inside the evaluation window, and per-patient wait
deltas against the status-quo booking dates. Bootstrap evaluation resamples
whole patient records over the fixed arrival slots, schedules each algorithm
on identical inputs, and replays all of them against one common realized
trace per replication.
"""
from __future__ import annotations

import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .datagen import SchemaError  # noqa: F401  (re-exported for CLI convenience)
from .domain import DomainError, Instance, Patient, Schedule, census
from .los import ErrorDistribution, round_half_away
from .milp import DEFAULT_REL_GAP, DEFAULT_TIME_LIMIT
from .rolling import CADENCES, BatchRunError, RollingResult, rdo_run
from .robust import rro_run
from .stochastic import SamplingMode, rso_run

HIGH_OCCUPANCY_THRESHOLDS = (10, 12)
DEFAULT_BOOTSTRAP_REPS = 100
WARMUP_FRACTION = 0.25

ALGORITHMS = ("rdo", "srso", "crso", "rro")


def default_eval_window(instance: Instance, warmup_days: int | None = None) -> tuple[int, int]:
    """Evaluation window after the warm-up period (first quarter by default)."""
    if warmup_days is None:
        warmup_days = int(instance.horizon * WARMUP_FRACTION)
    return warmup_days + 1, instance.horizon


def status_quo_schedule(instance: Instance) -> Schedule:
    """The realized historical schedule (actual surgery dates)."""
    return Schedule({p.id: p.actual_date for p in instance.patients})


def original_schedule(instance: Instance) -> Schedule:
    """The originally booked schedule, the wait-time comparison baseline."""
    return Schedule({p.id: p.original_date for p in instance.patients})


@dataclass(frozen=True)
class MetricsReport:
    algo: str
    beta: float
    replication: int
    eval_start: int
    eval_end: int
    high_occupancy_days_10: int = 0
    high_occupancy_days_12: int = 0
    wait_delta_mean: float = 0.0
    wait_delta_median: float = 0.0
    census: dict[int, int] = field(default_factory=dict)
    wait_deltas: dict[str, int] = field(default_factory=dict)
    failed: bool = False
    error: str = ""

    def to_json_dict(self) -> dict:
        return asdict(self)


def evaluate(
    schedule: Schedule,
    truth: Mapping[str, int],
    baseline: Schedule,
    instance: Instance,
    eval_window: tuple[int, int] | None = None,
    algo: str = "",
    beta: float = 0.0,
    replication: int = 0,
) -> MetricsReport:
    """Score one schedule against a realized trace.

    Wait deltas (assigned minus baseline day, negative meaning earlier) are
    reported for patients whose baseline surgery falls inside the evaluation
    window; census day counts are restricted to the same window.
    """
    if eval_window is None:
        eval_window = default_eval_window(instance)
    start, end = eval_window
    if not 1 <= start <= end <= instance.horizon:
        raise DomainError(f"evaluation window ({start}, {end}) outside horizon")
    missing = set(schedule.assignment) - set(baseline.assignment)
    if missing:
        raise DomainError(f"baseline is missing patients: {sorted(missing)[:5]}")

    series = census(schedule, truth, instance)
    window_census = {
        d: series.occupancy_on(d) for d in range(start, end + 1) if series.occupancy_on(d)
    }
    high10 = sum(1 for occ in window_census.values() if occ >= HIGH_OCCUPANCY_THRESHOLDS[0])
    high12 = sum(1 for occ in window_census.values() if occ >= HIGH_OCCUPANCY_THRESHOLDS[1])

    deltas = {
        pid: schedule.day_of(pid) - baseline.day_of(pid)
        for pid in schedule.assignment
        if start <= baseline.day_of(pid) <= end
    }
    values = sorted(deltas.values())
    mean = float(statistics.fmean(values)) if values else 0.0
    median = float(statistics.median(values)) if values else 0.0
    return MetricsReport(
        algo=algo,
        beta=beta,
        replication=replication,
        eval_start=start,
        eval_end=end,
        high_occupancy_days_10=high10,
        high_occupancy_days_12=high12,
        wait_delta_mean=mean,
        wait_delta_median=median,
        census=window_census,
        wait_deltas=deltas,
    )


@dataclass(frozen=True)
class AlgoSpec:
    """One algorithm configuration to run and evaluate."""

    name: str
    beta: float
    n_omega: int = 10
    eta: float = 0.75
    alpha: float = 0.2
    max_ccg_iters: int = 10

    def __post_init__(self) -> None:
        if self.name not in ALGORITHMS:
            raise DomainError(f"unknown algorithm {self.name!r}; pick from {ALGORITHMS}")

    @property
    def label(self) -> str:
        return self.name


def run_algorithm(
    spec: AlgoSpec,
    instance: Instance,
    error_dist: ErrorDistribution,
    seed: int = 0,
    cadence: int = CADENCES["monthly"],
    time_limit: float = DEFAULT_TIME_LIMIT,
    rel_gap: float = DEFAULT_REL_GAP,
) -> RollingResult:
    if spec.name == "rdo":
        return rdo_run(instance, spec.beta, cadence=cadence,
                       time_limit=time_limit, rel_gap=rel_gap)
    if spec.name in ("srso", "crso"):
        mode = SamplingMode.STANDARD if spec.name == "srso" else SamplingMode.CONSERVATIVE
        return rso_run(
            instance, mode, spec.beta, error_dist, n_scenarios=spec.n_omega,
            seed=seed, cadence=cadence, time_limit=time_limit, rel_gap=rel_gap,
        )
    return rro_run(
        instance, spec.beta, error_dist, eta=spec.eta, alpha=spec.alpha,
        cadence=cadence, max_iter=spec.max_ccg_iters,
        time_limit=time_limit, rel_gap=rel_gap,
    )


# ---------------------------------------------------------------------------
# Bootstrap evaluation
# ---------------------------------------------------------------------------


def resample_patients(
    instance: Instance,
    rng: np.random.Generator,
    replication: int,
) -> list[Patient]:
    """Resample whole patient records with replacement onto the fixed arrival
    slots; booking dates are translated to the new arrival day."""
    slots = sorted(instance.patients, key=lambda p: (p.arrival_day, p.id))
    n = len(slots)
    picks = rng.integers(0, n, n)
    resampled = []
    for j, (slot, pick) in enumerate(zip(slots, picks)):
        source = slots[int(pick)]
        arrival = slot.arrival_day
        original = int(np.clip(arrival + source.lead, 1, instance.horizon - 100))
        actual_offset = source.actual_date - source.original_date
        actual = int(np.clip(original + actual_offset, original, instance.horizon - 95))
        resampled.append(
            replace(
                source,
                id=f"r{replication:03d}_{j:04d}",
                arrival_day=arrival,
                original_date=original,
                actual_date=actual,
            )
        )
    return resampled


def realize_trace(
    patients: Sequence[Patient],
    error_dist: ErrorDistribution,
    rng: np.random.Generator,
) -> dict[str, int]:
    """Realized LOS per patient: one error draw scaling its prediction."""
    return {
        p.id: round_half_away(p.predicted_los * error_dist.draw(rng))
        for p in sorted(patients, key=lambda q: q.id)
    }


def _with_rdo_benchmark(specs: Sequence[AlgoSpec]) -> list[AlgoSpec]:
    out = list(specs)
    betas_with_rdo = {s.beta for s in specs if s.name == "rdo"}
    for beta in sorted({s.beta for s in specs}):
        if beta not in betas_with_rdo:
            out.append(AlgoSpec("rdo", beta))
    return out


def _run_replication(args) -> list[MetricsReport]:
    (instance, specs, error_dist, seed, rep, cadence, warmup_days,
     time_limit, rel_gap) = args
    resample_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1, rep)))
    realize_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(2, rep)))
    sampling_seed = int(
        np.random.SeedSequence(entropy=seed, spawn_key=(3, rep)).generate_state(1)[0]
    )

    patients = resample_patients(instance, resample_rng, rep)
    rep_instance = instance.with_patients(patients)
    truth = realize_trace(patients, error_dist, realize_rng)
    rep_instance = rep_instance.with_patients(
        replace(p, true_los=truth[p.id]) for p in patients
    )
    baseline = original_schedule(rep_instance)
    window = default_eval_window(rep_instance, warmup_days)

    reports = []
    for spec in specs:
        try:
            result = run_algorithm(
                spec, rep_instance, error_dist, seed=sampling_seed,
                cadence=cadence, time_limit=time_limit, rel_gap=rel_gap,
            )
        except BatchRunError as exc:
            reports.append(
                MetricsReport(
                    algo=spec.label, beta=spec.beta, replication=rep,
                    eval_start=window[0], eval_end=window[1],
                    failed=True, error=str(exc),
                )
            )
            continue
        reports.append(
            evaluate(
                result.schedule, truth, baseline, rep_instance, window,
                algo=spec.label, beta=spec.beta, replication=rep,
            )
        )
    return reports


def bootstrap_evaluate(
    instance: Instance,
    specs: Sequence[AlgoSpec],
    error_dist: ErrorDistribution,
    n_reps: int = DEFAULT_BOOTSTRAP_REPS,
    seed: int = 0,
    cadence: int = CADENCES["monthly"],
    warmup_days: int | None = None,
    jobs: int = 1,
    time_limit: float = DEFAULT_TIME_LIMIT,
    rel_gap: float = DEFAULT_REL_GAP,
) -> list[MetricsReport]:
    """Run every algorithm on ``n_reps`` bootstrap replications.

    Within a replication all algorithms see the same resampled arrivals and
    predictions and are replayed against the same realized trace; the RDO
    benchmark is added automatically for any beta lacking one. Failed
    replications are reported with ``failed=True`` rather than raised.
    """
    if n_reps < 1:
        raise DomainError("need at least one replication")
    specs = _with_rdo_benchmark(specs)
    jobs_args = [
        (instance, specs, error_dist, seed, rep, cadence, warmup_days, time_limit, rel_gap)
        for rep in range(n_reps)
    ]
    reports: list[MetricsReport] = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for batch in pool.map(_run_replication, jobs_args):
                reports.extend(batch)
    else:
        for args in jobs_args:
            reports.extend(_run_replication(args))
    return reports


def summarize(reports: Sequence[MetricsReport]) -> list[dict]:
    """Box-plot statistics per (algo, beta, metric), plus deltas of
    high-occupancy day counts against the same-replication RDO benchmark.
    Failed replications are excluded and counted."""
    rdo_high: dict[tuple[float, int], MetricsReport] = {}
    for r in reports:
        if r.algo == "rdo" and not r.failed:
            rdo_high[(r.beta, r.replication)] = r

    grouped: dict[tuple[str, float], list[MetricsReport]] = {}
    for r in reports:
        grouped.setdefault((r.algo, r.beta), []).append(r)

    rows = []
    for (algo, beta), group in sorted(grouped.items()):
        ok = [r for r in group if not r.failed]
        failed = len(group) - len(ok)
        metrics: dict[str, list[float]] = {
            "high_occupancy_days_10": [r.high_occupancy_days_10 for r in ok],
            "high_occupancy_days_12": [r.high_occupancy_days_12 for r in ok],
            "wait_delta_mean": [r.wait_delta_mean for r in ok],
            "wait_delta_median": [r.wait_delta_median for r in ok],
        }
        delta10, delta12 = [], []
        for r in ok:
            bench = rdo_high.get((r.beta, r.replication))
            if bench is not None:
                delta10.append(r.high_occupancy_days_10 - bench.high_occupancy_days_10)
                delta12.append(r.high_occupancy_days_12 - bench.high_occupancy_days_12)
        if delta10:
            metrics["delta_high10_vs_rdo"] = delta10
            metrics["delta_high12_vs_rdo"] = delta12
        for metric, values in metrics.items():
            if not values:
                continue
            values = sorted(values)
            rows.append(
                {
                    "algo": algo,
                    "beta": beta,
                    "metric": metric,
                    "p25": _quantile(values, 0.25),
                    "median": _quantile(values, 0.5),
                    "p75": _quantile(values, 0.75),
                    "min": values[0],
                    "max": values[-1],
                    "n": len(values),
                    "failed": failed,
                }
            )
    return rows


def _quantile(sorted_values: list[float], q: float) -> float:
    return float(np.quantile(np.array(sorted_values), q))
