"""Rolling-horizon batch loop shared by every scheduling algorithm.

Patients are scheduled in batches at fixed scheduling days (monthly by
default); each batch sees the arrivals since the previous scheduling day,
refreshed knowledge about committed patients, and must never touch committed
assignments. The loop is strictly sequential; only whole runs parallelize.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping

from .deterministic import BatchState, SolveFailed, batch_window
from .domain import AvailabilityWindow, DomainError, Instance, Patient, Schedule
from .milp import DEFAULT_REL_GAP, DEFAULT_TIME_LIMIT

CADENCES = {"monthly": 30, "biweekly": 14}


class BatchRunError(Exception):
    """A batch solve failed; carries the 1-based batch index."""

    def __init__(self, batch_index: int, cause: Exception):
        super().__init__(f"batch {batch_index} failed: {cause}")
        self.batch_index = batch_index
        self.cause = cause


@dataclass
class BatchLog:
    batch_index: int
    schedule_day: int
    n_new: int
    n_past: int
    objective: float
    solve_seconds: float
    extra: dict = field(default_factory=dict)


@dataclass
class RollingResult:
    schedule: Schedule
    windows: dict[str, AvailabilityWindow]
    logs: list[BatchLog]
    gap_rows: list[tuple[int, int, float, float, float]] = field(default_factory=list)

    @property
    def total_objective(self) -> float:
        return sum(log.objective for log in self.logs)


def schedule_days(instance: Instance, cadence: int) -> list[int]:
    """Scheduling days 1, 1+cadence, ... until every arrival is covered."""
    if cadence < 1:
        raise DomainError("cadence must be at least one day")
    if not instance.patients:
        return []
    latest_arrival = max(p.arrival_day for p in instance.patients)
    days = []
    s = 1
    while True:
        days.append(s)
        if s > latest_arrival:
            break
        s += cadence
        if s > instance.horizon:
            raise DomainError(
                f"arrivals up to day {latest_arrival} cannot be batched within the horizon"
            )
    return days


def iter_batches(
    instance: Instance, cadence: int
) -> Iterator[tuple[int, int, tuple[Patient, ...]]]:
    """Yield (batch index, scheduling day, new arrivals) in order. Arrivals
    strictly before the first day all land in the first batch."""
    days = schedule_days(instance, cadence)
    prev = None
    for b, s in enumerate(days, start=1):
        if prev is None:
            batch = [p for p in instance.patients if p.arrival_day <= s - 1]
        else:
            batch = [p for p in instance.patients if prev <= p.arrival_day <= s - 1]
        yield b, s, tuple(sorted(batch, key=lambda p: p.id))
        prev = s


BatchSolver = Callable[[BatchState], tuple[dict[str, int], float, dict]]


def run_rolling(
    instance: Instance,
    batch_solver: BatchSolver,
    cadence: int = CADENCES["monthly"],
) -> RollingResult:
    """Drive the batch loop: partition arrivals, call the algorithm-specific
    solver per batch, commit its assignments, and log progress."""
    committed: dict[str, int] = {}
    past: list[Patient] = []
    windows: dict[str, AvailabilityWindow] = {}
    logs: list[BatchLog] = []
    gap_rows: list[tuple[int, int, float, float, float]] = []

    for b, s_b, new_patients in iter_batches(instance, cadence):
        state = BatchState(
            instance=instance,
            schedule_day=s_b,
            new_patients=new_patients,
            past_patients=tuple(past),
            committed=dict(committed),
        )
        if not new_patients:
            logs.append(BatchLog(b, s_b, 0, len(past), 0.0, 0.0))
            continue
        started = time.perf_counter()
        try:
            assignment, objective, extra = batch_solver(state)
        except SolveFailed as exc:
            raise BatchRunError(b, exc) from exc
        elapsed = time.perf_counter() - started
        for p in new_patients:
            if p.id not in assignment:
                raise BatchRunError(b, SolveFailed(f"no assignment for {p.id}"))
            committed[p.id] = assignment[p.id]
            windows[p.id] = batch_window(p, s_b, instance.horizon)
        past.extend(new_patients)
        for row in extra.pop("gap_rows", []):
            gap_rows.append((b,) + tuple(row))
        logs.append(BatchLog(b, s_b, len(new_patients), len(past) - len(new_patients),
                             objective, elapsed, extra))

    schedule = Schedule(dict(committed), committed=frozenset(committed))
    return RollingResult(schedule, windows, logs, gap_rows)


def rdo_run(
    instance: Instance,
    beta: float,
    cadence: int = CADENCES["monthly"],
    initial_estimates: Mapping[str, int] | None = None,
    estimate_update: Callable[..., dict[str, int]] | None = None,
    time_limit: float = DEFAULT_TIME_LIMIT,
    rel_gap: float = DEFAULT_REL_GAP,
) -> RollingResult:
    """Rolling deterministic optimization.

    LOS estimates start from the rounded point predictions (overridable) and
    are refreshed each batch by the deterministic information-update rule,
    which peeks at realized discharges only.
    """
    from .deterministic import build_bop, deterministic_information_update
    from .los import round_half_away

    if initial_estimates is None:
        initial_estimates = {p.id: round_half_away(p.predicted_los) for p in instance.patients}
    if estimate_update is None:
        estimate_update = deterministic_information_update
    truth = instance.true_trace()
    estimates: dict[str, int] = {}

    def solver(state: BatchState):
        nonlocal estimates
        estimates = estimate_update(state.committed, estimates, state.schedule_day, truth)
        for p in state.new_patients:
            estimates[p.id] = initial_estimates[p.id]
        model = build_bop(state, estimates, beta)
        solution = model.solve(time_limit=time_limit, rel_gap=rel_gap)
        new_assignment = {
            p.id: solution.assignment[p.id] for p in state.new_patients
        }
        return new_assignment, solution.objective, {"status": solution.result.status.value}

    return run_rolling(instance, solver, cadence)
