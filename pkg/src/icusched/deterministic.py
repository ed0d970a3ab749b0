"""Deterministic scheduling models: the offline problem over a whole
horizon, retrospective capacity calibration, and the per-batch optimization
problem (BOP) used by the rolling algorithms.

The builder core here (assignment variables over availability windows,
surgeon-hour and PAR rules, census expressions) is shared by the stochastic
and robust modules, which differ only in how ICU occupancy enters the
objective.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from . import cost as cost_mod
from .domain import (
    AvailabilityWindow,
    DomainError,
    Instance,
    Patient,
    availability_window,
)
from .milp import DEFAULT_REL_GAP, DEFAULT_TIME_LIMIT, ModelBuilder, SolveResult, Status, Var

BATCH_HORIZON_SLACK = 90  # batch windows reopen to at least this many days out


class SolveFailed(Exception):
    """A model did not produce a usable solution."""

    def __init__(self, message: str, result: SolveResult | None = None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class BatchState:
    """Inputs of one scheduling batch: the new arrivals to place, plus all
    previously committed patients still relevant to capacity."""

    instance: Instance
    schedule_day: int
    new_patients: tuple[Patient, ...]
    past_patients: tuple[Patient, ...] = ()
    committed: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        past_ids = {p.id for p in self.past_patients}
        if past_ids != set(self.committed):
            raise DomainError("committed assignments must cover exactly the past patients")
        for pid, day in self.committed.items():
            if not 1 <= day <= self.instance.horizon:
                raise DomainError(f"committed assignment for {pid} outside horizon: {day}")


def batch_window(patient: Patient, schedule_day: int, horizon: int) -> AvailabilityWindow:
    """Availability window adjusted for scheduling on ``schedule_day``: no
    earlier than the batch day, and reopened to at least 90 days out so late
    batches are never starved of feasible dates."""
    w = availability_window(patient, horizon)
    d_min = max(w.d_min, schedule_day)
    d_max = max(w.d_max, min(schedule_day + BATCH_HORIZON_SLACK, horizon))
    return AvailabilityWindow(d_min, d_max)


@dataclass
class ScheduleModel:
    """A built scheduling MIP plus the bookkeeping to read a schedule back."""

    builder: ModelBuilder
    x: dict[tuple[str, int], Var]
    free_windows: dict[str, AvailabilityWindow]
    committed: dict[str, int]
    cost_start: int

    def solve(
        self,
        time_limit: float = DEFAULT_TIME_LIMIT,
        rel_gap: float = DEFAULT_REL_GAP,
        dump_lp: str | None = None,
    ) -> "ScheduleSolution":
        result = self.builder.solve(time_limit=time_limit, rel_gap=rel_gap, dump_lp=dump_lp)
        if result.status in (Status.INFEASIBLE, Status.ERROR) or not result.has_solution:
            raise SolveFailed(f"schedule model failed: {result.status.value} {result.message}", result)
        assignment = dict(self.committed)
        for pid in self.free_windows:
            day = self._assigned_day(pid, result)
            assignment[pid] = day
        return ScheduleSolution(result, assignment, float(result.objective_value))

    def _assigned_day(self, pid: str, result: SolveResult) -> int:
        chosen = [d for (p, d), var in self.x.items() if p == pid and result.value(var) >= 0.5]
        if len(chosen) != 1:
            raise SolveFailed(f"patient {pid} assigned to {len(chosen)} days")
        return chosen[0]


@dataclass
class ScheduleSolution:
    result: SolveResult
    assignment: dict[str, int]
    objective: float


class _CoreBuilder:
    """Assignment variables, operational constraints, census expressions.

    Occupancy is expressed through per-patient admitted-by-day prefix sums
    ``a[p,t] = sum(x[p,d'] for d' <= t)``, so one patient contributes at most
    two terms to any day's census regardless of LOS. The prefix variables are
    chained to the binaries and are integral automatically.
    """

    def __init__(
        self,
        instance: Instance,
        free: Sequence[tuple[Patient, AvailabilityWindow]],
        committed: Sequence[tuple[Patient, int]] = (),
        cost_start: int = 1,
        name: str = "bop",
    ):
        self.instance = instance
        self.builder = ModelBuilder(name)
        self.cost_start = cost_start
        self.free = list(free)
        self.committed = list(committed)
        self.x: dict[tuple[str, int], Var] = {}
        self._prefix: dict[tuple[str, int], Var] = {}
        self._build_assignment()
        self._build_operational()

    # -- assignment ---------------------------------------------------------
    def _build_assignment(self) -> None:
        for patient, window in self.free:
            row = []
            for d in window.days():
                var = self.builder.add_binary(f"x[{patient.id},{d}]")
                self.x[(patient.id, d)] = var
                row.append((var, 1.0))
            if not row:
                raise DomainError(f"patient {patient.id} has no feasible days")
            self.builder.add_constraint(row, lb=1.0, ub=1.0, name=f"assign[{patient.id}]")
            self._build_prefix(patient, window)

    def _build_prefix(self, patient: Patient, window: AvailabilityWindow) -> None:
        # a[p,t] for t in [d_min, d_max - 2]; the window-end prefix is 1 by
        # the assignment equality and earlier days are 0, so both ends fold
        # into constants
        prev = self.x[(patient.id, window.d_min)]
        self._prefix[(patient.id, window.d_min)] = prev
        for t in range(window.d_min + 1, window.d_max - 1):
            a = self.builder.add_continuous(f"a[{patient.id},{t}]", lb=0.0, ub=1.0)
            self.builder.add_constraint(
                [(a, 1.0), (prev, -1.0), (self.x[(patient.id, t)], -1.0)],
                lb=0.0,
                ub=0.0,
                name=f"chain[{patient.id},{t}]",
            )
            self._prefix[(patient.id, t)] = a
            prev = a

    def _admitted_by(self, patient: Patient, window, t: int):
        """Prefix value A(t) as (var, None) or (None, constant)."""
        if t < window.d_min:
            return None, 0.0
        if t >= window.d_max - 1:
            return None, 1.0
        return self._prefix[(patient.id, t)], None

    # -- surgeon hours and PAR rules -----------------------------------------
    def _build_operational(self) -> None:
        cal = self.instance.calendar
        free_by_sd: dict[tuple[int, str], list[Patient]] = {}
        for patient, window in self.free:
            for d in window.days():
                free_by_sd.setdefault((d, patient.surgeon_id), []).append(patient)

        committed_hours: dict[tuple[int, str], float] = {}
        committed_par: dict[tuple[int, str], int] = {}
        committed_other: dict[tuple[int, str], int] = {}
        for patient, day in self.committed:
            key = (day, patient.surgeon_id)
            committed_hours[key] = committed_hours.get(key, 0.0) + patient.duration_hours
            if patient.is_par:
                committed_par[key] = committed_par.get(key, 0) + 1
            else:
                committed_other[key] = committed_other.get(key, 0) + 1

        for (d, k), patients in sorted(free_by_sd.items()):
            par = [p for p in patients if p.is_par]
            other = [p for p in patients if not p.is_par]
            hours_terms = [
                (self.x[(p.id, d)], p.duration_hours) for p in patients if p.duration_hours > 0
            ]
            if hours_terms:
                self.builder.add_constraint(
                    hours_terms,
                    ub=cal.hours_for(d, k) - committed_hours.get((d, k), 0.0),
                    name=f"hours[{d},{k}]",
                )
            if par:
                par_terms = [(self.x[(p.id, d)], 1.0) for p in par]
                cap = (1.0 if cal.is_par_day(d, k) else 0.0) - committed_par.get((d, k), 0)
                self.builder.add_constraint(par_terms, ub=cap, name=f"par[{d},{k}]")
                # a PAR surgery takes the surgeon's whole day
                if committed_other.get((d, k), 0) > 0:
                    self.builder.add_constraint(par_terms, ub=0.0, name=f"parblock[{d},{k}]")
                elif other:
                    big_m = float(len(other))
                    mixed = [(self.x[(p.id, d)], 1.0) for p in other]
                    mixed += [(self.x[(p.id, d)], big_m) for p in par]
                    self.builder.add_constraint(
                        mixed,
                        ub=big_m * (1.0 - committed_par.get((d, k), 0)),
                        name=f"parexcl[{d},{k}]",
                    )
            elif committed_par.get((d, k), 0) > 0 and other:
                self.builder.add_constraint(
                    [(self.x[(p.id, d)], 1.0) for p in other],
                    ub=0.0,
                    name=f"parexcl[{d},{k}]",
                )

        # no PAR on consecutive days for one surgeon
        par_days: dict[str, set[int]] = {}
        for (d, k), patients in free_by_sd.items():
            if any(p.is_par for p in patients):
                par_days.setdefault(k, set()).add(d)
        for (d, k), n in committed_par.items():
            if n > 0:
                par_days.setdefault(k, set()).add(d)
        for k, days in sorted(par_days.items()):
            for d in sorted(days):
                if d + 1 not in days or d + 1 > self.instance.horizon:
                    continue
                terms = []
                for dd in (d, d + 1):
                    for p in free_by_sd.get((dd, k), []):
                        if p.is_par:
                            terms.append((self.x[(p.id, dd)], 1.0))
                if not terms:
                    continue
                rhs = 1.0 - committed_par.get((d, k), 0) - committed_par.get((d + 1, k), 0)
                self.builder.add_constraint(terms, ub=rhs, name=f"parseq[{d},{k}]")

    # -- census --------------------------------------------------------------
    def census_expressions(
        self, los: Mapping[str, int]
    ) -> dict[int, tuple[list[tuple[Var, float]], float]]:
        """Per-day occupancy as a linear expression, with committed patients
        folded in as constants. A free patient occupies day d exactly when
        admitted in (d - l, d], i.e. A(d) - A(d - l). Days before
        ``cost_start`` or beyond the horizon carry no cost and are omitted."""
        horizon = self.instance.horizon
        start = self.cost_start
        terms: dict[int, list[tuple[Var, float]]] = {}
        const: dict[int, float] = {}
        for patient, day in self.committed:
            l = los[patient.id]
            for d in range(max(day, start), min(day + l - 1, horizon) + 1):
                const[d] = const.get(d, 0.0) + 1.0
        for patient, window in self.free:
            l = los[patient.id]
            if l <= 0:
                continue
            # outside [d_min, d_max - 2 + l] the occupancy is identically 0
            lo = max(window.d_min, start)
            hi = min(window.d_max - 2 + l, horizon)
            for d in range(lo, hi + 1):
                up_var, up_const = self._admitted_by(patient, window, d)
                lo_var, lo_const = self._admitted_by(patient, window, d - l)
                if up_var is None and lo_var is None:
                    value = up_const - lo_const
                    if value:
                        const[d] = const.get(d, 0.0) + value
                    continue
                row = terms.setdefault(d, [])
                if up_var is not None:
                    row.append((up_var, 1.0))
                elif up_const:
                    const[d] = const.get(d, 0.0) + up_const
                if lo_var is not None:
                    row.append((lo_var, -1.0))
                elif lo_const:
                    const[d] = const.get(d, 0.0) - lo_const
        days = set(terms) | set(const)
        return {d: (terms.get(d, []), const.get(d, 0.0)) for d in sorted(days)}

    def wait_terms(self) -> list[tuple[Var, float]]:
        """Objective coefficients (d - d_min)^+ per free assignment; the
        positive part is redundant under hard windows but kept verbatim."""
        out = []
        for patient, window in self.free:
            d_min = availability_window(patient, self.instance.horizon).d_min
            for d in window.days():
                out.append((self.x[(patient.id, d)], float(max(d - d_min, 0))))
        return out


def build_offline(instance: Instance, los: Mapping[str, int], beta: float) -> ScheduleModel:
    """Full-horizon scheduling MIP with known LOS (perfect-information bound)."""
    free = [(p, availability_window(p, instance.horizon)) for p in instance.patients]
    core = _CoreBuilder(instance, free, committed=(), cost_start=1, name="offline")
    overflow_terms = cost_mod.encode_overflow_cost(
        core.builder,
        core.census_expressions(los),
        instance.cost_params,
        instance.capacity,
    )
    core.builder.add_objective(core.wait_terms())
    core.builder.add_objective([(v, beta * c) for v, c in overflow_terms])
    return ScheduleModel(
        core.builder,
        core.x,
        {p.id: w for p, w in free},
        {},
        cost_start=1,
    )


def build_bop(state: BatchState, los: Mapping[str, int], beta: float) -> ScheduleModel:
    """Batch optimization problem: new arrivals are scheduled from the batch
    day onward; previously committed patients are immutable and enter only
    through capacity."""
    inst = state.instance
    free = [(p, batch_window(p, state.schedule_day, inst.horizon)) for p in state.new_patients]
    committed = [(p, state.committed[p.id]) for p in state.past_patients]
    core = _CoreBuilder(inst, free, committed, cost_start=state.schedule_day, name="bop")
    overflow_terms = cost_mod.encode_overflow_cost(
        core.builder, core.census_expressions(los), inst.cost_params, inst.capacity
    )
    core.builder.add_objective(core.wait_terms())
    core.builder.add_objective([(v, beta * c) for v, c in overflow_terms])
    return ScheduleModel(
        core.builder,
        core.x,
        {p.id: w for p, w in free},
        dict(state.committed),
        cost_start=state.schedule_day,
    )


def calibrate_capacity(
    instance: Instance,
    los: Mapping[str, int] | None = None,
    time_limit: float = DEFAULT_TIME_LIMIT,
) -> int:
    """Smallest achievable peak elective census given full LOS knowledge,
    via a min-max epigraph over the daily census."""
    if los is None:
        los = instance.true_trace()
    free = [(p, availability_window(p, instance.horizon)) for p in instance.patients]
    core = _CoreBuilder(instance, free, committed=(), cost_start=1, name="calibrate")
    peak = core.builder.add_continuous("peak")
    for day, (terms, const) in core.census_expressions(los).items():
        core.builder.add_constraint(
            list(terms) + [(peak, -1.0)], ub=-const, name=f"peak[{day}]"
        )
    core.builder.add_objective([(peak, 1.0)])
    result = core.builder.solve(time_limit=time_limit, rel_gap=0.0)
    if result.status is not Status.OPTIMAL:
        raise SolveFailed(f"capacity calibration failed: {result.status.value}", result)
    return int(round(result.objective_value))


CERTAIN_DISCHARGE_WINDOW = 5


def deterministic_information_update(
    committed: Mapping[str, int],
    estimates: Mapping[str, int],
    schedule_day: int,
    truth: Mapping[str, int],
    certain_window: int = CERTAIN_DISCHARGE_WINDOW,
) -> dict[str, int]:
    """Refresh LOS point estimates for committed patients at a batch start.

    Discharged patients reveal their realized LOS exactly. Patients still in
    the ICU reveal it if discharge is at most ``certain_window`` days away;
    otherwise the estimate is raised to ten days past the elapsed stay.
    Patients whose surgery has not happened yet are untouched.
    """
    updated = dict(estimates)
    for pid, day in committed.items():
        if day >= schedule_day:
            continue
        true_los = truth[pid]
        if day + true_los <= schedule_day:
            updated[pid] = true_los
        elif day + true_los - schedule_day <= certain_window:
            updated[pid] = true_los
        else:
            elapsed = schedule_day - day
            updated[pid] = max(elapsed + 10, updated[pid])
    return updated


def wait_cost(
    assignment: Mapping[str, int],
    instance: Instance,
    patient_ids: Sequence[str] | None = None,
) -> float:
    """Total (d - d_min)^+ wait of an assignment under the offline windows."""
    windows = instance.windows()
    ids = patient_ids if patient_ids is not None else list(assignment)
    return float(
        sum(max(assignment[pid] - windows[pid].d_min, 0) for pid in ids)
    )


def realized_objective(
    assignment: Mapping[str, int],
    instance: Instance,
    truth: Mapping[str, int],
    beta: float,
) -> float:
    """Offline-objective value of a schedule under realized LOS."""
    from .domain import Schedule, census

    series = census(Schedule(dict(assignment)), truth, instance)
    overflow_total = sum(
        cost_mod.overflow_cost(series.overflow_on(d), instance.cost_params)
        for d in range(1, instance.horizon + 1)
    )
    return wait_cost(assignment, instance) + beta * overflow_total


def offline_run(
    instance: Instance,
    beta: float,
    los: Mapping[str, int] | None = None,
    time_limit: float = DEFAULT_TIME_LIMIT,
    rel_gap: float = DEFAULT_REL_GAP,
) -> ScheduleSolution:
    if los is None:
        los = instance.true_trace()
    model = build_offline(instance, los, beta)
    return model.solve(time_limit=time_limit, rel_gap=rel_gap)
