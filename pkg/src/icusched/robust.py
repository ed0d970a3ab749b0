"""Two-stage robust scheduling: budgeted LOS uncertainty sets, the
worst-case recourse problem and its MIP reformulation, a brute-force oracle
for it, the column-and-constraint generation loop, and the rolling robust
algorithm.

The recourse maximizes in-horizon overflow cost over integer LOS traces in a
box with a budget on total normalized deviation above the per-patient lower
bounds. It is reformulated exactly: departure indicators w (monotone,
unary-encoded stays), piecewise dual multipliers restricted to {0, e_m}, and
products linearized through auxiliary q variables.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping

from . import cost as cost_mod
from .cost import N_PIECES, overflow_cost
from .deterministic import (
    BatchState,
    ScheduleModel,
    SolveFailed,
    _CoreBuilder,
    batch_window,
    wait_cost,
)
from .domain import DomainError, Instance
from .los import (
    Conditioned,
    ErrorDistribution,
    Fixed,
    LOSBelief,
    error_quantile,
    round_half_away,
)
from .milp import DEFAULT_REL_GAP, DEFAULT_TIME_LIMIT, ModelBuilder, Status
from .rolling import CADENCES, RollingResult, run_rolling
from .stochastic import ScenarioTrace, initial_beliefs, update_beliefs

DEFAULT_ALPHA = 0.2
DEFAULT_ETA = 0.75
DEFAULT_MAX_ITER = 10
DEFAULT_EPSILON = 1e-6
BRUTEFORCE_LIMIT = 100_000


@dataclass(frozen=True)
class UncertaintySet:
    """Box bounds per patient plus a budget on total normalized deviation."""

    l_min: Mapping[str, int]
    l_max: Mapping[str, int]
    eta: float
    budget_scale: str = "linear"  # or "sqrt" (exploratory, off by default)

    def __post_init__(self) -> None:
        if set(self.l_min) != set(self.l_max):
            raise DomainError("bounds must cover the same patients")
        for pid in self.l_min:
            if not 0 <= self.l_min[pid] <= self.l_max[pid]:
                raise DomainError(f"invalid LOS bounds for {pid}")
        if not 0.0 <= self.eta <= 1.0:
            raise DomainError("uncertainty budget eta must lie in [0, 1]")
        if self.budget_scale not in ("linear", "sqrt"):
            raise DomainError(f"unknown budget scale {self.budget_scale}")

    @property
    def uncertain_ids(self) -> tuple[str, ...]:
        return tuple(sorted(p for p in self.l_min if self.l_max[p] > self.l_min[p]))

    def budget_rhs(self) -> float:
        n = len(self.uncertain_ids)
        if self.budget_scale == "sqrt":
            return self.eta * math.sqrt(n)
        return self.eta * n

    def nominal_trace(self, index: int = 0) -> ScenarioTrace:
        return ScenarioTrace(dict(self.l_min), index)

    def contains(self, trace: Mapping[str, int], tol: float = 1e-9) -> bool:
        for pid, l in trace.items():
            if not self.l_min[pid] <= l <= self.l_max[pid]:
                return False
        return self.deviation(trace) <= self.budget_rhs() + tol

    def deviation(self, trace: Mapping[str, int]) -> float:
        total = 0.0
        for pid in self.uncertain_ids:
            spread = self.l_max[pid] - self.l_min[pid]
            total += (trace[pid] - self.l_min[pid]) / spread
        return total


def patient_bounds(belief: LOSBelief, alpha: float) -> tuple[int, int]:
    """LOS box for one patient: the point prediction as the lower bound and
    the (1-alpha) error quantile scaling it as the upper bound. Conditioned
    beliefs raise the lower bound to the elapsed stay; if that overtakes the
    upper bound, the upper bound is lifted to match."""
    if isinstance(belief, Fixed):
        return belief.los, belief.los
    if isinstance(belief, Conditioned):
        lo = max(belief.m, round_half_away(belief.v))
    else:
        lo = round_half_away(belief.v)
    hi = round_half_away(belief.v * error_quantile(belief.dist, 1.0 - alpha))
    return lo, max(hi, lo)


def build_uncertainty_set(
    beliefs: Mapping[str, LOSBelief],
    alpha: float = DEFAULT_ALPHA,
    eta: float = DEFAULT_ETA,
    budget_scale: str = "linear",
) -> UncertaintySet:
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie in (0, 1)")
    lo: dict[str, int] = {}
    hi: dict[str, int] = {}
    for pid, belief in beliefs.items():
        lo[pid], hi[pid] = patient_bounds(belief, alpha)
    return UncertaintySet(lo, hi, eta, budget_scale)


def robust_information_update(
    beliefs: Mapping[str, LOSBelief],
    committed: Mapping[str, int],
    schedule_day: int,
    truth: Mapping[str, int],
    alpha: float = DEFAULT_ALPHA,
    eta: float = DEFAULT_ETA,
    budget_scale: str = "linear",
) -> tuple[dict[str, LOSBelief], UncertaintySet]:
    """Refresh beliefs by the stochastic update procedure, then rebuild the
    uncertainty set from the updated beliefs."""
    updated = update_beliefs(beliefs, committed, schedule_day, truth)
    return updated, build_uncertainty_set(updated, alpha, eta, budget_scale)


# ---------------------------------------------------------------------------
# Main problem
# ---------------------------------------------------------------------------


def build_main(
    state: BatchState, pool: list[ScenarioTrace], beta: float
) -> ScheduleModel:
    """Scheduling MIP minimizing wait plus beta times the worst overflow cost
    over the trace pool. A single-trace pool collapses exactly to the
    deterministic batch problem (the epigraph variable is redundant there).
    """
    if not pool:
        raise DomainError("trace pool must be nonempty")
    if len(pool) == 1:
        from .deterministic import build_bop

        return build_bop(state, pool[0].los, beta)
    inst = state.instance
    free = [(p, batch_window(p, state.schedule_day, inst.horizon)) for p in state.new_patients]
    committed = [(p, state.committed[p.id]) for p in state.past_patients]
    core = _CoreBuilder(inst, free, committed, cost_start=state.schedule_day, name="robust-main")
    core.builder.add_objective(core.wait_terms())
    theta = core.builder.add_continuous("theta")
    for n_idx, trace in enumerate(pool):
        overflow_terms = cost_mod.encode_overflow_cost(
            core.builder,
            core.census_expressions(trace.los),
            inst.cost_params,
            inst.capacity,
            label=f"w{n_idx}",
        )
        core.builder.add_constraint(
            list(overflow_terms) + [(theta, -1.0)], ub=0.0, name=f"epi[{n_idx}]"
        )
    core.builder.add_objective([(theta, beta)])
    return ScheduleModel(
        core.builder,
        core.x,
        {p.id: w for p, w in free},
        dict(state.committed),
        cost_start=state.schedule_day,
    )


def solve_main(
    state: BatchState,
    pool: list[ScenarioTrace],
    beta: float,
    time_limit: float = DEFAULT_TIME_LIMIT,
    rel_gap: float = DEFAULT_REL_GAP,
):
    model = build_main(state, pool, beta)
    solution = model.solve(time_limit=time_limit, rel_gap=rel_gap)
    return solution.assignment, solution.objective


# ---------------------------------------------------------------------------
# Recourse problem
# ---------------------------------------------------------------------------


@dataclass
class _RecoursePatient:
    pid: str
    day: int
    l_min: int
    l_max: int

    @property
    def free_days(self) -> range:
        return range(self.day + self.l_min, self.day + self.l_max)


def solve_recourse(
    assignment: Mapping[str, int],
    uset: UncertaintySet,
    instance: Instance,
    cost_start: int = 1,
    time_limit: float = DEFAULT_TIME_LIMIT,
) -> tuple[ScenarioTrace, float]:
    """Worst-case overflow cost of a fixed schedule over the uncertainty set.

    Returns the attaining LOS trace and its cost over days
    ``cost_start..horizon``. Solved as a single maximization MIP; the builder
    minimizes, so the objective is negated throughout.
    """
    horizon = instance.horizon
    e = instance.cost_params.coefficients
    capacity = instance.capacity
    patients = [
        _RecoursePatient(pid, assignment[pid], uset.l_min[pid], uset.l_max[pid])
        for pid in sorted(assignment)
    ]

    certain: dict[int, int] = {}
    free_at: dict[int, list[_RecoursePatient]] = {}
    for p in patients:
        for d in range(max(p.day, cost_start), min(p.day + p.l_min - 1, horizon) + 1):
            certain[d] = certain.get(d, 0) + 1
        for d in p.free_days:
            if cost_start <= d <= horizon:
                free_at.setdefault(d, []).append(p)

    builder = ModelBuilder("recourse")
    w: dict[tuple[str, int], object] = {}
    for p in patients:
        prev = None
        for d in p.free_days:
            if d > horizon:
                break
            var = builder.add_binary(f"w[{p.pid},{d}]")
            w[(p.pid, d)] = var
            if prev is not None:
                builder.add_constraint([(prev, 1.0), (var, -1.0)], ub=0.0)
            prev = var

    uncertain = set(uset.uncertain_ids)
    budget_terms = []
    budget_base = 0.0
    for p in patients:
        if p.pid not in uncertain:
            continue
        spread = p.l_max - p.l_min
        for d in p.free_days:
            if d > horizon:
                break
            budget_base += 1.0 / spread
            budget_terms.append((w[(p.pid, d)], -1.0 / spread))
    if budget_terms or budget_base:
        builder.add_constraint(budget_terms, ub=uset.budget_rhs() - budget_base, name="budget")

    # dual pieces: lambda[d,m] = e_m * b[d,m]; products with w linearized by q
    days = sorted(set(certain) | set(free_at))
    for d in days:
        cert = certain.get(d, 0)
        frees = free_at.get(d, [])
        max_census = cert + len(frees)
        for m in range(N_PIECES):
            threshold = capacity + m
            if e[m] == 0.0 or max_census <= threshold:
                continue
            b = builder.add_binary(f"b[{d},{m + 1}]")
            builder.add_objective([(b, -e[m] * (cert + len(frees) - threshold))])
            for p in frees:
                wv = w[(p.pid, d)]
                q = builder.add_continuous(f"q[{p.pid},{d},{m + 1}]")
                builder.add_constraint([(q, 1.0), (b, -e[m]), (wv, -e[m])], lb=-e[m])
                builder.add_constraint([(q, 1.0), (wv, -e[m])], ub=0.0)
                builder.add_constraint([(q, 1.0), (b, -e[m])], ub=0.0)
                builder.add_objective([(q, 1.0)])

    result = builder.solve(time_limit=time_limit, rel_gap=0.0)
    if result.status is not Status.OPTIMAL:
        raise SolveFailed(f"recourse failed: {result.status.value} {result.message}", result)

    trace: dict[str, int] = {}
    for p in patients:
        stay = p.l_min
        for d in p.free_days:
            if d > horizon:
                break
            stay += 1 - int(result.value(w[(p.pid, d)]))
        trace[p.pid] = stay
    return ScenarioTrace(trace), -float(result.objective_value)


def recourse_bruteforce(
    assignment: Mapping[str, int],
    uset: UncertaintySet,
    instance: Instance,
    cost_start: int = 1,
) -> tuple[ScenarioTrace, float]:
    """Exhaustive search over integer traces in the uncertainty set; ties are
    broken toward the lexicographically smallest trace. Test oracle for
    :func:`solve_recourse`."""
    ids = sorted(assignment)
    uncertain = [pid for pid in ids if uset.l_max[pid] > uset.l_min[pid]]
    space = 1
    for pid in uncertain:
        space *= uset.l_max[pid] - uset.l_min[pid] + 1
        if space > BRUTEFORCE_LIMIT:
            raise DomainError(f"recourse search space exceeds {BRUTEFORCE_LIMIT}")

    base = {pid: uset.l_min[pid] for pid in ids}
    rhs = uset.budget_rhs() + 1e-9

    def cost_of(trace: Mapping[str, int]) -> float:
        occupancy: dict[int, int] = {}
        for pid in ids:
            day = assignment[pid]
            for d in range(max(day, cost_start), min(day + trace[pid] - 1, instance.horizon) + 1):
                occupancy[d] = occupancy.get(d, 0) + 1
        return sum(
            overflow_cost(max(occ - instance.capacity, 0), instance.cost_params)
            for occ in occupancy.values()
        )

    best_trace = dict(base)
    best_value = cost_of(base)
    ranges = [range(uset.l_min[pid], uset.l_max[pid] + 1) for pid in uncertain]
    for combo in itertools.product(*ranges):
        trace = dict(base)
        trace.update(zip(uncertain, combo))
        if uset.deviation(trace) > rhs:
            continue
        value = cost_of(trace)
        if value > best_value + 1e-12:
            best_value = value
            best_trace = trace
    return ScenarioTrace(best_trace), float(best_value)


# ---------------------------------------------------------------------------
# Column-and-constraint generation
# ---------------------------------------------------------------------------


@dataclass
class AccgState:
    iterations: int = 0
    lb: float = -math.inf
    ub: float = math.inf
    pool: list[ScenarioTrace] = field(default_factory=list)
    gap_rows: list[tuple[int, float, float, float]] = field(default_factory=list)
    converged: bool = False

    @property
    def gap(self) -> float:
        if not math.isfinite(self.lb) or not math.isfinite(self.ub):
            return math.inf
        if self.lb > 1e-12:
            return (self.ub - self.lb) / self.lb
        return self.ub - self.lb


def accg(
    state: BatchState,
    uset: UncertaintySet,
    beta: float,
    max_iter: int = DEFAULT_MAX_ITER,
    epsilon: float = DEFAULT_EPSILON,
    time_limit: float = DEFAULT_TIME_LIMIT,
    rel_gap: float = DEFAULT_REL_GAP,
) -> tuple[dict[str, int], AccgState]:
    """Alternate between the pooled main problem and the worst-case recourse,
    growing the pool until the bound gap closes or the iteration cap hits.

    Returns the incumbent assignment (the one certifying the final upper
    bound) and the bound history.
    """
    if max_iter < 1:
        raise DomainError("need at least one iteration")
    acc = AccgState(pool=[uset.nominal_trace()])
    new_ids = [p.id for p in state.new_patients]
    incumbent: dict[str, int] | None = None

    for t in range(1, max_iter + 1):
        model = build_main(state, acc.pool, beta)
        solution = model.solve(time_limit=time_limit, rel_gap=rel_gap)
        # the main problem's dual bound is a certified lower bound for the
        # robust problem; keep the running max so the LB never regresses
        bound = solution.result.dual_bound
        if bound is None:
            bound = solution.objective
        acc.lb = max(acc.lb, bound)
        worst, recourse_value = solve_recourse(
            solution.assignment, uset, state.instance, cost_start=state.schedule_day,
            time_limit=time_limit,
        )
        candidate_ub = (
            wait_cost(solution.assignment, state.instance, new_ids) + beta * recourse_value
        )
        if candidate_ub < acc.ub:
            acc.ub = candidate_ub
            incumbent = solution.assignment
        acc.iterations = t
        acc.gap_rows.append((t, acc.lb, acc.ub, acc.gap))
        if acc.ub - acc.lb <= epsilon:
            acc.converged = True
            break
        acc.pool.append(ScenarioTrace(dict(worst.los), index=t))

    assert incumbent is not None
    return incumbent, acc


def rro_run(
    instance: Instance,
    beta: float,
    error_dist: ErrorDistribution,
    eta: float = DEFAULT_ETA,
    alpha: float = DEFAULT_ALPHA,
    cadence: int = CADENCES["monthly"],
    max_iter: int = DEFAULT_MAX_ITER,
    epsilon: float = DEFAULT_EPSILON,
    budget_scale: str = "linear",
    time_limit: float = DEFAULT_TIME_LIMIT,
    rel_gap: float = DEFAULT_REL_GAP,
) -> RollingResult:
    """Rolling robust optimization: per batch, update beliefs and bounds,
    then solve the robust batch problem by column-and-constraint generation.
    Deterministic for fixed inputs (no sampling is involved)."""
    truth = instance.true_trace()
    all_beliefs = initial_beliefs(instance, error_dist)
    beliefs: dict[str, LOSBelief] = {}

    def solver(state: BatchState):
        nonlocal beliefs
        beliefs = update_beliefs(beliefs, state.committed, state.schedule_day, truth)
        for p in state.new_patients:
            beliefs[p.id] = all_beliefs[p.id]
        uset = build_uncertainty_set(beliefs, alpha, eta, budget_scale)
        assignment, acc = accg(
            state, uset, beta, max_iter=max_iter, epsilon=epsilon,
            time_limit=time_limit, rel_gap=rel_gap,
        )
        new_assignment = {p.id: assignment[p.id] for p in state.new_patients}
        extra = {
            "iterations": acc.iterations,
            "lb": acc.lb,
            "ub": acc.ub,
            "gap": acc.gap,
            "converged": acc.converged,
            "gap_rows": acc.gap_rows,
        }
        return new_assignment, acc.ub, extra

    return run_rolling(instance, solver, cadence)
