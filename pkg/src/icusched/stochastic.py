"""Sample-average approximation of the batch problem and the two rolling
stochastic algorithms.

Both algorithms share one first-stage assignment and replicate the occupancy
and overflow bookkeeping per sampled LOS trace. Standard sampling draws
errors as observed; conservative sampling clamps errors below one up to one,
so only under-prediction risk is represented.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import cost as cost_mod
from .deterministic import BatchState, ScheduleModel, _CoreBuilder, batch_window
from .domain import DomainError, Instance
from .los import (
    ErrorDistribution,
    Fixed,
    LOSBelief,
    Predicted,
    condition_on_stay,
    sample_from_uniform,
)
from .milp import DEFAULT_REL_GAP, DEFAULT_TIME_LIMIT
from .rolling import CADENCES, RollingResult, run_rolling

DEFAULT_N_SCENARIOS = 10


class SamplingMode(enum.Enum):
    STANDARD = "standard"
    CONSERVATIVE = "conservative"


@dataclass(frozen=True)
class ScenarioTrace:
    """One realized LOS per patient."""

    los: Mapping[str, int]
    index: int = 0

    def key(self) -> tuple[tuple[str, int], ...]:
        return tuple(sorted(self.los.items()))


@dataclass(frozen=True)
class ScenarioSet:
    traces: tuple[ScenarioTrace, ...]

    def __post_init__(self) -> None:
        if not self.traces:
            raise DomainError("scenario set must contain at least one trace")

    def __len__(self) -> int:
        return len(self.traces)

    def weighted_unique(self) -> list[tuple[ScenarioTrace, float]]:
        """Distinct traces with probability weights; duplicates are merged so
        the weighted model is an exact reformulation of the plain average."""
        counts: dict[tuple, tuple[ScenarioTrace, int]] = {}
        for trace in self.traces:
            key = trace.key()
            if key in counts:
                counts[key] = (counts[key][0], counts[key][1] + 1)
            else:
                counts[key] = (trace, 1)
        n = len(self.traces)
        return [(trace, count / n) for trace, count in counts.values()]


def trace_rng(seed: int, batch_index: int, trace_index: int) -> np.random.Generator:
    """Counter-derived stream so serial and parallel sampling coincide and
    sampling modes share the same underlying uniform draws."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(batch_index, trace_index))
    )


def sample_trace(
    beliefs: Mapping[str, LOSBelief],
    mode: SamplingMode,
    rng: np.random.Generator,
    index: int = 0,
) -> ScenarioTrace:
    """One trace: independent draws per patient, in sorted-id order."""
    conservative = mode is SamplingMode.CONSERVATIVE
    los = {
        pid: sample_from_uniform(beliefs[pid], float(rng.random()), conservative)
        for pid in sorted(beliefs)
    }
    return ScenarioTrace(los, index)


def sample_scenarios(
    beliefs: Mapping[str, LOSBelief],
    n: int,
    mode: SamplingMode,
    rng: np.random.Generator,
) -> ScenarioSet:
    if n < 1:
        raise DomainError("need at least one scenario")
    return ScenarioSet(tuple(sample_trace(beliefs, mode, rng, i) for i in range(n)))


def sample_scenarios_keyed(
    beliefs: Mapping[str, LOSBelief],
    n: int,
    mode: SamplingMode,
    seed: int,
    batch_index: int,
) -> ScenarioSet:
    return ScenarioSet(
        tuple(
            sample_trace(beliefs, mode, trace_rng(seed, batch_index, i), i)
            for i in range(n)
        )
    )


def build_stochastic_bop(
    state: BatchState, scenarios: ScenarioSet, beta: float
) -> ScheduleModel:
    """Batch MIP minimizing wait plus the scenario-average overflow cost.

    Occupancy and overflow variables are replicated per distinct trace; the
    shared assignment variables and operational constraints appear once.
    """
    inst = state.instance
    free = [(p, batch_window(p, state.schedule_day, inst.horizon)) for p in state.new_patients]
    committed = [(p, state.committed[p.id]) for p in state.past_patients]
    core = _CoreBuilder(inst, free, committed, cost_start=state.schedule_day, name="saa-bop")
    core.builder.add_objective(core.wait_terms())
    for n_idx, (trace, weight) in enumerate(scenarios.weighted_unique()):
        overflow_terms = cost_mod.encode_overflow_cost(
            core.builder,
            core.census_expressions(trace.los),
            inst.cost_params,
            inst.capacity,
            label=f"s{n_idx}",
        )
        core.builder.add_objective([(v, beta * weight * c) for v, c in overflow_terms])
    return ScheduleModel(
        core.builder,
        core.x,
        {p.id: w for p, w in free},
        dict(state.committed),
        cost_start=state.schedule_day,
    )


def update_beliefs(
    beliefs: Mapping[str, LOSBelief],
    committed: Mapping[str, int],
    schedule_day: int,
    truth: Mapping[str, int],
) -> dict[str, LOSBelief]:
    """Information update for committed patients: discharged stays become
    fixed; in-ICU stays are conditioned on the elapsed days; future surgeries
    and already-fixed beliefs are untouched."""
    updated = dict(beliefs)
    for pid, day in committed.items():
        if day >= schedule_day:
            continue
        true_los = truth[pid]
        if day + true_los <= schedule_day:
            updated[pid] = Fixed(true_los)
            continue
        belief = updated[pid]
        if isinstance(belief, Fixed):
            continue
        updated[pid] = condition_on_stay(belief, schedule_day - day)
    return updated


def initial_beliefs(
    instance: Instance, error_dist: ErrorDistribution
) -> dict[str, LOSBelief]:
    return {p.id: Predicted(p.predicted_los, error_dist) for p in instance.patients}


def rso_run(
    instance: Instance,
    mode: SamplingMode,
    beta: float,
    error_dist: ErrorDistribution,
    n_scenarios: int = DEFAULT_N_SCENARIOS,
    seed: int = 0,
    cadence: int = CADENCES["monthly"],
    time_limit: float = DEFAULT_TIME_LIMIT,
    rel_gap: float = DEFAULT_REL_GAP,
) -> RollingResult:
    """Rolling stochastic optimization (standard or conservative sampling)."""
    truth = instance.true_trace()
    all_beliefs = initial_beliefs(instance, error_dist)
    beliefs: dict[str, LOSBelief] = {}

    def solver(state: BatchState):
        nonlocal beliefs
        beliefs = update_beliefs(beliefs, state.committed, state.schedule_day, truth)
        for p in state.new_patients:
            beliefs[p.id] = all_beliefs[p.id]
        scenarios = sample_scenarios_keyed(
            beliefs, n_scenarios, mode, seed, batch_index=state.schedule_day
        )
        model = build_stochastic_bop(state, scenarios, beta)
        solution = model.solve(time_limit=time_limit, rel_gap=rel_gap)
        new_assignment = {p.id: solution.assignment[p.id] for p in state.new_patients}
        return new_assignment, solution.objective, {"status": solution.result.status.value}

    return run_rolling(instance, solver, cadence)
