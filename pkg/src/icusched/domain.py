"""Core data model: patients, calendars, schedules, census, and the
solver-free validator for the operational scheduling rules.

Day indices are 1-based integers over the planning horizon ``1..horizon``;
arrival days may be nonpositive for patients who entered the waitlist before
the horizon started. All types are immutable after construction and safe to
share across concurrent evaluation replications.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

MAX_SURGERY_HOURS = 15.0
SURGEON_DAY_HOURS = 15.0


class DomainError(Exception):
    """Raised for violated construction-time invariants."""


def clamp_duration(hours: float, patient_id: str = "") -> float:
    """Clamp recorded surgery duration into [0, 15] hours at ingestion."""
    if hours > MAX_SURGERY_HOURS:
        warnings.warn(
            f"surgery duration {hours}h for patient {patient_id!r} clamped to "
            f"{MAX_SURGERY_HOURS}h",
            stacklevel=2,
        )
        return MAX_SURGERY_HOURS
    return max(0.0, float(hours))


@dataclass(frozen=True)
class Patient:
    """One elective surgical patient.

    ``true_los`` is simulation ground truth, never shown to schedulers except
    through the rolling information-update procedures. ``predicted_los`` is
    the point prediction v_p from an external (or baseline) predictor.
    """

    id: str
    arrival_day: int
    original_date: int
    actual_date: int
    surgeon_id: str
    duration_hours: float
    is_par: bool
    true_los: int
    predicted_los: float
    procedure_type: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.duration_hours <= MAX_SURGERY_HOURS:
            raise DomainError(
                f"patient {self.id}: duration {self.duration_hours}h outside "
                f"[0, {MAX_SURGERY_HOURS}] (clamp at ingestion)"
            )
        if self.true_los < 0:
            raise DomainError(f"patient {self.id}: negative true LOS")
        if self.predicted_los <= 0:
            raise DomainError(f"patient {self.id}: predicted LOS must be positive")

    @property
    def lead(self) -> int:
        return self.original_date - self.arrival_day


@dataclass(frozen=True)
class AvailabilityWindow:
    """Feasible surgery days ``d_min <= d < d_max`` (upper bound exclusive)."""

    d_min: int
    d_max: int

    def __post_init__(self) -> None:
        if self.d_min > self.d_max:
            raise DomainError(f"empty availability window [{self.d_min}, {self.d_max})")

    def __contains__(self, day: int) -> bool:
        return self.d_min <= day < self.d_max

    def days(self) -> range:
        return range(self.d_min, self.d_max)


LONG_LEAD_DAYS = 20
POST_SURGERY_SLACK_DAYS = 90


def availability_window(patient: Patient, horizon: int) -> AvailabilityWindow:
    """Heuristic window reconstructed from the status-quo booking record.

    Patients with long leads are assumed available from half their lead time
    before the originally booked date; short-lead patients from arrival. The
    window closes 90 days after the realized surgery date. Both ends are
    clamped to the horizon; ``lead/2`` uses floor division.
    """
    if patient.lead > LONG_LEAD_DAYS:
        d_min = max(1, patient.original_date - patient.lead // 2)
    else:
        d_min = max(1, patient.arrival_day)
    d_max = min(patient.actual_date + POST_SURGERY_SLACK_DAYS, horizon)
    return AvailabilityWindow(d_min, d_max)


@dataclass(frozen=True)
class SurgeonCalendar:
    """Per-(day, surgeon) operating hours and PAR-day flags.

    ``hours`` maps (day, surgeon_id) -> available hours, 0 or 15. Missing
    entries mean 0 hours. ``par_day`` marks days on which a surgeon may
    perform PAR procedures.
    """

    hours: Mapping[tuple[int, str], float]
    par_day: Mapping[tuple[int, str], bool]
    surgeons: tuple[str, ...]

    def __post_init__(self) -> None:
        for key, h in self.hours.items():
            if h not in (0.0, SURGEON_DAY_HOURS):
                raise DomainError(f"calendar hours at {key} must be 0 or 15, got {h}")

    def hours_for(self, day: int, surgeon_id: str) -> float:
        return self.hours.get((day, surgeon_id), 0.0)

    def is_par_day(self, day: int, surgeon_id: str) -> bool:
        return bool(self.par_day.get((day, surgeon_id), False))


@dataclass(frozen=True)
class OverflowCostParams:
    """Piecewise-linear overflow cost coefficients and the bed capacity they
    are anchored to. See :mod:`icusched.cost` for the induced function."""

    coefficients: tuple[float, float, float, float, float] = (1.0, 2.0, 2.0, 2.0, 2.0)
    capacity: int = 8

    def __post_init__(self) -> None:
        if len(self.coefficients) != 5:
            raise DomainError("exactly five cost pieces are supported")
        if any(e < 0 for e in self.coefficients):
            raise DomainError("cost coefficients must be nonnegative (convexity)")
        if self.capacity < 0:
            raise DomainError("capacity must be nonnegative")


@dataclass(frozen=True)
class Instance:
    """A full scheduling problem: horizon, patients, calendar, capacity."""

    horizon: int
    patients: tuple[Patient, ...]
    calendar: SurgeonCalendar
    cost_params: OverflowCostParams = field(default_factory=OverflowCostParams)

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise DomainError("horizon must be at least one day")
        seen: set[str] = set()
        for p in self.patients:
            if p.id in seen:
                raise DomainError(f"duplicate patient id {p.id}")
            seen.add(p.id)
            w = availability_window(p, self.horizon)
            if not (1 <= w.d_min <= w.d_max <= self.horizon):
                raise DomainError(
                    f"patient {p.id}: window [{w.d_min}, {w.d_max}) outside horizon"
                )
            if w.d_min == w.d_max:
                raise DomainError(f"patient {p.id}: empty availability window")

    @property
    def capacity(self) -> int:
        return self.cost_params.capacity

    def with_patients(self, patients: Iterable[Patient]) -> "Instance":
        return replace(self, patients=tuple(patients))

    def patient(self, pid: str) -> Patient:
        for p in self.patients:
            if p.id == pid:
                return p
        raise KeyError(pid)

    def windows(self) -> dict[str, AvailabilityWindow]:
        return {p.id: availability_window(p, self.horizon) for p in self.patients}

    def true_trace(self) -> "dict[str, int]":
        return {p.id: p.true_los for p in self.patients}


@dataclass(frozen=True)
class Schedule:
    """Assignment of every patient to exactly one surgery day.

    ``committed`` marks patients whose assignment was frozen by an earlier
    scheduling batch and must never change afterwards.
    """

    assignment: Mapping[str, int]
    committed: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        missing = self.committed - set(self.assignment)
        if missing:
            raise DomainError(f"committed patients without assignment: {sorted(missing)}")

    def day_of(self, pid: str) -> int:
        return self.assignment[pid]

    def __len__(self) -> int:
        return len(self.assignment)


@dataclass(frozen=True)
class CensusSeries:
    """Daily elective ICU occupancy and the overflow above capacity."""

    occupancy: Mapping[int, int]
    capacity: int

    def occupancy_on(self, day: int) -> int:
        return self.occupancy.get(day, 0)

    def overflow_on(self, day: int) -> int:
        return max(self.occupancy_on(day) - self.capacity, 0)

    @property
    def overflow(self) -> dict[int, int]:
        return {
            d: occ - self.capacity for d, occ in self.occupancy.items() if occ > self.capacity
        }

    def total_bed_days(self) -> int:
        return sum(self.occupancy.values())


def census(
    schedule: Schedule, trace: Mapping[str, int], instance: Instance
) -> CensusSeries:
    """Daily occupancy implied by a schedule and one LOS realization.

    A patient operated on day d with LOS l occupies a bed on days
    d, ..., d+l-1; l = 0 occupies no bed at all. Days are not clipped to the
    horizon so that bed-days are conserved exactly.
    """
    occupancy: dict[int, int] = {}
    for pid, day in schedule.assignment.items():
        try:
            los = trace[pid]
        except KeyError:
            raise DomainError(f"scheduled patient {pid} has no LOS in the trace") from None
        for d in range(day, day + los):
            occupancy[d] = occupancy.get(d, 0) + 1
    return CensusSeries(occupancy, instance.capacity)


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str
    patient_id: str | None = None
    day: int | None = None
    surgeon_id: str | None = None


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def __len__(self) -> int:
        return len(self.violations)


def validate_schedule(
    schedule: Schedule,
    instance: Instance,
    windows: Mapping[str, AvailabilityWindow] | None = None,
) -> ValidationReport:
    """Check every operational rule a feasible schedule must satisfy.

    Violations are report content, not exceptions. ``windows`` overrides the
    default per-patient availability (rolling runs pass the batch-adjusted
    windows that were actually in force when each patient was committed).
    """
    if windows is None:
        windows = instance.windows()
    patients = {p.id: p for p in instance.patients}
    cal = instance.calendar
    out: list[Violation] = []

    hours_by_sd: dict[tuple[int, str], float] = {}
    par_by_sd: dict[tuple[int, str], list[str]] = {}
    nonpar_by_sd: dict[tuple[int, str], list[str]] = {}

    for pid, day in schedule.assignment.items():
        p = patients.get(pid)
        if p is None:
            out.append(Violation("unknown-patient", f"{pid} not in instance", pid, day))
            continue
        w = windows[pid]
        if day not in w:
            out.append(
                Violation(
                    "window",
                    f"{pid} on day {day} outside [{w.d_min}, {w.d_max})",
                    pid,
                    day,
                )
            )
        key = (day, p.surgeon_id)
        hours_by_sd[key] = hours_by_sd.get(key, 0.0) + p.duration_hours
        if p.is_par:
            par_by_sd.setdefault(key, []).append(pid)
            if not cal.is_par_day(day, p.surgeon_id):
                out.append(
                    Violation(
                        "par-day",
                        f"PAR {pid} on non-PAR day {day} for {p.surgeon_id}",
                        pid,
                        day,
                        p.surgeon_id,
                    )
                )
        else:
            nonpar_by_sd.setdefault(key, []).append(pid)

    for (day, k), total in hours_by_sd.items():
        avail = cal.hours_for(day, k)
        if total > avail + 1e-9:
            out.append(
                Violation(
                    "hours",
                    f"surgeon {k} booked {total:.2f}h on day {day} (limit {avail:.0f}h)",
                    day=day,
                    surgeon_id=k,
                )
            )

    for (day, k), pids in par_by_sd.items():
        if len(pids) > 1:
            out.append(
                Violation(
                    "par-multiple",
                    f"surgeon {k} has {len(pids)} PAR surgeries on day {day}",
                    day=day,
                    surgeon_id=k,
                )
            )
        others = nonpar_by_sd.get((day, k), [])
        if others:
            out.append(
                Violation(
                    "par-exclusive",
                    f"surgeon {k} mixes PAR with {len(others)} other surgeries on day {day}",
                    day=day,
                    surgeon_id=k,
                )
            )

    par_days_by_surgeon: dict[str, set[int]] = {}
    for (day, k) in par_by_sd:
        par_days_by_surgeon.setdefault(k, set()).add(day)
    for k, days in par_days_by_surgeon.items():
        for day in sorted(days):
            if day + 1 in days:
                out.append(
                    Violation(
                        "par-consecutive",
                        f"surgeon {k} has PAR surgeries on consecutive days {day}, {day + 1}",
                        day=day,
                        surgeon_id=k,
                    )
                )

    return ValidationReport(tuple(out))
