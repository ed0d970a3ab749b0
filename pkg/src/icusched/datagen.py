"""Synthetic long-tailed instance generation and CSV persistence.

The generator replaces unavailable hospital data. Realized LOS mixes a
log-normal body with a Pareto tail so that a few percent of patients hold a
disproportionate share of bed-days; predicted LOS behaves like a body-level
regression model and therefore systematically under-predicts the tail.
"""
from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .domain import (
    DomainError,
    Instance,
    OverflowCostParams,
    Patient,
    SurgeonCalendar,
    availability_window,
    clamp_duration,
)

PATIENT_COLUMNS = [
    "id",
    "arrival_day",
    "original_date",
    "actual_date",
    "surgeon_id",
    "duration_hours",
    "is_par",
    "true_los",
    "predicted_los",
]
OPTIONAL_PATIENT_COLUMNS = ["procedure_type"]
CALENDAR_COLUMNS = ["day", "surgeon_id", "hours", "par_day"]

PATIENTS_FILE = "patients.csv"
CALENDAR_FILE = "calendar.csv"
META_FILE = "instance.json"


class SchemaError(Exception):
    """CSV contents do not match the expected schema."""


@dataclass(frozen=True)
class GeneratorParams:
    n_patients: int = 400
    horizon: int = 540
    arrival_start: int = -60
    arrival_rate: float = 0.85
    n_surgeons: int = 3
    n_procedure_types: int = 8
    par_fraction: float = 0.06
    body_mu: float = 1.05
    body_sigma: float = 0.8
    tail_weight: float = 0.05
    tail_xmin: float = 30.0
    tail_shape: float = 1.8
    drift: float = 0.0
    capacity: int = 8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_patients < 1 or self.n_surgeons < 1 or self.n_procedure_types < 1:
            raise DomainError("counts must be positive")
        if not 0.0 <= self.tail_weight <= 1.0:
            raise DomainError("tail weight must lie in [0, 1]")
        if not 0.0 <= self.par_fraction < 1.0:
            raise DomainError("PAR fraction must lie in [0, 1)")
        if min(self.arrival_rate, self.body_sigma, self.tail_xmin) <= 0:
            raise DomainError("scale parameters must be positive")
        if self.tail_shape <= 1.0:
            raise DomainError("Pareto shape must exceed 1 for a finite mean")
        if self.horizon < 200:
            raise DomainError("horizon too short for windows plus batching")


PAR_TYPE = "par"
PAR_BODY_MU = 2.2
TYPE_MU_SPAN = (0.2, 1.9)
TYPE_DURATION_SPAN = (2.5, 9.5)
PAR_DURATION = 12.0


def _type_table(params: GeneratorParams) -> dict[str, tuple[float, float]]:
    """procedure type -> (body log-mean, mean duration hours)."""
    mus = np.linspace(*TYPE_MU_SPAN, params.n_procedure_types)
    durations = np.linspace(*TYPE_DURATION_SPAN, params.n_procedure_types)
    table = {
        f"proc{i:02d}": (float(mus[i]), float(durations[i]))
        for i in range(params.n_procedure_types)
    }
    table[PAR_TYPE] = (PAR_BODY_MU, PAR_DURATION)
    return table


def mixture_mean(params: GeneratorParams) -> float:
    """Analytic mean of the (continuous) LOS mixture under default weights."""
    table = _type_table(params)
    type_w = (1.0 - params.par_fraction) / params.n_procedure_types
    body = 0.0
    for ptype, (mu, _) in table.items():
        w = params.par_fraction if ptype == PAR_TYPE else type_w
        body += w * math.exp(mu + params.body_sigma**2 / 2)
    tail_mean = params.tail_xmin * params.tail_shape / (params.tail_shape - 1.0)
    return (1.0 - params.tail_weight) * body + params.tail_weight * tail_mean


def lognormal_tail_probability(mu: float, sigma: float, threshold: float) -> float:
    """P(round(exp(N(mu, sigma))) > threshold) for integer thresholds."""
    z = (math.log(threshold + 0.5) - mu) / sigma
    return 0.5 * math.erfc(z / math.sqrt(2))


def generate_instance(params: GeneratorParams, max_retries: int = 20) -> Instance:
    """Draw a full instance; rejects and redraws booking dates until a greedy
    placement succeeds for the offline windows and both batch cadences."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=params.seed))
    calendar = _make_calendar(params)
    table = _type_table(params)
    types = sorted(t for t in table if t != PAR_TYPE)

    arrivals = _draw_arrivals(params, rng)
    patients: list[Patient] = []
    for i, arrival in enumerate(arrivals):
        is_par = bool(rng.random() < params.par_fraction)
        ptype = PAR_TYPE if is_par else types[int(rng.integers(len(types)))]
        mu, mean_duration = table[ptype]
        true_los = _draw_los(params, mu, arrival, rng)
        predicted = max(0.5, float(np.round(math.exp(mu + rng.normal(0.0, 0.15)), 3)))
        duration = clamp_duration(
            float(np.clip(rng.normal(mean_duration, 1.5), 0.75, 15.0))
        )
        surgeon = f"s{i % params.n_surgeons}"
        patient = _draw_booking(
            params, rng, i, arrival, surgeon, duration, is_par, true_los, predicted, ptype
        )
        patients.append(patient)

    instance = Instance(
        horizon=params.horizon,
        patients=tuple(patients),
        calendar=calendar,
        cost_params=OverflowCostParams(capacity=params.capacity),
    )
    for _ in range(max_retries):
        blocker = _greedy_blocker(instance)
        if blocker is None:
            return instance
        instance = _rebook_instance(instance, blocker)
    raise DomainError(f"could not generate a feasible instance after {max_retries} retries")


def _draw_arrivals(params: GeneratorParams, rng: np.random.Generator) -> list[int]:
    last_allowed = params.horizon - 120
    arrivals = []
    t = float(params.arrival_start)
    while len(arrivals) < params.n_patients:
        t += rng.exponential(1.0 / params.arrival_rate)
        day = int(math.floor(t))
        if day > last_allowed:
            # compress the residual arrivals uniformly into the allowed span
            remaining = params.n_patients - len(arrivals)
            extra = sorted(
                int(x) for x in rng.integers(params.arrival_start, last_allowed + 1, remaining)
            )
            arrivals.extend(extra)
            break
        arrivals.append(day)
    return arrivals


def _draw_los(
    params: GeneratorParams, mu: float, arrival: int, rng: np.random.Generator
) -> int:
    span = max(params.horizon - 120 - params.arrival_start, 1)
    frac = (arrival - params.arrival_start) / span
    weight = float(np.clip(params.tail_weight + params.drift * frac, 0.0, 1.0))
    if rng.random() < weight:
        los = params.tail_xmin * (1.0 + rng.pareto(params.tail_shape))
    else:
        los = math.exp(rng.normal(mu, params.body_sigma))
    return int(math.floor(los + 0.5))


def _draw_booking(
    params, rng, index, arrival, surgeon, duration, is_par, true_los, predicted, ptype
) -> Patient:
    lead = int(np.clip(round(math.exp(rng.normal(math.log(60.0), 0.45))), 3, 200))
    original = int(np.clip(arrival + lead, 1, params.horizon - 100))
    delay = int(max(0, round(rng.normal(4.0, 8.0))))
    actual = int(np.clip(original + delay, original, params.horizon - 95))
    return Patient(
        id=f"p{index:04d}",
        arrival_day=arrival,
        original_date=original,
        actual_date=actual,
        surgeon_id=surgeon,
        duration_hours=duration,
        is_par=is_par,
        true_los=true_los,
        predicted_los=predicted,
        procedure_type=ptype,
    )


def _make_calendar(params: GeneratorParams) -> SurgeonCalendar:
    hours: dict[tuple[int, str], float] = {}
    par_day: dict[tuple[int, str], bool] = {}
    surgeons = tuple(f"s{k}" for k in range(params.n_surgeons))
    for d in range(1, params.horizon + 1):
        weekday = (d - 1) % 7
        if weekday >= 5:
            continue
        for k, surgeon in enumerate(surgeons):
            if weekday == 0 and k == 0:
                continue  # one surgeon never operates on Mondays
            hours[(d, surgeon)] = 15.0
            if weekday in (1, 3):
                par_day[(d, surgeon)] = True
    return SurgeonCalendar(hours, par_day, surgeons)


def _greedy_blocker(instance: Instance, cadences: tuple[int, ...] = (30, 14)) -> str | None:
    """Return the id of a patient that greedy placement cannot seat under the
    offline windows or any batch cadence, or None if all placements work."""
    from .deterministic import batch_window
    from .rolling import iter_batches

    offline = [
        (p, availability_window(p, instance.horizon))
        for p in sorted(instance.patients, key=lambda q: (q.arrival_day, q.id))
    ]
    blocker = _greedy_place(instance, offline)
    if blocker:
        return blocker
    for cadence in cadences:
        ordered = []
        for _, s_b, batch in iter_batches(instance, cadence):
            ordered.extend((p, batch_window(p, s_b, instance.horizon)) for p in batch)
        blocker = _greedy_place(instance, ordered)
        if blocker:
            return blocker
    return None


def _greedy_place(instance: Instance, ordered) -> str | None:
    cal = instance.calendar
    hours_used: dict[tuple[int, str], float] = {}
    par_used: set[tuple[int, str]] = set()
    nonpar_used: dict[tuple[int, str], int] = {}
    for patient, window in ordered:
        placed = False
        for d in window.days():
            k = patient.surgeon_id
            if patient.duration_hours > cal.hours_for(d, k) - hours_used.get((d, k), 0.0):
                continue
            if patient.is_par:
                if not cal.is_par_day(d, k) or (d, k) in par_used:
                    continue
                if (d - 1, k) in par_used or (d + 1, k) in par_used:
                    continue
                if nonpar_used.get((d, k), 0) > 0:
                    continue
            elif (d, k) in par_used:
                continue
            hours_used[(d, k)] = hours_used.get((d, k), 0.0) + patient.duration_hours
            if patient.is_par:
                par_used.add((d, k))
            else:
                nonpar_used[(d, k)] = nonpar_used.get((d, k), 0) + 1
            placed = True
            break
        if not placed:
            return patient.id
    return None


def _rebook_instance(instance: Instance, pid: str) -> Instance:
    """Widen one patient's window by pushing the realized date later."""
    updated = []
    for p in instance.patients:
        if p.id == pid:
            new_actual = min(p.actual_date + 30, instance.horizon - 95)
            if new_actual == p.actual_date:
                raise DomainError(f"cannot widen window for {pid}")
            p = replace(p, actual_date=new_actual)
        updated.append(p)
    return instance.with_patients(updated)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def atomic_write_text(path: Path | str, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see
    partial output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_instance(instance: Instance, directory: Path | str) -> None:
    directory = Path(directory)
    rows = [",".join(PATIENT_COLUMNS + OPTIONAL_PATIENT_COLUMNS)]
    for p in instance.patients:
        rows.append(
            f"{p.id},{p.arrival_day},{p.original_date},{p.actual_date},"
            f"{p.surgeon_id},{p.duration_hours!r},{str(p.is_par).lower()},"
            f"{p.true_los},{p.predicted_los!r},{p.procedure_type}"
        )
    atomic_write_text(directory / PATIENTS_FILE, "\n".join(rows) + "\n")

    cal = instance.calendar
    lines = [",".join(CALENDAR_COLUMNS)]
    keys = sorted(set(cal.hours) | set(cal.par_day))
    for day, surgeon in keys:
        lines.append(
            f"{day},{surgeon},{cal.hours_for(day, surgeon)!r},"
            f"{str(cal.is_par_day(day, surgeon)).lower()}"
        )
    atomic_write_text(directory / CALENDAR_FILE, "\n".join(lines) + "\n")

    meta = {
        "horizon": instance.horizon,
        "capacity": instance.capacity,
        "cost_coefficients": list(instance.cost_params.coefficients),
        "surgeons": list(cal.surgeons),
    }
    atomic_write_text(directory / META_FILE, json.dumps(meta, indent=2) + "\n")


def _parse(row_num: int, column: str, raw: str, kind):
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered in ("true", "1"):
                return True
            if lowered in ("false", "0"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except (TypeError, ValueError):
        raise SchemaError(
            f"row {row_num}: column '{column}' has invalid value {raw!r}"
        ) from None


def load_instance(directory: Path | str) -> Instance:
    directory = Path(directory)
    meta_path = directory / META_FILE
    if not meta_path.exists():
        raise SchemaError(f"missing metadata file {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    horizon = int(meta["horizon"])
    cost_params = OverflowCostParams(
        coefficients=tuple(float(x) for x in meta["cost_coefficients"]),
        capacity=int(meta["capacity"]),
    )

    patients = []
    with open(directory / PATIENTS_FILE, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in PATIENT_COLUMNS:
            if col not in header:
                raise SchemaError(f"patients CSV is missing column '{col}'")
        for row_num, row in enumerate(reader, start=2):
            duration = _parse(row_num, "duration_hours", row["duration_hours"], float)
            raw_true = row["true_los"]
            if "." in raw_true.strip() and float(raw_true) != int(float(raw_true)):
                raise SchemaError(
                    f"row {row_num}: column 'true_los' must be an integer, got {raw_true!r}"
                )
            patients.append(
                Patient(
                    id=_parse(row_num, "id", row["id"], str),
                    arrival_day=_parse(row_num, "arrival_day", row["arrival_day"], int),
                    original_date=_parse(row_num, "original_date", row["original_date"], int),
                    actual_date=_parse(row_num, "actual_date", row["actual_date"], int),
                    surgeon_id=row["surgeon_id"],
                    duration_hours=clamp_duration(duration, row["id"]),
                    is_par=_parse(row_num, "is_par", row["is_par"], bool),
                    true_los=_parse(row_num, "true_los", raw_true, int),
                    predicted_los=_parse(row_num, "predicted_los", row["predicted_los"], float),
                    procedure_type=row.get("procedure_type", "") or "",
                )
            )

    hours: dict[tuple[int, str], float] = {}
    par_day: dict[tuple[int, str], bool] = {}
    surgeons: set[str] = set(meta.get("surgeons", []))
    with open(directory / CALENDAR_FILE, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in CALENDAR_COLUMNS:
            if col not in header:
                raise SchemaError(f"calendar CSV is missing column '{col}'")
        for row_num, row in enumerate(reader, start=2):
            day = _parse(row_num, "day", row["day"], int)
            surgeon = row["surgeon_id"]
            surgeons.add(surgeon)
            h = _parse(row_num, "hours", row["hours"], float)
            if h:
                hours[(day, surgeon)] = h
            if _parse(row_num, "par_day", row["par_day"], bool):
                par_day[(day, surgeon)] = True

    calendar = SurgeonCalendar(hours, par_day, tuple(sorted(surgeons)))
    return Instance(horizon=horizon, patients=tuple(patients), calendar=calendar,
                    cost_params=cost_params)


def params_to_dict(params: GeneratorParams) -> dict:
    return asdict(params)
