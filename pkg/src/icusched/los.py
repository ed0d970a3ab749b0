"""Length-of-stay knowledge: relative prediction errors, belief states,
standard and conservative sampling, conditioning on elapsed stay, and
empirical error quantiles.

The central object is the empirical multiset S of relative errors
r = realized LOS / predicted LOS, pooled across patients. A patient's LOS is
modeled as round(v * R) with R drawn from S; conservative sampling clamps R
up to 1 so that only under-prediction risk remains.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, Union

import numpy as np

# ratios are undefined for zero realized LOS; the 0-1 day bucket enters S as
# half a day so the multiset stays positive
ZERO_LOS_FLOOR = 0.5


class LosError(Exception):
    pass


def round_half_away(x: float) -> int:
    """round() with halves away from zero, applied to every v*r product."""
    if x >= 0:
        return int(math.floor(x + 0.5))
    return -int(math.floor(-x + 0.5))


@dataclass(frozen=True)
class ErrorDistribution:
    """Empirical multiset of positive relative errors, stored sorted."""

    samples: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.samples:
            raise LosError("error distribution needs at least one sample")
        if any(r <= 0 for r in self.samples):
            raise LosError("relative errors must be positive")
        object.__setattr__(self, "samples", tuple(sorted(self.samples)))

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def max_error(self) -> float:
        return self.samples[-1]

    def draw(self, rng: np.random.Generator) -> float:
        """Uniform draw over the multiset (each historical error equally likely)."""
        return self.from_uniform(float(rng.random()))

    def from_uniform(self, u: float) -> float:
        """Map one uniform(0,1) draw to a sample; shared draws give common
        random numbers across sampling modes."""
        idx = min(int(u * len(self.samples)), len(self.samples) - 1)
        return self.samples[idx]


def fit_error_distribution(
    pairs: Iterable[tuple[float, float]],
) -> ErrorDistribution:
    """Build S from (realized LOS, predicted LOS) pairs."""
    ratios = []
    for true_los, predicted in pairs:
        if predicted <= 0:
            raise LosError(f"predicted LOS must be positive, got {predicted}")
        if true_los < 0:
            raise LosError(f"realized LOS must be nonnegative, got {true_los}")
        numerator = true_los if true_los > 0 else ZERO_LOS_FLOOR
        ratios.append(numerator / predicted)
    if not ratios:
        raise LosError("cannot fit an error distribution from no pairs")
    return ErrorDistribution(tuple(ratios))


def error_quantile(dist: ErrorDistribution, q: float) -> float:
    """Empirical quantile, lower-interpolation convention: the smallest
    sample r whose cumulative fraction reaches q."""
    if not 0.0 < q < 1.0:
        raise LosError(f"quantile level must be in (0, 1), got {q}")
    n = len(dist.samples)
    k = math.ceil(q * n - 1e-9)
    return dist.samples[max(k - 1, 0)]


@dataclass(frozen=True)
class Fixed:
    """LOS known exactly (realized, or supplied as certain)."""

    los: int

    def __post_init__(self) -> None:
        if self.los < 0:
            raise LosError("fixed LOS must be nonnegative")


@dataclass(frozen=True)
class Predicted:
    """LOS modeled as round(v * R), R ~ S."""

    v: float
    dist: ErrorDistribution

    def __post_init__(self) -> None:
        if self.v <= 0:
            raise LosError("point prediction must be positive")


@dataclass(frozen=True)
class Conditioned:
    """Predicted belief conditioned on having stayed at least m days;
    ``dist`` holds only the surviving error samples."""

    v: float
    dist: ErrorDistribution
    m: int

    def __post_init__(self) -> None:
        if self.v <= 0:
            raise LosError("point prediction must be positive")
        if self.m < 1:
            raise LosError("elapsed stay must be at least one day")


LOSBelief = Union[Fixed, Predicted, Conditioned]


def sample_standard(belief: LOSBelief, rng: np.random.Generator) -> int:
    if isinstance(belief, Fixed):
        return belief.los
    return round_half_away(belief.v * belief.dist.draw(rng))


def sample_conservative(belief: LOSBelief, rng: np.random.Generator) -> int:
    if isinstance(belief, Fixed):
        return belief.los
    return round_half_away(belief.v * max(belief.dist.draw(rng), 1.0))


def sample_from_uniform(belief: LOSBelief, u: float, conservative: bool) -> int:
    """Sampling from a pre-drawn uniform, used for common random numbers."""
    if isinstance(belief, Fixed):
        return belief.los
    r = belief.dist.from_uniform(u)
    if conservative:
        r = max(r, 1.0)
    return round_half_away(belief.v * r)


def condition_on_stay(belief: LOSBelief, m: int) -> Conditioned:
    """Restrict a belief to LOS realizations of at least ``m`` days.

    If no historical error is large enough, the maximal error samples are
    retained so the belief stays usable; the resulting support then lies
    below m (documented fallback for a prospective system).
    """
    if isinstance(belief, Fixed):
        raise LosError("cannot condition a realized LOS")
    if m < 1:
        raise LosError("elapsed stay must be at least one day")
    if isinstance(belief, Conditioned) and m <= belief.m:
        return belief
    surviving = tuple(
        r for r in belief.dist.samples if round_half_away(belief.v * r) >= m
    )
    if not surviving:
        top = belief.dist.max_error
        surviving = tuple(r for r in belief.dist.samples if r == top)
    return Conditioned(belief.v, ErrorDistribution(surviving), m)


def belief_support(belief: LOSBelief) -> tuple[int, ...]:
    """Distinct LOS values the belief can produce under standard sampling."""
    if isinstance(belief, Fixed):
        return (belief.los,)
    return tuple(sorted({round_half_away(belief.v * r) for r in belief.dist.samples}))


def baseline_predictor(train: Sequence) -> Callable[[object], float]:
    """Per-procedure-group geometric mean of realized LOS (floored at 0.5),
    with the global geometric mean as fallback for unseen groups.

    A deliberately simple stand-in for an external LOS prediction model;
    accepts any objects with ``procedure_type`` and ``true_los`` attributes.
    """
    if not train:
        raise LosError("baseline predictor needs a nonempty training list")

    def _log(los: int) -> float:
        return math.log(max(float(los), ZERO_LOS_FLOOR))

    by_group: dict[str, list[float]] = {}
    for p in train:
        by_group.setdefault(p.procedure_type, []).append(_log(p.true_los))
    group_mean = {g: math.exp(sum(v) / len(v)) for g, v in by_group.items()}
    all_logs = [x for v in by_group.values() for x in v]
    global_mean = math.exp(sum(all_logs) / len(all_logs))

    def predict(patient) -> float:
        return group_mean.get(patient.procedure_type, global_mean)

    return predict
