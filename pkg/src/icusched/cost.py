"""Convex piecewise-linear ICU overflow cost and its MILP encoding.

With the default coefficients (1, 2, 2, 2, 2) the induced function equals
``u**2`` for integer overflow up to 5 beds and grows linearly (slope 9)
beyond that, penalizing occupancy peaks much harder than spread-out excess.
"""
from __future__ import annotations

from typing import Iterable, Mapping, Sequence

from .domain import OverflowCostParams
from .milp import ModelBuilder, Var

N_PIECES = 5


def overflow_cost(u: int, params: OverflowCostParams | None = None) -> float:
    """Cost of ``u`` elective patients above capacity on one day."""
    if u < 0:
        raise ValueError(f"overflow must be nonnegative, got {u}")
    e = params.coefficients if params is not None else OverflowCostParams().coefficients
    return float(sum(e[m] * max(u - m, 0) for m in range(N_PIECES)))


def marginal_costs(params: OverflowCostParams) -> list[float]:
    """f(u+1) - f(u) for u = 0..N_PIECES-1 (nondecreasing by construction)."""
    e = params.coefficients
    return [float(sum(e[: m + 1])) for m in range(N_PIECES)]


def encode_overflow_cost(
    builder: ModelBuilder,
    census: Mapping[int, tuple[Sequence[tuple[Var, float]], float]],
    params: OverflowCostParams,
    capacity: int,
    label: str = "",
) -> list[tuple[Var, float]]:
    """Attach overflow variables for each day and return the cost terms.

    ``census`` maps a day to a linear expression ``(terms, constant)`` for
    elective occupancy on that day. For each day d and piece m this adds
    ``u[d,m] >= census_d - (capacity + m)`` with ``u >= 0``; minimizing the
    returned objective terms makes each u equal the overflow above
    capacity + m. Pieces that the census can never reach are skipped.
    """
    e = params.coefficients
    cost_terms: list[tuple[Var, float]] = []
    for day in sorted(census):
        terms, const = census[day]
        max_census = const + sum(c for _, c in terms if c > 0)
        pieces = [
            m
            for m in range(N_PIECES)
            if e[m] > 0.0 and max_census > capacity + m + 1e-9
        ]
        if not pieces:
            continue
        if len(pieces) > 1 and len(terms) > 2:
            # aggregate once so each piece row stays two nonzeros wide
            agg = builder.add_continuous(f"n{label}[{day}]", lb=0.0)
            builder.add_constraint(
                list(terms) + [(agg, -1.0)], lb=-const, ub=-const
            )
            terms, const = [(agg, 1.0)], 0.0
        for m in pieces:
            u = builder.add_continuous(f"u{label}[{day},{m + 1}]")
            row = list(terms) + [(u, -1.0)]
            builder.add_constraint(row, ub=capacity + m - const)
            cost_terms.append((u, e[m]))
    return cost_terms


def piecewise_value(terms: Iterable[tuple[Var, float]], result) -> float:
    """Evaluate previously returned cost terms against a solve result."""
    return sum(coef * result.value(var) for var, coef in terms)
