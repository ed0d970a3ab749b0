"""Thin model-building layer over the HiGHS mixed-integer solver.

Models are built incrementally (variables, linear constraints, a minimize
objective) and handed to :func:`solve`, which assembles the sparse matrices
for ``scipy.optimize.milp`` and maps the solver outcome onto
:class:`SolveResult`. HiGHS runs single-threaded here, so repeated solves of
the same model are deterministic.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint
from scipy.optimize import milp as _scipy_milp

DEFAULT_TIME_LIMIT = 600.0
DEFAULT_REL_GAP = 1e-4

# Binary values further than this from {0,1} indicate solver trouble.
INTEGRALITY_TOL = 1e-6


class ModelError(Exception):
    """Raised for malformed models or use of a finalized builder."""


class VarKind(enum.Enum):
    BINARY = "binary"
    CONTINUOUS = "continuous"
    INTEGER = "integer"


@dataclass(frozen=True)
class Var:
    """Handle for a registered variable. Hashable, usable as a dict key."""

    index: int
    name: str
    kind: VarKind

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Var({self.name})"


class Status(enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    TIME_LIMIT = "time_limit"
    ERROR = "error"


@dataclass
class SolveResult:
    status: Status
    objective_value: float | None = None
    gap: float | None = None
    values: np.ndarray | None = None
    message: str = ""
    dual_bound: float | None = None

    @property
    def has_solution(self) -> bool:
        return self.values is not None

    def value(self, var: Var) -> float:
        if self.values is None:
            raise ModelError(f"no solution values available (status {self.status})")
        x = float(self.values[var.index])
        if var.kind is not VarKind.CONTINUOUS:
            # extraction contract: integral variables are returned exactly
            return float(round(x))
        return x


@dataclass
class _Constraint:
    indices: list[int]
    coeffs: list[float]
    lb: float
    ub: float
    name: str | None = None


@dataclass
class ModelBuilder:
    """Incrementally built MILP (minimization)."""

    name: str = "model"
    _vars: list[Var] = field(default_factory=list)
    _names: set[str] = field(default_factory=set)
    _lb: list[float] = field(default_factory=list)
    _ub: list[float] = field(default_factory=list)
    _constraints: list[_Constraint] = field(default_factory=list)
    _obj: dict[int, float] = field(default_factory=dict)
    _obj_const: float = 0.0
    _finalized: bool = False

    # -- variables ---------------------------------------------------------
    def _register(self, name: str, kind: VarKind, lb: float, ub: float) -> Var:
        if self._finalized:
            raise ModelError("cannot add variables to a finalized model")
        if name in self._names:
            raise ModelError(f"duplicate variable name: {name}")
        var = Var(len(self._vars), name, kind)
        self._vars.append(var)
        self._names.add(name)
        self._lb.append(lb)
        self._ub.append(ub)
        return var

    def add_binary(self, name: str, *, fixed: int | None = None) -> Var:
        if fixed is None:
            return self._register(name, VarKind.BINARY, 0.0, 1.0)
        if fixed not in (0, 1):
            raise ModelError(f"binary {name} fixed to {fixed}")
        return self._register(name, VarKind.BINARY, float(fixed), float(fixed))

    def add_continuous(self, name: str, lb: float = 0.0, ub: float = math.inf) -> Var:
        return self._register(name, VarKind.CONTINUOUS, lb, ub)

    def add_integer(self, name: str, lb: float = 0.0, ub: float = math.inf) -> Var:
        return self._register(name, VarKind.INTEGER, lb, ub)

    @property
    def num_vars(self) -> int:
        return len(self._vars)

    @property
    def num_constraints(self) -> int:
        return len(self._constraints)

    # -- constraints / objective -------------------------------------------
    def add_constraint(
        self,
        terms,
        *,
        lb: float = -math.inf,
        ub: float = math.inf,
        name: str | None = None,
    ) -> None:
        """Add lb <= sum(coef * var) <= ub. Duplicate vars are accumulated."""
        if self._finalized:
            raise ModelError("cannot add constraints to a finalized model")
        acc: dict[int, float] = {}
        for var, coef in terms:
            if var.index >= len(self._vars) or self._vars[var.index] is not var:
                raise ModelError(f"unregistered variable in constraint: {var}")
            if coef != 0.0:
                acc[var.index] = acc.get(var.index, 0.0) + float(coef)
        self._constraints.append(
            _Constraint(list(acc.keys()), list(acc.values()), float(lb), float(ub), name)
        )

    def add_objective(self, terms, constant: float = 0.0) -> None:
        """Accumulate minimize-objective terms."""
        if self._finalized:
            raise ModelError("cannot modify the objective of a finalized model")
        for var, coef in terms:
            if var.index >= len(self._vars) or self._vars[var.index] is not var:
                raise ModelError(f"unregistered variable in objective: {var}")
            self._obj[var.index] = self._obj.get(var.index, 0.0) + float(coef)
        self._obj_const += float(constant)

    @property
    def finalized(self) -> bool:
        return self._finalized

    # -- solving -------------------------------------------------------------
    def _assemble(self):
        n = len(self._vars)
        c = np.zeros(n)
        for idx, coef in self._obj.items():
            c[idx] = coef
        integrality = np.array(
            [0 if v.kind is VarKind.CONTINUOUS else 1 for v in self._vars]
        )
        bounds = Bounds(np.array(self._lb), np.array(self._ub))
        if self._constraints:
            rows, cols, data, clb, cub = [], [], [], [], []
            for i, con in enumerate(self._constraints):
                rows.extend([i] * len(con.indices))
                cols.extend(con.indices)
                data.extend(con.coeffs)
                clb.append(con.lb)
                cub.append(con.ub)
            a = sparse.csc_array(
                (data, (rows, cols)), shape=(len(self._constraints), n)
            )
            constraints = LinearConstraint(a, np.array(clb), np.array(cub))
        else:
            constraints = None
        return c, constraints, integrality, bounds

    def solve(
        self,
        time_limit: float = DEFAULT_TIME_LIMIT,
        rel_gap: float = DEFAULT_REL_GAP,
        dump_lp: str | None = None,
    ) -> SolveResult:
        self._finalized = True
        if dump_lp:
            write_lp(self, dump_lp)
        if not self._vars:
            # constant model: trivially optimal
            for con in self._constraints:
                if con.lb > 1e-12 or con.ub < -1e-12:
                    return SolveResult(Status.INFEASIBLE, message="constant constraint violated")
            return SolveResult(
                Status.OPTIMAL, self._obj_const, 0.0, np.zeros(0), "empty model",
                self._obj_const,
            )
        c, constraints, integrality, bounds = self._assemble()
        options = {"time_limit": float(time_limit), "mip_rel_gap": float(rel_gap)}
        try:
            res = _scipy_milp(
                c=c,
                constraints=constraints if constraints is not None else [],
                integrality=integrality,
                bounds=bounds,
                options=options,
            )
        except Exception as exc:  # solver backend failure
            return SolveResult(Status.ERROR, message=f"solver error: {exc}")
        return self._interpret(res)

    def _interpret(self, res) -> SolveResult:
        gap = getattr(res, "mip_gap", None)
        dual = getattr(res, "mip_dual_bound", None)
        if dual is not None:
            dual = float(dual) + self._obj_const
        if res.status == 0:
            values = self._clean_values(res.x)
            objective = float(res.fun) + self._obj_const
            if dual is None:
                dual = objective
            return SolveResult(Status.OPTIMAL, objective, gap, values, res.message, dual)
        if res.status == 1:
            if res.x is not None:
                values = self._clean_values(res.x)
                return SolveResult(
                    Status.TIME_LIMIT,
                    float(res.fun) + self._obj_const,
                    gap,
                    values,
                    res.message,
                    dual,
                )
            return SolveResult(Status.TIME_LIMIT, message=res.message, dual_bound=dual)
        if res.status == 2:
            return SolveResult(Status.INFEASIBLE, message=res.message)
        return SolveResult(Status.ERROR, message=res.message)

    def _clean_values(self, x: np.ndarray) -> np.ndarray:
        values = np.asarray(x, dtype=float).copy()
        for var in self._vars:
            if var.kind is VarKind.CONTINUOUS:
                continue
            rounded = np.round(values[var.index])
            if abs(values[var.index] - rounded) > 1e-4:
                raise ModelError(
                    f"variable {var.name} value {values[var.index]} too far from integral"
                )
            values[var.index] = rounded
        return values


def solve(
    model: ModelBuilder,
    time_limit_seconds: float = DEFAULT_TIME_LIMIT,
    rel_gap: float = DEFAULT_REL_GAP,
) -> SolveResult:
    return model.solve(time_limit=time_limit_seconds, rel_gap=rel_gap)


def write_lp(model: ModelBuilder, path: str) -> None:
    """Write the model in CPLEX LP text format (debugging aid)."""

    def _term(coef: float, name: str) -> str:
        sign = "+" if coef >= 0 else "-"
        return f"{sign} {abs(coef):.12g} {name}"

    lines = ["\\ " + model.name, "Minimize", " obj:"]
    obj_terms = [
        _term(coef, model._vars[idx].name) for idx, coef in sorted(model._obj.items())
    ]
    lines.append("  " + (" ".join(obj_terms) if obj_terms else "0"))
    lines.append("Subject To")
    for i, con in enumerate(model._constraints):
        name = con.name or f"c{i}"
        body = " ".join(
            _term(coef, model._vars[idx].name)
            for idx, coef in sorted(zip(con.indices, con.coeffs))
        )
        if not body:
            body = "0"
        if con.lb == con.ub:
            lines.append(f" {name}: {body} = {con.lb:.12g}")
        else:
            if con.ub != math.inf:
                lines.append(f" {name}: {body} <= {con.ub:.12g}")
            if con.lb != -math.inf:
                lines.append(f" {name}_lo: {body} >= {con.lb:.12g}")
    lines.append("Bounds")
    for var, lb, ub in zip(model._vars, model._lb, model._ub):
        if var.kind is VarKind.BINARY and (lb, ub) == (0.0, 1.0):
            continue
        lo = "-inf" if lb == -math.inf else f"{lb:.12g}"
        hi = "+inf" if ub == math.inf else f"{ub:.12g}"
        lines.append(f" {lo} <= {var.name} <= {hi}")
    binaries = [v.name for v in model._vars if v.kind is VarKind.BINARY]
    if binaries:
        lines.append("Binary")
        lines.extend(" " + n for n in binaries)
    generals = [v.name for v in model._vars if v.kind is VarKind.INTEGER]
    if generals:
        lines.append("General")
        lines.extend(" " + n for n in generals)
    lines.append("End")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
