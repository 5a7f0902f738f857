"""Conic program container shared by the formulation and the solvers.

A program holds continuous/binary variables with bounds, sparse linear
equality and inequality rows, rotated second-order-cone constraints of the
form ``l * delta >= P**2`` (each referencing exactly three variables), and a
linear objective.  Programs are immutable once built; transformations return
new programs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

INF = float("inf")


@dataclass(frozen=True)
class LinearRow:
    idx: tuple[int, ...]
    coef: tuple[float, ...]
    rhs: float
    tag: str = ""

    def value(self, x: np.ndarray) -> float:
        return float(sum(c * x[i] for i, c in zip(self.idx, self.coef)))


@dataclass(frozen=True)
class RotatedCone:
    """x[l] * x[delta] >= x[p]**2 with x[l], x[delta] >= 0."""

    l: int
    delta: int
    p: int
    tag: str = ""


class VariableMap:
    """Total bidirectional map between variable indices and names."""

    def __init__(self) -> None:
        self._by_name: dict[str, int] = {}
        self._by_index: list[str] = []

    def add(self, name: str) -> int:
        if name in self._by_name:
            raise ValueError(f"duplicate variable name {name!r}")
        idx = len(self._by_index)
        self._by_name[name] = idx
        self._by_index.append(name)
        return idx

    def index(self, name: str) -> int:
        return self._by_name[name]

    def name(self, idx: int) -> str:
        return self._by_index[idx]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __len__(self) -> int:
        return len(self._by_index)

    def names(self) -> list[str]:
        return list(self._by_index)


@dataclass(frozen=True)
class ConicProgram:
    num_vars: int
    lb: np.ndarray
    ub: np.ndarray
    binary: tuple[int, ...]                 # indices of binary variables
    eq_rows: tuple[LinearRow, ...]
    ineq_rows: tuple[LinearRow, ...]        # lhs <= rhs
    cones: tuple[RotatedCone, ...]
    c: np.ndarray                           # objective coefficients (maximize)
    c0: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def stats(self) -> dict:
        return {
            "vars": self.num_vars,
            "binaries": len(self.binary),
            "eq_rows": len(self.eq_rows),
            "ineq_rows": len(self.ineq_rows),
            "cones": len(self.cones),
        }

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.c @ x) + self.c0

    def eq_matrix(self) -> tuple[sp.csr_matrix, np.ndarray]:
        return _rows_to_csr(self.eq_rows, self.num_vars)

    def ineq_matrix(self) -> tuple[sp.csr_matrix, np.ndarray]:
        return _rows_to_csr(self.ineq_rows, self.num_vars)

    def feasibility_violation(self, x: np.ndarray) -> float:
        """Largest constraint violation of ``x`` (bounds, rows, cones)."""
        v = 0.0
        lo = np.where(np.isfinite(self.lb), self.lb - x, -INF)
        hi = np.where(np.isfinite(self.ub), x - self.ub, -INF)
        if len(x):
            v = max(v, float(np.max(lo)), float(np.max(hi)))
        for row in self.eq_rows:
            v = max(v, abs(row.value(x) - row.rhs))
        for row in self.ineq_rows:
            v = max(v, row.value(x) - row.rhs)
        for cone in self.cones:
            v = max(v, x[cone.p] ** 2 - x[cone.l] * x[cone.delta])
            v = max(v, -x[cone.l], -x[cone.delta])
        return v

    def dump(self, varmap: VariableMap | None = None) -> str:
        """Plain-text rendering of the program for external cross-checking."""
        out = ["# resctl conic program v1", f"vars {self.num_vars}"]
        for i in range(self.num_vars):
            name = varmap.name(i) if varmap is not None else f"x{i}"
            kind = " binary" if i in set(self.binary) else ""
            out.append(f"var {i} {name} [{self.lb[i]:g}, {self.ub[i]:g}]{kind}")
        terms = " ".join(f"{i}:{v:.17g}" for i, v in enumerate(self.c) if v != 0.0)
        out.append(f"maximize {self.c0:.17g} + {terms}")
        for row in self.eq_rows:
            lhs = " ".join(f"{i}:{v:.17g}" for i, v in zip(row.idx, row.coef))
            out.append(f"eq {lhs} == {row.rhs:.17g}")
        for row in self.ineq_rows:
            lhs = " ".join(f"{i}:{v:.17g}" for i, v in zip(row.idx, row.coef))
            out.append(f"ineq {lhs} <= {row.rhs:.17g}")
        for cone in self.cones:
            out.append(f"rcone l={cone.l} delta={cone.delta} p={cone.p}")
        return "\n".join(out) + "\n"


def _rows_to_csr(rows: Iterable[LinearRow], n: int) -> tuple[sp.csr_matrix, np.ndarray]:
    rows = list(rows)
    data, ri, ci = [], [], []
    rhs = np.zeros(len(rows))
    for k, row in enumerate(rows):
        rhs[k] = row.rhs
        for i, v in zip(row.idx, row.coef):
            ri.append(k)
            ci.append(i)
            data.append(v)
    mat = sp.csr_matrix((data, (ri, ci)), shape=(len(rows), n))
    return mat, rhs


class ProgramBuilder:
    def __init__(self) -> None:
        self.varmap = VariableMap()
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._binary: list[int] = []
        self._eq: list[LinearRow] = []
        self._ineq: list[LinearRow] = []
        self._cones: list[RotatedCone] = []
        self._obj: dict[int, float] = {}
        self._c0 = 0.0
        self.meta: dict = {}

    def add_var(self, name: str, lb: float = -INF, ub: float = INF, binary: bool = False) -> int:
        idx = self.varmap.add(name)
        self._lb.append(lb)
        self._ub.append(ub)
        if binary:
            self._binary.append(idx)
        return idx

    def set_bounds(self, idx: int, lb: float, ub: float) -> None:
        self._lb[idx] = lb
        self._ub[idx] = ub

    def add_eq(self, terms: Mapping[int, float], rhs: float, tag: str = "") -> int:
        self._eq.append(_make_row(terms, rhs, tag))
        return len(self._eq) - 1

    def add_ineq(self, terms: Mapping[int, float], rhs: float, tag: str = "") -> int:
        self._ineq.append(_make_row(terms, rhs, tag))
        return len(self._ineq) - 1

    def replace_ineq(self, row_id: int, terms: Mapping[int, float], rhs: float, tag: str = "") -> None:
        self._ineq[row_id] = _make_row(terms, rhs, tag)

    def add_cone(self, l: int, delta: int, p: int, tag: str = "") -> int:
        self._cones.append(RotatedCone(l, delta, p, tag))
        return len(self._cones) - 1

    def add_objective_term(self, idx: int, coef: float) -> None:
        self._obj[idx] = self._obj.get(idx, 0.0) + coef

    def add_objective_constant(self, value: float) -> None:
        self._c0 += value

    def build(self) -> ConicProgram:
        n = len(self._lb)
        c = np.zeros(n)
        for i, v in self._obj.items():
            c[i] = v
        return ConicProgram(
            num_vars=n,
            lb=np.asarray(self._lb, dtype=float),
            ub=np.asarray(self._ub, dtype=float),
            binary=tuple(self._binary),
            eq_rows=tuple(self._eq),
            ineq_rows=tuple(self._ineq),
            cones=tuple(self._cones),
            c=c,
            c0=self._c0,
            meta=dict(self.meta),
        )

    @staticmethod
    def from_program(prog: ConicProgram, varmap: VariableMap) -> "ProgramBuilder":
        """Mutable copy of an existing program (used by ``add_slack``)."""
        b = ProgramBuilder()
        for name in varmap.names():
            b.varmap.add(name)
        b._lb = list(prog.lb)
        b._ub = list(prog.ub)
        b._binary = list(prog.binary)
        b._eq = list(prog.eq_rows)
        b._ineq = list(prog.ineq_rows)
        b._cones = list(prog.cones)
        b._obj = {i: float(v) for i, v in enumerate(prog.c) if v != 0.0}
        b._c0 = prog.c0
        b.meta = dict(prog.meta)
        return b


def _make_row(terms: Mapping[int, float], rhs: float, tag: str) -> LinearRow:
    items = [(int(i), float(v)) for i, v in terms.items() if v != 0.0]
    items.sort()
    return LinearRow(
        idx=tuple(i for i, _ in items),
        coef=tuple(v for _, v in items),
        rhs=float(rhs),
        tag=tag,
    )
