"""Primal-dual interior-point solver for linear + rotated-SOC programs.

Solves the continuous relaxation of a :class:`~resctl.conic.ConicProgram`
(binaries box-relaxed or substituted out) via a homogeneous self-dual
embedding with Nesterov-Todd scaling and Mehrotra predictor-corrector steps,
in the style of ECOS / CVXOPT's conelp.  The homogeneous embedding yields
clean infeasibility certificates for the branch-and-bound pruning logic.

Internal standard form (minimization):

    minimize    c'x
    subject to  A x = b
                G x + s = h,   s in K = R+^p_lin  x  Q^3 x ... x Q^3

Each rotated cone ``l*delta >= P**2`` of the source program is mapped to the
standard second-order cone via ``(l+delta, l-delta, 2P) in Q^3``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .conic import ConicProgram

DEFAULT_FEAS_TOL = 1e-8
DEFAULT_GAP_TOL = 1e-8
MAX_ITER = 100
STEP_FRAC = 0.99
REG_EPS = 1e-9
DENSE_LIMIT = 360  # KKT dimension below which the dense factorization is used

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical-failure"


@dataclass(frozen=True)
class Tolerances:
    feas: float = DEFAULT_FEAS_TOL
    gap: float = DEFAULT_GAP_TOL
    max_iter: int = MAX_ITER


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray | None                 # full-space primal values
    objective: float | None              # maximize-sense, includes constants
    dual_bound: float | None             # certified upper bound (maximize sense)
    eq_duals: np.ndarray | None
    ineq_duals: np.ndarray | None
    residuals: dict = field(default_factory=dict)
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


class _Cones:
    """Workspace for the symmetric cone K = R+^p_lin x (Q^3)^n_soc."""

    def __init__(self, p_lin: int, n_soc: int):
        self.p_lin = p_lin
        self.n_soc = n_soc
        self.dim = p_lin + 3 * n_soc
        self.degree = p_lin + n_soc
        # index helpers for the SOC heads/tails
        self.h0 = p_lin + 3 * np.arange(n_soc)

    def identity(self) -> np.ndarray:
        e = np.zeros(self.dim)
        e[: self.p_lin] = 1.0
        e[self.h0] = 1.0
        return e

    def inside(self, u: np.ndarray, margin: float = 0.0) -> bool:
        if self.p_lin and np.min(u[: self.p_lin]) <= margin:
            return False
        for k in range(self.n_soc):
            o = self.p_lin + 3 * k
            if u[o] <= margin or u[o] ** 2 - u[o + 1] ** 2 - u[o + 2] ** 2 <= margin:
                return False
        return True

    def product(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Jordan product u o v."""
        out = np.empty(self.dim)
        out[: self.p_lin] = u[: self.p_lin] * v[: self.p_lin]
        for k in range(self.n_soc):
            o = self.p_lin + 3 * k
            u0, u1, u2 = u[o], u[o + 1], u[o + 2]
            v0, v1, v2 = v[o], v[o + 1], v[o + 2]
            out[o] = u0 * v0 + u1 * v1 + u2 * v2
            out[o + 1] = u0 * v1 + v0 * u1
            out[o + 2] = u0 * v2 + v0 * u2
        return out

    def solve_product(self, lam: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Solve lam o x = d for x (lam strictly interior)."""
        out = np.empty(self.dim)
        out[: self.p_lin] = d[: self.p_lin] / lam[: self.p_lin]
        for k in range(self.n_soc):
            o = self.p_lin + 3 * k
            l0, l1, l2 = lam[o], lam[o + 1], lam[o + 2]
            det = l0 * l0 - l1 * l1 - l2 * l2
            x0 = (l0 * d[o] - l1 * d[o + 1] - l2 * d[o + 2]) / det
            out[o] = x0
            out[o + 1] = (d[o + 1] - x0 * l1) / l0
            out[o + 2] = (d[o + 2] - x0 * l2) / l0
        return out

    def step_max(self, u: np.ndarray, du: np.ndarray) -> float:
        """Largest step t with u + a*du in K for all a in [0, t]."""
        t = np.inf
        if self.p_lin:
            neg = du[: self.p_lin] < 0
            if np.any(neg):
                t = float(np.min(-u[: self.p_lin][neg] / du[: self.p_lin][neg]))
        for k in range(self.n_soc):
            o = self.p_lin + 3 * k
            u0 = u[o]
            d0 = du[o]
            a = d0 * d0 - du[o + 1] ** 2 - du[o + 2] ** 2
            b = 2.0 * (u0 * d0 - u[o + 1] * du[o + 1] - u[o + 2] * du[o + 2])
            c = u0 * u0 - u[o + 1] ** 2 - u[o + 2] ** 2
            root = _smallest_pos_root(a, b, c)
            if d0 < 0:
                root = min(root, -u0 / d0)
            t = min(t, root)
        return t

    def nt_scaling(self, s: np.ndarray, z: np.ndarray) -> "_NTScaling":
        return _NTScaling(self, s, z)


def _smallest_pos_root(a: float, b: float, c: float) -> float:
    """Smallest positive root of a*t^2 + b*t + c (c > 0), +inf if none."""
    if abs(a) < 1e-300:
        if b < 0:
            return -c / b
        return np.inf
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return np.inf if a > 0 else -b / (2.0 * a)
    sq = np.sqrt(disc)
    if a > 0:
        r = (-b - sq) / (2.0 * a)
        return r if r > 0 else np.inf
    # a < 0: parabola opens down; the larger root is the first crossing
    r1 = (-b + sq) / (2.0 * a)
    r2 = (-b - sq) / (2.0 * a)
    lo, hi = min(r1, r2), max(r1, r2)
    if lo > 0:
        return lo
    return hi if hi > 0 else np.inf


class _NTScaling:
    """Nesterov-Todd scaling W with lam = W z = W^{-T} s."""

    def __init__(self, cones: _Cones, s: np.ndarray, z: np.ndarray):
        self.cones = cones
        p = cones.p_lin
        self.w_lin = np.sqrt(s[:p] / z[:p]) if p else np.zeros(0)
        self.soc_eta = np.empty(cones.n_soc)
        self.soc_wbar = np.empty((cones.n_soc, 3))  # NT point, w'Jw = 1
        self.soc_v = np.empty((cones.n_soc, 3))     # its Jordan square root
        for k in range(cones.n_soc):
            o = p + 3 * k
            sk = s[o:o + 3]
            zk = z[o:o + 3]
            rs = sk[0] ** 2 - sk[1] ** 2 - sk[2] ** 2
            rz = zk[0] ** 2 - zk[1] ** 2 - zk[2] ** 2
            if rs <= 0 or rz <= 0:
                raise FloatingPointError("NT scaling breakdown: iterate left the cone")
            aa, bb = np.sqrt(rs), np.sqrt(rz)
            sb = sk / aa
            zb = zk / bb
            gamma = np.sqrt((1.0 + sb @ zb) / 2.0)
            wbar = np.empty(3)
            wbar[0] = (sb[0] + zb[0]) / (2.0 * gamma)
            wbar[1] = (sb[1] - zb[1]) / (2.0 * gamma)
            wbar[2] = (sb[2] - zb[2]) / (2.0 * gamma)
            self.soc_wbar[k] = wbar
            self.soc_v[k] = (wbar + np.array([1.0, 0.0, 0.0])) / np.sqrt(2.0 * (1.0 + wbar[0]))
            self.soc_eta[k] = (rs / rz) ** 0.25
        self.lam = self.apply(z)

    def apply(self, u: np.ndarray) -> np.ndarray:
        """W u with W = eta*(2vv' - J), v the square-root NT point (symmetric)."""
        out = np.empty(self.cones.dim)
        p = self.cones.p_lin
        out[:p] = self.w_lin * u[:p]
        for k in range(self.cones.n_soc):
            o = p + 3 * k
            v = self.soc_v[k]
            uk = u[o:o + 3]
            dot = v @ uk
            out[o] = self.soc_eta[k] * (2.0 * v[0] * dot - uk[0])
            out[o + 1] = self.soc_eta[k] * (2.0 * v[1] * dot + uk[1])
            out[o + 2] = self.soc_eta[k] * (2.0 * v[2] * dot + uk[2])
        return out

    def apply_inv(self, u: np.ndarray) -> np.ndarray:
        """W^{-1} u = (1/eta) (2 (Jv)(Jv)' - J) u."""
        out = np.empty(self.cones.dim)
        p = self.cones.p_lin
        out[:p] = u[:p] / self.w_lin
        for k in range(self.cones.n_soc):
            o = p + 3 * k
            v = self.soc_v[k]
            uk = u[o:o + 3]
            dot = v[0] * uk[0] - v[1] * uk[1] - v[2] * uk[2]
            out[o] = (2.0 * v[0] * dot - uk[0]) / self.soc_eta[k]
            out[o + 1] = (-2.0 * v[1] * dot + uk[1]) / self.soc_eta[k]
            out[o + 2] = (-2.0 * v[2] * dot + uk[2]) / self.soc_eta[k]
        return out

    def w2_blocks(self) -> tuple[np.ndarray, np.ndarray]:
        """(diagonal of W'W on the linear part, 3x3 W'W blocks per cone).

        W^2 equals the quadratic representation eta^2 * (2 wbar wbar' - J).
        """
        p = self.cones.p_lin
        lin = self.w_lin ** 2
        blocks = np.empty((self.cones.n_soc, 3, 3))
        J = np.diag([1.0, -1.0, -1.0])
        for k in range(self.cones.n_soc):
            wb = self.soc_wbar[k]
            blocks[k] = (self.soc_eta[k] ** 2) * (2.0 * np.outer(wb, wb) - J)
        return lin, blocks


@dataclass
class _StandardForm:
    """Reduced minimization problem after substituting fixed variables."""

    n: int
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    cones: _Cones
    free_idx: np.ndarray           # program variable index per reduced column
    x_fixed: np.ndarray            # full-space vector with fixed values, 0 elsewhere
    shift: float                   # objective constant (max sense)
    eq_keep: np.ndarray            # original eq-row index per reduced row
    ineq_keep: np.ndarray          # original ineq-row index per reduced linear row
    n_bound_rows: int


def _reduce(prog: ConicProgram, fixings: Mapping[int, float], feas: float) -> _StandardForm | str:
    """Build the reduced standard form; returns INFEASIBLE on fixed-row conflict."""
    n_all = prog.num_vars
    fixed = np.zeros(n_all, dtype=bool)
    xfix = np.zeros(n_all)
    for i, v in fixings.items():
        fixed[i] = True
        xfix[i] = v
    free_idx = np.flatnonzero(~fixed)
    pos = -np.ones(n_all, dtype=int)
    pos[free_idx] = np.arange(len(free_idx))

    c_min = np.zeros(len(free_idx))
    c_min[:] = -prog.c[free_idx]
    shift = prog.c0 + float(prog.c[fixed] @ xfix[fixed]) if fixed.any() else prog.c0

    scale = 1.0 + float(np.max(np.abs(xfix))) if fixed.any() else 1.0

    a_data: list[tuple[int, int, float]] = []
    b_eff: list[float] = []
    eq_keep: list[int] = []
    for k, row in enumerate(prog.eq_rows):
        rhs = row.rhs
        entries = []
        for i, v in zip(row.idx, row.coef):
            if fixed[i]:
                rhs -= v * xfix[i]
            else:
                entries.append((pos[i], v))
        if entries:
            r = len(b_eff)
            b_eff.append(rhs)
            eq_keep.append(k)
            a_data.extend((r, ci, v) for ci, v in entries)
        elif abs(rhs) > feas * scale:
            return INFEASIBLE

    g_data: list[tuple[int, int, float]] = []
    h_eff: list[float] = []
    ineq_keep: list[int] = []
    for k, row in enumerate(prog.ineq_rows):
        rhs = row.rhs
        entries = []
        for i, v in zip(row.idx, row.coef):
            if fixed[i]:
                rhs -= v * xfix[i]
            else:
                entries.append((pos[i], v))
        if entries:
            r = len(h_eff)
            h_eff.append(rhs)
            ineq_keep.append(k)
            g_data.extend((r, ci, v) for ci, v in entries)
        elif rhs < -feas * scale:
            return INFEASIBLE

    # finite bounds of the free variables become inequality rows
    n_lin_rows = len(h_eff)
    for ci, i in enumerate(free_idx):
        if np.isfinite(prog.lb[i]):
            g_data.append((len(h_eff), ci, -1.0))
            h_eff.append(-prog.lb[i])
        if np.isfinite(prog.ub[i]):
            g_data.append((len(h_eff), ci, 1.0))
            h_eff.append(prog.ub[i])
    n_bound_rows = len(h_eff) - n_lin_rows

    # rotated cones -> standard SOC rows (l+d, l-d, 2P), h = 0
    for cone in prog.cones:
        if fixed[cone.l] or fixed[cone.delta] or fixed[cone.p]:
            raise ValueError("cone variables must remain free")
        r = len(h_eff)
        l, d, p = pos[cone.l], pos[cone.delta], pos[cone.p]
        g_data.extend([(r, l, -1.0), (r, d, -1.0),
                       (r + 1, l, -1.0), (r + 1, d, 1.0),
                       (r + 2, p, -2.0)])
        h_eff.extend([0.0, 0.0, 0.0])

    nf = len(free_idx)
    A = _coo(a_data, len(b_eff), nf)
    G = _coo(g_data, len(h_eff), nf)
    cones = _Cones(p_lin=n_lin_rows + n_bound_rows, n_soc=len(prog.cones))
    return _StandardForm(
        n=nf, c=c_min, A=A, b=np.asarray(b_eff), G=G, h=np.asarray(h_eff),
        cones=cones, free_idx=free_idx, x_fixed=xfix, shift=shift,
        eq_keep=np.asarray(eq_keep, dtype=int),
        ineq_keep=np.asarray(ineq_keep, dtype=int),
        n_bound_rows=n_bound_rows,
    )


def _coo(data: list[tuple[int, int, float]], m: int, n: int) -> sp.csr_matrix:
    if not data:
        return sp.csr_matrix((m, n))
    r, c, v = zip(*data)
    return sp.csr_matrix((v, (r, c)), shape=(m, n))


class _KKT:
    """Factorization of [[eps, A', G'], [A, -eps, 0], [G, 0, -(W'W+eps)]]."""

    def __init__(self, sf: _StandardForm):
        self.sf = sf
        n, m, p = sf.n, sf.A.shape[0], sf.G.shape[0]
        self.n, self.m, self.p = n, m, p
        self.N = n + m + p
        A = sf.A.tocoo()
        G = sf.G.tocoo()
        rows = [A.row + n, A.col, G.row + n + m, G.col,
                np.arange(n), np.arange(n, n + m)]
        cols = [A.col, A.row + n, G.col, G.row + n + m,
                np.arange(n), np.arange(n, n + m)]
        base_vals = [A.data, A.data, G.data, G.data,
                     np.full(n, REG_EPS), np.full(m, -REG_EPS)]
        self._n_base = sum(len(v) for v in base_vals)
        # W'W slots: diagonal for linear rows, dense 3x3 per cone
        p_lin = sf.cones.p_lin
        wr = [np.arange(n + m, n + m + p_lin)]
        wc = [np.arange(n + m, n + m + p_lin)]
        for k in range(sf.cones.n_soc):
            o = n + m + p_lin + 3 * k
            rr, cc = np.meshgrid(np.arange(o, o + 3), np.arange(o, o + 3), indexing="ij")
            wr.append(rr.ravel())
            wc.append(cc.ravel())
        self.rows = np.concatenate(rows + wr).astype(np.int32)
        self.cols = np.concatenate(cols + wc).astype(np.int32)
        self.vals = np.concatenate(base_vals + [np.zeros(p_lin + 9 * sf.cones.n_soc)])
        self.dense = self.N <= DENSE_LIMIT
        self._factor = None
        self._dense_k = np.zeros((self.N, self.N)) if self.dense else None

    def update(self, scaling: _NTScaling) -> None:
        lin, blocks = scaling.w2_blocks()
        w_vals = np.concatenate([-(lin + REG_EPS)] + [-(blocks[k] + REG_EPS * np.eye(3)).ravel()
                                                      for k in range(len(blocks))]) \
            if len(blocks) else -(lin + REG_EPS)
        self.vals[self._n_base:] = w_vals
        if self.dense:
            K = self._dense_k
            K[:] = 0.0
            np.add.at(K, (self.rows, self.cols), self.vals)
            self._factor = sla.lu_factor(K, check_finite=False)
        else:
            K = sp.csc_matrix((self.vals, (self.rows, self.cols)), shape=(self.N, self.N))
            self._factor = spla.splu(K, permc_spec="COLAMD",
                                     options={"SymmetricMode": True})
        # unregularized operator for iterative refinement
        self._w_lin = lin
        self._w_blocks = blocks

    def _apply_unreg(self, v: np.ndarray) -> np.ndarray:
        n, m, p = self.n, self.m, self.p
        sf = self.sf
        vx, vy, vz = v[:n], v[n:n + m], v[n + m:]
        out = np.empty_like(v)
        out[:n] = sf.A.T @ vy + sf.G.T @ vz
        out[n:n + m] = sf.A @ vx
        wz = np.empty(p)
        p_lin = sf.cones.p_lin
        wz[:p_lin] = self._w_lin * vz[:p_lin]
        for k in range(sf.cones.n_soc):
            o = p_lin + 3 * k
            wz[o:o + 3] = self._w_blocks[k] @ vz[o:o + 3]
        out[n + m:] = sf.G @ vx - wz
        return out

    def solve(self, rhs: np.ndarray, refine: int = 1) -> np.ndarray:
        if self.dense:
            x = sla.lu_solve(self._factor, rhs, check_finite=False)
        else:
            x = self._factor.solve(rhs)
        for _ in range(refine):
            r = rhs - self._apply_unreg(x)
            if self.dense:
                x = x + sla.lu_solve(self._factor, r, check_finite=False)
            else:
                x = x + self._factor.solve(r)
        return x


def solve_relaxation(
    prog: ConicProgram,
    fixings: Mapping[int, float] | None = None,
    tolerances: Tolerances | None = None,
    hint: np.ndarray | None = None,
) -> ConicSolution:
    """Solve the continuous relaxation with the given binaries substituted.

    Free binaries are box-relaxed through their [0, 1] bounds.  Deterministic
    for identical inputs.  ``hint`` (a full-space primal point) only seeds the
    starting iterate; correctness never depends on it.
    """
    tol = tolerances or Tolerances()
    fixings = dict(fixings or {})
    sf = _reduce(prog, fixings, tol.feas)
    if sf == INFEASIBLE:
        return ConicSolution(INFEASIBLE, None, None, None, None, None,
                            residuals={"reason": "fixed-variable conflict"})

    if sf.n == 0:
        x = sf.x_fixed.copy()
        viol = prog.feasibility_violation(x)
        if viol > tol.feas * (1.0 + float(np.max(np.abs(x), initial=0.0))):
            return ConicSolution(INFEASIBLE, None, None, None, None, None,
                                residuals={"violation": viol})
        obj = prog.objective_value(x)
        return ConicSolution(OPTIMAL, x, obj, obj,
                            np.zeros(len(prog.eq_rows)), np.zeros(len(prog.ineq_rows)))

    if sf.G.shape[0] == 0 and sf.A.shape[0] == 0:
        return _solve_box_only(prog, sf, tol)

    return _ipm(prog, sf, tol, hint)


def _solve_box_only(prog: ConicProgram, sf: _StandardForm, tol: Tolerances) -> ConicSolution:
    # no rows at all: maximize a linear function over nothing (all bounds were
    # converted to rows, so this only happens with fully unbounded variables)
    x_red = np.zeros(sf.n)
    if np.any(sf.c != 0.0):
        return ConicSolution(UNBOUNDED, None, None, None, None, None)
    x = sf.x_fixed.copy()
    x[sf.free_idx] = x_red
    obj = prog.objective_value(x)
    return ConicSolution(OPTIMAL, x, obj, obj,
                        np.zeros(len(prog.eq_rows)), np.zeros(len(prog.ineq_rows)))


def _ipm(prog: ConicProgram, sf: _StandardForm, tol: Tolerances,
         hint: np.ndarray | None) -> ConicSolution:
    cones = sf.cones
    n, m, p = sf.n, sf.A.shape[0], sf.G.shape[0]
    c, A, b, G, h = sf.c, sf.A, sf.b, sf.G, sf.h
    kkt = _KKT(sf)
    e = cones.identity()
    deg = cones.degree + 1

    norm_b = max(1.0, float(np.linalg.norm(b))) if m else 1.0
    norm_h = max(1.0, float(np.linalg.norm(h)))
    norm_c = max(1.0, float(np.linalg.norm(c)))

    # --- initialization (ECOS style): one solve with W = I -------------------
    unit = _NTScaling.__new__(_NTScaling)
    unit.cones = cones
    unit.w_lin = np.ones(cones.p_lin)
    unit.soc_eta = np.ones(cones.n_soc)
    unit.soc_wbar = np.tile(np.array([1.0, 0.0, 0.0]), (cones.n_soc, 1))
    unit.soc_v = unit.soc_wbar.copy()
    unit.lam = e.copy()
    try:
        kkt.update(unit)
        r1 = kkt.solve(np.concatenate([np.zeros(n), b, h]))
        x = r1[:n]
        sz = -r1[n + m:]  # = h - Gx
        step = cones.step_max(sz, -e)  # how far -e direction is from the boundary
        s = sz if cones.inside(sz, 0.0) else sz + (1.0 + _neg_depth(cones, sz)) * e
        r2 = kkt.solve(np.concatenate([-c, np.zeros(m), np.zeros(p)]))
        y = r2[n:n + m]
        z0 = r2[n + m:]
        z = z0 if cones.inside(z0, 0.0) else z0 + (1.0 + _neg_depth(cones, z0)) * e
    except (RuntimeError, FloatingPointError, ValueError):
        x = np.zeros(n)
        y = np.zeros(m)
        s = e.copy()
        z = e.copy()
    if hint is not None and len(hint) == prog.num_vars and np.all(np.isfinite(hint)):
        x = np.asarray(hint, dtype=float)[sf.free_idx]
    if not cones.inside(s, 0.0):
        s = e.copy()
    if not cones.inside(z, 0.0):
        z = e.copy()
    tau, kappa = 1.0, 1.0

    best = None
    status = NUMERICAL_FAILURE
    res_info: dict = {}
    it = 0
    for it in range(1, tol.max_iter + 1):
        # residuals of the homogeneous system
        res_dual = A.T @ y + G.T @ z + c * tau          # want 0
        res_peq = A @ x - b * tau
        res_pin = G @ x + s - h * tau
        res_gap = float(c @ x + b @ y + h @ z + kappa)
        mu = (float(s @ z) + tau * kappa) / deg

        # convergence / certificate checks on the scaled iterate
        xc = x / tau
        sc = s / tau
        pres = 0.0
        if m:
            pres = float(np.linalg.norm(A @ xc - b)) / norm_b
        pres = max(pres, float(np.linalg.norm(G @ xc + sc - h)) / norm_h)
        dres = float(np.linalg.norm(A.T @ (y / tau) + G.T @ (z / tau) + c)) / norm_c
        pobj = float(c @ xc)
        dobj = -(float(b @ y) + float(h @ z)) / tau
        absgap = float(s @ z) / tau ** 2
        relgap = absgap / max(1.0, abs(pobj), abs(dobj))
        res_info = {"pres": pres, "dres": dres, "relgap": relgap,
                    "pobj": pobj, "dobj": dobj, "tau": tau, "kappa": kappa}

        if pres <= tol.feas and dres <= tol.feas and relgap <= tol.gap:
            status = OPTIMAL
            best = (x / tau, y / tau, z / tau, s / tau)
            break

        # infeasibility certificates
        by_hz = float(b @ y) + float(h @ z)
        if by_hz < 0.0:
            pinf = float(np.linalg.norm(A.T @ y + G.T @ z)) / (-by_hz)
            if pinf * norm_h <= tol.feas * norm_c * 1e2 and kappa > 1e4 * tau:
                status = INFEASIBLE
                break
        ctx = float(c @ x)
        if ctx < 0.0:
            dinf = max(
                float(np.linalg.norm(A @ x)) if m else 0.0,
                float(np.linalg.norm(G @ x + s)),
            ) / (-ctx)
            if dinf * norm_c <= tol.feas * norm_h * 1e2 and kappa > 1e4 * tau:
                status = UNBOUNDED
                break

        try:
            scaling = cones.nt_scaling(s, z)
            kkt.update(scaling)
            lam = scaling.lam

            u1 = kkt.solve(np.concatenate([-c, b, h]))
            cbh1 = float(c @ u1[:n]) + float(b @ u1[n:n + m]) + float(h @ u1[n + m:])

            def direction(sigma: float, ds_extra: np.ndarray | None, dk_extra: float):
                d_s = -cones.product(lam, lam)
                if ds_extra is not None:
                    d_s = d_s - ds_extra
                if sigma > 0.0:
                    d_s = d_s + sigma * mu * e
                d_k = -tau * kappa + sigma * mu + dk_extra
                fac = 1.0 - sigma
                dbar = cones.solve_product(lam, d_s)
                rhs = np.concatenate([
                    -fac * res_dual,
                    -fac * res_peq,
                    -fac * res_pin - scaling.apply(dbar),
                ])
                u2 = kkt.solve(rhs)
                cbh2 = float(c @ u2[:n]) + float(b @ u2[n:n + m]) + float(h @ u2[n + m:])
                denom = cbh1 - kappa / tau
                dtau = (-fac * res_gap - d_k / tau - cbh2) / denom
                dxyz = u2 + dtau * u1
                dz = dxyz[n + m:]
                ds = scaling.apply(dbar - scaling.apply(dz))
                dk = (d_k - kappa * dtau) / tau
                return dxyz[:n], dxyz[n:n + m], dz, ds, dtau, dk

            # predictor
            dx_a, dy_a, dz_a, ds_a, dt_a, dk_a = direction(0.0, None, 0.0)
            alpha_a = _step_all(cones, s, z, tau, kappa, ds_a, dz_a, dt_a, dk_a)
            mu_a = (float((s + alpha_a * ds_a) @ (z + alpha_a * dz_a))
                    + (tau + alpha_a * dt_a) * (kappa + alpha_a * dk_a)) / deg
            sigma = min(1.0, max(0.0, mu_a / mu)) ** 3

            # corrector
            corr = cones.product(scaling.apply_inv(ds_a), scaling.apply(dz_a))
            dx, dy, dz, ds, dtau, dkap = direction(sigma, corr, -dt_a * dk_a)
            alpha = _step_all(cones, s, z, tau, kappa, ds, dz, dtau, dkap)
        except (RuntimeError, FloatingPointError, ValueError, ZeroDivisionError):
            status = NUMERICAL_FAILURE
            break

        if alpha <= 1e-9:
            status = NUMERICAL_FAILURE
            break
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
        tau += alpha * dtau
        kappa += alpha * dkap
        if tau <= 0 or kappa < 0 or not np.isfinite(tau):
            status = NUMERICAL_FAILURE
            break

    if status == OPTIMAL:
        xs, ys, zs, ss = best
        x_full = sf.x_fixed.copy()
        x_full[sf.free_idx] = xs
        pobj_max = -float(c @ xs) + sf.shift
        dobj_max = float(b @ ys) + float(h @ zs) + sf.shift
        # weak duality: dual bound must not undercut the primal value
        bound = max(pobj_max, dobj_max)
        eq_duals = np.zeros(len(prog.eq_rows))
        ineq_duals = np.zeros(len(prog.ineq_rows))
        if len(sf.eq_keep):
            eq_duals[sf.eq_keep] = ys
        if len(sf.ineq_keep):
            ineq_duals[sf.ineq_keep] = zs[: len(sf.ineq_keep)]
        return ConicSolution(OPTIMAL, x_full, pobj_max, bound, eq_duals, ineq_duals,
                            residuals=res_info, iterations=it)
    if status in (INFEASIBLE, UNBOUNDED):
        return ConicSolution(status, None, None, None, None, None,
                            residuals=res_info, iterations=it)
    return ConicSolution(NUMERICAL_FAILURE, None, None, None, None, None,
                        residuals=res_info, iterations=it)


def _neg_depth(cones: _Cones, u: np.ndarray) -> float:
    """How far u sits outside the cone, measured along the identity direction."""
    depth = 0.0
    if cones.p_lin:
        depth = max(depth, float(-np.min(u[: cones.p_lin])))
    for k in range(cones.n_soc):
        o = cones.p_lin + 3 * k
        tail = np.hypot(u[o + 1], u[o + 2])
        depth = max(depth, tail - u[o])
    return depth


def _step_all(cones, s, z, tau, kappa, ds, dz, dtau, dkap) -> float:
    t = min(cones.step_max(s, ds), cones.step_max(z, dz))
    if dtau < 0:
        t = min(t, -tau / dtau)
    if dkap < 0:
        t = min(t, -kappa / dkap)
    return min(1.0, STEP_FRAC * t)


def warm_hint(solution: ConicSolution) -> np.ndarray | None:
    """Starting-point hint derived from a parent node's solution.

    Returns a strictly usable full-space primal point or None.  The receiving
    solve treats it as advisory only.
    """
    if not solution.ok or solution.x is None:
        return None
    x = np.array(solution.x, dtype=float)
    if not np.all(np.isfinite(x)):
        return None
    return x
