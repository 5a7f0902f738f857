"""Phase-I / Phase-II mixed-integer conic programs in branch-flow form.

The builders encode, per available line, the lifted branch-flow quantities
(directed end powers ``P``, squared current ``l``, gated squared voltages
``delta``) plus the switching layer (``alpha``, parent indicators ``beta``,
load switches ``eta``).  Statically decidable fixings (faulted lines, loads
with no surviving supply path, generator parent directions) are substituted
out at build time rather than left to the solver.
"""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from .conic import ConicProgram, ProgramBuilder, VariableMap
from .network import GENERATOR, LOAD_FIXED, LOAD_NONE, LOAD_VARIABLE, RING, TREE, Network
from .priorities import PriorityScheme

DEFAULT_XI = 1e-5


def xi_upper_bound(net: Network, scheme: PriorityScheme) -> float:
    """Largest xi that cannot corrupt the lexicographic order of Omega_sur.

    The loss term is bounded by the total DC-side generation capacity, so
    xi * sum((1+e_i) pbar_i) must stay below the smallest survivability
    increment, min(kappa) / sum(kappa).
    """
    cap = sum((1.0 + b.loss_rate) * b.p_max for b in net.generator_buses)
    min_step = min(scheme.kappa) / scheme.kappa_total
    if cap <= 0:
        return math.inf
    return min_step / cap


def build_phase1(
    net: Network, scheme: PriorityScheme, xi: float = DEFAULT_XI
) -> tuple[ConicProgram, VariableMap]:
    """Survivability maximization: max Omega_sur - xi * total loss."""
    return _build(net, scheme, xi, eta_fixed=None)


def build_phase2(
    net: Network,
    scheme: PriorityScheme,
    eta_star: Mapping[int, int],
    xi: float = DEFAULT_XI,
) -> tuple[ConicProgram, VariableMap]:
    """Functionality maximization with the load switches frozen to ``eta_star``."""
    for b in net.load_buses:
        if eta_star.get(b.id, 0) and not b.available:
            raise ValueError(f"eta_star switches on load {b.id} but the load is faulted")
    return _build(net, scheme, xi, eta_fixed={b.id: int(bool(eta_star.get(b.id, 0)))
                                              for b in net.load_buses})


def _build(net, scheme, xi, eta_fixed):
    bound = xi_upper_bound(net, scheme)
    if not (0.0 < xi < bound):
        raise ValueError(
            f"xi={xi:g} violates the lexicographic bound (must be in (0, {bound:g}))"
        )

    b = ProgramBuilder()
    vm = b.varmap
    lines = [ln for ln in net.lines if ln.available]
    line_of = {ln.key: ln for ln in lines}

    # loads that can never be served: unavailable, or no available tree line
    avail_tree_lines: dict[int, list] = {bus.id: [] for bus in net.buses}
    for ln in lines:
        if ln.cls == TREE:
            avail_tree_lines[ln.i].append(ln)
            avail_tree_lines[ln.j].append(ln)

    eta_var: dict[int, int] = {}
    eta_const: dict[int, int] = {}
    for bus in net.load_buses:
        forced_off = (not bus.available) or not avail_tree_lines[bus.id]
        if eta_fixed is not None:
            val = eta_fixed[bus.id]
            if val and forced_off and not avail_tree_lines[bus.id]:
                # eta fixed on but no candidate parent: leave it to the solver,
                # which will report the node infeasible through Eq. 4f
                pass
            eta_const[bus.id] = 0 if forced_off and not val else val
        elif forced_off:
            eta_const[bus.id] = 0
        else:
            eta_var[bus.id] = b.add_var(f"eta[{bus.id}]", 0.0, 1.0, binary=True)

    def eta_term(bus_id):
        """(var_idx or None, constant)"""
        if bus_id in eta_var:
            return eta_var[bus_id], 0.0
        return None, float(eta_const.get(bus_id, 0))

    # bus power and voltage variables
    p_var: dict[int, int] = {}
    p_const: dict[int, float] = {}
    v_var: dict[int, int] = {}
    for bus in net.buses:
        v_var[bus.id] = b.add_var(f"v[{bus.id}]", bus.v_min ** 2, bus.v_max ** 2)
        if bus.cls == GENERATOR:
            s = 1.0 if bus.available else 0.0
            if s == 0.0 or not any(ln.available for ln in net.lines_at(bus.id)):
                p_const[bus.id] = 0.0
            else:
                p_var[bus.id] = b.add_var(f"p[{bus.id}]", 0.0, bus.p_max * s)
        elif bus.is_load:
            idx_eta, c_eta = eta_term(bus.id)
            if idx_eta is None and c_eta == 0.0:
                p_const[bus.id] = 0.0
            else:
                p_var[bus.id] = b.add_var(f"p[{bus.id}]", bus.p_min, 0.0)
        else:
            p_const[bus.id] = 0.0

    # line variables (faulted lines are fully eliminated)
    alpha: dict[tuple[int, int], int] = {}
    beta: dict[tuple[int, int], int] = {}   # (child, parent) -> var
    Pdir: dict[tuple[int, int], int] = {}   # (from, other) -> var, both orientations
    lvar: dict[tuple[int, int], int] = {}
    delta: dict[tuple[int, tuple[int, int]], int] = {}
    cls = {bus.id: bus.cls for bus in net.buses}
    for ln in lines:
        i, j = ln.key
        alpha[ln.key] = b.add_var(f"alpha[{i}-{j}]", 0.0, 1.0)
        # beta[i|j]: j is the parent of i; generator buses have no parents and
        # ring buses never have tree parents (fixed-direction eliminations)
        for child, parent in ((i, j), (j, i)):
            if cls[child] == GENERATOR:
                continue
            if cls[child] == RING and cls[parent] == TREE:
                continue
            beta[(child, parent)] = b.add_var(f"beta[{child}|{parent}]", 0.0, 1.0, binary=True)
        Pdir[(i, j)] = b.add_var(f"P[{i}->{j}]")
        Pdir[(j, i)] = b.add_var(f"P[{j}->{i}]")
        lvar[ln.key] = b.add_var(f"l[{i}-{j}]", 0.0, math.inf)
        delta[(i, ln.key)] = b.add_var(f"delta[{i}@{i}-{j}]", 0.0, math.inf)
        delta[(j, ln.key)] = b.add_var(f"delta[{j}@{i}-{j}]", 0.0, math.inf)

    # connection state: beta_ij + beta_ji = alpha_ij
    for ln in lines:
        i, j = ln.key
        terms = {alpha[ln.key]: -1.0}
        for key in ((i, j), (j, i)):
            if key in beta:
                terms[beta[key]] = terms.get(beta[key], 0.0) + 1.0
        b.add_eq(terms, 0.0, tag=f"link[{i}-{j}]")

    # spanning-tree layer: at most one parent; switched-on loads need one
    for bus in net.tree_buses:
        incident = [(bus.id, ln.j if ln.i == bus.id else ln.i)
                    for ln in avail_tree_lines[bus.id]]
        parents = [beta[key] for key in incident if key in beta]
        if parents:
            b.add_ineq({k: 1.0 for k in parents}, 1.0, tag=f"one-parent[{bus.id}]")
        if bus.id in eta_var:
            terms = {k: -1.0 for k in parents}
            terms[eta_var[bus.id]] = 1.0
            b.add_ineq(terms, 0.0, tag=f"needs-parent[{bus.id}]")
        elif eta_const.get(bus.id, 0) and parents:
            b.add_ineq({k: -1.0 for k in parents}, -1.0, tag=f"needs-parent[{bus.id}]")
        elif eta_const.get(bus.id, 0) and not parents:
            # eta pinned on with no possible parent: infeasible row
            b.add_ineq({}, -1.0, tag=f"needs-parent[{bus.id}]")

    # power bounds and the slack registry
    power_bound: dict[int, dict] = {}
    for bus in net.buses:
        if bus.id not in p_var:
            continue
        pi = p_var[bus.id]
        s = 1.0 if bus.available else 0.0
        if bus.cls == GENERATOR:
            power_bound[bus.id] = {"kind": "gen", "var": pi, "lo": 0.0, "hi": bus.p_max * s}
        elif bus.load_kind == LOAD_VARIABLE:
            idx_eta, c_eta = eta_term(bus.id)
            lo_terms = {pi: -1.0}
            hi_terms = {pi: 1.0}
            if idx_eta is not None:
                lo_terms[idx_eta] = bus.p_min * s
                hi_terms[idx_eta] = -bus.p_max * s
                lo_rhs, hi_rhs = 0.0, 0.0
            else:
                lo_rhs = -bus.p_min * s * c_eta
                hi_rhs = bus.p_max * s * c_eta
            lo = b.add_ineq(lo_terms, lo_rhs, tag=f"pmin[{bus.id}]")
            hi = b.add_ineq(hi_terms, hi_rhs, tag=f"pmax[{bus.id}]")
            power_bound[bus.id] = {"kind": "varload", "var": pi, "lo_row": lo, "hi_row": hi}
        elif bus.load_kind == LOAD_FIXED:
            idx_eta, c_eta = eta_term(bus.id)
            if idx_eta is not None:
                b.add_eq({pi: 1.0, idx_eta: -bus.p_min * s}, 0.0, tag=f"pfix[{bus.id}]")
            else:
                b.add_eq({pi: 1.0}, bus.p_min * s * c_eta, tag=f"pfix[{bus.id}]")

    # nodal balance: (1+e_i) p_i = sum_j P_ij
    for bus in net.buses:
        terms: dict[int, float] = {}
        for ln in net.lines_at(bus.id):
            if ln.available:
                other = ln.j if ln.i == bus.id else ln.i
                terms[Pdir[(bus.id, other)]] = -1.0
        if bus.id in p_var:
            terms[p_var[bus.id]] = 1.0 + bus.loss_rate
            b.add_eq(terms, 0.0, tag=f"balance[{bus.id}]")
        elif terms:
            b.add_eq(terms, 0.0, tag=f"balance[{bus.id}]")

    # per-line physics
    for ln in lines:
        i, j = ln.key
        z = ln.r
        a = alpha[ln.key]
        li = lvar[ln.key]
        pij, pji = Pdir[(i, j)], Pdir[(j, i)]
        di, dj = delta[(i, ln.key)], delta[(j, ln.key)]
        vi, vj = v_var[i], v_var[j]
        vmax_i = net.bus(i).v_max ** 2
        vmax_j = net.bus(j).v_max ** 2
        # line-loss identity and voltage drop
        b.add_eq({pij: 1.0, pji: 1.0, li: -z}, 0.0, tag=f"loss[{i}-{j}]")
        b.add_eq({di: 1.0, dj: -1.0, pij: -z, pji: z}, 0.0, tag=f"drop[{i}-{j}]")
        # delta gating by alpha: 0 <= delta <= vmax^2 * alpha and
        # 0 <= v - delta <= vmax^2 * (1 - alpha)
        b.add_ineq({di: 1.0, a: -vmax_i}, 0.0, tag=f"gate-hi[{i}@{i}-{j}]")
        b.add_ineq({dj: 1.0, a: -vmax_j}, 0.0, tag=f"gate-hi[{j}@{i}-{j}]")
        b.add_ineq({di: 1.0, vi: -1.0}, 0.0, tag=f"gate-v[{i}@{i}-{j}]")
        b.add_ineq({dj: 1.0, vj: -1.0}, 0.0, tag=f"gate-v[{j}@{i}-{j}]")
        b.add_ineq({vi: 1.0, di: -1.0, a: vmax_i}, vmax_i, tag=f"gate-lo[{i}@{i}-{j}]")
        b.add_ineq({vj: 1.0, dj: -1.0, a: vmax_j}, vmax_j, tag=f"gate-lo[{j}@{i}-{j}]")
        # W_ij = delta_i - z P_ij >= 0 (kept from the lifted form; one row per
        # line, the mirror image is identical through the drop identity)
        b.add_ineq({pij: z, di: -1.0}, 0.0, tag=f"wpos[{i}-{j}]")
        # relaxed rank-1: l * delta_i >= P_ij^2 (the mirror cone at j is
        # implied exactly by the loss and drop identities)
        b.add_cone(li, di, pij, tag=f"cone[{i}-{j}]")
        if ln.i_max is not None:
            b.add_ineq({li: 1.0, a: -ln.i_max ** 2}, 0.0, tag=f"amp[{i}-{j}]")

    # objective
    loss_terms: dict[int, float] = {}
    for bus in net.buses:
        if bus.id in p_var:
            coef = -xi * (1.0 + bus.loss_rate)
            b.add_objective_term(p_var[bus.id], coef)
            loss_terms[p_var[bus.id]] = 1.0 + bus.loss_rate
    fun_denominator = 0.0
    if eta_fixed is None:
        ktot = scheme.kappa_total
        for bus_id, idx in eta_var.items():
            b.add_objective_term(idx, scheme.kappa_of(bus_id) / ktot)
    else:
        fun_denominator = sum(
            scheme.lam[b_.id] * b_.p_min for b_ in net.load_buses if eta_const.get(b_.id, 0)
        )
        if fun_denominator < 0.0:
            for bus in net.load_buses:
                if eta_const.get(bus.id, 0) and bus.id in p_var:
                    b.add_objective_term(p_var[bus.id], scheme.lam[bus.id] / fun_denominator)
        else:
            b.meta["trivial"] = True  # every load off: functionality is constant

    tiers: dict[int, tuple] = {}
    for bus_id, idx in eta_var.items():
        tiers[idx] = (0, scheme.load_level[bus_id], idx)
    for (child, parent), idx in beta.items():
        # ring-ring orientation pairs are pure ties (either direction yields
        # the same alpha); branch them only when nothing else is fractional
        if cls[child] == RING and cls[parent] == RING:
            tiers[idx] = (2, 0, idx)
        else:
            tiers[idx] = (1, 0, idx)

    b.meta.update({
        "kind": "phase1" if eta_fixed is None else "phase2",
        "xi": xi,
        "net": net,
        "scheme": scheme,
        "eta_var": eta_var,
        "eta_const": eta_const,
        "p_var": p_var,
        "p_const": p_const,
        "v_var": v_var,
        "alpha_var": alpha,
        "beta_var": beta,
        "P_var": Pdir,
        "l_var": lvar,
        "delta_var": delta,
        "power_bound": power_bound,
        "slack_var": {},
        "branch_tiers": tiers,
        "kappa_total": scheme.kappa_total,
        "fun_denominator": fun_denominator,
        "loss_terms": loss_terms,
    })
    prog = b.build()
    prog.meta["varmap"] = vm
    return prog, vm


def add_slack(prog: ConicProgram, buses: set[int]) -> ConicProgram:
    """Relax binding power lower bounds with penalized slack variables.

    For each bus the bound pair becomes ``p_min <= p - eps <= p_max`` with
    ``eps >= 0`` penalized in the objective, so the bound cannot bind in the
    next round.  Rejects buses without a power-bound constraint and repeated
    application to the same bus.
    """
    if not buses:
        return prog
    vm_old: VariableMap = prog.meta["varmap"]
    b = ProgramBuilder.from_program(prog, vm_old)
    b.meta = dict(prog.meta)
    slack_var = dict(prog.meta["slack_var"])
    power_bound = prog.meta["power_bound"]
    for bus_id in sorted(buses):
        if bus_id in slack_var:
            raise ValueError(f"bus {bus_id} already has a slack variable")
        info = power_bound.get(bus_id)
        if info is None:
            raise ValueError(f"bus {bus_id} has no power-bound constraint to relax")
        eps = b.add_var(f"eps[{bus_id}]", 0.0, math.inf)
        slack_var[bus_id] = eps
        pi = info["var"]
        if info["kind"] == "gen":
            b.set_bounds(pi, 0.0, math.inf)
            b.add_ineq({pi: -1.0, eps: 1.0}, -info["lo"], tag=f"slack-lo[{bus_id}]")
            b.add_ineq({pi: 1.0, eps: -1.0}, info["hi"], tag=f"slack-hi[{bus_id}]")
        else:
            lo = prog.ineq_rows[info["lo_row"]]
            hi = prog.ineq_rows[info["hi_row"]]
            b.replace_ineq(info["lo_row"], dict(zip(lo.idx, lo.coef)) | {eps: 1.0},
                           lo.rhs, tag=lo.tag)
            b.replace_ineq(info["hi_row"], dict(zip(hi.idx, hi.coef)) | {eps: -1.0},
                           hi.rhs, tag=hi.tag)
        b.add_objective_term(eps, -1.0)
    b.meta["slack_var"] = slack_var
    out = b.build()
    out.meta["varmap"] = b.varmap
    return out


def validate_gating(prog: ConicProgram, x: np.ndarray, tol: float = 1e-6) -> list[str]:
    """Check gating consistency of a candidate point; returns violations.

    The squared current is compared in power units (z*l): for small line
    resistances the raw l value amplifies row-level solver noise by 1/z.
    """
    meta = prog.meta
    net = meta["net"]
    issues = []
    for key, ai in meta["alpha_var"].items():
        i, j = key
        a = x[ai]
        z = net.line(i, j).r
        di = x[meta["delta_var"][(i, key)]]
        dj = x[meta["delta_var"][(j, key)]]
        li = x[meta["l_var"][key]]
        pij = x[meta["P_var"][(i, j)]]
        pji = x[meta["P_var"][(j, i)]]
        if a < tol:
            for nm, val in (("delta_i", di), ("delta_j", dj), ("z*l", z * li),
                            ("P_ij", abs(pij)), ("P_ji", abs(pji))):
                if abs(val) > tol:
                    issues.append(f"line {i}-{j}: alpha=0 but {nm}={val:g}")
        elif a > 1.0 - tol:
            vi = x[meta["v_var"][i]]
            vj = x[meta["v_var"][j]]
            if abs(di - vi) > tol:
                issues.append(f"line {i}-{j}: alpha=1 but delta_i != v_i ({di:g} vs {vi:g})")
            if abs(dj - vj) > tol:
                issues.append(f"line {i}-{j}: alpha=1 but delta_j != v_j ({dj:g} vs {vj:g})")
        if pij + pji < -tol:
            issues.append(f"line {i}-{j}: negative loss P_ij+P_ji={pij + pji:g}")
    return issues
