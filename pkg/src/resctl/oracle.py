"""Independent ground-truth machinery.

Nothing here goes through the conic relaxation: the power flow is the plain
nonlinear DC balance solved by Newton's method on a fixed configuration, the
topology validator checks the switching constraints literally, and the brute
forcer enumerates every feasible switch assignment for small networks.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .conic import ConicProgram
from .ipm import ConicSolution, Tolerances, solve_relaxation
from .network import GENERATOR, LOAD_FIXED, LOAD_VARIABLE, RING, TREE, Network
from .priorities import PriorityScheme, functionality, survivability

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50


class PowerFlowError(RuntimeError):
    pass


class PowerFlowDiverged(PowerFlowError):
    pass


class PowerFlowSingular(PowerFlowError):
    pass


@dataclass(frozen=True)
class Configuration:
    """Exact binary switch state plus fixed injections."""

    alpha: Mapping[tuple[int, int], int]          # line key -> 0/1
    eta: Mapping[int, int]                        # load bus -> 0/1
    p: Mapping[int, float]                        # injections (loads and generators)
    beta: Mapping[tuple[int, int], int] | None = None   # (child, parent) -> 0/1


@dataclass
class PowerFlowState:
    V: dict[int, float]                           # energized buses only
    p: dict[int, float]
    currents: dict[tuple[int, int], float]        # I_ij = y (V_i - V_j), connected lines
    residual_norm: float
    iterations: int
    energized: frozenset[int]

    def max_balance_residual(self, net: Network, config: Configuration) -> float:
        worst = 0.0
        for bus in net.buses:
            if bus.id not in self.V:
                continue
            acc = 0.0
            for ln in net.lines_at(bus.id):
                if config.alpha.get(ln.key, 0):
                    other = ln.j if ln.i == bus.id else ln.i
                    acc += self.V[bus.id] * (self.V[bus.id] - self.V[other]) * ln.y
            acc -= (1.0 + bus.loss_rate) * self.p.get(bus.id, 0.0)
            worst = max(worst, abs(acc))
        return worst


def connected_components(net: Network, alpha: Mapping[tuple[int, int], int]) -> list[set[int]]:
    adj: dict[int, list[int]] = {b.id: [] for b in net.buses}
    for ln in net.lines:
        if alpha.get(ln.key, 0):
            adj[ln.i].append(ln.j)
            adj[ln.j].append(ln.i)
    seen: set[int] = set()
    comps = []
    for b in net.buses:
        if b.id in seen:
            continue
        comp = {b.id}
        stack = [b.id]
        seen.add(b.id)
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    comp.add(nb)
                    stack.append(nb)
        comps.append(comp)
    return comps


def newton_powerflow(
    net: Network,
    config: Configuration,
    slack_bus: int,
    slack_voltage: float,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> PowerFlowState:
    """Solve (1+e_i) p_i = sum_j y_ij V_i (V_i - V_j) on the slack's component.

    Flat start at the slack voltage; quadratic convergence is the norm.  The
    slack generator's injection is recomputed from the solved flows.
    """
    comps = connected_components(net, config.alpha)
    comp = next((c for c in comps if slack_bus in c), None)
    if comp is None:
        raise PowerFlowError(f"slack bus {slack_bus} not found")
    order = sorted(comp - {slack_bus})
    pos = {bid: k for k, bid in enumerate(order)}
    n = len(order)

    inj = {}
    for bid in comp:
        bus = net.bus(bid)
        inj[bid] = (1.0 + bus.loss_rate) * config.p.get(bid, 0.0)

    V = {bid: slack_voltage for bid in comp}
    lines = [ln for ln in net.lines if config.alpha.get(ln.key, 0)
             and ln.i in comp and ln.j in comp]
    it = 0
    res_norm = math.inf
    for it in range(max_iter + 1):
        F = np.zeros(n)
        for bid in order:
            acc = 0.0
            for ln in net.lines_at(bid):
                if config.alpha.get(ln.key, 0) and (ln.i in comp and ln.j in comp):
                    other = ln.j if ln.i == bid else ln.i
                    acc += V[bid] * (V[bid] - V[other]) * ln.y
            F[pos[bid]] = acc - inj[bid]
        res_norm = float(np.linalg.norm(F))
        if res_norm <= tol:
            break
        if not np.isfinite(res_norm) or res_norm > 1e8:
            raise PowerFlowDiverged(f"residual {res_norm:g} after {it} iterations")
        if it == max_iter:
            raise PowerFlowDiverged(f"no convergence in {max_iter} iterations "
                                    f"(residual {res_norm:g})")
        J = np.zeros((n, n))
        for ln in lines:
            for a, bnb in ((ln.i, ln.j), (ln.j, ln.i)):
                if a == slack_bus:
                    continue
                ia = pos[a]
                J[ia, ia] += ln.y * (2.0 * V[a] - V[bnb])
                if bnb != slack_bus:
                    J[ia, pos[bnb]] -= ln.y * V[a]
        if n:
            try:
                dv = np.linalg.solve(J, -F)
            except np.linalg.LinAlgError as exc:
                raise PowerFlowSingular(str(exc)) from exc
            for bid in order:
                V[bid] += dv[pos[bid]]

    p_out = dict(config.p)
    slack_flow = 0.0
    for ln in net.lines_at(slack_bus):
        if config.alpha.get(ln.key, 0) and ln.i in comp and ln.j in comp:
            other = ln.j if ln.i == slack_bus else ln.i
            slack_flow += V[slack_bus] * (V[slack_bus] - V[other]) * ln.y
    p_out[slack_bus] = slack_flow / (1.0 + net.bus(slack_bus).loss_rate)
    currents = {ln.key: ln.y * (V[ln.i] - V[ln.j]) for ln in lines}
    return PowerFlowState(
        V=V, p=p_out, currents=currents, residual_norm=res_norm,
        iterations=it, energized=frozenset(comp),
    )


def solve_all_components(
    net: Network,
    config: Configuration,
    v_default: Mapping[int, float] | None = None,
    slack_voltages: Mapping[int, float] | None = None,
    tol: float = NEWTON_TOL,
) -> PowerFlowState:
    """Newton-solve every energized component; islands without sources must be flow-free.

    The slack of each component is its largest-dispatch available generator;
    its voltage comes from ``slack_voltages`` (falling back to the bus's upper
    bound).  Raises ``PowerFlowSingular`` for a sourceless island with load.
    """
    V: dict[int, float] = {}
    p: dict[int, float] = dict(config.p)
    currents: dict[tuple[int, int], float] = {}
    res = 0.0
    iters = 0
    energized: set[int] = set()
    for comp in connected_components(net, config.alpha):
        gens = [bid for bid in comp
                if net.bus(bid).cls == GENERATOR and net.bus(bid).available]
        if gens:
            slack = max(gens, key=lambda g: (config.p.get(g, 0.0), -g))
            sv = (slack_voltages or {}).get(slack, net.bus(slack).v_max)
            st = newton_powerflow(net, config, slack, sv, tol=tol)
            V.update(st.V)
            p[slack] = st.p[slack]
            currents.update(st.currents)
            res = max(res, st.residual_norm)
            iters = max(iters, st.iterations)
            energized |= set(comp)
        else:
            if any(abs(config.p.get(bid, 0.0)) > 1e-12 for bid in comp):
                raise PowerFlowSingular(
                    f"component {sorted(comp)} has injections but no available generator"
                )
            for bid in comp:
                V[bid] = (v_default or {}).get(bid, net.bus(bid).v_max)
            for ln in net.lines:
                if config.alpha.get(ln.key, 0) and ln.i in comp:
                    currents[ln.key] = 0.0
    return PowerFlowState(
        V=V, p=p, currents=currents, residual_norm=res,
        iterations=iters, energized=frozenset(energized),
    )


# ---------------------------------------------------------------------------
# topology validation (the switching constraints, checked literally)
# ---------------------------------------------------------------------------

@dataclass
class TopologyFindings:
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_topology(net: Network, config: Configuration) -> TopologyFindings:
    out = TopologyFindings()
    cls = {b.id: b.cls for b in net.buses}

    for bus in net.load_buses:
        s = 1 if bus.available else 0
        if config.eta.get(bus.id, 0) > s:
            out.violations.append(f"load {bus.id}: eta exceeds availability (eta<=s)")

    for ln in net.lines:
        a = config.alpha.get(ln.key, 0)
        if a not in (0, 1):
            out.violations.append(f"line {ln.i}-{ln.j}: alpha not binary")
        if a > (1 if ln.available else 0):
            out.violations.append(f"line {ln.i}-{ln.j}: connected although faulted")

    if config.beta is not None:
        beta = config.beta
        for (child, parent), val in beta.items():
            if val not in (0, 1):
                out.violations.append(f"beta[{child}|{parent}]: not binary")
            if val and cls[child] == GENERATOR:
                out.violations.append(f"bus {child}: generator has a parent ({parent})")
            if val and cls[child] == RING and cls[parent] == TREE:
                out.violations.append(f"bus {child}: ring bus has tree parent {parent}")
        for ln in net.lines:
            a = config.alpha.get(ln.key, 0)
            bsum = beta.get((ln.i, ln.j), 0) + beta.get((ln.j, ln.i), 0)
            if bsum != a:
                out.violations.append(
                    f"line {ln.i}-{ln.j}: beta_ij + beta_ji = {bsum} != alpha = {a}"
                )
        for bus in net.tree_buses:
            parents = sum(
                beta.get((bus.id, ln.j if ln.i == bus.id else ln.i), 0)
                for ln in net.lines_at(bus.id) if ln.cls == TREE
            )
            if parents > 1:
                out.violations.append(f"tree bus {bus.id}: {parents} parents")
            if config.eta.get(bus.id, 0) and parents < 1:
                out.violations.append(f"load {bus.id}: switched on without a parent")

    # warnings: cycles among connected tree lines; energized islands without a source
    tree_adj: dict[int, list[int]] = {b.id: [] for b in net.buses}
    for ln in net.lines:
        if ln.cls == TREE and config.alpha.get(ln.key, 0):
            tree_adj[ln.i].append(ln.j)
            tree_adj[ln.j].append(ln.i)
    seen: set[int] = set()
    for start in tree_adj:
        if start in seen:
            continue
        comp_nodes = []
        edges = 0
        stack = [start]
        seen.add(start)
        while stack:
            u = stack.pop()
            comp_nodes.append(u)
            for v in tree_adj[u]:
                edges += 1
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        if edges // 2 >= len(comp_nodes) and len(comp_nodes) > 1:
            out.warnings.append(f"cycle among connected tree lines near bus {start}")
    for comp in connected_components(net, config.alpha):
        has_gen = any(cls[bid] == GENERATOR and net.bus(bid).available for bid in comp)
        draws = any(config.eta.get(bid, 0) for bid in comp)
        if draws and not has_gen:
            out.warnings.append(
                f"energized component {sorted(comp)} serves load without a generator"
            )
    return out


def config_from_solution(prog: ConicProgram, x: np.ndarray) -> Configuration:
    """Round a solver point into an exact Configuration."""
    meta = prog.meta
    alpha = {}
    for key in {ln.key for ln in meta["net"].lines}:
        if key in meta["alpha_var"]:
            alpha[key] = int(round(x[meta["alpha_var"][key]]))
        else:
            alpha[key] = 0
    eta = {}
    for bus in meta["net"].load_buses:
        if bus.id in meta["eta_var"]:
            eta[bus.id] = int(round(x[meta["eta_var"][bus.id]]))
        else:
            eta[bus.id] = int(meta["eta_const"].get(bus.id, 0))
    beta = {key: int(round(x[idx])) for key, idx in meta["beta_var"].items()}
    p = {}
    for bus in meta["net"].buses:
        if bus.id in meta["p_var"]:
            p[bus.id] = float(x[meta["p_var"][bus.id]])
        elif bus.id in meta["p_const"]:
            p[bus.id] = meta["p_const"][bus.id]
    return Configuration(alpha=alpha, eta=eta, p=p, beta=beta)


# ---------------------------------------------------------------------------
# certification against the original (non-lifted) model
# ---------------------------------------------------------------------------

@dataclass
class Certificate:
    passed: bool
    families: dict[str, dict]
    omega_sur: float
    omega_fun: float
    all_loads_off: bool


def certify(
    net: Network,
    scheme: PriorityScheme,
    config: Configuration,
    V: Mapping[int, float],
    energized: frozenset[int] | None = None,
    tol: float = 1e-6,
) -> Certificate:
    """Re-evaluate every original-model constraint at a recovered state.

    Voltages of de-energized buses float inside their bounds in the original
    model, so they are not compared.
    """
    families: dict[str, dict] = {}

    def fam(name, ok, worst, detail=""):
        families[name] = {"ok": bool(ok), "worst": worst, "detail": detail}

    gamma = {}
    for ln in net.lines:
        on = config.alpha.get(ln.key, 0)
        gamma[(ln.i, ln.key)] = V.get(ln.i, 0.0) if on else 0.0
        gamma[(ln.j, ln.key)] = V.get(ln.j, 0.0) if on else 0.0

    worst_v, vdet = 0.0, ""
    check = energized if energized is not None else set(V)
    for bid in check:
        bus = net.bus(bid)
        if bid not in V:
            continue
        err = max(bus.v_min - V[bid], V[bid] - bus.v_max)
        if err > worst_v:
            worst_v, vdet = err, f"bus {bid}"
    fam("voltage-bounds", worst_v <= tol, worst_v, vdet)

    worst_p, pdet = 0.0, ""
    for bus in net.buses:
        pv = config.p.get(bus.id, 0.0)
        s = 1.0 if bus.available else 0.0
        if bus.cls == GENERATOR:
            lo, hi = 0.0, bus.p_max * s
        elif bus.load_kind == LOAD_VARIABLE:
            ev = config.eta.get(bus.id, 0)
            lo, hi = bus.p_min * s * ev, bus.p_max * s * ev
        elif bus.load_kind == LOAD_FIXED:
            ev = config.eta.get(bus.id, 0)
            lo = hi = bus.p_min * s * ev
        else:
            lo = hi = 0.0
        err = max(lo - pv, pv - hi)
        if err > worst_p:
            worst_p, pdet = err, f"bus {bus.id}"
    fam("power-bounds", worst_p <= tol, worst_p, pdet)

    worst_b, bdet = 0.0, ""
    for bus in net.buses:
        acc = 0.0
        for ln in net.lines_at(bus.id):
            gi = gamma[(bus.id, ln.key)]
            gj = gamma[(ln.j if ln.i == bus.id else ln.i, ln.key)]
            acc += gi * (gi - gj) * ln.y
        err = abs(acc - (1.0 + bus.loss_rate) * config.p.get(bus.id, 0.0))
        if err > worst_b:
            worst_b, bdet = err, f"bus {bus.id}"
    fam("power-balance", worst_b <= tol, worst_b, bdet)

    worst_i, idet = 0.0, ""
    for ln in net.lines:
        if ln.i_max is None:
            continue
        gi = gamma[(ln.i, ln.key)]
        gj = gamma[(ln.j, ln.key)]
        lhs = ln.y ** 2 * (gi - gj) ** 2
        err = lhs - ln.i_max ** 2 * config.alpha.get(ln.key, 0)
        if err > worst_i:
            worst_i, idet = err, f"line {ln.i}-{ln.j}"
    fam("current-limits", worst_i <= tol, worst_i, idet)

    topo = validate_topology(net, config)
    fam("topology", topo.ok, float(len(topo.violations)), "; ".join(topo.violations[:4]))

    omega_sur = survivability(scheme, config.eta)
    omega_fun, all_off = functionality(
        scheme, config.eta, config.p, {b.id: b.p_min for b in net.load_buses}
    )
    passed = all(f["ok"] for f in families.values())
    return Certificate(passed, families, omega_sur, omega_fun, all_off)


# ---------------------------------------------------------------------------
# exhaustive enumeration oracle
# ---------------------------------------------------------------------------

@dataclass
class BruteResult:
    objective: float
    eta: dict[int, int]
    alpha: dict[tuple[int, int], int]
    beta: dict[tuple[int, int], int]
    x: np.ndarray
    n_assignments: int
    n_solved: int
    feasible_etas: list[tuple[tuple[int, int], ...]]   # per solved config, sorted (bus, eta)


def brute_force(
    net: Network,
    scheme: PriorityScheme,
    xi: float = 1e-5,
    prog: ConicProgram | None = None,
    max_binaries: int = 20,
    tolerances: Tolerances | None = None,
) -> BruteResult | None:
    """Enumerate every switch assignment satisfying the topology constraints.

    Solves the fixed-binary conic subproblem per distinct (alpha, eta) pair
    and returns the best; ties resolve to the first assignment in enumeration
    order (deterministic).  Returns None if nothing is feasible.
    """
    from .formulation import build_phase1

    if prog is None:
        prog, _ = build_phase1(net, scheme, xi)
    meta = prog.meta
    if len(prog.binary) > max_binaries:
        raise ValueError(f"{len(prog.binary)} free binaries exceed the guard ({max_binaries})")

    cls = {b.id: b.cls for b in net.buses}
    beta_var = meta["beta_var"]
    eta_var = meta["eta_var"]

    # parent options per tree bus (via its available tree lines)
    tree_children = sorted({child for (child, _p) in beta_var if cls[child] == TREE})
    options: dict[int, list[int | None]] = {}
    for child in tree_children:
        opts: list[int | None] = [None]
        opts += sorted(p for (c, p) in beta_var if c == child)
        options[child] = opts
    # ring-side lines (both endpoints ring/generator) toggle independently
    ring_lines = []
    for ln in net.lines:
        if ln.available and cls[ln.i] != TREE and cls[ln.j] != TREE:
            ring_lines.append(ln.key)

    loads = sorted(eta_var)
    best: tuple[float, dict] | None = None
    n_assign = 0
    n_solved = 0
    feasible_etas: list[tuple[tuple[int, int], ...]] = []
    cache: dict[tuple, ConicSolution] = {}

    for parent_choice in itertools.product(*(options[c] for c in tree_children)):
        parent = dict(zip(tree_children, parent_choice))
        for ring_state in itertools.product((0, 1), repeat=len(ring_lines)):
            alpha: dict[tuple[int, int], int] = {}
            beta = {key: 0 for key in beta_var}
            for child, par in parent.items():
                if par is not None:
                    beta[(child, par)] = 1
                    key = (min(child, par), max(child, par))
                    alpha[key] = 1
            for key, st in zip(ring_lines, ring_state):
                if st:
                    # orientation is immaterial for ring-side buses; pick the
                    # first admissible direction deterministically
                    i, j = key
                    if (i, j) in beta_var:
                        beta[(i, j)] = 1
                    else:
                        beta[(j, i)] = 1
                    alpha[key] = 1
            for ln in net.lines:
                alpha.setdefault(ln.key, 0)
            has_parent = {c: parent[c] is not None for c in tree_children}
            eta_opts = []
            for bid in loads:
                eta_opts.append((0, 1) if has_parent.get(bid, False) else (0,))
            for eta_choice in itertools.product(*eta_opts):
                n_assign += 1
                eta = dict(zip(loads, eta_choice))
                keybin = (tuple(sorted(alpha.items())), tuple(sorted(eta.items())))
                if keybin in cache:
                    sol = cache[keybin]
                else:
                    fixings = {idx: float(beta[key]) for key, idx in beta_var.items()}
                    fixings.update({eta_var[bid]: float(eta[bid]) for bid in loads})
                    sol = solve_relaxation(prog, fixings, tolerances)
                    cache[keybin] = sol
                    n_solved += 1
                    if sol.ok:
                        feasible_etas.append(tuple(sorted(eta.items())))
                if sol.ok and (best is None or sol.objective > best[0]):
                    best = (sol.objective, {
                        "eta": dict(eta), "alpha": dict(alpha),
                        "beta": dict(beta), "x": sol.x,
                    })
    if best is None:
        # every assignment infeasible except possibly the all-off blackout,
        # which is always enumerated; reaching here means none solved
        return None
    obj, info = best
    return BruteResult(
        objective=obj, eta=info["eta"], alpha=info["alpha"], beta=info["beta"],
        x=info["x"], n_assignments=n_assign, n_solved=n_solved,
        feasible_etas=feasible_etas,
    )
