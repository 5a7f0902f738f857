"""Rank-1 exactness checking, voltage recovery, and the slack-variable loop.

The relaxation drops the rank-1 condition on each line's lifted 2x2 block; in
branch-flow form that condition is tightness of the cone ``l >= P^2/delta``.
When every connected line is tight, physical voltages are recovered by the
square-root map and the state is certifiable against the original model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .bnb import MipOutcome, MipParams, solve_misocp
from .conic import ConicProgram
from .formulation import add_slack
from .network import GENERATOR, LOAD_VARIABLE, Network
from .oracle import (PowerFlowError, config_from_solution, connected_components,
                     newton_powerflow)

EXACT_TOL = 1e-6
BINDING_TOL = 1e-6


class InexactSolution(RuntimeError):
    def __init__(self, report: "ExactnessReport"):
        super().__init__(
            f"solution is not rank-1 exact (max residual {report.max_residual:.3e})"
        )
        self.report = report


@dataclass
class ExactnessReport:
    residuals: dict[tuple[int, int], float]     # per connected line, worst incidence
    max_residual: float
    violating_lines: list[tuple[int, int]]
    binding_lower_buses: list[int]              # the slack-heuristic target set
    exact: bool
    total_loss: float                            # Assumption-2 check: sum (1+e_i) p_i
    min_cone_feasibility: float                  # most negative residual seen

    def to_dict(self) -> dict:
        return {
            "exact": self.exact,
            "max_residual": self.max_residual,
            "violating_lines": [list(k) for k in self.violating_lines],
            "binding_lower_buses": self.binding_lower_buses,
            "total_loss": self.total_loss,
            "residuals": {f"{i}-{j}": v for (i, j), v in self.residuals.items()},
        }


@dataclass
class RecoveredState:
    V: dict[int, float]
    gamma: dict[tuple[int, tuple[int, int]], float]
    balance_residuals: dict[int, float]
    max_balance_residual: float

    def lifted_roundtrip_error(self, prog: ConicProgram, x: np.ndarray) -> float:
        """Worst mismatch when re-deriving (v, delta, W) from (V, gamma)."""
        meta = prog.meta
        err = 0.0
        for bid, vi in meta["v_var"].items():
            err = max(err, abs(self.V[bid] ** 2 - x[vi]))
        for (bid, key), gi in self.gamma.items():
            err = max(err, abs(gi ** 2 - x[meta["delta_var"][(bid, key)]]))
        net: Network = meta["net"]
        for key, li in meta["l_var"].items():
            ln = net.line(*key)
            g_i = self.gamma[(key[0], key)]
            g_j = self.gamma[(key[1], key)]
            w_recovered = g_i * g_j
            w_solver = x[meta["delta_var"][(key[0], key)]] - ln.r * x[meta["P_var"][key]]
            err = max(err, abs(w_recovered - w_solver))
        return err


def check_exactness(outcome: MipOutcome, exact_tol: float = EXACT_TOL) -> ExactnessReport:
    """Tightness residuals t = l - P^2/delta over the connected lines."""
    prog = outcome.program
    meta = prog.meta
    x = outcome.x
    if x is None:
        raise ValueError("outcome has no incumbent to check")
    net: Network = meta["net"]
    residuals: dict[tuple[int, int], float] = {}
    min_feas = 0.0
    for key, ai in meta["alpha_var"].items():
        if x[ai] <= 0.5:
            continue
        li = x[meta["l_var"][key]]
        worst = -math.inf
        for end, other in (key, key[::-1]):
            d = x[meta["delta_var"][(end, key)]]
            if d <= 0.0:
                raise ValueError(
                    f"line {key[0]}-{key[1]}: connected but delta at bus {end} is {d:g}"
                )
            t = li - x[meta["P_var"][(end, other)]] ** 2 / d
            worst = max(worst, t)
            min_feas = min(min_feas, t)
        residuals[key] = worst
    max_residual = max(residuals.values(), default=0.0)
    violating = sorted(k for k, t in residuals.items() if t > exact_tol)

    binding: set[int] = set()
    for key in violating:
        for bid in key:
            bus = net.bus(bid)
            if bid not in meta["p_var"]:
                continue
            s = 1.0 if bus.available else 0.0
            if bus.cls == GENERATOR:
                p_lo = 0.0
            elif bus.load_kind == LOAD_VARIABLE:
                if bid in meta["eta_var"]:
                    ev = round(x[meta["eta_var"][bid]])
                else:
                    ev = meta["eta_const"].get(bid, 0)
                p_lo = bus.p_min * s * ev
            else:
                continue  # fixed loads and junctions carry no relaxable bound
            if abs(x[meta["p_var"][bid]] - p_lo) <= BINDING_TOL * max(1.0, abs(p_lo)):
                binding.add(bid)

    total_loss = sum((1.0 + net.bus(bid).loss_rate) * x[idx]
                     for bid, idx in meta["p_var"].items())
    return ExactnessReport(
        residuals=residuals,
        max_residual=max_residual,
        violating_lines=violating,
        binding_lower_buses=sorted(binding),
        exact=max_residual <= exact_tol,
        total_loss=total_loss,
        min_cone_feasibility=min_feas,
    )


def recover_voltages(outcome: MipOutcome,
                     report: ExactnessReport | None = None) -> RecoveredState:
    """Square-root recovery V = sqrt(v), gamma = sqrt(delta) (unique by Lemma 1)."""
    report = report or check_exactness(outcome)
    if not report.exact:
        raise InexactSolution(report)
    prog = outcome.program
    meta = prog.meta
    x = outcome.x
    net: Network = meta["net"]
    V = {bid: math.sqrt(max(x[vi], 0.0)) for bid, vi in meta["v_var"].items()}
    gamma: dict[tuple[int, tuple[int, int]], float] = {}
    for (bid, key), di in meta["delta_var"].items():
        gamma[(bid, key)] = math.sqrt(max(x[di], 0.0))
    for ln in net.lines:
        if ln.key not in meta["l_var"]:
            gamma.setdefault((ln.i, ln.key), 0.0)
            gamma.setdefault((ln.j, ln.key), 0.0)

    residuals = {}
    for bus in net.buses:
        acc = 0.0
        for ln in net.lines_at(bus.id):
            gi = gamma.get((bus.id, ln.key), 0.0)
            gj = gamma.get((ln.j if ln.i == bus.id else ln.i, ln.key), 0.0)
            acc += gi * (gi - gj) * ln.y
        if bus.id in meta["p_var"]:
            p = x[meta["p_var"][bus.id]]
        else:
            p = meta["p_const"].get(bus.id, 0.0)
        residuals[bus.id] = abs(acc - (1.0 + bus.loss_rate) * p)
    return RecoveredState(
        V=V, gamma=gamma, balance_residuals=residuals,
        max_balance_residual=max(residuals.values(), default=0.0),
    )


@dataclass
class SlackIterationResult:
    outcome: MipOutcome
    label: str                      # exact | suboptimal-exact | failed
    rounds: int
    reports: list[ExactnessReport] = field(default_factory=list)


def slack_iteration(
    net: Network,
    scheme,
    outcome: MipOutcome,
    max_rounds: int = 3,
    params: MipParams | None = None,
    exact_tol: float = EXACT_TOL,
) -> SlackIterationResult:
    """Re-solve with penalized lower-bound slacks until the solution is exact.

    Stops on exactness, an empty binding-bound set (the heuristic has no
    move), or the round limit.
    """
    report = check_exactness(outcome, exact_tol)
    reports = [report]
    if report.exact:
        return SlackIterationResult(outcome, "exact", 0, reports)
    rounds = 0
    current = outcome
    while rounds < max_rounds:
        targets = [b for b in report.binding_lower_buses
                   if b not in current.program.meta["slack_var"]]
        if not targets:
            return SlackIterationResult(current, "failed", rounds, reports)
        prog2 = add_slack(current.program, set(targets))
        rounds += 1
        current = solve_misocp(prog2, params)
        if not current.ok or current.x is None:
            return SlackIterationResult(current, "failed", rounds, reports)
        report = check_exactness(current, exact_tol)
        reports.append(report)
        if report.exact:
            return SlackIterationResult(current, "suboptimal-exact", rounds, reports)
    return SlackIterationResult(current, "failed", rounds, reports)


# ---------------------------------------------------------------------------
# incumbent polish: rebuild the lifted point from a Newton power flow
# ---------------------------------------------------------------------------

def make_power_flow_refiner(feas_tol: float = 1e-8):
    """Refiner for the branch-and-bound: projects an integral incumbent onto
    the rank-1 manifold via an exact power-flow solve.

    The xi-scaled loss term prices the cone constraints so weakly that an
    interior-point iterate can carry cone slack far above its own feasibility
    tolerance; rebuilding the point from physical voltages removes that slack
    (improving the objective) without touching the switch assignment.  The
    rebuilt point is returned only if it is feasible and no worse; genuinely
    inexact optima (binding current limits) fail the feasibility guard and
    fall through to the slack heuristic.
    """

    def refine(prog: ConicProgram, x: np.ndarray) -> np.ndarray | None:
        meta = prog.meta
        if meta.get("slack_var"):
            return None
        net: Network = meta["net"]
        config = config_from_solution(prog, x)
        # clamp the dispatch into the exact bounds
        p = dict(config.p)
        for bus in net.buses:
            if bus.id not in meta["p_var"]:
                continue
            s = 1.0 if bus.available else 0.0
            if bus.cls == GENERATOR:
                p[bus.id] = min(max(p[bus.id], 0.0), bus.p_max * s)
            elif bus.load_kind == LOAD_VARIABLE:
                ev = config.eta.get(bus.id, 0)
                p[bus.id] = min(max(p[bus.id], bus.p_min * s * ev), bus.p_max * s * ev)
            elif bus.load_kind:
                ev = config.eta.get(bus.id, 0)
                if bus.load_kind != "none":
                    p[bus.id] = bus.p_min * s * ev
        config = type(config)(alpha=config.alpha, eta=config.eta, p=p, beta=config.beta)

        V: dict[int, float] = {}
        try:
            for comp in connected_components(net, config.alpha):
                gens = [bid for bid in comp if net.bus(bid).cls == GENERATOR
                        and net.bus(bid).available and bid in meta["p_var"]]
                if gens:
                    slack = max(gens, key=lambda g: (config.p.get(g, 0.0), -g))
                    sv = math.sqrt(max(x[meta["v_var"][slack]], 0.0))
                    sv = min(max(sv, net.bus(slack).v_min), net.bus(slack).v_max)
                    st = newton_powerflow(net, config, slack, sv, tol=1e-10)
                    V.update(st.V)
                    p[slack] = st.p[slack]
                    sbus = net.bus(slack)
                    s_avail = 1.0 if sbus.available else 0.0
                    if not (-feas_tol <= p[slack] <= sbus.p_max * s_avail + feas_tol):
                        return None
                elif len(comp) == 1:
                    bid = next(iter(comp))
                    V[bid] = math.sqrt(max(x[meta["v_var"][bid]], 0.0))
                else:
                    if any(abs(config.p.get(bid, 0.0)) > feas_tol for bid in comp):
                        return None
                    lo = max(net.bus(bid).v_min for bid in comp)
                    hi = min(net.bus(bid).v_max for bid in comp)
                    if lo > hi:
                        return None
                    ref = math.sqrt(max(x[meta["v_var"][min(comp)]], 0.0))
                    vc = min(max(ref, lo), hi)
                    for bid in comp:
                        V[bid] = vc
        except PowerFlowError:
            return None

        out = x.copy()
        for bid, vi in meta["v_var"].items():
            out[vi] = V[bid] ** 2
        for bid, pi in meta["p_var"].items():
            out[pi] = p[bid]
        for key, ai in meta["alpha_var"].items():
            a = config.alpha[key]
            out[ai] = float(a)
            i, j = key
            ln = net.line(i, j)
            if a:
                out[meta["delta_var"][(i, key)]] = V[i] ** 2
                out[meta["delta_var"][(j, key)]] = V[j] ** 2
                out[meta["P_var"][(i, j)]] = ln.y * V[i] * (V[i] - V[j])
                out[meta["P_var"][(j, i)]] = ln.y * V[j] * (V[j] - V[i])
                out[meta["l_var"][key]] = ln.y ** 2 * (V[i] - V[j]) ** 2
            else:
                out[meta["delta_var"][(i, key)]] = 0.0
                out[meta["delta_var"][(j, key)]] = 0.0
                out[meta["P_var"][(i, j)]] = 0.0
                out[meta["P_var"][(j, i)]] = 0.0
                out[meta["l_var"][key]] = 0.0
        for key, bi in meta["beta_var"].items():
            out[bi] = float(config.beta[key])
        for bid, ei in meta["eta_var"].items():
            out[ei] = float(config.eta[bid])

        scale = 1.0 + float(np.max(np.abs(out)))
        if prog.feasibility_violation(out) > 2.0 * feas_tol * scale:
            return None
        if prog.objective_value(out) < prog.objective_value(x) - 1e-9 * scale:
            return None
        return out

    return refine
