"""End-to-end two-phase driver: fault -> Phase I -> freeze switches -> Phase II.

Phase I maximizes the survivability index to optimality gap 1e-7 (its loss
tie-break term is xi-scaled, so parallel-supply relaxation slack is far below
the gap).  Phase II maximizes the functionality index with the load switches
frozen; its default gap is looser because the parent-indicator relaxation
carries an irreducible slack of order 1e-6 that is immaterial to every
reported quantity.  Both phase outcomes are exactness-checked, slack-iterated
if needed, voltage-recovered, and independently certified.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from .bnb import MipOutcome, MipParams, solve_misocp
from .exactness import (ExactnessReport, SlackIterationResult, check_exactness,
                        make_power_flow_refiner, recover_voltages, slack_iteration)
from .formulation import DEFAULT_XI, build_phase1, build_phase2
from .ipm import Tolerances
from .network import GENERATOR, FaultScenario, Network, apply_fault
from .oracle import Certificate, certify, config_from_solution
from .priorities import (PriorityScheme, functionality, scheme_from_network,
                         survivability_fraction)

REPORT_SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_SUBOPTIMAL_EXACT = 2
EXIT_INEXACT = 3
EXIT_INPUT_ERROR = 4


@dataclass
class RunParams:
    xi: float = DEFAULT_XI
    mip_gap_phase1: float = 1e-7
    mip_gap_phase2: float = 1e-5
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    exact_tol: float = 1e-6
    max_slack_rounds: int = 3
    threads: int = 1
    max_nodes: int = 200_000
    time_limit: float | None = None
    log: object = None

    def mip_params(self, phase: int) -> MipParams:
        return MipParams(
            mip_gap=self.mip_gap_phase1 if phase == 1 else self.mip_gap_phase2,
            feas_tol=self.feas_tol,
            relax_tol=Tolerances(feas=self.feas_tol, gap=self.gap_tol),
            max_nodes=self.max_nodes,
            time_limit=self.time_limit,
            threads=self.threads,
            refiner=make_power_flow_refiner(self.feas_tol),
            log=self.log,
        )


@dataclass
class PhaseResult:
    phase: int
    status: str                       # exact | suboptimal-exact | inexact | failed
    outcome: MipOutcome
    exactness: ExactnessReport
    certificate: Certificate | None
    omega_sur: float
    omega_sur_fraction: tuple[int, int]
    omega_fun: float
    all_loads_off: bool
    eta: dict[int, int]
    shed_loads: list[int]
    alpha: dict[tuple[int, int], int]
    p: dict[int, float]
    V: dict[int, float]
    flows: dict[tuple[int, int], float]       # P_ij at the low-id end
    line_loss: float
    converter_loss: float
    slack_rounds: int
    timings: dict[str, float]

    @property
    def total_loss(self) -> float:
        return self.line_loss + self.converter_loss


@dataclass
class RunReport:
    network_name: str
    scenario: FaultScenario
    params: RunParams
    phase1: PhaseResult
    phase2: PhaseResult
    exit_code: int
    wall_time: float
    net: Network | None = None

    def to_dict(self) -> dict:
        def phase_dict(ph: PhaseResult) -> dict:
            cert = None
            if ph.certificate is not None:
                cert = {
                    "passed": ph.certificate.passed,
                    "families": ph.certificate.families,
                    "omega_sur": ph.certificate.omega_sur,
                    "omega_fun": ph.certificate.omega_fun,
                }
            return {
                "status": ph.status,
                "omega_sur": ph.omega_sur,
                "omega_sur_fraction": list(ph.omega_sur_fraction),
                "omega_fun": ph.omega_fun,
                "all_loads_off": ph.all_loads_off,
                "eta": {str(k): v for k, v in sorted(ph.eta.items())},
                "shed_loads": ph.shed_loads,
                "alpha": {f"{i}-{j}": v for (i, j), v in sorted(ph.alpha.items())},
                "p": {str(k): v for k, v in sorted(ph.p.items())},
                "V": {str(k): v for k, v in sorted(ph.V.items())},
                "flows": {f"{i}-{j}": v for (i, j), v in sorted(ph.flows.items())},
                "losses": {
                    "line": ph.line_loss,
                    "converter": ph.converter_loss,
                    "total": ph.total_loss,
                },
                "objective": ph.outcome.objective,
                "bound": ph.outcome.bound,
                "gap": ph.outcome.gap,
                "node_count": ph.outcome.node_count,
                "exactness": ph.exactness.to_dict(),
                "certificate": cert,
                "slack_rounds": ph.slack_rounds,
                "timings": ph.timings,
            }

        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "network": self.network_name,
            "scenario": self.scenario.to_dict(),
            "parameters": {
                "xi": self.params.xi,
                "mip_gap_phase1": self.params.mip_gap_phase1,
                "mip_gap_phase2": self.params.mip_gap_phase2,
                "feas_tol": self.params.feas_tol,
                "gap_tol": self.params.gap_tol,
                "exact_tol": self.params.exact_tol,
                "threads": self.params.threads,
            },
            "phase1": phase_dict(self.phase1),
            "phase2": phase_dict(self.phase2),
            "exit_code": self.exit_code,
            "wall_time": self.wall_time,
        }

    def to_json(self, indent: int = 1) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def _run_phase(phase: int, net: Network, scheme: PriorityScheme,
               params: RunParams, eta_star: Mapping[int, int] | None) -> PhaseResult:
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    if phase == 1:
        prog, _ = build_phase1(net, scheme, params.xi)
    else:
        prog, _ = build_phase2(net, scheme, eta_star, params.xi)
    timings["formulation"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    outcome = solve_misocp(prog, params.mip_params(phase))
    timings["branch_and_bound"] = time.perf_counter() - t0
    if outcome.x is None:
        raise RuntimeError(
            f"phase {phase} found no incumbent (status {outcome.status}); the all-off "
            "configuration should always be feasible, so this indicates an internal error"
        )

    t0 = time.perf_counter()
    slack_label = "exact"
    slack_rounds = 0
    report = check_exactness(outcome, params.exact_tol)
    if not report.exact:
        it = slack_iteration(net, scheme, outcome, params.max_slack_rounds,
                             params.mip_params(phase), params.exact_tol)
        outcome = it.outcome
        report = it.reports[-1]
        slack_label = it.label
        slack_rounds = it.rounds

    cfg = config_from_solution(outcome.program, outcome.x)
    if report.exact:
        rec = recover_voltages(outcome, report)
        V = rec.V
        cert = certify(net, scheme, cfg, V, energized=None, tol=params.exact_tol)
        status = "exact" if slack_rounds == 0 else "suboptimal-exact"
    else:
        V = {bid: float(np.sqrt(max(outcome.x[idx], 0.0)))
             for bid, idx in outcome.program.meta["v_var"].items()}
        cert = None
        status = "inexact" if slack_label != "failed" else "failed"
    timings["verification"] = time.perf_counter() - t0

    meta = outcome.program.meta
    x = outcome.x
    flows = {key: float(x[meta["P_var"][key]]) for key in meta["alpha_var"]}
    line_loss = sum(net.line(*key).r * float(x[idx])
                    for key, idx in meta["l_var"].items())
    converter_loss = -sum(net.bus(bid).loss_rate * cfg.p.get(bid, 0.0)
                          for bid in cfg.p)
    omega_fun, all_off = functionality(
        scheme, cfg.eta, cfg.p, {b.id: b.p_min for b in net.load_buses})
    frac = survivability_fraction(scheme, cfg.eta)
    shed = sorted(b.id for b in net.load_buses
                  if b.available and not cfg.eta.get(b.id, 0))
    return PhaseResult(
        phase=phase, status=status, outcome=outcome, exactness=report,
        certificate=cert, omega_sur=float(frac),
        omega_sur_fraction=(frac.numerator, frac.denominator),
        omega_fun=omega_fun, all_loads_off=all_off, eta=dict(cfg.eta),
        shed_loads=shed, alpha={k: int(v) for k, v in cfg.alpha.items()},
        p=dict(cfg.p), V=dict(V), flows=flows, line_loss=line_loss,
        converter_loss=converter_loss, slack_rounds=slack_rounds, timings=timings,
    )


def run_two_phase(
    net: Network,
    scenario: FaultScenario,
    scheme: PriorityScheme | None = None,
    params: RunParams | None = None,
) -> RunReport:
    """Apply the scenario, restore survivability, then maximize functionality."""
    t0 = time.perf_counter()
    params = params or RunParams()
    scheme = scheme or scheme_from_network(net)
    faulted = apply_fault(net, scenario)

    ph1 = _run_phase(1, faulted, scheme, params, None)
    ph2 = _run_phase(2, faulted, scheme, params, ph1.eta)

    exit_code = EXIT_OK
    for ph in (ph1, ph2):
        if ph.status == "suboptimal-exact":
            exit_code = max(exit_code, EXIT_SUBOPTIMAL_EXACT)
        elif ph.status in ("inexact", "failed"):
            exit_code = max(exit_code, EXIT_INEXACT)
    return RunReport(
        network_name=net.name, scenario=scenario, params=params,
        phase1=ph1, phase2=ph2, exit_code=exit_code,
        wall_time=time.perf_counter() - t0, net=net,
    )


def emit_topology(report: RunReport, phase: int) -> str:
    """DOT rendering of a phase's topology: solid = connected, dashed = open,
    red = faulted; load nodes carry the switch state and served percentage."""
    ph = report.phase1 if phase == 1 else report.phase2
    scenario = report.scenario
    net_name = report.network_name
    lines = [f'graph "{net_name}-phase{phase}" {{']
    lines.append('  layout=neato; overlap=false;')
    eta = ph.eta
    p = ph.p
    alpha = ph.alpha
    seen_buses = set()
    for k in ph.V:
        seen_buses.add(k)
    failed_buses = scenario.failed_buses
    net = report.net
    for bid in sorted(seen_buses):
        label = f"{bid}"
        attrs = []
        if bid in eta:
            label = f"L{bid}\\neta={eta[bid]}"
            if eta[bid] and bid in p:
                if net is not None and net.bus(bid).p_min < 0:
                    pct = 100.0 * p[bid] / net.bus(bid).p_min
                    label += f"\\n{pct:.0f}%"
                else:
                    label += f"\\np={p[bid]:.3f}"
            attrs.append("shape=ellipse")
        elif net is not None and net.bus(bid).cls == GENERATOR:
            label = f"G@{bid}\\np={p.get(bid, 0.0):.3f}"
            attrs.append("shape=box")
        elif bid in p and p.get(bid, 0.0) > 1e-9:
            label = f"G@{bid}\\np={p[bid]:.3f}"
            attrs.append("shape=box")
        else:
            attrs.append("shape=diamond")
        if bid in failed_buses:
            attrs.append('color=red')
        attrs.append(f'label="{label}"')
        lines.append(f'  b{bid} [{", ".join(attrs)}];')
    for key_s, a in sorted(alpha.items()):
        i, j = key_s
        attrs = []
        if (i, j) in scenario.failed_lines:
            attrs = ['color=red', 'style=dotted', 'label="faulted"']
        elif a:
            attrs = ['style=solid']
        else:
            attrs = ['style=dashed']
        lines.append(f'  b{i} -- b{j} [{", ".join(attrs)}];')
    lines.append("}")
    return "\n".join(lines) + "\n"
