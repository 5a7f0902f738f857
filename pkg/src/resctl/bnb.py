"""Branch-and-bound over the switching binaries on top of the conic solver.

Node selection is best-bound with depth-first plunging until the first
incumbent; branching picks the most fractional binary inside the highest
priority tier (load switches before parent indicators, higher survivability
weight first).  Candidate incumbents are re-solved with exact 0/1 fixings and
optionally refined by a caller-supplied polisher before acceptance.
Single-threaded mode is the determinism reference; the optional thread pool
must agree on the objective but may differ in node counts.
"""

from __future__ import annotations

import heapq
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .conic import ConicProgram
from .formulation import validate_gating
from .ipm import (INFEASIBLE, NUMERICAL_FAILURE, OPTIMAL, UNBOUNDED,
                  ConicSolution, Tolerances, solve_relaxation, warm_hint)

INT_TOL = 1e-6


@dataclass
class MipParams:
    mip_gap: float = 1e-7          # relative, on the normalized objective
    feas_tol: float = 1e-8
    relax_tol: Tolerances = field(default_factory=Tolerances)
    int_tol: float = INT_TOL
    max_nodes: int = 200_000
    time_limit: float | None = None
    threads: int = 1
    refiner: Callable[[ConicProgram, np.ndarray], np.ndarray | None] | None = None
    log: Callable[[str], None] | None = None
    log_every: int = 50


@dataclass
class NodeRecord:
    node_id: int
    fixing: dict[int, float]
    bound: float
    depth: int
    parent: int | None
    status: str = "open"
    hint: np.ndarray | None = None


@dataclass
class MipOutcome:
    status: str                    # optimal | limit | infeasible
    x: np.ndarray | None
    objective: float | None
    bound: float
    gap: float
    node_count: int
    wall_time: float
    program: ConicProgram
    incumbent_node: int | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def branching_choice(node: NodeRecord, relaxation: ConicSolution,
                     program: ConicProgram, int_tol: float = INT_TOL) -> int:
    """Pick the binary to branch on (tier, then most fractional, then index)."""
    x = relaxation.x
    tiers = program.meta.get("branch_tiers", {})
    best: tuple | None = None
    for i in program.binary:
        if i in node.fixing:
            continue
        frac = min(x[i], 1.0 - x[i])
        if frac <= int_tol:
            continue
        tier = tiers.get(i, (9, 0, i))
        key = (tier[0], tier[1], -frac, i)
        if best is None or key < best[0]:
            best = (key, i)
    if best is None:
        raise ValueError("branching_choice called with an integral relaxation")
    return best[1]


class _Shared:
    """Search state shared across workers; all mutation under the lock."""

    def __init__(self, sense_scale: float):
        self.lock = threading.Lock()
        self.heap: list[tuple[float, int, NodeRecord]] = []
        self.incumbent_x: np.ndarray | None = None
        self.incumbent_obj = -np.inf
        self.incumbent_node: int | None = None
        self.node_seq = 0
        self.nodes_processed = 0
        self.in_flight = 0
        self.notes: list[str] = []
        self.found_infeasible_only = True
        self.stop = False


def solve_misocp(program: ConicProgram, params: MipParams | None = None) -> MipOutcome:
    """Globally solve the MISOCP within the optimality gap ``params.mip_gap``."""
    params = params or MipParams()
    t0 = time.perf_counter()
    shared = _Shared(1.0)

    root = NodeRecord(node_id=0, fixing={}, bound=np.inf, depth=0, parent=None)
    shared.node_seq = 1
    heapq.heappush(shared.heap, (-root.bound, root.node_id, root))

    def time_left() -> bool:
        return params.time_limit is None or (time.perf_counter() - t0) < params.time_limit

    def accept_candidate(x_exact_fix: dict[int, float], node: NodeRecord) -> None:
        """Re-solve with exact fixings, refine, validate, and maybe install."""
        sol = solve_relaxation(program, x_exact_fix, params.relax_tol)
        if not sol.ok:
            with shared.lock:
                shared.notes.append(
                    f"node {node.node_id}: integral re-solve returned {sol.status}")
            return
        x = sol.x
        if params.refiner is not None:
            refined = params.refiner(program, x)
            if refined is not None:
                x = refined
        scale = 1.0 + float(np.max(np.abs(x)))
        if program.feasibility_violation(x) > 10 * params.feas_tol * scale:
            if x is not sol.x and program.feasibility_violation(sol.x) <= 10 * params.feas_tol * scale:
                x = sol.x
            else:
                with shared.lock:
                    shared.notes.append(f"node {node.node_id}: candidate failed feasibility")
                return
        gating = validate_gating(program, x, tol=1e-5)
        if gating:
            with shared.lock:
                shared.notes.append(f"node {node.node_id}: gating: {gating[0]}")
            return
        obj = program.objective_value(x)
        with shared.lock:
            if obj > shared.incumbent_obj:
                shared.incumbent_obj = obj
                shared.incumbent_x = x.copy()
                shared.incumbent_node = node.node_id

    def process(node: NodeRecord, plunge_stack: list[NodeRecord]) -> None:
        with shared.lock:
            inc0 = shared.incumbent_obj
        if node.bound <= inc0 + params.mip_gap * max(1.0, abs(inc0)):
            node.status = "pruned"
            return
        sol = solve_relaxation(program, node.fixing, params.relax_tol, hint=node.hint)
        if sol.status == INFEASIBLE:
            node.status = "infeasible"
            return
        if sol.status == UNBOUNDED:
            raise RuntimeError("relaxation unbounded: the program is missing bounds")
        if sol.status == NUMERICAL_FAILURE:
            # keep the parent's bound and branch blindly on the first free binary
            free = [i for i in program.binary if i not in node.fixing]
            with shared.lock:
                shared.notes.append(f"node {node.node_id}: relaxation numerical failure")
            if not free:
                node.status = "pruned"
                return
            _push_children(node, free[0], 0.5, sol=None, plunge_stack=plunge_stack)
            node.status = "branched"
            return

        shared.found_infeasible_only = False
        bound = min(node.bound, sol.dual_bound + 1e-9 * max(1.0, abs(sol.dual_bound)))
        node.bound = bound
        with shared.lock:
            inc = shared.incumbent_obj
        if bound <= inc + params.mip_gap * max(1.0, abs(inc)):
            node.status = "pruned"
            return
        x = sol.x
        fractional = [i for i in program.binary
                      if i not in node.fixing and min(x[i], 1.0 - x[i]) > params.int_tol]
        if not fractional:
            fix = dict(node.fixing)
            for i in program.binary:
                if i not in fix:
                    fix[i] = float(round(x[i]))
            node.status = "integral"
            accept_candidate(fix, node)
            return
        var = branching_choice(node, sol, program, params.int_tol)
        _push_children(node, var, x[var], sol, plunge_stack)
        node.status = "branched"

    def _push_children(node: NodeRecord, var: int, frac_val: float,
                       sol: ConicSolution | None, plunge_stack: list[NodeRecord]) -> None:
        hint = warm_hint(sol) if sol is not None else None
        first = 1.0 if frac_val >= 0.5 else 0.0
        children = []
        for val in (1.0 - first, first):   # the nearest value is pushed last (plunged first)
            fix = dict(node.fixing)
            fix[var] = val
            with shared.lock:
                nid = shared.node_seq
                shared.node_seq += 1
            children.append(NodeRecord(node_id=nid, fixing=fix, bound=node.bound,
                                       depth=node.depth + 1, parent=node.node_id,
                                       hint=hint))
        with shared.lock:
            no_incumbent = shared.incumbent_x is None
        if no_incumbent and plunge_stack is not None:
            plunge_stack.append(children[0])
            plunge_stack.append(children[1])
        else:
            with shared.lock:
                for ch in children:
                    heapq.heappush(shared.heap, (-ch.bound, ch.node_id, ch))

    def global_bound() -> float:
        with shared.lock:
            b = shared.incumbent_obj
            if shared.heap:
                b = max(b, -shared.heap[0][0])
            b_inflight = shared.in_flight
        return b if not np.isinf(b) or b > 0 else b

    def worker() -> None:
        plunge_stack: list[NodeRecord] = []
        while True:
            with shared.lock:
                if shared.stop:
                    return
                node = None
                if plunge_stack:
                    node = plunge_stack.pop()
                elif shared.heap:
                    node = heapq.heappop(shared.heap)[2]
                if node is None:
                    if shared.in_flight == 0:
                        shared.stop = True
                        return
                else:
                    shared.in_flight += 1
                    shared.nodes_processed += 1
                    count = shared.nodes_processed
                    inc = shared.incumbent_obj
            if node is None:
                time.sleep(1e-4)
                continue
            if not time_left() or count > params.max_nodes:
                with shared.lock:
                    shared.in_flight -= 1
                    shared.stop = True
                return
            if params.log and count % params.log_every == 0:
                params.log(f"node {count} depth {node.depth} bound {node.bound:.9g} "
                           f"incumbent {inc:.9g} time {time.perf_counter() - t0:.2f}s")
            try:
                process(node, plunge_stack)
            finally:
                with shared.lock:
                    shared.in_flight -= 1
                    # dump any plunge leftovers when an incumbent exists
                    if shared.incumbent_x is not None and plunge_stack:
                        for ch in plunge_stack:
                            heapq.heappush(shared.heap, (-ch.bound, ch.node_id, ch))
                        plunge_stack.clear()
                    # early stop on gap closure
                    inc = shared.incumbent_obj
                    open_bound = -shared.heap[0][0] if shared.heap else -np.inf
                    if (shared.incumbent_x is not None and not plunge_stack
                            and shared.in_flight == 0
                            and open_bound <= inc + params.mip_gap * max(1.0, abs(inc))):
                        shared.heap.clear()
                        shared.stop = True

    if params.threads <= 1:
        worker()
    else:
        threads = [threading.Thread(target=worker, daemon=True)
                   for _ in range(params.threads)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

    wall = time.perf_counter() - t0
    inc_x = shared.incumbent_x
    inc_obj = shared.incumbent_obj if inc_x is not None else None
    open_bound = -shared.heap[0][0] if shared.heap else -np.inf
    hit_limit = shared.nodes_processed > params.max_nodes or not time_left()

    if inc_x is None:
        status = "limit" if hit_limit else "infeasible"
        return MipOutcome(status=status, x=None, objective=None, bound=open_bound,
                          gap=np.inf, node_count=shared.nodes_processed,
                          wall_time=wall, program=program, notes=shared.notes)
    bound = max(inc_obj, open_bound)
    gap = (bound - inc_obj) / max(1.0, abs(inc_obj))
    status = "optimal" if gap <= params.mip_gap and not hit_limit else "limit"
    if gap <= params.mip_gap:
        status = "optimal"
    return MipOutcome(status=status, x=inc_x, objective=inc_obj, bound=bound, gap=gap,
                      node_count=shared.nodes_processed, wall_time=wall,
                      program=program, incumbent_node=shared.incumbent_node,
                      notes=shared.notes)
