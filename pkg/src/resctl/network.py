"""DC shipboard network data model: buses, lines, fault scenarios.

All electrical quantities are stored per-unit; ``base_mva``/``base_kv`` are
descriptive metadata only.  Networks are immutable after construction: every
mutating operation (``apply_fault``) returns a new value.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

GENERATOR = "generator"
RING = "ring"
TREE = "tree"

LOAD_NONE = "none"
LOAD_FIXED = "fixed"
LOAD_VARIABLE = "variable"


class NetworkError(ValueError):
    """Raised on schema or invariant violations, naming the offending element."""


@dataclass(frozen=True)
class Bus:
    id: int
    cls: str                       # generator | ring | tree
    p_min: float                   # <= 0 for loads, 0 for generators
    p_max: float | None            # > 0 for generators, < 0 for variable loads
    v_min: float
    v_max: float
    loss_rate: float               # converter loss rate e_i; power into the DC bus is (1+e_i)*p_i
    load_kind: str = LOAD_NONE     # none | fixed | variable
    priority: int | None = None    # priority level m (loads only; 1 = highest)
    lam: float = 1.0               # functionality weight (loads only)
    available: bool = True         # s_i

    @property
    def is_generator(self) -> bool:
        return self.cls == GENERATOR

    @property
    def is_load(self) -> bool:
        return self.load_kind != LOAD_NONE


@dataclass(frozen=True)
class Line:
    """A line in canonical orientation ``i -> j`` with ``i < j``."""

    i: int
    j: int
    r: float                       # resistance z_ij, > 0
    i_max: float | None = None     # current bound; None means unconstrained
    cls: str = TREE                # ring | tree
    available: bool = True         # s_ij

    @property
    def y(self) -> float:
        return 1.0 / self.r

    @property
    def key(self) -> tuple[int, int]:
        return (self.i, self.j)


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    name: str = "network"
    base_mva: float | None = None
    base_kv: float | None = None
    _bus_index: Mapping[int, int] = field(default_factory=dict, repr=False)

    def bus(self, bus_id: int) -> Bus:
        return self.buses[self._bus_index[bus_id]]

    def line(self, i: int, j: int) -> Line:
        i, j = min(i, j), max(i, j)
        for ln in self.lines:
            if ln.key == (i, j):
                return ln
        raise NetworkError(f"no line {i}-{j} in network {self.name!r}")

    def has_line(self, i: int, j: int) -> bool:
        i, j = min(i, j), max(i, j)
        return any(ln.key == (i, j) for ln in self.lines)

    def lines_at(self, bus_id: int) -> list[Line]:
        return [ln for ln in self.lines if bus_id in ln.key]

    def neighbors(self, bus_id: int) -> list[int]:
        return [ln.j if ln.i == bus_id else ln.i for ln in self.lines_at(bus_id)]

    @property
    def generator_buses(self) -> list[Bus]:
        return [b for b in self.buses if b.cls == GENERATOR]

    @property
    def ring_buses(self) -> list[Bus]:
        return [b for b in self.buses if b.cls == RING]

    @property
    def tree_buses(self) -> list[Bus]:
        return [b for b in self.buses if b.cls == TREE]

    @property
    def load_buses(self) -> list[Bus]:
        return [b for b in self.buses if b.is_load]


@dataclass(frozen=True)
class FaultScenario:
    name: str
    failed_lines: frozenset[tuple[int, int]] = frozenset()
    failed_buses: frozenset[int] = frozenset()

    @staticmethod
    def from_dict(doc: Mapping) -> "FaultScenario":
        lines = frozenset((min(i, j), max(i, j)) for i, j in doc.get("failed_lines", ()))
        buses = frozenset(int(b) for b in doc.get("failed_buses", ()))
        return FaultScenario(str(doc.get("name", "scenario")), lines, buses)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "failed_lines": sorted(list(k) for k in self.failed_lines),
            "failed_buses": sorted(self.failed_buses),
        }


def _infer_class(p_min: float, p_max: float | None, load_kind: str) -> str:
    if p_max is not None and p_max > 0:
        return GENERATOR
    if load_kind != LOAD_NONE or p_min < 0:
        return TREE
    return RING


def _build_bus(doc: Mapping) -> Bus:
    try:
        bus_id = int(doc["id"])
    except (KeyError, TypeError, ValueError):
        raise NetworkError(f"bus record {doc!r}: missing or invalid 'id'")
    where = f"bus {bus_id}"

    p_min = float(doc.get("p_min", 0.0))
    p_max = doc.get("p_max", None)
    p_max = None if p_max is None else float(p_max)
    load_kind = doc.get("load_kind")
    if load_kind is None:
        # infer from the sign pattern of the power bounds
        if p_min < 0:
            load_kind = LOAD_FIXED if p_max is None else LOAD_VARIABLE
        else:
            load_kind = LOAD_NONE
    if load_kind not in (LOAD_NONE, LOAD_FIXED, LOAD_VARIABLE):
        raise NetworkError(f"{where}: unknown load_kind {load_kind!r}")

    cls = doc.get("class") or _infer_class(p_min, p_max, load_kind)
    if cls not in (GENERATOR, RING, TREE):
        raise NetworkError(f"{where}: unknown class {cls!r}")

    v_min = float(doc.get("v_min", 0.95))
    v_max = float(doc.get("v_max", 1.05))
    if not (v_max >= v_min > 0):
        raise NetworkError(f"{where}: voltage bounds must satisfy v_max >= v_min > 0")

    loss_rate = float(doc.get("loss_rate", 0.0))
    priority = doc.get("priority")
    priority = None if priority is None else int(priority)
    lam = float(doc.get("lambda", 1.0))

    if cls == GENERATOR:
        if load_kind != LOAD_NONE:
            raise NetworkError(f"{where}: generator buses cannot carry a load")
        if p_min != 0.0:
            raise NetworkError(f"{where}: generators must have p_min = 0 (can be turned off)")
        if p_max is None or p_max <= 0:
            raise NetworkError(f"{where}: generator needs p_max > 0")
        if not (-1.0 < loss_rate < 0.0):
            raise NetworkError(f"{where}: generator converter needs 0 < 1+e < 1")
    elif load_kind != LOAD_NONE:
        if cls != TREE:
            raise NetworkError(f"{where}: loads are only supported on tree buses")
        if p_min >= 0:
            raise NetworkError(f"{where}: load needs p_min < 0")
        if load_kind == LOAD_FIXED and p_max is not None:
            raise NetworkError(f"{where}: fixed load has only a lower bound")
        if load_kind == LOAD_VARIABLE:
            if p_max is None or not (0 > p_max >= p_min):
                raise NetworkError(f"{where}: variable load needs 0 > p_max >= p_min")
        if loss_rate <= 0.0:
            raise NetworkError(f"{where}: load converter needs 1+e > 1")
        if priority is None or priority < 1:
            raise NetworkError(f"{where}: load needs a priority level >= 1")
        if lam < 0:
            raise NetworkError(f"{where}: functionality weight must be >= 0")
    else:
        # junction bus: no converter, no injection
        if loss_rate != 0.0:
            raise NetworkError(f"{where}: junction bus must have loss_rate 0")
        if p_min != 0.0 or (p_max is not None and p_max != 0.0):
            raise NetworkError(f"{where}: junction bus must have zero power bounds")

    return Bus(
        id=bus_id, cls=cls, p_min=p_min, p_max=p_max, v_min=v_min, v_max=v_max,
        loss_rate=loss_rate, load_kind=load_kind, priority=priority, lam=lam,
    )


def _build_line(doc: Mapping, by_id: Mapping[int, Bus]) -> Line:
    try:
        i, j = int(doc["from"]), int(doc["to"])
    except (KeyError, TypeError, ValueError):
        raise NetworkError(f"line record {doc!r}: missing or invalid endpoints")
    where = f"line {i}-{j}"
    if i == j:
        raise NetworkError(f"{where}: self-loop")
    if i not in by_id or j not in by_id:
        raise NetworkError(f"{where}: references a nonexistent bus")
    r = float(doc.get("r", 0.0))
    if r <= 0:
        raise NetworkError(f"{where}: resistance must be > 0 (got {r})")
    i_max = doc.get("i_max")
    i_max = None if i_max is None else float(i_max)
    if i_max is not None and i_max <= 0:
        raise NetworkError(f"{where}: i_max must be > 0 when given")
    i, j = min(i, j), max(i, j)
    # a line is `ring` iff both endpoints are ring buses; generator taps and
    # everything touching a tree bus belong to the spanning-tree layer
    cls = RING if (by_id[i].cls == RING and by_id[j].cls == RING) else TREE
    return Line(i=i, j=j, r=r, i_max=i_max, cls=cls)


def parse_network(document: str | Mapping) -> Network:
    """Parse and validate a network document (JSON text or an equivalent dict)."""
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise NetworkError(f"invalid JSON: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, Mapping) or "buses" not in doc or "lines" not in doc:
        raise NetworkError("network document needs 'buses' and 'lines' sections")

    buses = [_build_bus(b) for b in doc["buses"]]
    ids = [b.id for b in buses]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise NetworkError(f"duplicate bus ids: {dup}")
    if sorted(ids) != list(range(1, len(ids) + 1)):
        raise NetworkError("bus ids must be contiguous 1..n")
    buses.sort(key=lambda b: b.id)
    by_id = {b.id: b for b in buses}

    lines = [_build_line(rec, by_id) for rec in doc["lines"]]
    seen: set[tuple[int, int]] = set()
    for ln in lines:
        if ln.key in seen:
            raise NetworkError(f"duplicate line {ln.i}-{ln.j}")
        seen.add(ln.key)

    net = Network(
        buses=tuple(buses),
        lines=tuple(lines),
        name=str(doc.get("name", "network")),
        base_mva=doc.get("base_mva"),
        base_kv=doc.get("base_kv"),
        _bus_index={b.id: k for k, b in enumerate(buses)},
    )

    _check_connected(net)
    classify_topology(net)  # raises on structural class violations

    vmaxes = {b.v_max for b in net.buses}
    if len(vmaxes) > 1:
        warnings.warn(
            f"network {net.name!r}: unequal voltage upper bounds {sorted(vmaxes)}; "
            "the exactness guarantee assumes they are all equal",
            stacklevel=2,
        )
    return net


def load_network(path) -> Network:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_network(fh.read())


def serialize_network(net: Network) -> dict:
    """Inverse of ``parse_network`` on the canonical schema."""
    buses = []
    for b in net.buses:
        rec: dict = {
            "id": b.id, "class": b.cls, "p_min": b.p_min,
            "v_min": b.v_min, "v_max": b.v_max, "loss_rate": b.loss_rate,
            "load_kind": b.load_kind,
        }
        if b.p_max is not None:
            rec["p_max"] = b.p_max
        if b.priority is not None:
            rec["priority"] = b.priority
        if b.is_load:
            rec["lambda"] = b.lam
        buses.append(rec)
    lines = []
    for ln in net.lines:
        rec = {"from": ln.i, "to": ln.j, "r": ln.r}
        if ln.i_max is not None:
            rec["i_max"] = ln.i_max
        lines.append(rec)
    out = {"name": net.name, "buses": buses, "lines": lines}
    if net.base_mva is not None:
        out["base_mva"] = net.base_mva
    if net.base_kv is not None:
        out["base_kv"] = net.base_kv
    return out


def _check_connected(net: Network) -> None:
    if not net.buses:
        raise NetworkError("network has no buses")
    adj: dict[int, list[int]] = {b.id: [] for b in net.buses}
    for ln in net.lines:
        adj[ln.i].append(ln.j)
        adj[ln.j].append(ln.i)
    seen = {net.buses[0].id}
    stack = [net.buses[0].id]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    missing = sorted(set(adj) - seen)
    if missing:
        raise NetworkError(f"graph is disconnected; unreachable buses: {missing}")


def apply_fault(net: Network, scenario: FaultScenario) -> Network:
    """Return a copy of ``net`` with the scenario's elements marked unavailable."""
    for key in scenario.failed_lines:
        if not net.has_line(*key):
            raise NetworkError(f"scenario {scenario.name!r}: unknown line {key[0]}-{key[1]}")
    for bid in scenario.failed_buses:
        if bid not in net._bus_index:
            raise NetworkError(f"scenario {scenario.name!r}: unknown bus {bid}")
    buses = tuple(
        replace(b, available=False) if b.id in scenario.failed_buses else b for b in net.buses
    )
    lines = tuple(
        replace(ln, available=False) if ln.key in scenario.failed_lines else ln
        for ln in net.lines
    )
    return replace(net, buses=buses, lines=lines)


@dataclass(frozen=True)
class TopologyReport:
    generator_buses: tuple[int, ...]
    ring_buses: tuple[int, ...]
    tree_buses: tuple[int, ...]
    ring_lines: tuple[tuple[int, int], ...]
    tree_lines: tuple[tuple[int, int], ...]


def classify_topology(net: Network) -> TopologyReport:
    """Partition buses/lines into the ring taxonomy and verify its structure.

    A generator may feed tree buses directly only in the degenerate radial
    case (no ring buses at all); once a ring exists, generators must attach
    exclusively to it.
    """
    gens = tuple(b.id for b in net.generator_buses)
    rings = tuple(b.id for b in net.ring_buses)
    trees = tuple(b.id for b in net.tree_buses)
    ring_lines = tuple(ln.key for ln in net.lines if ln.cls == RING)
    tree_lines = tuple(ln.key for ln in net.lines if ln.cls == TREE)

    by_id = {b.id: b for b in net.buses}
    for ln in net.lines:
        ci, cj = by_id[ln.i].cls, by_id[ln.j].cls
        if {ci, cj} == {GENERATOR}:
            raise NetworkError(f"line {ln.i}-{ln.j}: two generator buses may not be adjacent")
        if rings and {ci, cj} == {GENERATOR, TREE}:
            raise NetworkError(
                f"line {ln.i}-{ln.j}: generator attaches to a tree bus although ring buses exist"
            )
    for g in gens:
        if not net.lines_at(g):
            raise NetworkError(f"bus {g}: generator has no line")
    return TopologyReport(gens, rings, trees, ring_lines, tree_lines)
