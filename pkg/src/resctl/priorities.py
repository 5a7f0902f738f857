"""Priority weights and the survivability / functionality indices."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from .network import Network


@dataclass(frozen=True)
class PriorityScheme:
    """Per-level weights plus per-load functionality weights.

    ``kappa[m]`` is the common weight of every load in level ``m`` (1-based,
    level 1 = highest priority).  The weights satisfy the strict dominance
    rule: each level outweighs all lower levels combined.
    """

    levels: tuple[int, ...]              # level count phi_m, index 0 = level 1
    kappa: tuple[int, ...]               # per-level weight
    load_level: Mapping[int, int]        # load bus id -> level
    lam: Mapping[int, float]             # load bus id -> functionality weight

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def kappa_of(self, bus_id: int) -> int:
        return self.kappa[self.load_level[bus_id] - 1]

    @property
    def kappa_total(self) -> int:
        return sum(self.kappa_of(i) for i in self.load_level)

    def check_dominance(self) -> None:
        for m in range(self.num_levels - 1):
            tail = sum(self.levels[r] * self.kappa[r] for r in range(m + 1, self.num_levels))
            if not self.kappa[m] > tail:
                raise ValueError(
                    f"priority weights violate dominance at level {m + 1}: "
                    f"{self.kappa[m]} <= {tail}"
                )


def minimal_weights(phi: Sequence[int]) -> tuple[int, ...]:
    """Smallest positive integer weights with strict dominance over lower levels.

    kappa_M = 1 and kappa_m = 1 + sum_{r>m} phi_r * kappa_r.  Reproduces the
    (729, 81, 9, 1) ladder of the reference system.  Integer arithmetic keeps
    this exact up to roughly twelve levels of ten loads each.
    """
    if len(phi) == 0:
        raise ValueError("at least one priority level is required")
    if any(p < 1 for p in phi):
        raise ValueError(f"every level needs at least one load, got {tuple(phi)}")
    kappa = [0] * len(phi)
    acc = 0
    for m in range(len(phi) - 1, -1, -1):
        kappa[m] = 1 + acc
        acc += phi[m] * kappa[m]
    return tuple(kappa)


def scheme_from_network(net: Network) -> PriorityScheme:
    """Derive the minimal-weight scheme from the loads' declared levels."""
    loads = net.load_buses
    if not loads:
        raise ValueError("network has no loads; no priority scheme to build")
    max_level = max(b.priority for b in loads)
    phi = [0] * max_level
    for b in loads:
        phi[b.priority - 1] += 1
    if any(p == 0 for p in phi):
        empty = [m + 1 for m, p in enumerate(phi) if p == 0]
        raise ValueError(f"priority levels {empty} have no loads")
    kappa = minimal_weights(phi)
    scheme = PriorityScheme(
        levels=tuple(phi),
        kappa=kappa,
        load_level={b.id: b.priority for b in loads},
        lam={b.id: b.lam for b in loads},
    )
    scheme.check_dominance()
    return scheme


def survivability(scheme: PriorityScheme, eta: Mapping[int, int]) -> float:
    """Normalized priority-weighted count of switched-on loads, in [0, 1]."""
    return float(survivability_fraction(scheme, eta))


def survivability_fraction(scheme: PriorityScheme, eta: Mapping[int, int]) -> Fraction:
    num = 0
    den = 0
    for bus_id in scheme.load_level:
        k = scheme.kappa_of(bus_id)
        den += k
        if eta.get(bus_id, 0):
            num += k
    return Fraction(num, den)


def functionality(
    scheme: PriorityScheme,
    eta: Mapping[int, int],
    p: Mapping[int, float],
    p_min: Mapping[int, float],
) -> tuple[float, bool]:
    """Weighted fraction of maximum load power delivered to switched-on loads.

    Returns ``(value, all_off)``.  With every load switched off the index is
    undefined; it is reported as 1.0 with the flag set so that a blackout run
    degrades gracefully instead of erroring.
    """
    num = 0.0
    den = 0.0
    for bus_id in scheme.load_level:
        if eta.get(bus_id, 0):
            w = scheme.lam[bus_id]
            num += w * p.get(bus_id, 0.0)
            den += w * p_min[bus_id]
    if den == 0.0:
        return 1.0, True
    return num / den, False
