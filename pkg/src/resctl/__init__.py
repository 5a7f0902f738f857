"""Two-phase resilience control for DC shipboard power systems."""

__version__ = "0.1.0"

from .network import (  # noqa: F401
    Bus, Line, Network, FaultScenario, NetworkError, TopologyReport,
    parse_network, load_network, serialize_network, apply_fault, classify_topology,
)
from .priorities import (  # noqa: F401
    PriorityScheme, minimal_weights, scheme_from_network, survivability,
    survivability_fraction, functionality,
)
from .conic import ConicProgram, ProgramBuilder, RotatedCone, VariableMap  # noqa: F401
from .ipm import ConicSolution, Tolerances, solve_relaxation, warm_hint  # noqa: F401
