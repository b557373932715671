"""Conley-theoretic analysis of hybrid dynamical systems.

Simulation of hybrid executions (guard events, resets, Zeno classification),
box-graph chain recurrence and attractor-repeller pairs, box-level complete
Lyapunov functions, explicit chain search, the relaxed system and suspension
semiflow, and symbolic/sampled guard verification.
"""

from .poly import Poly, PolyMap
from .system import (
    GuardComponent,
    HybridSystemDef,
    ModeSpec,
    NotOnGuard,
    ResetOutOfDomain,
    State,
    validate_system,
)
from .integrate import ArcResult, NonFiniteState, StepUnderflow, integrate_arc
from .execution import (
    ExecutionClass,
    ExecutionTrace,
    Jump,
    SimBudget,
    max_flow_time,
    simulate_execution,
)
from .builtins import (
    BadParameter,
    instantiate,
    oracle_report,
    ball_mu,
    ball_stop_time,
    ball_energy,
    spring_mu,
)

__version__ = "0.1.0"

__all__ = [
    "Poly",
    "PolyMap",
    "GuardComponent",
    "HybridSystemDef",
    "ModeSpec",
    "State",
    "NotOnGuard",
    "ResetOutOfDomain",
    "validate_system",
    "ArcResult",
    "NonFiniteState",
    "StepUnderflow",
    "integrate_arc",
    "ExecutionClass",
    "ExecutionTrace",
    "Jump",
    "SimBudget",
    "max_flow_time",
    "simulate_execution",
    "BadParameter",
    "instantiate",
    "oracle_report",
    "ball_mu",
    "ball_stop_time",
    "ball_energy",
    "spring_mu",
    "__version__",
]
