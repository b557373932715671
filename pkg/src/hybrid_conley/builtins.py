"""Built-in example systems with closed-form oracles.

Each registry entry constructs a :class:`HybridSystemDef` and exposes the
quantities that have exact expressions (first-hit times, Zeno stop times,
chain recurrent sets, energies, Lyapunov candidates). The oracles are used
by the test suite as independent references for the numerical pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .poly import Poly, PolyMap
from .system import GuardComponent, HybridSystemDef, ModeSpec, State


class BadParameter(ValueError):
    pass


# ---------------------------------------------------------------------------
# bouncing ball against gravity: x'' = -g, reset y -> -d y at the floor
# ---------------------------------------------------------------------------


def make_bouncing_ball(g: float = 1.0, d: float = 0.8, e0: float = 5.0) -> HybridSystemDef:
    """Half-plane {x >= 0} restricted to the energy sublevel y^2/2 + g x <= e0."""
    if not (g > 0 and 0.0 <= d <= 1.0 and e0 > 0):
        raise BadParameter("need g > 0, d in [0,1], e0 > 0")
    x = Poly.variable(2, 0)
    y = Poly.variable(2, 1)
    field = PolyMap([y, Poly.constant(2, -g)])
    y_max = math.sqrt(2 * e0)
    guard = GuardComponent(
        psi=x,
        ineqs=(y,),  # y <= 0
        target_mode=0,
        reset=PolyMap([Poly.zero(2), y.scale(-d)]),
    )
    energy = y * y * Fraction(1, 2) + x.scale(g) - Poly.constant(2, e0)
    mode = ModeSpec(
        mode_id=0,
        dim=2,
        domain=((0.0, e0 / g), (-y_max, y_max)),
        field=field,
        guards=(guard,),
        ineqs=(energy,),
    )
    return HybridSystemDef(modes=(mode,))


def ball_mu(x: float, y: float, g: float = 1.0) -> float:
    """First-hit time of the floor from (x, y): (y + sqrt(y^2 + 2xg)) / g."""
    return (y + math.sqrt(y * y + 2 * x * g)) / g


def ball_impact_speed(x: float, y: float, g: float = 1.0) -> float:
    return math.sqrt(y * y + 2 * x * g)


def ball_stop_time(x: float, y: float, g: float = 1.0, d: float = 0.8) -> float:
    """Total elapsed time of the Zeno execution from (x, y) for d < 1.

    First arc takes ball_mu(x, y); each subsequent full bounce at impact
    speed v_n = d^n * v contributes 2 v_n / g, summing geometrically.
    """
    if not 0 <= d < 1:
        raise BadParameter("stop time is finite only for d < 1")
    v = ball_impact_speed(x, y, g)
    return ball_mu(x, y, g) + (2 * v / g) * d / (1 - d)


def ball_energy(x: float, y: float, g: float = 1.0) -> float:
    return 0.5 * y * y + g * x


# ---------------------------------------------------------------------------
# ball against a Hookean spring: x'' = -x, same guard and reset
# ---------------------------------------------------------------------------


def make_spring(d: float = 0.8, e0: float = 5.0) -> HybridSystemDef:
    if not (0.0 <= d <= 1.0 and e0 > 0):
        raise BadParameter("need d in [0,1], e0 > 0")
    x = Poly.variable(2, 0)
    y = Poly.variable(2, 1)
    field = PolyMap([y, x.scale(-1)])
    r_max = math.sqrt(2 * e0)
    guard = GuardComponent(
        psi=x,
        ineqs=(y,),
        target_mode=0,
        reset=PolyMap([Poly.zero(2), y.scale(-d)]),
    )
    energy = (x * x + y * y) * Fraction(1, 2) - Poly.constant(2, e0)
    mode = ModeSpec(
        mode_id=0,
        dim=2,
        domain=((0.0, r_max), (-r_max, r_max)),
        field=field,
        guards=(guard,),
        ineqs=(energy,),
    )
    return HybridSystemDef(modes=(mode,))


def spring_mu(x: float, y: float) -> float:
    """First-hit time in polar terms: theta + pi/2 on {x >= 0}, 0 at the origin."""
    if x == 0.0 and y == 0.0:
        return 0.0
    return math.atan2(y, x) + math.pi / 2


# ---------------------------------------------------------------------------
# two-interval counterexample: no complete Lyapunov function exists
# ---------------------------------------------------------------------------


def make_counterexample() -> HybridSystemDef:
    """Modes [-1,0] (field -t) and [1,3] (field 1), resets 0->1 and {2,3}->-1."""
    t1 = Poly.variable(1, 0)
    mode0 = ModeSpec(
        mode_id=0,
        dim=1,
        domain=((-1.0, 0.0),),
        field=PolyMap([t1.scale(-1)]),
        guards=(
            GuardComponent(
                psi=t1.scale(-1),  # zero at 0, positive on t < 0
                ineqs=(),
                target_mode=1,
                reset=PolyMap([Poly.constant(1, 1)]),
            ),
        ),
    )
    mode1 = ModeSpec(
        mode_id=1,
        dim=1,
        domain=((1.0, 3.0),),
        field=PolyMap([Poly.constant(1, 1)]),
        guards=(
            GuardComponent(
                psi=Poly.constant(1, 2) - t1,  # zero at 2, positive on t < 2
                ineqs=(),
                target_mode=0,
                reset=PolyMap([Poly.constant(1, -1)]),
            ),
            GuardComponent(
                psi=Poly.constant(1, 3) - t1,  # zero at 3
                ineqs=(),
                target_mode=0,
                reset=PolyMap([Poly.constant(1, -1)]),
            ),
        ),
    )
    return HybridSystemDef(modes=(mode0, mode1))


# ---------------------------------------------------------------------------
# omega-limit pathology on [-3,-2] u [-1,0] u {1}
# ---------------------------------------------------------------------------


def make_omega_pathology() -> HybridSystemDef:
    """Resets -3 -> -1, -2 -> -3, 0 -> 1; drift right on [-3,-2], decay on [-1,0]."""
    t1 = Poly.variable(1, 0)
    mode0 = ModeSpec(
        mode_id=0,
        dim=1,
        domain=((-3.0, -2.0),),
        field=PolyMap([Poly.constant(1, 1)]),
        guards=(
            GuardComponent(
                psi=t1 + Poly.constant(1, 3),  # zero at -3 (repelling end)
                ineqs=(),
                target_mode=1,
                reset=PolyMap([Poly.constant(1, -1)]),
            ),
            GuardComponent(
                psi=Poly.constant(1, -2) - t1,  # zero at -2
                ineqs=(),
                target_mode=0,
                reset=PolyMap([Poly.constant(1, -3)]),
            ),
        ),
    )
    mode1 = ModeSpec(
        mode_id=1,
        dim=1,
        domain=((-1.0, 0.0),),
        field=PolyMap([t1.scale(-1)]),
        guards=(
            GuardComponent(
                psi=t1.scale(-1),  # zero at 0
                ineqs=(),
                target_mode=2,
                reset=PolyMap([Poly.constant(1, 1)]),
            ),
        ),
    )
    mode2 = ModeSpec(
        mode_id=2,
        dim=1,
        domain=((1.0, 1.0),),
        field=PolyMap([Poly.zero(1)]),
        guards=(),
    )
    return HybridSystemDef(modes=(mode0, mode1, mode2))


# ---------------------------------------------------------------------------
# discrete map systems (flow set empty): circle rotation
# ---------------------------------------------------------------------------


def make_circle_rotation(alpha: Fraction | float = Fraction(377, 1000)) -> HybridSystemDef:
    """Rotation x -> x + alpha (mod 1) as a pure-guard system on [0, 1].

    Every point is on the guard (psi identically zero), so time never
    elapses and executions are jump sequences. The wraparound is split into
    two guard components with complementary activation inequalities.
    """
    alpha = Fraction(alpha).limit_denominator(10**6)
    if not 0 < alpha < 1:
        raise BadParameter("alpha must be in (0,1)")
    t1 = Poly.variable(1, 0)
    zero = Poly.zero(1)
    comp_a = GuardComponent(
        psi=zero,
        ineqs=(t1 - Poly.constant(1, 1 - alpha),),  # x <= 1 - alpha
        target_mode=0,
        reset=PolyMap([t1 + Poly.constant(1, alpha)]),
    )
    comp_b = GuardComponent(
        psi=zero,
        ineqs=(Poly.constant(1, 1 - alpha) - t1,),  # x >= 1 - alpha
        target_mode=0,
        reset=PolyMap([t1 + Poly.constant(1, alpha - 1)]),
    )
    mode = ModeSpec(
        mode_id=0,
        dim=1,
        domain=((0.0, 1.0),),
        field=PolyMap([zero]),
        guards=(comp_a, comp_b),
    )
    return HybridSystemDef(modes=(mode,))


def rotation_iterate(x: float, alpha: float, n: int) -> float:
    return float((x + n * alpha) % 1.0)


# ---------------------------------------------------------------------------
# guard-free gradient flow with equilibria on the grid lattice
# ---------------------------------------------------------------------------


def make_gradient_flow() -> HybridSystemDef:
    """x' = x - x^3 on [-2, 2]: stable equilibria at +-1, unstable at 0."""
    t1 = Poly.variable(1, 0)
    cubic = t1 - t1 * t1 * t1
    mode = ModeSpec(
        mode_id=0,
        dim=1,
        domain=((-2.0, 2.0),),
        field=PolyMap([cubic]),
        guards=(),
    )
    return HybridSystemDef(modes=(mode,))


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BuiltInSystem:
    name: str
    make: Callable[..., HybridSystemDef]
    params: tuple[str, ...]
    recurrent_description: str


REGISTRY: dict[str, BuiltInSystem] = {
    "ball": BuiltInSystem(
        "ball",
        make_bouncing_ball,
        ("g", "d", "e0"),
        "origin for d < 1; the whole sublevel set for d = 1",
    ),
    "spring": BuiltInSystem(
        "spring",
        make_spring,
        ("d", "e0"),
        "origin for d < 1; the whole sublevel set for d = 1",
    ),
    "counterexample": BuiltInSystem(
        "counterexample",
        make_counterexample,
        (),
        "[-1,0] u [1,2], a single chain class",
    ),
    "omegapathology": BuiltInSystem(
        "omegapathology",
        make_omega_pathology,
        (),
        "(-3,-2] u {1}; not closed, not forward invariant",
    ),
    "rotation": BuiltInSystem(
        "rotation",
        make_circle_rotation,
        ("alpha",),
        "the whole circle",
    ),
    "gradientflow": BuiltInSystem(
        "gradientflow",
        make_gradient_flow,
        (),
        "equilibria at -1, 0, 1",
    ),
}

_ALIASES = {
    "bouncing_ball": "ball",
    "bouncingball": "ball",
    "omega_pathology": "omegapathology",
    "pathology": "omegapathology",
    "circle_rotation": "rotation",
    "gradient_flow": "gradientflow",
}


def instantiate(name: str, **params) -> HybridSystemDef:
    """Build a registered system by name. Unknown names raise BadParameter."""
    key = name.lower().replace("-", "_")
    key = _ALIASES.get(key, key.replace("_", ""))
    key = _ALIASES.get(key, key)
    if key not in REGISTRY:
        raise BadParameter(f"unknown builtin {name!r}; known: {sorted(REGISTRY)}")
    return REGISTRY[key].make(**params)


def oracle_report(name: str, **params) -> dict:
    """Closed-form quantities for a builtin, as a JSON-ready dict."""
    key = name.lower().replace("-", "_")
    key = _ALIASES.get(key, key.replace("_", ""))
    key = _ALIASES.get(key, key)
    if key == "ball":
        g = params.get("g", 1.0)
        d = params.get("d", 0.8)
        e0 = params.get("e0", 5.0)
        samples = [(0.5, 3.0), (0.0, -2.0), (1.0, 0.0), (2.0, -1.0), (0.25, 1.5)]
        rows = []
        for x, y in samples:
            row = {"x": x, "y": y, "mu": ball_mu(x, y, g), "energy": ball_energy(x, y, g)}
            if d < 1:
                row["stop_time"] = ball_stop_time(x, y, g, d)
            rows.append(row)
        return {
            "system": "ball",
            "params": {"g": g, "d": d, "e0": e0},
            "mu_formula": "(y + sqrt(y^2 + 2 x g)) / g",
            "stop_time_formula": "mu(x, y) + (2 sqrt(y^2 + 2 x g) / g) * d / (1 - d)",
            "energy_formula": "y^2/2 + g x",
            "recurrent_set": "{origin}" if d < 1 else "entire sublevel set",
            "samples": rows,
        }
    if key == "spring":
        d = params.get("d", 0.8)
        e0 = params.get("e0", 5.0)
        samples = [(1.0, 0.0), (math.sqrt(2) / 2, math.sqrt(2) / 2), (0.5, -0.5)]
        rows = [{"x": x, "y": y, "mu": spring_mu(x, y)} for x, y in samples]
        return {
            "system": "spring",
            "params": {"d": d, "e0": e0},
            "mu_formula": "atan2(y, x) + pi/2 (0 at origin)",
            "recurrent_set": "{origin}" if d < 1 else "entire sublevel set",
            "samples": rows,
        }
    if key == "counterexample":
        return {
            "system": "counterexample",
            "recurrent_set": "[-1,0] u [1,2]",
            "chain_classes": ["[-1,0] u [1,2]"],
            "nontrivial_pairs": [],
            "lyapunov_exists": False,
            "obstruction_cycle": [2.0, 3.0, -1.0],
        }
    if key == "omegapathology":
        return {
            "system": "omegapathology",
            "recurrent_set": "(-3,-2] u {1}",
            "omega_of_minus_one": [0.0],
            "forward_invariance_failure": "-2 -> -3 -> -1 leaves the recurrent set",
        }
    if key == "rotation":
        alpha = float(params.get("alpha", 0.377))
        return {
            "system": "rotation",
            "alpha": alpha,
            "recurrent_set": "whole circle",
            "suspension": "mapping torus with unit ceiling",
        }
    if key == "gradientflow":
        return {
            "system": "gradientflow",
            "equilibria": [-1.0, 0.0, 1.0],
            "recurrent_set": "{-1, 0, 1}",
        }
    raise BadParameter(f"unknown builtin {name!r}")


def recurrent_reference(name: str, sys: HybridSystemDef, **params):
    """Membership test for the oracle chain recurrent set, where known.

    Returns a predicate State -> bool, or None when the builtin has no exact
    description (used by the Lyapunov verifier to split flow/reset checks).
    """
    key = name.lower().replace("-", "_")
    key = _ALIASES.get(key, key.replace("_", ""))
    key = _ALIASES.get(key, key)
    if key in ("ball", "spring"):
        d = params.get("d", 0.8)
        if d >= 1:
            return lambda s: True
        return lambda s: float(np.linalg.norm(s.coords)) < 1e-9
    if key == "counterexample":

        def member(s: State) -> bool:
            v = s.x[0]
            return (s.mode == 0) or (s.mode == 1 and v <= 2.0 + 1e-12)

        return member
    if key == "omegapathology":

        def member(s: State) -> bool:
            if s.mode == 2:
                return True
            return s.mode == 0 and s.x[0] > -3.0 + 1e-12

        return member
    if key == "rotation":
        return lambda s: True
    if key == "gradientflow":
        return lambda s: any(abs(s.x[0] - e) < 1e-9 for e in (-1.0, 0.0, 1.0))
    return None
