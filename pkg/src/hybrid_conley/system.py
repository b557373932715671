"""Hybrid system definitions: modes, guards, resets and membership tests.

A system is a disjoint union of modes. Each mode carries a polynomial vector
field on an axis-aligned box (optionally carved by closed polynomial
inequalities), and a list of guard components. A guard component is the zero
set of a scalar polynomial ``psi`` restricted by inequalities ``g_i(x) <= 0``,
together with a polynomial reset map into a target mode.

The flow set is *defined* as the state space minus the guard set, so guard
membership and flow-set membership are mutually exclusive and the system is
deterministic by construction. The extended metric is Euclidean within a mode
and infinite across modes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .poly import Poly, PolyMap

#: Default tolerance for "is this point on the guard surface".
EVENT_TOL = 1e-9
#: Default tolerance for inequality membership (g(x) <= INEQ_TOL counts).
INEQ_TOL = 1e-9


@dataclass(frozen=True)
class GuardComponent:
    """One component of the guard set of a mode.

    The active surface is {psi = 0} intersected with {g <= 0 for g in ineqs}
    and with the mode's domain. The reset map sends the surface into the
    target mode.
    """

    psi: Poly
    ineqs: tuple[Poly, ...]
    target_mode: int
    reset: PolyMap

    def on_surface(self, x, event_tol: float = EVENT_TOL, ineq_tol: float = INEQ_TOL) -> bool:
        if abs(self.psi(x)) > event_tol:
            return False
        return all(g(x) <= ineq_tol for g in self.ineqs)

    def ineqs_hold(self, x, ineq_tol: float = INEQ_TOL) -> bool:
        return all(g(x) <= ineq_tol for g in self.ineqs)


@dataclass(frozen=True)
class ModeSpec:
    """A single mode: vector field on a box, with guard components."""

    mode_id: int
    dim: int
    domain: tuple[tuple[float, float], ...]
    field: PolyMap
    guards: tuple[GuardComponent, ...] = ()
    ineqs: tuple[Poly, ...] = ()

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("mode dimension must be >= 1")
        if len(self.domain) != self.dim:
            raise ValueError("domain box does not match dimension")
        for lo, hi in self.domain:
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise ValueError(f"bad domain interval [{lo}, {hi}]")
        if len(self.field) != self.dim:
            raise ValueError("vector field does not match dimension")

    @property
    def lows(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.domain])

    @property
    def highs(self) -> np.ndarray:
        return np.array([hi for _, hi in self.domain])

    def in_box(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lows - tol) and np.all(x <= self.highs + tol))

    def in_region(self, x, tol: float = 1e-9) -> bool:
        """Inside both the domain box and the carving inequalities."""
        if not self.in_box(x, tol):
            return False
        return all(g(x) <= max(tol, INEQ_TOL) for g in self.ineqs)


@dataclass(frozen=True)
class State:
    """A point of the state space: mode id plus coordinates."""

    mode: int
    x: tuple[float, ...]

    def __init__(self, mode: int, x):
        object.__setattr__(self, "mode", int(mode))
        object.__setattr__(self, "x", tuple(float(v) for v in np.atleast_1d(x)))

    @property
    def coords(self) -> np.ndarray:
        return np.array(self.x, dtype=float)

    def __repr__(self):
        return f"State(mode={self.mode}, x={list(self.x)})"


class NotOnGuard(ValueError):
    pass


class ResetOutOfDomain(ValueError):
    pass


@dataclass(frozen=True)
class HybridSystemDef:
    """A hybrid system as a disjoint union of polynomial modes."""

    modes: tuple[ModeSpec, ...]
    event_tol: float = EVENT_TOL

    def __post_init__(self):
        ids = [m.mode_id for m in self.modes]
        if sorted(ids) != list(range(len(self.modes))):
            raise ValueError("mode ids must be unique and dense 0..n-1")
        object.__setattr__(self, "modes", tuple(sorted(self.modes, key=lambda m: m.mode_id)))

    def mode(self, mode_id: int) -> ModeSpec:
        return self.modes[mode_id]

    # -- membership --------------------------------------------------------

    def in_state_space(self, s: State, tol: float = 1e-9) -> bool:
        if not 0 <= s.mode < len(self.modes):
            return False
        return self.mode(s.mode).in_region(s.x, tol)

    def active_guards(self, s: State, event_tol: float | None = None) -> list[int]:
        """Indices of guard components whose surface contains ``s``."""
        tol = self.event_tol if event_tol is None else event_tol
        m = self.mode(s.mode)
        return [i for i, g in enumerate(m.guards) if g.on_surface(s.x, tol)]

    def on_guard(self, s: State, event_tol: float | None = None) -> bool:
        return bool(self.active_guards(s, event_tol))

    def in_flow_set(self, s: State, event_tol: float | None = None) -> bool:
        return self.in_state_space(s) and not self.on_guard(s, event_tol)

    # -- metric -------------------------------------------------------------

    def distance(self, a: State, b: State) -> float:
        """Extended metric: Euclidean within a mode, infinite across modes."""
        if a.mode != b.mode:
            return float("inf")
        return float(np.linalg.norm(a.coords - b.coords))

    # -- reset --------------------------------------------------------------

    def apply_reset(self, s: State, event_tol: float | None = None) -> State:
        """Apply the reset map at a guard point.

        Raises NotOnGuard when no guard component is active at ``s`` and
        ResetOutOfDomain when the image violates the target mode's region by
        more than the event tolerance. Images within tolerance of the target
        domain box are clamped onto it.
        """
        tol = self.event_tol if event_tol is None else event_tol
        active = self.active_guards(s, tol)
        if not active:
            raise NotOnGuard(f"{s} is not on the guard (tol={tol})")
        comp = self.mode(s.mode).guards[active[0]]
        image = comp.reset(s.x)
        target = self.mode(comp.target_mode)
        clamp_slack = max(tol, 1e-7)
        lo, hi = target.lows, target.highs
        if np.any(image < lo - clamp_slack) or np.any(image > hi + clamp_slack):
            raise ResetOutOfDomain(
                f"reset image {image.tolist()} of {s} leaves mode {comp.target_mode} domain"
            )
        clamped = np.clip(image, lo, hi)
        for g in target.ineqs:
            if g(clamped) > max(1e-6, clamp_slack):
                raise ResetOutOfDomain(
                    f"reset image {image.tolist()} of {s} violates mode "
                    f"{comp.target_mode} inequality"
                )
        return State(comp.target_mode, clamped)

    # -- serialization -------------------------------------------------------

    def to_json(self) -> dict:
        modes = []
        for m in self.modes:
            modes.append(
                {
                    "id": m.mode_id,
                    "dim": m.dim,
                    "domain": [[lo, hi] for lo, hi in m.domain],
                    "field": m.field.to_json(),
                    "ineqs": [g.to_json() for g in m.ineqs],
                    "guards": [
                        {
                            "psi": g.psi.to_json(),
                            "ineqs": [q.to_json() for q in g.ineqs],
                            "target": g.target_mode,
                            "reset": g.reset.to_json(),
                        }
                        for g in m.guards
                    ],
                }
            )
        return {"modes": modes}

    @classmethod
    def from_json(cls, data: dict) -> "HybridSystemDef":
        modes = []
        dims = {int(md["id"]): int(md["dim"]) for md in data["modes"]}
        for md in data["modes"]:
            dim = int(md["dim"])
            guards = []
            for gd in md.get("guards", []):
                target = int(gd["target"])
                guards.append(
                    GuardComponent(
                        psi=Poly.from_json(gd["psi"], dim),
                        ineqs=tuple(Poly.from_json(q, dim) for q in gd.get("ineqs", [])),
                        target_mode=target,
                        reset=PolyMap.from_json(gd["reset"], dim, dims[target]),
                    )
                )
            modes.append(
                ModeSpec(
                    mode_id=int(md["id"]),
                    dim=dim,
                    domain=tuple((float(lo), float(hi)) for lo, hi in md["domain"]),
                    field=PolyMap.from_json(md["field"], dim, dim),
                    guards=tuple(guards),
                    ineqs=tuple(Poly.from_json(q, dim) for q in md.get("ineqs", [])),
                )
            )
        return cls(modes=tuple(modes))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "HybridSystemDef":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class Diagnostic:
    kind: str
    mode: int
    detail: str


def _guard_surface_samples(sys: HybridSystemDef, mode: ModeSpec, gidx: int, per_axis: int = 7):
    """Sample points on one guard surface inside the mode region.

    Scans a lattice over the domain box, then refines psi sign changes along
    lattice edges by bisection. Lattice points already on the surface are
    kept directly.
    """
    comp = mode.guards[gidx]
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in mode.domain]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    vals = comp.psi.eval_batch(pts)
    out = []
    for p, v in zip(pts, vals):
        if abs(v) <= 1e-12 and comp.ineqs_hold(p) and mode.in_region(p):
            out.append(np.array(p))
    # refine sign changes along axis-aligned lattice edges
    shape = grids[0].shape
    vals_nd = vals.reshape(shape)
    for axis in range(mode.dim):
        sl_lo = [slice(None)] * mode.dim
        sl_hi = [slice(None)] * mode.dim
        sl_lo[axis] = slice(0, -1)
        sl_hi[axis] = slice(1, None)
        sign_change = vals_nd[tuple(sl_lo)] * vals_nd[tuple(sl_hi)] < 0
        idxs = np.argwhere(sign_change)
        for idx in idxs:
            lo_idx = list(idx)
            hi_idx = list(idx)
            hi_idx[axis] += 1
            a = np.array([axes[d][lo_idx[d]] for d in range(mode.dim)])
            b = np.array([axes[d][hi_idx[d]] for d in range(mode.dim)])
            fa = comp.psi(a)
            for _ in range(60):
                m = 0.5 * (a + b)
                fm = comp.psi(m)
                if fa * fm <= 0:
                    b = m
                else:
                    a, fa = m, fm
            p = 0.5 * (a + b)
            if comp.ineqs_hold(p, 1e-7) and mode.in_region(p, 1e-7):
                out.append(p)
    return out


def validate_system(sys: HybridSystemDef, samples_per_guard: int = 25) -> list[Diagnostic]:
    """Structural and sampled-numeric diagnostics for a system definition.

    Checks polynomial arities, reset target dimensions, reset images of
    sampled guard points, sampled guard transversality (an inward-pointing
    guard, dpsi.X > 0, is flagged), and degenerate tangencies where the first
    few Lie derivatives of psi all vanish.
    """
    diags: list[Diagnostic] = []
    for m in sys.modes:
        for p in m.field:
            if p.nvars != m.dim:
                diags.append(Diagnostic("BadArity", m.mode_id, "field arity != dim"))
        for g in m.ineqs:
            if g.nvars != m.dim:
                diags.append(Diagnostic("BadArity", m.mode_id, "ineq arity != dim"))
        for gi, comp in enumerate(m.guards):
            if comp.psi.nvars != m.dim:
                diags.append(Diagnostic("BadArity", m.mode_id, f"guard {gi} psi arity"))
            if not 0 <= comp.target_mode < len(sys.modes):
                diags.append(Diagnostic("BadTarget", m.mode_id, f"guard {gi} target"))
                continue
            target = sys.mode(comp.target_mode)
            if len(comp.reset) != target.dim:
                diags.append(
                    Diagnostic("BadArity", m.mode_id, f"guard {gi} reset arity != target dim")
                )
                continue
            pts = _guard_surface_samples(sys, m, gi)
            # Lie derivative tower of psi along the field, for transversality
            lie1 = comp.psi.lie_along(list(m.field))
            tower = [lie1]
            for _ in range(3):
                tower.append(tower[-1].lie_along(list(m.field)))
            for p in pts[:samples_per_guard]:
                image = comp.reset(p)
                lo, hi = target.lows, target.highs
                if np.any(image < lo - 1e-7) or np.any(image > hi + 1e-7):
                    diags.append(
                        Diagnostic(
                            "ResetOutOfDomain",
                            m.mode_id,
                            f"guard {gi}: image {np.round(image, 6).tolist()} of "
                            f"{np.round(p, 6).tolist()} leaves mode {comp.target_mode}",
                        )
                    )
                    continue
                v1 = lie1(p)
                if v1 > 1e-7:
                    diags.append(
                        Diagnostic(
                            "InwardPointingGuard",
                            m.mode_id,
                            f"guard {gi}: dpsi.X = {v1:.3g} > 0 at {np.round(p, 6).tolist()}",
                        )
                    )
                elif abs(v1) <= 1e-9 and all(abs(t(p)) <= 1e-9 for t in tower):
                    diags.append(
                        Diagnostic(
                            "DegenerateTangency",
                            m.mode_id,
                            f"guard {gi}: all sampled Lie derivatives 0 at "
                            f"{np.round(p, 6).tolist()}",
                        )
                    )
    return diags
