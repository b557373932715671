"""Execution semantics: arcs joined by resets, with Zeno classification.

An execution alternates flow arcs and resets. Simulation terminates on the
time horizon (classified Infinite), on the jump budget with a geometric-gap
test (Zeno, with an extrapolated stop time), when a point has no
continuation (Blocked), or on the jump budget without geometric decay
(BudgetTruncated).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .integrate import integrate_arc
from .system import HybridSystemDef, State


@dataclass(frozen=True)
class SimBudget:
    max_time: float = 100.0
    max_jumps: int = 200
    zeno_ratio_window: int = 8
    integrator_tol: float = 1e-8
    event_tol: float = 1e-9

    def __post_init__(self):
        for name in ("max_time", "max_jumps", "zeno_ratio_window", "integrator_tol", "event_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class ExecutionClass:
    kind: str  # "infinite" | "zeno" | "blocked" | "truncated"
    horizon_reached: float | None = None
    stop_time_estimate: float | None = None
    final_state: State | None = None

    @classmethod
    def infinite(cls, horizon: float) -> "ExecutionClass":
        return cls("infinite", horizon_reached=horizon)

    @classmethod
    def zeno(cls, stop_time: float) -> "ExecutionClass":
        return cls("zeno", stop_time_estimate=stop_time)

    @classmethod
    def blocked(cls, final: State) -> "ExecutionClass":
        return cls("blocked", final_state=final)

    @classmethod
    def truncated(cls) -> "ExecutionClass":
        return cls("truncated")


@dataclass(frozen=True)
class Jump:
    time: float
    pre_state: State
    post_state: State


@dataclass
class Arc:
    """A sampled flow arc: absolute times and states of one mode segment."""

    mode: int
    times: np.ndarray
    states: np.ndarray


@dataclass
class ExecutionTrace:
    initial_state: State
    jumps: list[Jump]
    arcs: list[Arc]
    classification: ExecutionClass
    final_state: State | None = None

    @property
    def n_jumps(self) -> int:
        return len(self.jumps)

    @property
    def jump_times(self) -> list[float]:
        return [j.time for j in self.jumps]

    def to_csv(self, path) -> None:
        """Write the sampled arcs as (arc_index, t, mode, x0, x1, ...)."""
        max_dim = max((a.states.shape[1] for a in self.arcs), default=1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["arc_index", "t", "mode"] + [f"x{i}" for i in range(max_dim)])
            for ai, arc in enumerate(self.arcs):
                for t, x in zip(arc.times, arc.states):
                    row = [ai, f"{t:.12g}", arc.mode]
                    row += [f"{v:.12g}" for v in x]
                    row += [""] * (max_dim - len(x))
                    w.writerow(row)

    def state_at(self, t: float) -> State | None:
        """State on the arc containing time t (first match wins at jumps)."""
        for arc in self.arcs:
            if arc.times[0] - 1e-12 <= t <= arc.times[-1] + 1e-12:
                i = int(np.searchsorted(arc.times, t))
                i = min(max(i, 0), len(arc.times) - 1)
                return State(arc.mode, arc.states[i])
        return None


def max_flow_time(
    sys: HybridSystemDef,
    s: State,
    horizon: float = 100.0,
    tol: float = 1e-8,
):
    """Time to the first guard hit from ``s``; 0 off the flow set.

    Returns the hit time as a float, or ``None`` when no guard is reached
    within the horizon (the exceeds-horizon case).
    """
    if sys.on_guard(s):
        return 0.0
    if not sys.in_state_space(s):
        return 0.0
    res = integrate_arc(sys, s, horizon, tol=tol, record=False)
    if res.kind == "guard":
        return float(res.t_end)
    return None


def _fit_zeno(gaps: list[float], window: int, t_now: float):
    """Fit a geometric ratio to the trailing inter-jump gaps.

    Returns (is_zeno, ratio). Two Zeno signatures are accepted: a clean
    geometric decay with ratio < 0.999, and a tail whose gaps have collapsed
    below measurement resolution relative to elapsed time (event location
    saturates once bounce amplitudes drop under the event tolerance), which
    counts as already converged (ratio 0).
    """
    tail = [g for g in gaps[-window:]]
    if len(tail) < 3:
        return False, None
    if float(np.median(tail)) <= 1e-4 * (1.0 + t_now):
        return True, 0.0
    ratios = []
    for a, b in zip(tail, tail[1:]):
        if a <= 1e-300:
            return True, 0.0
        ratios.append(b / a)
    rho = float(np.median(ratios))
    if not (0.0 <= rho < 0.999):
        return False, None
    spread = max(abs(r - rho) for r in ratios)
    if spread > 0.2 * max(rho, 0.05):
        return False, None
    return True, rho


def simulate_execution(
    sys: HybridSystemDef,
    s0: State,
    budget: SimBudget = SimBudget(),
) -> ExecutionTrace:
    """Run the (unique) maximal execution from ``s0`` under a finite budget."""
    jumps: list[Jump] = []
    arcs: list[Arc] = []
    t = 0.0
    state = s0

    def take_instant_resets(state: State, t: float) -> State | None:
        # a reset landing on the guard fires again immediately; a fixed point
        # of the reset on the guard is a zero-advance Zeno execution
        while sys.on_guard(state, budget.event_tol):
            post = sys.apply_reset(state, budget.event_tol)
            jumps.append(Jump(t, state, post))
            if post.mode == state.mode and sys.distance(post, state) < 1e-12:
                return None  # reset fixed point on the guard
            state = post
            if len(jumps) >= budget.max_jumps:
                return state
        return state

    nxt = take_instant_resets(state, t)
    if nxt is None:
        return ExecutionTrace(s0, jumps, arcs, ExecutionClass.zeno(t), final_state=state)
    state = nxt

    while True:
        if len(jumps) >= budget.max_jumps:
            gaps = [b - a for a, b in zip([0.0] + [j.time for j in jumps], [j.time for j in jumps])]
            is_zeno, rho = _fit_zeno(gaps, budget.zeno_ratio_window, t)
            if is_zeno:
                last_gap = gaps[-1] if gaps else 0.0
                stop = t + (last_gap * rho / (1 - rho) if rho and rho > 0 else 0.0)
                return ExecutionTrace(s0, jumps, arcs, ExecutionClass.zeno(stop), final_state=state)
            return ExecutionTrace(s0, jumps, arcs, ExecutionClass.truncated(), final_state=state)

        remaining = budget.max_time - t
        if remaining <= 1e-12:
            return ExecutionTrace(
                s0, jumps, arcs, ExecutionClass.infinite(budget.max_time), final_state=state
            )
        res = integrate_arc(
            sys, state, remaining, tol=budget.integrator_tol, event_tol=budget.event_tol
        )
        arcs.append(Arc(state.mode, res.times + t, res.states))
        if res.kind == "timeout":
            final = State(state.mode, res.x_end)
            return ExecutionTrace(
                s0, jumps, arcs, ExecutionClass.infinite(budget.max_time), final_state=final
            )
        if res.kind == "domain_exit":
            final = State(state.mode, res.x_end)
            return ExecutionTrace(s0, jumps, arcs, ExecutionClass.blocked(final), final_state=final)

        # guard hit: reset and continue
        t += res.t_end
        pre = State(state.mode, res.x_end)
        post = sys.apply_reset(pre, budget.event_tol)
        jumps.append(Jump(t, pre, post))
        nxt = take_instant_resets(post, t)
        if nxt is None:
            return ExecutionTrace(s0, jumps, arcs, ExecutionClass.zeno(t), final_state=post)
        state = nxt
