"""Numerical integration of mode flows with guard event detection.

Two engines share the same event semantics:

* :func:`integrate_arc` -- adaptive RKF45 for a single trajectory, used by
  the execution simulator, chain lifting and the suspension semiflow.
* :func:`flow_samples` -- vectorized fixed-step RK4 over a batch of points,
  used by transition-graph construction where throughput dominates.

A guard crossing fires when psi changes sign from positive to nonpositive
(or touches zero) along a step, the guard inequalities hold at the refined
root, and the Lie derivative dpsi.X is nonpositive there; upward "grazing"
crossings are rejected. Guards are armed only once psi has been observed
above tolerance, so a trajectory started on the surface with inactive
inequalities (a fresh reset image) does not immediately retrigger.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .system import HybridSystemDef, ModeSpec, State


class NonFiniteState(RuntimeError):
    pass


class StepUnderflow(RuntimeError):
    pass


# Fehlberg 4(5) tableau
_A = [
    [],
    [1 / 4],
    [3 / 32, 9 / 32],
    [1932 / 2197, -7200 / 2197, 7296 / 2197],
    [439 / 216, -8, 3680 / 513, -845 / 4104],
    [-8 / 27, 2, -3544 / 2565, 1859 / 4104, -11 / 40],
]
_C = [0, 1 / 4, 3 / 8, 12 / 13, 1, 1 / 2]
_B5 = [16 / 135, 0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55]
_B4 = [25 / 216, 0, 1408 / 2565, 2197 / 4104, -1 / 5, 0]


@dataclass
class ArcResult:
    """Outcome of integrating one flow arc."""

    kind: str  # "guard" | "timeout" | "domain_exit"
    times: np.ndarray  # sample times, starting at 0
    states: np.ndarray  # (n, dim) samples
    t_end: float
    x_end: np.ndarray
    guard_idx: int | None = None


def _rkf45_step(f, x, dt):
    k = []
    for i in range(6):
        xi = x
        for a, kj in zip(_A[i], k):
            xi = xi + dt * a * kj
        k.append(f(xi))
    x5 = x + dt * sum(b * kj for b, kj in zip(_B5, k))
    x4 = x + dt * sum(b * kj for b, kj in zip(_B4, k))
    err = float(np.max(np.abs(x5 - x4)))
    return x5, err


def _rk4_step(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _advance(f, x, dt, nsub=2):
    """Accurate small-step advance used during event bisection."""
    out = x
    h = dt / nsub
    for _ in range(nsub):
        out = _rk4_step(f, out, h)
    return out


def _locate_guard(f, comp, x0, dt, psi0, event_tol, max_iter=128):
    """Bisect the crossing time of psi within (0, dt] starting from x0.

    Returns (t_hit, x_hit) with |psi(x_hit)| < event_tol. The running point
    is re-advanced from the bracket's left end so accuracy does not degrade
    as the bracket shrinks.
    """
    t_lo, x_lo = 0.0, x0
    t_hi = dt
    for _ in range(max_iter):
        t_mid = 0.5 * (t_lo + t_hi)
        x_mid = _advance(f, x_lo, t_mid - t_lo)
        p = comp.psi(x_mid)
        if abs(p) < event_tol:
            return t_mid, x_mid
        if p > 0:
            t_lo, x_lo = t_mid, x_mid
        else:
            t_hi = t_mid
        if t_hi - t_lo < 1e-16 * max(1.0, abs(t_hi)):
            x_end = _advance(f, x_lo, t_hi - t_lo)
            if abs(comp.psi(x_end)) < 10 * event_tol:
                return t_hi, x_end
            break
    raise StepUnderflow("guard bisection failed to converge")


def integrate_arc(
    sys: HybridSystemDef,
    s0: State,
    t_max: float,
    tol: float = 1e-8,
    event_tol: float | None = None,
    max_step: float | None = None,
    record: bool = True,
) -> ArcResult:
    """Integrate the flow from a flow-set point until guard hit or timeout.

    Adaptive RKF45. Returns an :class:`ArcResult` whose kind is ``guard``
    (with the refined surface point and active component index), ``timeout``
    at ``t_max``, or ``domain_exit`` when the trajectory leaves the mode
    region other than through a guard.
    """
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    ev_tol = sys.event_tol if event_tol is None else event_tol
    mode = sys.mode(s0.mode)
    f = mode.field
    x = s0.coords
    speed = float(np.linalg.norm(f(x)))
    span = float(np.max(mode.highs - mode.lows)) or 1.0
    if max_step is None:
        max_step = min(0.25 * span / max(speed, 1e-12), t_max, 1.0)
        max_step = max(max_step, 1e-6)
    dt = min(max_step, t_max)

    # A guard is "armed" once the trajectory has been on the psi > 0 side;
    # starting on the surface while moving into psi > 0 arms it immediately
    # (the fresh-reset-image case), so a later step that swallows the whole
    # arc still brackets the downward crossing.
    armed = []
    for comp in mode.guards:
        p0 = comp.psi(x)
        if p0 > ev_tol:
            armed.append(True)
        elif abs(p0) <= ev_tol:
            lie = float(np.dot([comp.psi.partial(i)(x) for i in range(mode.dim)], f(x)))
            armed.append(lie > ev_tol)
        else:
            armed.append(False)
    times = [0.0]
    states = [x.copy()]
    t = 0.0
    min_dt = 1e-14 * max(1.0, t_max)

    while t < t_max - 1e-15 * max(1.0, t_max):
        dt = min(dt, t_max - t)
        x_new, err = _rkf45_step(f, x, dt)
        if not np.all(np.isfinite(x_new)):
            raise NonFiniteState(f"integration diverged at t={t}")
        scale = tol * (1.0 + float(np.max(np.abs(x))))
        if err > scale and dt > min_dt:
            dt = max(0.5 * dt, min_dt)
            continue

        # guard events within the accepted step
        hit = None  # (t_hit, x_hit, guard index)
        for gi, comp in enumerate(mode.guards):
            p0 = comp.psi(x)
            p1 = comp.psi(x_new)
            if not armed[gi]:
                if p1 > ev_tol:
                    armed[gi] = True
                continue
            crossed = p1 <= 0 or abs(p1) < ev_tol
            if not crossed:
                continue
            if abs(p1) < ev_tol and p0 > 0 and p1 > 0:
                t_hit, x_hit = dt, x_new
            else:
                t_hit, x_hit = _locate_guard(f, comp, x, dt, p0, ev_tol)
            if not comp.ineqs_hold(x_hit, 1e-7):
                armed[gi] = False  # crossed an inactive part: rearm on psi > tol
                continue
            lie = float(np.dot([comp.psi.partial(i)(x_hit) for i in range(mode.dim)], f(x_hit)))
            if lie > ev_tol:
                armed[gi] = False
                continue  # grazing upward: not a guard arrival
            if hit is None or t_hit < hit[0]:
                hit = (t_hit, x_hit, gi)
        if hit is not None:
            t_hit, x_hit, gi = hit
            if record:
                times.append(t + t_hit)
                states.append(x_hit.copy())
            return ArcResult(
                kind="guard",
                times=np.array(times),
                states=np.array(states),
                t_end=t + t_hit,
                x_end=x_hit,
                guard_idx=gi,
            )

        # domain exit (other than through a guard)
        if not mode.in_region(x_new, 1e-7):
            lo_t, hi_t = 0.0, dt
            x_lo = x
            for _ in range(60):
                mid = 0.5 * (lo_t + hi_t)
                x_mid = _advance(f, x_lo, mid - lo_t)
                if mode.in_region(x_mid, 1e-7):
                    lo_t, x_lo = mid, x_mid
                else:
                    hi_t = mid
            x_exit = _advance(f, x_lo, hi_t - lo_t)
            if record:
                times.append(t + hi_t)
                states.append(x_exit.copy())
            return ArcResult(
                kind="domain_exit",
                times=np.array(times),
                states=np.array(states),
                t_end=t + hi_t,
                x_end=x_exit,
            )

        t += dt
        x = x_new
        if record:
            times.append(t)
            states.append(x.copy())
        if err > 0:
            dt = min(max_step, dt * min(2.0, 0.9 * (scale / err) ** 0.2))
        else:
            dt = min(max_step, 2.0 * dt)

    return ArcResult(
        kind="timeout",
        times=np.array(times),
        states=np.array(states),
        t_end=t_max,
        x_end=x,
    )


# ---------------------------------------------------------------------------
# vectorized batch engine
# ---------------------------------------------------------------------------

#: status codes for flow_samples
FLOW_TIME = 0  # stopped at flow time (flow edge)
FLOW_GUARD = 1  # hit a guard component (reset edge)
FLOW_EXIT = 2  # left the mode region


def _field_batch(mode: ModeSpec, pts: np.ndarray) -> np.ndarray:
    return mode.field.eval_batch(pts)


def _rk4_batch(mode: ModeSpec, pts: np.ndarray, dt: float) -> np.ndarray:
    k1 = _field_batch(mode, pts)
    k2 = _field_batch(mode, pts + 0.5 * dt * k1)
    k3 = _field_batch(mode, pts + 0.5 * dt * k2)
    k4 = _field_batch(mode, pts + dt * k3)
    return pts + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _rk4_batch_var(mode: ModeSpec, pts: np.ndarray, dts: np.ndarray) -> np.ndarray:
    d = dts[:, None]
    k1 = _field_batch(mode, pts)
    k2 = _field_batch(mode, pts + 0.5 * d * k1)
    k3 = _field_batch(mode, pts + 0.5 * d * k2)
    k4 = _field_batch(mode, pts + d * k3)
    return pts + (d / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _advance_batch(mode: ModeSpec, pts: np.ndarray, dts: np.ndarray, nsub: int = 2) -> np.ndarray:
    out = pts
    for _ in range(nsub):
        out = _rk4_batch_var(mode, out, dts / nsub)
    return out


def _locate_guard_batch(mode: ModeSpec, comp, x0: np.ndarray, step: float, iters: int = 55):
    """Vectorized crossing bisection: returns (t_hit, x_hit) arrays.

    Each row of x0 is a step start whose psi goes nonpositive within the
    step. The left bracket state is re-advanced each iteration so accuracy
    does not degrade as the bracket shrinks.
    """
    n = x0.shape[0]
    t_lo = np.zeros(n)
    t_hi = np.full(n, step)
    x_lo = x0.copy()
    for _ in range(iters):
        t_mid = 0.5 * (t_lo + t_hi)
        x_mid = _advance_batch(mode, x_lo, t_mid - t_lo)
        p = comp.psi.eval_batch(x_mid)
        pos = p > 0
        t_lo = np.where(pos, t_mid, t_lo)
        x_lo = np.where(pos[:, None], x_mid, x_lo)
        t_hi = np.where(pos, t_hi, t_mid)
        if np.max(t_hi - t_lo) < 1e-15 * max(1.0, step):
            break
    x_hit = _advance_batch(mode, x_lo, t_hi - t_lo)
    return t_hi, x_hit


def flow_samples(
    sys: HybridSystemDef,
    mode_id: int,
    pts: np.ndarray,
    t_flow: float,
    t_max: float,
    move_min: float,
    dt: float,
    event_tol: float | None = None,
    tube_h: float | None = None,
):
    """Flow a batch of points with the graph-construction stopping rule.

    Each point integrates until the first of: a guard hit (status
    ``FLOW_GUARD``, with the refined surface point); a domain exit
    (``FLOW_EXIT``); or a flow-time stop (``FLOW_TIME``). The flow-time stop
    happens at ``t_flow`` if the point has moved at least ``move_min`` by
    then, and is otherwise extended until the displacement target is met or
    ``t_max`` elapses. A point that reaches ``t_max`` within ``event_tol`` of
    a guard surface with nonpositive approach speed counts as a guard hit
    (the asymptotic-arrival case); otherwise it stops as a flow edge.

    Returns (endpoints, status, guard_idx, t_elapsed) arrays; with ``tube_h``
    set, also a list of per-sample sets of grid multi-indices traversed by
    the arc at that resolution.
    """
    ev_tol = sys.event_tol if event_tol is None else event_tol
    mode = sys.mode(mode_id)
    n = pts.shape[0]
    pts = np.array(pts, dtype=float)
    starts = pts.copy()
    endpoints = pts.copy()
    status = np.full(n, FLOW_TIME, dtype=np.int8)
    guard_idx = np.full(n, -1, dtype=np.int32)
    t_elapsed = np.zeros(n)
    active = np.ones(n, dtype=bool)

    tubes: list[set] | None = None
    if tube_h is not None:
        tubes = [set() for _ in range(n)]

        def record_tube(rows: np.ndarray, prev: np.ndarray, new: np.ndarray):
            # walk the step segments at sub-box resolution so fast steps do
            # not skip traversed cells
            seg = new - prev
            longest = float(np.max(np.linalg.norm(seg, axis=1))) if len(rows) else 0.0
            n_sub = max(1, int(np.ceil(longest / (0.5 * tube_h))))
            for lam in np.linspace(0.0, 1.0, n_sub + 1):
                cells = np.floor((prev + lam * seg - mode.lows) / tube_h).astype(int)
                for r, c in zip(rows, cells):
                    tubes[r].add(tuple(int(v) for v in c))

        record_tube(np.arange(n), pts, pts)
    else:
        record_tube = None

    guards = mode.guards
    psi_prev = np.stack([g.psi.eval_batch(pts) for g in guards], axis=1) if guards else None
    armed = None
    if guards:
        armed = psi_prev > ev_tol
        field0 = _field_batch(mode, pts)
        for gi, comp in enumerate(guards):
            grad = np.stack(
                [comp.psi.partial(i).eval_batch(pts) for i in range(mode.dim)], axis=1
            )
            lie0 = (grad * field0).sum(axis=1)
            on_surface = np.abs(psi_prev[:, gi]) <= ev_tol
            armed[:, gi] |= on_surface & (lie0 > ev_tol)

    lo = mode.lows - 1e-7
    hi = mode.highs + 1e-7

    t = 0.0
    nsteps = int(np.ceil(t_max / dt))
    f_single = mode.field

    for _ in range(nsteps):
        if not active.any():
            break
        step = min(dt, t_max - t)
        if step <= 0:
            break
        idx = np.where(active)[0]
        cur = endpoints[idx]
        new = _rk4_batch(mode, cur, step)
        bad = ~np.isfinite(new).all(axis=1)
        if bad.any():
            raise NonFiniteState("batch integration diverged")

        finished = np.zeros(len(idx), dtype=bool)

        if guards:
            psi_new = np.stack([g.psi.eval_batch(new) for g in guards], axis=1)
            for gi, comp in enumerate(guards):
                p0 = psi_prev[idx, gi]
                p1 = psi_new[:, gi]
                arm = armed[idx, gi]
                crossing = arm & ((p1 <= 0) | (np.abs(p1) < ev_tol)) & ~finished
                newly_armed = ~arm & (p1 > ev_tol)
                armed[idx[newly_armed], gi] = True
                rows = np.where(crossing)[0]
                if rows.size == 0:
                    continue
                # refine crossings in batch; endpoints already within
                # tolerance (a positive-side graze) hit at the step end
                touch = (np.abs(p1[rows]) < ev_tol) & (p0[rows] > 0) & (p1[rows] >= 0)
                t_hits = np.full(rows.size, step)
                x_hits = new[rows].copy()
                need = ~touch
                if need.any():
                    th, xh = _locate_guard_batch(mode, comp, cur[rows[need]], step)
                    t_hits[need] = th
                    x_hits[need] = xh
                # validate: on the surface, inequalities hold, approach speed
                psis = np.abs(comp.psi.eval_batch(x_hits))
                ok = psis < 10 * max(ev_tol, 1e-12)
                for q in comp.ineqs:
                    ok &= q.eval_batch(x_hits) <= 1e-7
                grad = np.stack(
                    [comp.psi.partial(i).eval_batch(x_hits) for i in range(mode.dim)],
                    axis=1,
                )
                lie = (grad * _field_batch(mode, x_hits)).sum(axis=1)
                ok &= lie <= ev_tol
                for j, good, t_hit, x_hit in zip(rows, ok, t_hits, x_hits):
                    gpos = idx[j]
                    if not good:
                        armed[gpos, gi] = False
                        continue
                    endpoints[gpos] = x_hit
                    t_elapsed[gpos] = t + t_hit
                    status[gpos] = FLOW_GUARD
                    guard_idx[gpos] = gi
                    active[gpos] = False
                    finished[j] = True
                    if record_tube is not None:
                        record_tube(
                            np.array([gpos]), cur[j][None, :], np.asarray(x_hit)[None, :]
                        )

        # domain exit
        inside = np.all(new >= lo, axis=1) & np.all(new <= hi, axis=1)
        if mode.ineqs:
            for g in mode.ineqs:
                inside &= g.eval_batch(new) <= 1e-6
        exited = ~inside & ~finished
        for j in np.where(exited)[0]:
            gpos = idx[j]
            endpoints[gpos] = new[j]
            t_elapsed[gpos] = t + step
            status[gpos] = FLOW_EXIT
            active[gpos] = False
            finished[j] = True

        cont = ~finished
        gpos = idx[cont]
        endpoints[gpos] = new[cont]
        t_elapsed[gpos] = t + step
        if guards:
            psi_prev[gpos] = psi_new[cont]
        if record_tube is not None and len(gpos):
            record_tube(gpos, cur[cont], new[cont])
        t += step

        # flow-time stop: past t_flow and displaced enough
        if t >= t_flow - 1e-12:
            disp = np.linalg.norm(endpoints[gpos] - starts[gpos], axis=1)
            done = disp >= move_min
            stopdone = gpos[done]
            status[stopdone] = FLOW_TIME
            active[stopdone] = False

    # leftovers at t_max: asymptotic guard arrival or plain flow stop
    for gpos in np.where(active)[0]:
        x = endpoints[gpos]
        t_elapsed[gpos] = t_max
        status[gpos] = FLOW_TIME
        for gi, comp in enumerate(mode.guards):
            if abs(comp.psi(x)) < max(ev_tol, 1e-9) and comp.ineqs_hold(x, 1e-7):
                lie = float(
                    np.dot(
                        [comp.psi.partial(i)(x) for i in range(mode.dim)],
                        f_single(x),
                    )
                )
                if lie <= ev_tol:
                    status[gpos] = FLOW_GUARD
                    guard_idx[gpos] = gi
                    break
    if tubes is not None:
        return endpoints, status, guard_idx, t_elapsed, tubes
    return endpoints, status, guard_idx, t_elapsed
