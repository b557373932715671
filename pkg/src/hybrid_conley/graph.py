"""Box transition graphs: flow-time edges and reset edges over a grid.

For each box, sample points (corners + center + face midpoints by default)
are flowed forward. A sample that reaches a guard contributes a reset edge
from its box to every box meeting the bloated reset image. A sample that
stops at flow time contributes a flow edge to every box meeting the bloated
endpoint, except boxes that can only be reached by crossing a guard surface
(the flow itself never crosses a guard, so bloat must not either).

Flow stops at ``T_step`` once the sample has moved at least ``move_min``;
slow samples keep integrating (up to ``T_max``) until they have moved that
far, hit a guard, or provably dwell. A sample that ends within event
tolerance of a guard with nonpositive approach speed is an asymptotic guard
arrival and contributes a reset edge: this is what makes the graph's
recurrence respect the arbitrarily-large-time quantifier of chain
recurrence on slow approaches to a guard.

Boxes that intersect a guard surface additionally get reset edges from
sampled surface points directly, so every guard-intersecting box carries at
least one reset edge (or is flagged reset-undefined).
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .grid import BoxGrid, BoxId, GridTooFine
from .integrate import FLOW_EXIT, FLOW_GUARD, FLOW_TIME, flow_samples
from .system import HybridSystemDef, State


@dataclass
class TransitionGraph:
    grid: BoxGrid
    nodes: set[BoxId]
    flow_edges: dict[BoxId, set[BoxId]]
    reset_edges: dict[BoxId, set[BoxId]]
    params: dict
    reset_undefined: set[BoxId] = field(default_factory=set)

    def successors(self, box: BoxId) -> set[BoxId]:
        return self.flow_edges.get(box, set()) | self.reset_edges.get(box, set())

    @property
    def n_edges(self) -> int:
        return sum(len(v) for v in self.flow_edges.values()) + sum(
            len(v) for v in self.reset_edges.values()
        )

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.nodes)
        for src, dsts in self.flow_edges.items():
            g.add_edges_from((src, d) for d in dsts)
        for src, dsts in self.reset_edges.items():
            g.add_edges_from((src, d) for d in dsts)
        return g

    def edges_csv(self, path) -> None:
        """Edge list as (src_box, dst_box, kind)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["src_box", "dst_box", "kind"])
            for src in sorted(self.flow_edges):
                for dst in sorted(self.flow_edges[src]):
                    w.writerow([_box_str(src), _box_str(dst), "flow"])
            for src in sorted(self.reset_edges):
                for dst in sorted(self.reset_edges[src]):
                    w.writerow([_box_str(src), _box_str(dst), "reset"])


def _box_str(box: BoxId) -> str:
    mode, idx = box
    return f"m{mode}:" + ",".join(str(i) for i in idx)


def _crosses_guard(sys_def, mode, e: np.ndarray, c: np.ndarray) -> bool:
    """Whether the segment from endpoint e to box point c crosses an active
    guard surface (sign change of psi with the inequalities holding there)."""
    for comp in mode.guards:
        pe = comp.psi(e)
        pc = comp.psi(c)
        if pe > 1e-12 and pc <= 0:
            pass
        elif pe < -1e-12 and pc >= 0:
            pass
        else:
            continue
        a, b = e.copy(), c.copy()
        fa = pe
        for _ in range(40):
            m = 0.5 * (a + b)
            fm = comp.psi(m)
            if fa * fm <= 0:
                b = m
            else:
                a, fa = m, fm
        crossing = 0.5 * (a + b)
        if comp.ineqs_hold(crossing, 1e-7):
            return True
    return False


def _flow_edge_targets(grid: BoxGrid, mode_id: int, endpoint: np.ndarray, pad: float,
                       active: set[BoxId] | None, region_ok=None) -> list[BoxId]:
    sys_def = grid.sys
    mode = sys_def.mode(mode_id)
    if region_ok is None:
        region_ok = grid.box_region_intersects_state_space
    cands = grid.boxes_near_point(mode_id, endpoint, pad)
    out = []
    check_guards = bool(mode.guards)
    for box in cands:
        if active is not None and box not in active:
            continue
        if not region_ok(box):
            continue
        if check_guards:
            lo, hi = grid.box_bounds(box)
            nearest = np.clip(endpoint, lo, hi)
            if float(np.max(np.abs(nearest - endpoint))) > 1e-12 and _crosses_guard(
                sys_def, mode, endpoint, nearest
            ):
                continue
        out.append(box)
    return out


def _reset_edge_targets(grid: BoxGrid, target_mode: int, image: np.ndarray, pad: float,
                        active: set[BoxId] | None, region_ok=None) -> list[BoxId]:
    if region_ok is None:
        region_ok = grid.box_region_intersects_state_space
    out = []
    for box in grid.boxes_near_point(target_mode, image, pad):
        if active is not None and box not in active:
            continue
        if region_ok(box):
            out.append(box)
    return out


def build_transition_graph(
    sys: HybridSystemDef,
    h: float,
    T_step: float,
    samples_per_box: int | None = None,
    bloat_pad: float | None = None,
    *,
    T_max: float | None = None,
    move_min: float | None = None,
    dt: float | None = None,
    restrict_to: set[BoxId] | None = None,
    node_cap: int = 5_000_000,
) -> TransitionGraph:
    """Build the combinatorial outer approximation of the chain dynamics.

    ``bloat_pad`` defaults to one box (h). ``restrict_to`` limits both the
    sampled boxes and the admissible edge targets (used by refinement).
    """
    if h <= 0 or T_step <= 0:
        raise ValueError("h and T_step must be positive")
    grid = BoxGrid(sys, h, node_cap=node_cap)
    pad = h if bloat_pad is None else float(bloat_pad)
    t_max = max(40.0, 20.0 * T_step) if T_max is None else float(T_max)
    mv = 2.0 * h if move_min is None else float(move_min)
    step_dt = min(T_step / 4.0, 0.02) if dt is None else float(dt)

    if restrict_to is not None:
        if len(restrict_to) > node_cap:
            raise GridTooFine(f"{len(restrict_to)} boxes exceeds cap {node_cap}")
        boxes = [b for b in restrict_to if grid.box_region_intersects_state_space(b)]
        active: set[BoxId] | None = set(boxes)
    else:
        if grid.lattice_size() > node_cap:
            raise GridTooFine(f"{grid.lattice_size()} boxes exceeds cap {node_cap}")
        boxes = grid.active_boxes()
        active = None

    nodes: set[BoxId] = set(boxes)
    flow_edges: dict[BoxId, set[BoxId]] = {}
    reset_edges: dict[BoxId, set[BoxId]] = {}
    reset_undefined: set[BoxId] = set()

    region_cache: dict[BoxId, bool] = {}

    def region_ok(box: BoxId) -> bool:
        v = region_cache.get(box)
        if v is None:
            v = grid.box_region_intersects_state_space(box)
            region_cache[box] = v
        return v

    def add_flow(src: BoxId, endpoint: np.ndarray):
        targets = _flow_edge_targets(grid, src[0], endpoint, pad, active, region_ok)
        if targets:
            flow_edges.setdefault(src, set()).update(t for t in targets if t in nodes)

    def add_reset(src: BoxId, pre_mode: int, point: np.ndarray, guard_i: int):
        comp = sys.mode(pre_mode).guards[guard_i]
        image = comp.reset(point)
        targets = _reset_edge_targets(grid, comp.target_mode, image, pad, active, region_ok)
        good = [t for t in targets if t in nodes]
        if good:
            reset_edges.setdefault(src, set()).update(good)
            return True
        return False

    def process_mode(mode_id: int, mode_boxes: list[BoxId]):
        mode = sys.mode(mode_id)
        sample_rows: list[np.ndarray] = []
        owners: list[BoxId] = []
        for box in mode_boxes:
            pts = grid.sample_points(box, samples_per_box)
            # guard-surface points inside the box always produce reset edges
            gpoints = grid.guard_points_in_box(box)
            any_guard_edge = False
            for gi, gp in gpoints:
                if add_reset(box, mode_id, gp, gi):
                    any_guard_edge = True
            if gpoints and not any_guard_edge:
                reset_undefined.add(box)
            for p in pts:
                sample_rows.append(p)
                owners.append(box)
        if not sample_rows:
            return
        pts = np.array(sample_rows)
        # classify on-guard samples in batch: first active component or -1
        on_guard = np.full(pts.shape[0], -1, dtype=np.int32)
        for gi in reversed(range(len(mode.guards))):
            comp = mode.guards[gi]
            hit = np.abs(comp.psi.eval_batch(pts)) <= sys.event_tol
            for q in comp.ineqs:
                hit &= q.eval_batch(pts) <= 1e-9
            on_guard[hit] = gi
        for k in np.where(on_guard >= 0)[0]:
            add_reset(owners[k], mode_id, pts[k], int(on_guard[k]))
        free = on_guard < 0
        pts_f = pts[free]
        owners_f = [owners[k] for k in np.where(free)[0]]
        if pts_f.shape[0] == 0:
            return
        endpoints, status, guard_idx, _ = flow_samples(
            sys, mode_id, pts_f, T_step, t_max, mv, step_dt
        )
        for k in range(pts_f.shape[0]):
            src = owners_f[k]
            if status[k] == FLOW_GUARD:
                add_reset(src, mode_id, endpoints[k], int(guard_idx[k]))
            elif status[k] == FLOW_TIME:
                add_flow(src, endpoints[k])
            # FLOW_EXIT: trajectory left the state space; no edge

    by_mode: dict[int, list[BoxId]] = {}
    for b in boxes:
        by_mode.setdefault(b[0], []).append(b)

    n_threads = int(os.environ.get("HC_THREADS", "1") or "1")
    if n_threads > 1 and len(by_mode) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            list(pool.map(lambda kv: process_mode(*kv), by_mode.items()))
    else:
        for mode_id, mode_boxes in by_mode.items():
            process_mode(mode_id, mode_boxes)

    params = {
        "h": h,
        "T_step": T_step,
        "samples_per_box": samples_per_box,
        "bloat_pad": pad,
        "T_max": t_max,
        "move_min": mv,
        "dt": step_dt,
    }
    return TransitionGraph(
        grid=grid,
        nodes=nodes,
        flow_edges=flow_edges,
        reset_edges=reset_edges,
        params=params,
        reset_undefined=reset_undefined,
    )
