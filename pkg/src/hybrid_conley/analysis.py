"""End-to-end recurrence analysis: refinement, validated pairs, reporting.

The raw box graph at resolution h is an outer approximation whose recurrent
part carries quantization slack of order h/(1-contraction). The pipeline
therefore refines adaptively: recompute the graph at halved resolution
restricted to a one-layer dilation of the current recurrent set, while that
keeps shrinking the recurrent volume. Results are reported at the base
resolution (boxes containing any fine recurrent box).

Attractor-repeller pairs are enumerated from the refined classes and kept
only when the attractor is consistent with the tails of simulated
executions from its basin; the combinatorial graph alone cannot distinguish
an attracting set from a chain-recurrent set reached through an
asymptotic-guard cycle, and simulated omega-estimates restore that
distinction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .conley import (
    AttractorRepellerPair,
    BoxLyapunov,
    ChainClassSet,
    build_box_lyapunov,
    chain_recurrent_boxes,
    conley_pairs,
    fill_recurrent_classes,
)
from .execution import SimBudget, simulate_execution
from .graph import TransitionGraph, build_transition_graph
from .grid import BoxGrid, BoxId
from .system import HybridSystemDef, State


@dataclass
class RecurrenceAnalysis:
    sys: HybridSystemDef
    base_graph: TransitionGraph
    base_classes: ChainClassSet
    fine_graph: TransitionGraph
    fine_classes: ChainClassSet
    levels: list[dict]
    recurrent_base_boxes: set[BoxId]
    class_projections: list[set[BoxId]]  # grouped classes at base resolution
    class_fine_boxes: list[set[BoxId]]
    pairs: list[AttractorRepellerPair] = field(default_factory=list)
    box_lyapunov: BoxLyapunov | None = None

    @property
    def h(self) -> float:
        return self.base_graph.params["h"]


def _group_classes(
    grid_base: BoxGrid, fine_grid: BoxGrid, filled: list[set[BoxId]]
) -> tuple[list[set[BoxId]], list[set[BoxId]]]:
    """Group fine recurrent classes whose base-resolution projections touch.

    Returns (projections at base h, fine box sets), one entry per group.
    Grouping at the reporting resolution avoids artifactual nested
    attractors when a single dynamical class splits at fine scale.
    """
    projections = []
    fine_sets = []
    for comp in filled:
        proj = set()
        for box in comp:
            c = fine_grid.box_center(box)
            proj.add(grid_base.box_of_point(State(box[0], c)))
        projections.append(proj)
        fine_sets.append(set(comp))

    n = len(projections)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        dil_i = grid_base.dilate(projections[i], 1)
        for j in range(i + 1, n):
            if dil_i & projections[j]:
                a, b = find(i), find(j)
                if a != b:
                    parent[a] = b
    groups: dict[int, tuple[set, set]] = {}
    for i in range(n):
        r = find(i)
        proj, fine = groups.setdefault(r, (set(), set()))
        proj |= projections[i]
        fine |= fine_sets[i]
    out = sorted(groups.values(), key=lambda pf: sorted(pf[0]))
    return [p for p, _ in out], [f for _, f in out]


def refine_recurrence(
    sys: HybridSystemDef,
    h: float,
    T_step: float,
    samples_per_box: int | None = None,
    bloat_pad: float | None = None,
    depth: int = 5,
    shrink_threshold: float = 0.9,
    **graph_kw,
) -> RecurrenceAnalysis:
    """Compute chain-recurrent boxes with adaptive refinement.

    Refines while the recurrent volume drops below ``shrink_threshold`` of
    the previous level's, up to ``depth`` extra levels.
    """
    base_graph = build_transition_graph(
        sys, h, T_step, samples_per_box, bloat_pad, **graph_kw
    )
    base_classes = chain_recurrent_boxes(base_graph)
    levels = [
        {
            "h": h,
            "boxes": len(base_graph.nodes),
            "recurrent": len(base_classes.chain_recurrent_boxes),
        }
    ]

    graph, classes = base_graph, base_classes
    cur_h = h
    pad = base_graph.params["bloat_pad"]
    dim = _dim_norm(sys)
    for _ in range(depth):
        rec = classes.chain_recurrent_boxes
        if not rec or len(rec) > 0.9 * len(graph.nodes):
            break  # nothing left to localize at finer scales
        prev_volume = len(rec) * cur_h**dim
        active_parents = graph.grid.dilate(rec, 1)
        new_h = cur_h / 2.0
        new_grid = BoxGrid(sys, new_h, node_cap=graph.grid.node_cap)
        restrict: set[BoxId] = set()
        for mode_id, idx in active_parents:
            m = sys.mode(mode_id)
            n = new_grid.cells_per_axis(mode_id)
            los = m.lows + cur_h * np.array(idx, dtype=float)
            base_child = np.floor((los - m.lows) / new_h + 0.5).astype(int)
            for off in np.ndindex(*([2] * m.dim)):
                child = tuple(
                    int(min(max(base_child[d] + off[d], 0), n[d] - 1)) for d in range(m.dim)
                )
                restrict.add((mode_id, child))
        new_graph = build_transition_graph(
            sys,
            new_h,
            T_step,
            samples_per_box,
            pad / 2.0,
            restrict_to=restrict,
            **graph_kw,
        )
        new_classes = chain_recurrent_boxes(new_graph)
        new_rec = new_classes.chain_recurrent_boxes
        levels.append(
            {"h": new_h, "boxes": len(new_graph.nodes), "recurrent": len(new_rec)}
        )
        new_volume = len(new_rec) * new_h**dim
        graph, classes, cur_h, pad = new_graph, new_classes, new_h, pad / 2.0
        if prev_volume == 0 or new_volume / prev_volume > shrink_threshold:
            break

    # arc-interior fill at the final resolution only: the seeds for finer
    # levels come from SCC boxes (edges do not need intermediate nodes), but
    # reported classes include every box their arcs pass through
    filled = fill_recurrent_classes(graph, classes)
    grid_base = base_graph.grid
    projections, fine_sets = _group_classes(grid_base, graph.grid, filled)
    recurrent_base = set()
    for p in projections:
        recurrent_base |= p

    return RecurrenceAnalysis(
        sys=sys,
        base_graph=base_graph,
        base_classes=base_classes,
        fine_graph=graph,
        fine_classes=classes,
        levels=levels,
        recurrent_base_boxes=recurrent_base,
        class_projections=projections,
        class_fine_boxes=fine_sets,
    )


def _dim_norm(sys: HybridSystemDef) -> int:
    return max(m.dim for m in sys.modes)


def _omega_tail_boxes(
    sys: HybridSystemDef,
    grid: BoxGrid,
    starts: list[State],
    budget: SimBudget,
) -> set[BoxId]:
    tails: set[BoxId] = set()
    for s in starts:
        try:
            trace = simulate_execution(sys, s, budget)
        except Exception:
            continue
        if trace.jumps and (
            trace.classification.kind in ("zeno", "truncated")
            or trace.n_jumps >= budget.max_jumps // 2
        ):
            for j in trace.jumps[-max(3, len(trace.jumps) // 5):]:
                tails.add(grid.box_of_point(j.pre_state))
                tails.add(grid.box_of_point(j.post_state))
        final = trace.final_state
        if final is not None and sys.in_state_space(final):
            tails.add(grid.box_of_point(final))
        # late-window samples from the arcs
        t_hi = max((arc.times[-1] for arc in trace.arcs), default=0.0)
        t_lo = 0.75 * t_hi
        for arc in trace.arcs:
            sel = arc.times >= t_lo
            for x in arc.states[sel][::3]:
                tails.add(grid.box_of_point(State(arc.mode, x)))
    return tails


def analyze_pairs(
    analysis: RecurrenceAnalysis,
    omega_budget: SimBudget | None = None,
    max_basin_samples: int = 60,
    cap: int = 20,
) -> list[AttractorRepellerPair]:
    """Attractor-repeller pairs over the refined classes, omega-validated.

    The attractor of a down-closed class set is its fine-graph reach,
    reported at base resolution. A nontrivial candidate survives only when
    it is covered by the dilated tail boxes of executions simulated from its
    trapping set.
    """
    sys = analysis.sys
    grid = analysis.base_graph.grid
    G0 = analysis.base_graph.to_networkx()
    Gf = analysis.fine_graph.to_networkx()
    fine_grid = analysis.fine_graph.grid
    budget = omega_budget or SimBudget(max_time=60.0, max_jumps=250)

    k = len(analysis.class_fine_boxes)
    if k > cap:
        raise TooManyComponentsError(k, cap)
    all_base = frozenset(G0.nodes())

    pairs: dict[tuple, AttractorRepellerPair] = {}

    def put(att, rep, trap, trivial):
        key = (att, rep)
        if key not in pairs:
            pairs[key] = AttractorRepellerPair(att, rep, trap, trivial)

    put(all_base, frozenset(), all_base, True)
    put(frozenset(), all_base, frozenset(), True)

    if k:
        # reachability order among grouped classes, at base resolution
        import networkx as nx

        reach_base = {}
        order = nx.DiGraph()
        order.add_nodes_from(range(k))
        for i, proj in enumerate(analysis.class_projections):
            srcs = [b for b in proj if b in G0]
            reach = set()
            for b in srcs:
                reach |= nx.descendants(G0, b) | {b}
            reach_base[i] = reach
        for a in range(k):
            for b in range(k):
                if a != b and reach_base[a] & set(analysis.class_projections[b]):
                    order.add_edge(a, b)

        from .conley import _downsets

        for chosen in _downsets(order, k):
            att_fine: set[BoxId] = set()
            for j in chosen:
                for fb in analysis.class_fine_boxes[j]:
                    if fb in Gf:
                        att_fine |= nx.descendants(Gf, fb) | {fb}
            att_base = frozenset(
                grid.box_of_point(State(fb[0], fine_grid.box_center(fb))) for fb in att_fine
            )
            if not att_base or att_base == all_base:
                trivial = True
            else:
                trivial = False
            # trapping set: base boxes whose reachable grouped classes lie in C
            trap = set()
            for b in all_base:
                reach = nx.descendants(G0, b) | {b}
                ok = True
                for j in range(k):
                    if j in chosen:
                        continue
                    if reach & set(analysis.class_projections[j]):
                        ok = False
                        break
                if ok:
                    trap.add(b)
            trap_f = frozenset(trap)
            rep = frozenset(
                b for b in all_base if not (nx.descendants(G0, b) | {b}) & att_base
            )
            if not trivial:
                starts = _basin_starts(sys, grid, trap_f, max_basin_samples)
                tails = _omega_tail_boxes(sys, grid, starts, budget)
                cover = grid.dilate(tails, 2) if tails else set()
                if not att_base <= cover:
                    continue
            put(att_base, rep, trap_f, trivial)

    return sorted(pairs.values(), key=lambda p: (not p.trivial, len(p.attractor)))


class TooManyComponentsError(ValueError):
    def __init__(self, k, cap):
        super().__init__(f"{k} recurrent classes exceeds cap {cap}")


def _basin_starts(sys, grid: BoxGrid, boxes: frozenset[BoxId], limit: int) -> list[State]:
    ordered = sorted(boxes)
    if not ordered:
        return []
    stride = max(1, len(ordered) // limit)
    starts = []
    for b in ordered[::stride]:
        c = grid.box_center(b)
        s = State(b[0], c)
        if sys.in_state_space(s):
            starts.append(s)
    return starts


def analyze_system(
    sys: HybridSystemDef,
    h: float,
    T_step: float,
    samples_per_box: int | None = None,
    bloat_pad: float | None = None,
    depth: int = 4,
    with_pairs: bool = True,
    with_lyapunov: bool = True,
    pair_cap: int = 20,
    **graph_kw,
) -> RecurrenceAnalysis:
    """Full pipeline: refined recurrence, validated pairs, box Lyapunov."""
    analysis = refine_recurrence(
        sys, h, T_step, samples_per_box, bloat_pad, depth=depth, **graph_kw
    )
    if with_pairs:
        analysis.pairs = analyze_pairs(analysis, cap=pair_cap)
    if with_lyapunov:
        analysis.box_lyapunov = build_box_lyapunov(
            analysis.fine_graph, analysis.fine_classes
        )
    return analysis
