"""Combinatorial Conley machinery on box transition graphs.

Strongly connected components give the chain-recurrent boxes; down-closed
sets of recurrent components in the condensation order give candidate
attractor-repeller pairs; longest-path levels on the condensation give a
box-level complete Lyapunov function with a finite (nowhere dense) value
set.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction

import networkx as nx
import numpy as np

from .execution import SimBudget, simulate_execution
from .graph import TransitionGraph
from .grid import BoxId
from .system import HybridSystemDef, State


class TooManyComponents(ValueError):
    pass


@dataclass
class ChainClassSet:
    """SCC partition of a transition graph with its recurrent part."""

    sccs: list[frozenset[BoxId]]
    recurrent_indices: list[int]
    scc_of: dict[BoxId, int]

    @property
    def recurrent_sccs(self) -> list[frozenset[BoxId]]:
        return [self.sccs[i] for i in self.recurrent_indices]

    @property
    def chain_recurrent_boxes(self) -> set[BoxId]:
        out: set[BoxId] = set()
        for i in self.recurrent_indices:
            out |= self.sccs[i]
        return out


def chain_recurrent_boxes(g: TransitionGraph | nx.DiGraph) -> ChainClassSet:
    """SCC decomposition; a component is recurrent when it has two or more
    boxes or a self-edge (a fixed box is chain recurrent)."""
    G = g.to_networkx() if isinstance(g, TransitionGraph) else g
    sccs = [frozenset(c) for c in nx.strongly_connected_components(G)]
    scc_of: dict[BoxId, int] = {}
    for i, comp in enumerate(sccs):
        for b in comp:
            scc_of[b] = i
    recurrent = []
    for i, comp in enumerate(sccs):
        if len(comp) >= 2:
            recurrent.append(i)
        else:
            (b,) = comp
            if G.has_edge(b, b):
                recurrent.append(i)
    return ChainClassSet(sccs=sccs, recurrent_indices=recurrent, scc_of=scc_of)


def fill_recurrent_classes(g: TransitionGraph, classes: ChainClassSet) -> list[set[BoxId]]:
    """Add arc-interior boxes to each recurrent class.

    A point on a flow arc that starts in a recurrent class and terminates
    back in the same class is itself chain recurrent (flow to the terminal,
    chain back to the start, flow through the point again), but time-step
    endpoint edges skip the boxes in between. Re-flow the class samples
    recording traversed boxes and add the tubes of arcs whose terminal edge
    targets stay in their own class.
    """
    from .graph import _flow_edge_targets, _reset_edge_targets

    sys = g.grid.sys
    grid = g.grid
    p = g.params
    filled = [set(comp) for comp in classes.recurrent_sccs]
    class_of_box: dict[BoxId, int] = {}
    for k, comp in enumerate(classes.recurrent_sccs):
        for b in comp:
            class_of_box[b] = k

    by_mode: dict[int, list[tuple[BoxId, np.ndarray]]] = {}
    for k, comp in enumerate(classes.recurrent_sccs):
        for box in comp:
            for pt in grid.sample_points(box, p.get("samples_per_box")):
                s = State(box[0], pt)
                if not sys.active_guards(s):
                    by_mode.setdefault(box[0], []).append((box, pt))

    from .integrate import FLOW_GUARD, FLOW_TIME, flow_samples

    for mode_id, rows in by_mode.items():
        pts = np.array([pt for _, pt in rows])
        owners = [box for box, _ in rows]
        endpoints, status, guard_idx, _, tubes = flow_samples(
            sys,
            mode_id,
            pts,
            p["T_step"],
            p["T_max"],
            p["move_min"],
            p["dt"],
            tube_h=p["h"],
        )
        n_cells = grid.cells_per_axis(mode_id)
        mode = sys.mode(mode_id)
        for k in range(pts.shape[0]):
            src = owners[k]
            ci = class_of_box[src]
            if status[k] == FLOW_GUARD:
                comp = mode.guards[int(guard_idx[k])]
                image = comp.reset(endpoints[k])
                targets = _reset_edge_targets(
                    grid, comp.target_mode, image, p["bloat_pad"], None
                )
            elif status[k] == FLOW_TIME:
                targets = _flow_edge_targets(grid, mode_id, endpoints[k], p["bloat_pad"], None)
            else:
                continue
            if not any(class_of_box.get(t) == ci for t in targets):
                continue
            for idx in tubes[k]:
                if all(0 <= idx[d] < n_cells[d] for d in range(mode.dim)):
                    box = (mode_id, idx)
                    if grid.box_region_intersects_state_space(box):
                        filled[ci].add(box)
    return filled


def _condensation(G: nx.DiGraph, classes: ChainClassSet) -> nx.DiGraph:
    cond = nx.DiGraph()
    cond.add_nodes_from(range(len(classes.sccs)))
    for u, v in G.edges():
        cu, cv = classes.scc_of[u], classes.scc_of[v]
        if cu != cv:
            cond.add_edge(cu, cv)
    return cond


@dataclass(frozen=True)
class AttractorRepellerPair:
    attractor: frozenset[BoxId]
    repeller: frozenset[BoxId]
    trapping: frozenset[BoxId]
    trivial: bool


def _downsets(order: nx.DiGraph, k: int):
    """All down-closed subsets of the reachability order on k recurrent
    components (i covers j when j is reachable from i)."""
    reach = {i: nx.descendants(order, i) | {i} for i in order.nodes()}
    for bits in itertools.product((False, True), repeat=k):
        chosen = {i for i in range(k) if bits[i]}
        if all(reach[i] <= chosen for i in chosen):
            yield chosen


def conley_pairs(
    g: TransitionGraph | nx.DiGraph,
    classes: ChainClassSet,
    validate=None,
    cap: int = 20,
) -> list[AttractorRepellerPair]:
    """Enumerate attractor-repeller pairs from down-closed recurrent sets.

    For a down-closed set C of recurrent components, the attracting box set
    is everything reachable from C, the trapping set is every box whose
    reachable recurrent components all lie in C, and the repelling box set
    is every box from which the attractor is unreachable. The trivial pairs
    (all, empty) and (empty, all) are always included. ``validate``, when
    given, is called with (attractor_boxes, trapping_boxes) for each proper
    nontrivial candidate and may veto it (used for the omega-consistency
    check against simulated executions).
    """
    G = g.to_networkx() if isinstance(g, TransitionGraph) else g
    k = len(classes.recurrent_indices)
    if k > cap:
        raise TooManyComponents(f"{k} recurrent components exceeds cap {cap}")
    all_boxes = frozenset(G.nodes())

    pairs: dict[tuple[frozenset, frozenset], AttractorRepellerPair] = {}

    def put(att: frozenset, rep: frozenset, trap: frozenset, trivial: bool):
        key = (att, rep)
        if key not in pairs:
            pairs[key] = AttractorRepellerPair(att, rep, trap, trivial)

    put(all_boxes, frozenset(), all_boxes, True)
    put(frozenset(), all_boxes, frozenset(), True)

    if k:
        # reachability order among recurrent components
        order = nx.DiGraph()
        order.add_nodes_from(range(k))
        rec_sccs = [classes.sccs[i] for i in classes.recurrent_indices]
        reach_cache = {}
        for a in range(k):
            src = next(iter(rec_sccs[a]))
            reach_cache[a] = nx.descendants(G, src) | {src}
        for a in range(k):
            for b in range(k):
                if a != b and rec_sccs[b] & reach_cache[a]:
                    order.add_edge(a, b)

        # recurrent components reachable from each box, via condensation DP
        cond = _condensation(G, classes)
        rec_of_scc = {ci: j for j, ci in enumerate(classes.recurrent_indices)}
        reach_bits: dict[int, int] = {}
        for ci in reversed(list(nx.topological_sort(cond))):
            bits = 1 << rec_of_scc[ci] if ci in rec_of_scc else 0
            for succ in cond.successors(ci):
                bits |= reach_bits[succ]
            reach_bits[ci] = bits

        for chosen in _downsets(order, k):
            mask = sum(1 << j for j in chosen)
            att: set[BoxId] = set()
            for j in chosen:
                att |= reach_cache[j]
            att_f = frozenset(att)
            trap = frozenset(
                b for b in all_boxes if (reach_bits[classes.scc_of[b]] | mask) == mask
            )
            rep = frozenset(
                b for b in all_boxes if not (set(nx.descendants(G, b)) | {b}) & att
            )
            trivial = att_f == all_boxes or not att_f
            if not trivial and validate is not None and not validate(att_f, trap):
                continue
            put(att_f, rep, trap, trivial)

    return sorted(pairs.values(), key=lambda p: (not p.trivial, len(p.attractor)))


@dataclass
class BoxLyapunov:
    """Per-box rational values, constant on components and strictly
    decreasing along every edge between distinct components."""

    value: dict[BoxId, Fraction]
    level: dict[int, int]  # scc index -> condensation level

    def value_set(self) -> set[Fraction]:
        return set(self.value.values())


def build_box_lyapunov(g: TransitionGraph | nx.DiGraph, classes: ChainClassSet) -> BoxLyapunov:
    """Assign values from a finite set: level = longest condensation path to
    a sink, value = sum of 3^-i up to the level, plus a tie-break offset so
    distinct recurrent components get distinct values."""
    G = g.to_networkx() if isinstance(g, TransitionGraph) else g
    cond = _condensation(G, classes)
    level: dict[int, int] = {}
    for ci in reversed(list(nx.topological_sort(cond))):
        succs = list(cond.successors(ci))
        level[ci] = 0 if not succs else 1 + max(level[s] for s in succs)
    max_level = max(level.values(), default=0)

    base_val = {}
    for ci, lv in level.items():
        base_val[ci] = sum(Fraction(1, 3**i) for i in range(1, lv + 1))

    # distinct offsets for recurrent components, far below the level gap
    n_rec = max(1, len(classes.recurrent_indices))
    tiny = Fraction(1, 3 ** (max_level + 2)) / (n_rec + 1)
    offset = {ci: (j + 1) * tiny for j, ci in enumerate(sorted(classes.recurrent_indices))}

    value: dict[BoxId, Fraction] = {}
    for b, ci in classes.scc_of.items():
        value[b] = base_val[ci] + offset.get(ci, Fraction(0))
    return BoxLyapunov(value=value, level=level)


class TransientTooShort(RuntimeError):
    pass


def omega_limit_estimate(
    sys: HybridSystemDef,
    x0: State,
    t_transient: float,
    t_window: float,
    h: float,
    budget: SimBudget | None = None,
) -> set[BoxId]:
    """Boxes visited by the execution tail.

    For an execution still flowing, the tail is sampled over the window
    after the transient, and a second window checks the tail is no longer
    shrinking (else TransientTooShort). For a Zeno execution the tail is the
    accumulation set of late jump states.
    """
    from .grid import BoxGrid

    grid = BoxGrid(sys, h)
    horizon = t_transient + 2 * t_window
    if budget is None:
        budget = SimBudget(max_time=horizon, max_jumps=400)
    trace = simulate_execution(sys, x0, budget)
    cls = trace.classification

    if cls.kind == "zeno" or (cls.kind == "truncated" and trace.n_jumps >= budget.max_jumps):
        tailn = max(3, budget.max_jumps // 10)
        states = []
        for j in trace.jumps[-tailn:]:
            states.append(j.pre_state)
            states.append(j.post_state)
        return {grid.box_of_point(s) for s in states}
    if cls.kind == "blocked":
        return {grid.box_of_point(trace.final_state)}

    def window_boxes(a: float, b: float) -> set[BoxId]:
        out: set[BoxId] = set()
        for arc in trace.arcs:
            sel = (arc.times >= a) & (arc.times <= b)
            for x in arc.states[sel]:
                out.add(grid.box_of_point(State(arc.mode, x)))
            # ensure dwelling arcs with sparse samples still register
            if arc.times[0] <= b and arc.times[-1] >= a:
                ts = np.linspace(max(a, arc.times[0]), min(b, arc.times[-1]), 8)
                for t in ts:
                    i = int(np.searchsorted(arc.times, t))
                    i = min(max(i, 0), len(arc.times) - 1)
                    out.add(grid.box_of_point(State(arc.mode, arc.states[i])))
        for j in trace.jumps:
            if a <= j.time <= b:
                out.add(grid.box_of_point(j.pre_state))
                out.add(grid.box_of_point(j.post_state))
        return out

    w1 = window_boxes(t_transient, t_transient + t_window)
    w2 = window_boxes(t_transient + t_window, t_transient + 2 * t_window)
    if not w2:
        return w1
    dil = grid.dilate(w2, 1)
    if any(b not in dil for b in w1):
        raise TransientTooShort("tail boxes still shrinking between windows")
    return w2
