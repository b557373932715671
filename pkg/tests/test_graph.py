import numpy as np
import pytest

from hybrid_conley.builtins import instantiate
from hybrid_conley.conley import chain_recurrent_boxes
from hybrid_conley.graph import build_transition_graph
from hybrid_conley.poly import Poly, PolyMap
from hybrid_conley.system import HybridSystemDef, ModeSpec, State


def box_interval(graph, box):
    lo, hi = graph.grid.box_bounds(box)
    return float(lo[0]), float(hi[0])


@pytest.fixture(scope="module")
def ce_graph():
    sys = instantiate("counterexample")
    return sys, build_transition_graph(sys, h=0.01, T_step=0.05, bloat_pad=0.0025)


class TestStationaryFlow:
    def test_every_box_gets_self_flow_edge(self):
        mode = ModeSpec(
            mode_id=0,
            dim=1,
            domain=((0.0, 1.0),),
            field=PolyMap([Poly.zero(1)]),
            guards=(),
        )
        sys = HybridSystemDef(modes=(mode,))
        g = build_transition_graph(sys, h=0.1, T_step=0.5, bloat_pad=0.0)
        for box in g.nodes:
            assert box in g.flow_edges[box]
            assert not g.reset_edges.get(box)


class TestCounterexampleGraph:
    def test_zero_box_has_reset_edge_to_one(self, ce_graph):
        sys, g = ce_graph
        zero_box = g.grid.box_of_point(State(0, (-1e-12,)))
        targets = g.reset_edges.get(zero_box, set())
        assert targets, "box at 0 must carry a reset edge"
        assert any(t[0] == 1 and box_interval(g, t)[0] <= 1.0 <= box_interval(g, t)[1] + 1e-9
                   for t in targets)

    def test_guard_boxes_reset_to_minus_one(self, ce_graph):
        sys, g = ce_graph
        two_box = g.grid.box_of_point(State(1, (2.0 - 1e-12,)))
        targets = g.reset_edges.get(two_box, set())
        assert any(t[0] == 0 and box_interval(g, t)[0] <= -1.0 + 1e-9 for t in targets)

    def test_flow_edges_do_not_cross_interior_guard(self, ce_graph):
        sys, g = ce_graph
        # no flow edge from the left of 2 may target a box right of 2
        for src, dsts in g.flow_edges.items():
            if src[0] != 1:
                continue
            s_lo, s_hi = box_interval(g, src)
            if s_hi <= 2.0 + 1e-9:
                for dst in dsts:
                    d_lo, _ = box_interval(g, dst)
                    assert d_lo < 2.0 - 1e-9, f"flow edge {src}->{dst} crosses the guard at 2"

    def test_slow_boxes_near_zero_teleport_to_reset_image(self, ce_graph):
        sys, g = ce_graph
        # the box ending at 0 dwells asymptotically: its samples must reach
        # the guard in the extended-time sense and produce the reset edge
        last_box = g.grid.box_of_point(State(0, (-0.001,)))
        assert any(t[0] == 1 for t in g.reset_edges.get(last_box, set()))
        assert last_box not in g.flow_edges or last_box not in g.flow_edges[last_box]


class TestGraphExports:
    def test_edge_csv(self, ce_graph, tmp_path):
        _, g = ce_graph
        path = tmp_path / "edges.csv"
        g.edges_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "src_box,dst_box,kind"
        assert len(lines) > 100

    def test_node_cap(self):
        sys = instantiate("counterexample")
        from hybrid_conley.grid import GridTooFine

        with pytest.raises(GridTooFine):
            build_transition_graph(sys, h=1e-7, T_step=0.05, node_cap=1000)
