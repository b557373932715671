import math

import numpy as np
import pytest

from hybrid_conley.builtins import (
    ball_energy,
    ball_mu,
    ball_stop_time,
    instantiate,
    spring_mu,
)
from hybrid_conley.execution import SimBudget, max_flow_time, simulate_execution
from hybrid_conley.integrate import integrate_arc
from hybrid_conley.system import NotOnGuard, ResetOutOfDomain, State, validate_system

SQRT10 = math.sqrt(10.0)


@pytest.fixture(scope="module")
def ball():
    return instantiate("ball", g=1.0, d=0.8, e0=5.0)


@pytest.fixture(scope="module")
def spring():
    return instantiate("spring", d=0.8, e0=5.0)


@pytest.fixture(scope="module")
def counterexample():
    return instantiate("counterexample")


class TestIntegrateArc:
    def test_ball_guard_hit_time_and_state(self, ball):
        # first floor hit from (0.5, 3): t = 3 + sqrt(10), arrival (0, -sqrt(10))
        res = integrate_arc(ball, State(0, (0.5, 3.0)), 10.0)
        assert res.kind == "guard"
        assert res.t_end == pytest.approx(3 + SQRT10, rel=1e-9)
        assert res.x_end[0] == pytest.approx(0.0, abs=1e-7)
        assert res.x_end[1] == pytest.approx(-SQRT10, rel=1e-7)

    def test_timeout_when_no_guard_on_trajectory(self, ball):
        res = integrate_arc(ball, State(0, (0.5, 3.0)), 2.0)
        assert res.kind == "timeout"
        assert res.t_end == pytest.approx(2.0)

    def test_spring_quarter_turn(self, spring):
        res = integrate_arc(spring, State(0, (1.0, 0.0)), 10.0)
        assert res.kind == "guard"
        assert res.t_end == pytest.approx(math.pi / 2, rel=1e-7)
        assert res.x_end[1] == pytest.approx(-1.0, rel=1e-7)

    def test_energy_conserved_along_arc(self, ball):
        res = integrate_arc(ball, State(0, (0.5, 3.0)), 6.0, tol=1e-8)
        energies = [ball_energy(x, y) for x, y in res.states]
        assert max(energies) - min(energies) < 10 * 1e-8 * (1 + max(energies))


class TestMaxFlowTime:
    def test_ball_oracle_value(self, ball):
        assert max_flow_time(ball, State(0, (0.5, 3.0))) == pytest.approx(3 + SQRT10, rel=1e-9)

    def test_zero_on_guard(self, ball):
        assert max_flow_time(ball, State(0, (0.0, -2.0))) == 0.0

    def test_spring_three_quarter_turn(self, spring):
        c = math.sqrt(2) / 2
        assert max_flow_time(spring, State(0, (c, c))) == pytest.approx(
            3 * math.pi / 4, rel=1e-7
        )

    def test_mu_cocycle_along_flow(self, ball):
        # mu(s) = t + mu(phi^t(s)) for t below the first hit
        rng = np.random.default_rng(7)
        for _ in range(12):
            x = rng.uniform(0.05, 2.0)
            y = rng.uniform(-1.5, 1.5)
            if ball_energy(x, y) > 4.9:
                continue
            s = State(0, (x, y))
            mu = max_flow_time(ball, s)
            t = 0.5 * mu
            res = integrate_arc(ball, s, t)
            mu2 = max_flow_time(ball, State(0, res.x_end))
            assert abs(mu - t - mu2) < 10 * 1e-8 * (1 + mu)


class TestApplyReset:
    def test_ball_restitution(self, ball):
        post = ball.apply_reset(State(0, (0.0, -2.0)))
        assert post.mode == 0
        assert post.x[1] == pytest.approx(1.6)

    def test_counterexample_resets(self, counterexample):
        post = counterexample.apply_reset(State(0, (0.0,)))
        assert (post.mode, post.x[0]) == (1, 1.0)
        post = counterexample.apply_reset(State(1, (3.0,)))
        assert (post.mode, post.x[0]) == (0, -1.0)

    def test_not_on_guard_raises(self, ball):
        with pytest.raises(NotOnGuard):
            ball.apply_reset(State(0, (0.5, 3.0)))


class TestSimulateExecution:
    def test_ball_zeno_stop_time(self, ball):
        budget = SimBudget(max_time=100.0, max_jumps=60)
        trace = simulate_execution(ball, State(0, (0.5, 3.0)), budget)
        assert trace.classification.kind == "zeno"
        expected = ball_stop_time(0.5, 3.0, 1.0, 0.8)
        assert trace.classification.stop_time_estimate == pytest.approx(expected, rel=1e-5)

    def test_ball_origin_is_zeno_at_time_zero(self, ball):
        trace = simulate_execution(ball, State(0, (0.0, 0.0)))
        assert trace.classification.kind == "zeno"
        assert trace.classification.stop_time_estimate == pytest.approx(0.0, abs=1e-12)

    def test_spring_unit_restitution_is_infinite(self):
        spring = instantiate("spring", d=1.0, e0=5.0)
        budget = SimBudget(max_time=30.0, max_jumps=500)
        trace = simulate_execution(spring, State(0, (1.0, 0.0)), budget)
        assert trace.classification.kind == "infinite"

    def test_counterexample_flows_to_zero_forever(self, counterexample):
        budget = SimBudget(max_time=20.0, max_jumps=50)
        trace = simulate_execution(counterexample, State(0, (-1.0,)), budget)
        assert trace.classification.kind == "infinite"
        assert trace.n_jumps == 0
        assert trace.final_state.x[0] == pytest.approx(-math.exp(-20.0), abs=1e-6)

    def test_jump_times_nondecreasing_and_reset_consistent(self, ball):
        budget = SimBudget(max_time=40.0, max_jumps=30)
        trace = simulate_execution(ball, State(0, (0.5, 3.0)), budget)
        times = trace.jump_times
        assert all(b >= a for a, b in zip(times, times[1:]))
        for j in trace.jumps:
            assert abs(j.pre_state.x[0]) < 1e-7
            redo = ball.apply_reset(j.pre_state)
            assert redo == j.post_state

    def test_trace_csv_export(self, ball, tmp_path):
        trace = simulate_execution(ball, State(0, (0.5, 3.0)), SimBudget(max_time=10.0))
        out = tmp_path / "trace.csv"
        trace.to_csv(out)
        header = out.read_text().splitlines()[0]
        assert header == "arc_index,t,mode,x0,x1"


class TestValidateSystem:
    def test_ball_is_clean(self, ball):
        assert validate_system(ball) == []

    def test_bad_reset_is_flagged(self):
        from fractions import Fraction

        from hybrid_conley.poly import Poly, PolyMap
        from hybrid_conley.system import GuardComponent, HybridSystemDef, ModeSpec

        x = Poly.variable(2, 0)
        y = Poly.variable(2, 1)
        bad = HybridSystemDef(
            modes=(
                ModeSpec(
                    mode_id=0,
                    dim=2,
                    domain=((0.0, 5.0), (-3.2, 3.2)),
                    field=PolyMap([y, Poly.constant(2, -1)]),
                    guards=(
                        GuardComponent(
                            psi=x,
                            ineqs=(y,),
                            target_mode=0,
                            reset=PolyMap([Poly.constant(2, -1), y.scale(-1)]),
                        ),
                    ),
                    ineqs=(y * y * Fraction(1, 2) + x - Poly.constant(2, 5),),
                ),
            )
        )
        kinds = {d.kind for d in validate_system(bad)}
        assert "ResetOutOfDomain" in kinds

    def test_spring_degenerate_tangency_flagged(self, spring):
        kinds = {d.kind for d in validate_system(spring)}
        assert "DegenerateTangency" in kinds

    def test_pathology_inward_guard_flagged(self):
        sys = instantiate("omegapathology")
        kinds = {d.kind for d in validate_system(sys)}
        assert "InwardPointingGuard" in kinds


class TestSystemSerialization:
    def test_json_round_trip_preserves_behavior(self, ball, tmp_path):
        path = tmp_path / "ball.json"
        ball.save(path)
        from hybrid_conley.system import HybridSystemDef

        back = HybridSystemDef.load(path)
        res1 = integrate_arc(ball, State(0, (0.5, 3.0)), 10.0)
        res2 = integrate_arc(back, State(0, (0.5, 3.0)), 10.0)
        assert res1.t_end == pytest.approx(res2.t_end, rel=1e-12)

    def test_extended_metric(self, counterexample):
        a = State(0, (-0.5,))
        b = State(1, (1.5,))
        assert counterexample.distance(a, b) == math.inf
        assert counterexample.distance(a, State(0, (-0.25,))) == pytest.approx(0.25)
