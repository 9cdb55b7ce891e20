"""Cycle engine metrics and invariants."""
import math

import numpy as np
import pytest

from distmatch import engine
from distmatch.assignment import barycenter, centralized_selection, completing_square
from distmatch.control import ControlSequence, LtiModel, random_controllable_pair, unicycle
from distmatch.engine import Scenario, run_cycle, initial_state, run_simulation, surrogate_cost
from distmatch.errors import InvariantViolation
from distmatch.measures import make_uniform_measure, w2_exact


def lti_scenario(rng, m=5, n_targets=40, horizon=4, cycles=3, **kw):
    A, B = random_controllable_pair(2, 1, rng, horizon=horizon)
    targets = make_uniform_measure(rng.uniform(-5, 5, (n_targets, 2)))
    return Scenario("centralized", LtiModel(A, B, horizon), targets, rng.uniform(-5, 5, (m, 2)), horizon,
                    cycles=cycles, **kw)


class TestSurrogate:
    def test_agents_on_samples_cost_nothing(self):
        tg = make_uniform_measure([(0, 0), (3, 1)])
        pos = np.array([[0.0, 0.0], [3.0, 1.0]])
        assert surrogate_cost(centralized_selection(pos, tg), pos, tg) == 0.0

    def test_unit_offset(self):
        tg = make_uniform_measure([(1.0, 0.0)])
        pos = np.zeros((1, 2))
        assert surrogate_cost(centralized_selection(pos, tg), pos, tg) == 1.0

    def test_splits_into_barycentric_and_spread_terms(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            tg = make_uniform_measure(rng.normal(size=(30, 2)))
            pos = rng.normal(size=(6, 2)) * 2
            cp = centralized_selection(pos, tg)
            psi = surrogate_cost(cp, pos, tg)
            parts = 0.0
            for p in cp.plans:
                y, w = barycenter(p, tg)
                parts += w * float(np.sum((pos[p.agent] - y) ** 2)) + completing_square(p, tg)
            assert psi == pytest.approx(parts, abs=1e-9)


class TestLtiCycles:
    def test_single_agent_reaches_target_mean(self):
        rng = np.random.default_rng(1)
        sc = lti_scenario(rng, m=1, cycles=1)
        res = run_simulation(sc)
        pts = sc.targets.points
        spread = float(np.mean(np.sum((pts - pts.mean(0)) ** 2, axis=1)))
        assert np.allclose(res.trajectory[-1, 0], pts.mean(0), atol=1e-8)
        assert res.rows[0].w2 ** 2 == pytest.approx(spread, rel=1e-9)
        assert res.rows[0].psi_end == pytest.approx(spread, rel=1e-9)

    def test_team_on_samples_stays_put(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform(-5, 5, (6, 2))
        A, B = random_controllable_pair(2, 1, rng, horizon=3)
        sc = Scenario("centralized", LtiModel(A, B, 3), make_uniform_measure(pts), pts, 3, cycles=2)
        res = run_simulation(sc)
        assert np.allclose(res.trajectory[-1], pts, atol=1e-9)
        assert all(abs(r.psi_start) < 1e-15 and abs(r.psi_end) < 1e-15 for r in res.rows)
        assert res.rows[-1].w2 == pytest.approx(0.0, abs=1e-7)

    def test_random_instances_descend_and_bound(self):
        rng = np.random.default_rng(3)
        strict = 0
        for _ in range(50):
            sc = lti_scenario(rng, m=int(rng.integers(1, 8)), n_targets=int(rng.integers(8, 50)),
                              horizon=int(rng.integers(2, 6)), cycles=2)
            state = initial_state(sc)
            state, row, _ = run_cycle(sc, state)
            assert row.descent_ok and row.bound_ok
            assert row.w2 ** 2 <= row.psi_end + 1e-9
            strict += row.psi_end < row.psi_start
        assert strict == 50

    def test_zero_cycles(self):
        rng = np.random.default_rng(4)
        sc = lti_scenario(rng, cycles=0)
        res = run_simulation(sc)
        assert res.rows == [] and res.plans == []
        assert res.trajectory.shape == (1, 5, 2)
        assert res.initial_w2 == pytest.approx(math.sqrt(w2_exact(make_uniform_measure(sc.initial), sc.targets)[0]))

    def test_trajectory_length(self):
        rng = np.random.default_rng(5)
        res = run_simulation(lti_scenario(rng, horizon=3, cycles=4))
        assert res.trajectory.shape == (13, 5, 2)
        assert res.final_state.step == 12 and res.final_state.cycle == 4

    def test_step_trace_recorded(self):
        rng = np.random.default_rng(6)
        res = run_simulation(lti_scenario(rng, horizon=3, cycles=1, w2_every_step=True))
        trace = res.rows[0].w2_trace
        assert len(trace) == 4
        assert trace[0] == pytest.approx(res.initial_w2) and trace[-1] == pytest.approx(res.rows[0].w2)

    def test_missed_terminal_raises_with_cycle(self, monkeypatch):
        rng = np.random.default_rng(7)
        sc = lti_scenario(rng, cycles=3)
        real = engine.lti_optimal_controls
        calls = {"n": 0}

        def sloppy(model, x0, y):
            calls["n"] += 1
            seq = real(model, x0, y)
            if calls["n"] > 5:
                return ControlSequence(seq.controls * 0.5, seq.terminal)
            return seq

        monkeypatch.setattr(engine, "lti_optimal_controls", sloppy)
        with pytest.raises(InvariantViolation) as info:
            run_simulation(sc)
        assert info.value.cycle == 1

    def test_shuffled_order_is_seeded(self):
        rng = np.random.default_rng(8)
        base = lti_scenario(rng, m=6, cycles=3, order="shuffle", seed=11)
        a, b = run_simulation(base), run_simulation(base)
        assert [p.order for p in a.plans] == [p.order for p in b.plans]
        assert np.array_equal(a.trajectory, b.trajectory)


class TestNonlinearCycles:
    def scenario(self, mode, seed, controller="one_step", cycles=3):
        rng = np.random.default_rng(seed)
        targets = make_uniform_measure(rng.uniform(0, 20, (60, 2)))
        init = np.column_stack([rng.uniform(0, 4, (8, 2)), rng.uniform(-np.pi, np.pi, 8)])
        return Scenario(mode, unicycle(dt=0.1, lookahead=0.3), targets, init, 10, cycles=cycles,
                        gamma=0.7, r_c=3.0, controller=controller, seed=seed)

    @pytest.mark.parametrize("mode", ["centralized", "decentralized"])
    def test_shrinking_errors_imply_descent(self, mode):
        for seed in range(3):
            res = run_simulation(self.scenario(mode, seed))
            for r in res.rows:
                assert r.descent_ok or not r.errors_nonincreasing

    def test_horizon_controller_runs(self):
        res = run_simulation(self.scenario("centralized", 0, controller="horizon", cycles=1))
        assert res.rows[0].psi_end < res.rows[0].psi_start

    def test_outputs_are_look_ahead_points(self):
        sc = self.scenario("centralized", 1, cycles=0)
        pts = engine.spatial_points(sc.model, sc.initial)
        expected = sc.initial[:, :2] + 0.3 * np.column_stack([np.cos(sc.initial[:, 2]), np.sin(sc.initial[:, 2])])
        assert np.allclose(pts, expected, atol=1e-15)

    def test_decentralized_runs_repeat_exactly(self):
        sc = self.scenario("decentralized", 2)
        a, b = run_simulation(sc), run_simulation(sc)
        assert [(r.psi_start, r.psi_end, r.w2) for r in a.rows] == [(r.psi_start, r.psi_end, r.w2) for r in b.rows]
        assert np.array_equal(a.trajectory, b.trajectory)


class TestScenarioValidation:
    @pytest.mark.parametrize("kw", [{"mode": "swarm"}, {"order": "random"}, {"controller": "mpc"}])
    def test_unknown_choice_rejected(self, kw):
        args = {"mode": "centralized", "model": None, "targets": make_uniform_measure([0.0]),
                "initial": [[0.0]], "horizon": 1, **kw}
        with pytest.raises(ValueError):
            Scenario(**args)
