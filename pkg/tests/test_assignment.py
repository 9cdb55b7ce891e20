"""Greedy local assignment and centralized selection."""
import numpy as np
import pytest

from distmatch.assignment import (
    LocalPlan,
    apply_residual_update,
    barycenter,
    centralized_selection,
    completing_square,
    greedy_local_assign,
)
from distmatch.errors import CapacityShortfall, EmptyPlan, OverAllocation
from distmatch.measures import DiscreteMeasure, make_uniform_measure, w2_exact
from oracles import lp_local_assignment


def line(*xs):
    return make_uniform_measure([float(x) for x in xs])


class TestGreedy:
    def test_hand_example_spills_to_second_sample(self):
        plan = greedy_local_assign([0.0], line(1, 2), [0.3, 0.3], 0.5)
        assert plan.pairs == [(0, 0.3), (1, 0.2)]

    def test_first_capacity_suffices(self):
        tg = make_uniform_measure([(3, 3), (0, 1), (-4, 0)])
        plan = greedy_local_assign([0, 0], tg, [0.25, 0.5, 0.25], 0.5)
        assert plan.pairs == [(1, 0.5)]

    def test_ties_go_to_lower_index(self):
        tg = DiscreteMeasure([[1.0], [-1.0], [5.0]], [0.25, 0.25, 0.5])
        plan = greedy_local_assign([0.0], tg, [0.1, 0.1, 1.0], 0.25)
        assert plan.indices.tolist() == [0, 1, 2]
        assert plan.masses.tolist() == pytest.approx([0.1, 0.1, 0.05], abs=1e-15)

    def test_zero_capacity_samples_skipped(self):
        plan = greedy_local_assign([0.0], line(1, 2, 3), [0.0, 0.2, 0.8], 0.5)
        assert plan.indices.tolist() == [1, 2]

    def test_shortfall_reports_remainder_and_partial_pairs(self):
        with pytest.raises(CapacityShortfall) as info:
            greedy_local_assign([0.0], line(1, 2), [0.1, 0.2], 0.5)
        assert info.value.remainder == pytest.approx(0.2)
        assert info.value.pairs == [(0, 0.1), (1, 0.2)]

    @pytest.mark.parametrize("mass, residual", [(0.0, [0.5, 0.5]), (0.5, [-0.1, 1.0])])
    def test_bad_inputs_rejected(self, mass, residual):
        with pytest.raises(ValueError):
            greedy_local_assign([0.0], line(1, 2), residual, mass)

    def test_matches_lp_optimum_on_random_instances(self):
        rng = np.random.default_rng(0)
        for _ in range(60):
            n = int(rng.integers(1, 50))
            tg = make_uniform_measure(rng.uniform(size=(n, 2)))
            residual = rng.integers(0, 30, n) / 1000
            if residual.sum() == 0:
                residual[0] = 0.001
            mass = float(rng.integers(1, int(residual.sum() * 1000) + 1)) / 1000
            x = rng.uniform(size=2)
            plan = greedy_local_assign(x, tg, residual, mass)
            assert plan.cost(x, tg) == pytest.approx(lp_local_assignment(x, tg.points, residual, mass), abs=1e-9)
            assert plan.mass == pytest.approx(mass, abs=1e-12)

    def test_masses_positive_and_indices_distinct(self):
        rng = np.random.default_rng(1)
        tg = make_uniform_measure(rng.uniform(size=(40, 2)))
        plan = greedy_local_assign([0.5, 0.5], tg, tg.weights, 0.3)
        assert np.all(plan.masses > 0)
        assert len(set(plan.indices.tolist())) == len(plan)


class TestResidual:
    def test_hand_example(self):
        out = apply_residual_update([0.3, 0.3], LocalPlan(0, [0, 1], [0.3, 0.2]))
        assert out.tolist() == pytest.approx([0.0, 0.1])

    def test_empty_plan_is_identity(self):
        assert apply_residual_update([0.2, 0.8], LocalPlan(0, [], [])).tolist() == [0.2, 0.8]

    def test_full_consumption(self):
        assert apply_residual_update([0.5], LocalPlan(0, [0], [0.5])).tolist() == [0.0]

    def test_rounding_debt_snaps_to_zero(self):
        out = apply_residual_update([0.3], LocalPlan(0, [0], [0.3 + 5e-13]))
        assert out.tolist() == [0.0]

    def test_overallocation_raises(self):
        with pytest.raises(OverAllocation):
            apply_residual_update([0.3], LocalPlan(0, [0], [0.31]))

    def test_input_not_mutated(self):
        beta = np.array([0.5, 0.5])
        apply_residual_update(beta, LocalPlan(0, [0], [0.5]))
        assert beta.tolist() == [0.5, 0.5]


class TestBarycenter:
    def test_singleton(self):
        tg = make_uniform_measure([(2, 3), (9, 9)])
        y, w = barycenter(LocalPlan(0, [0], [0.5]), tg)
        assert y.tolist() == [2, 3] and w == 0.5

    def test_symmetric_midpoint(self):
        tg = make_uniform_measure([(0, 0), (2, 0)])
        y, w = barycenter(LocalPlan(0, [0, 1], [0.25, 0.25]), tg)
        assert y.tolist() == [1, 0] and w == 0.5

    def test_weighted_mean(self):
        tg = make_uniform_measure([(1, 0), (4, 0)])
        y, w = barycenter(LocalPlan(0, [0, 1], [0.3, 0.2]), tg)
        assert y == pytest.approx([2.2, 0.0], abs=1e-15)
        assert w == pytest.approx(0.5)

    def test_empty_plan_raises(self):
        with pytest.raises(EmptyPlan):
            barycenter(LocalPlan(3, [], []), line(0))

    def test_completing_square_identity(self):
        rng = np.random.default_rng(2)
        tg = make_uniform_measure(rng.normal(size=(30, 2)) * 5)
        for _ in range(100):
            idx = rng.choice(30, size=rng.integers(1, 8), replace=False)
            plan = LocalPlan(0, idx, rng.uniform(0.001, 0.05, idx.size))
            x = rng.normal(size=2) * 5
            y, w = barycenter(plan, tg)
            lhs = plan.cost(x, tg)
            rhs = w * float((x - y) @ (x - y)) + completing_square(plan, tg)
            assert lhs == pytest.approx(rhs, abs=1e-9)


class TestCentralized:
    def test_single_agent_is_full_transport(self):
        rng = np.random.default_rng(3)
        tg = make_uniform_measure(rng.uniform(size=(25, 2)))
        x = np.array([[0.2, 0.7]])
        cp = centralized_selection(x, tg)
        exact, _ = w2_exact(make_uniform_measure(x), tg)
        assert cp.plans[0].cost(x[0], tg) == pytest.approx(exact, abs=1e-12)

    def test_separated_agents_take_their_nearest(self):
        cp = centralized_selection([[0.0], [10.0]], line(1, 9))
        assert cp.plans[0].pairs == [(0, 0.5)]
        assert cp.plans[1].pairs == [(1, 0.5)]

    def test_coincident_agents_depend_on_order(self):
        cp = centralized_selection([[0.0], [0.0]], line(1, 9))
        assert cp.plans[0].indices.tolist() == [0] and cp.plans[1].indices.tolist() == [1]
        cp = centralized_selection([[0.0], [0.0]], line(1, 9), order=[1, 0])
        assert cp.plans[1].indices.tolist() == [0] and cp.plans[0].indices.tolist() == [1]
        assert cp.order == [1, 0]

    def test_order_must_be_a_permutation(self):
        with pytest.raises(ValueError):
            centralized_selection([[0.0], [1.0]], line(1, 9), order=[0, 0])

    def test_capacity_disjoint_and_feasible(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            m, n = int(rng.integers(1, 20)), int(rng.integers(1, 80))
            tg = make_uniform_measure(rng.uniform(size=(n, 2)))
            pos = rng.uniform(size=(m, 2))
            cp = centralized_selection(pos, tg, order=rng.permutation(m))
            alloc = cp.allocation_per_sample(n)
            assert np.all(alloc <= tg.weights + 1e-9)
            assert np.max(np.abs(alloc - tg.weights)) <= 1e-9
            tp = cp.transport_plan(n)
            assert tp.is_coupling(np.full(m, 1 / m), tg.weights)
            cp.check_consistency(tg)

    def test_sequential_cost_not_below_optimum(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            tg = make_uniform_measure(rng.uniform(size=(30, 2)))
            pos = rng.uniform(size=(6, 2))
            cp = centralized_selection(pos, tg)
            seq = sum(p.cost(pos[p.agent], tg) for p in cp.plans)
            assert seq >= w2_exact(make_uniform_measure(pos), tg)[0] - 1e-12

    def test_text_dump(self):
        cp = centralized_selection([[0.0], [10.0]], line(1, 9), cycle=4)
        text = cp.to_text().splitlines()
        assert text[0] == "# cycle agent j mass"
        assert text[1] == "4 0 0 0.5"
        assert "# agent y* omega" in text
        assert text[-1] == "1 9.0 0.5"

    def test_consistency_check_detects_drift(self):
        cp = centralized_selection([[0.0], [10.0]], line(1, 9))
        cp.barycenters[0] += 1e-6
        with pytest.raises(AssertionError):
            cp.check_consistency(line(1, 9))
