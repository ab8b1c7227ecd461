from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocs_lab.flag import FlagOCS
from ocs_lab.harness import build_matcher
from ocs_lab.instances import Edge, MatchingInstance, OfflineVertex, OnlineVertex, gen_random_bipartite, gen_upper_triangular
from ocs_lab.lp import balance_lp, flag_discrete_bound, multiway_continuous_bound, semi_bound, two_choice_lp
from ocs_lab.matching import (
    MatchingError,
    StepProfile,
    brute_force_optimum,
    competitive_ratio,
    dummy_id,
    edge_weighted_matcher,
    offline_optimum,
    two_choice_greedy,
)
from ocs_lab.semi import optimal_semi_ocs


@pytest.fixture(scope="module")
def semi_lp():
    return two_choice_lp(semi_bound())


@pytest.fixture(scope="module")
def flag_lp():
    return two_choice_lp(flag_discrete_bound())


@pytest.fixture(scope="module")
def balance():
    return build_matcher("balance")


def instance(kind, offline, online):
    off = tuple(OfflineVertex(u, w) for u, w in offline)
    on = tuple(OnlineVertex(f"v{j + 1}", tuple(Edge(u, w) for u, w in edges)) for j, edges in enumerate(online))
    return MatchingInstance(kind, off, on)


class TestStepProfile:
    def test_counts(self):
        prof = StepProfile()
        for w in (2.0, 5.0, 2.0, 1.0):
            prof.add(w)
        assert [prof.k(w) for w in (0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 6.0)] == [4, 4, 3, 3, 1, 1, 0]

    def test_copy_is_independent(self):
        prof = StepProfile()
        prof.add(1.0)
        other = prof.copy()
        other.add(1.0)
        assert prof.k(1.0) == 1 and other.k(1.0) == 2

    def test_fresh_value_is_b0_times_w(self, semi_lp):
        assert StepProfile().value(3.5, semi_lp) == pytest.approx(3.5 * semi_lp.b(0))

    @settings(max_examples=60)
    @given(
        levels=st.lists(st.integers(1, 6), max_size=6),
        w=st.integers(1, 8),
    )
    def test_value_against_unit_interval_sum(self, levels, w):
        # integer levels make k_u constant on each unit interval, so a midpoint sum is exact
        lp = SimpleNamespace(b=lambda k: 1.0 / (k + 2), cum_a=lambda k: 0.1 * k)
        prof = StepProfile()
        for lv in levels:
            prof.add(float(lv))
        gain = sum(lp.b(prof.k(x + 0.5)) for x in range(w))
        loss = sum(lp.cum_a(prof.k(x + 0.5)) for x in range(w, 10))
        assert prof.value(float(w), lp) == pytest.approx(gain - 0.5 * loss, abs=1e-12)


class TestEdgeWeighted:
    def test_heavier_vertex_shortlisted_twice(self, semi_lp):
        inst = instance("vertex-weighted", [("u1", 2.0), ("u2", 1.0)], [[("u1", 2.0), ("u2", 1.0)]])
        plan = two_choice_greedy(semi_lp, optimal_semi_ocs()).plan(inst)
        # 2 b(1) > b(0), so the second pick stays on u1
        assert 2 * semi_lp.b(1) > semi_lp.b(0)
        assert plan.round_of == [None] and plan.fixed == ["u1"]
        assert len(plan.selection.rounds) == 0

    def test_tie_goes_to_first_listed_offline_vertex(self, semi_lp):
        inst = instance("unweighted", [("u1", 1.0), ("u2", 1.0)], [[("u2", 1.0), ("u1", 1.0)]])
        plan = two_choice_greedy(semi_lp, optimal_semi_ocs()).plan(inst)
        assert plan.details[0]["u1"] == "u1" and plan.details[0]["u2"] == "u2"
        assert plan.selection.rounds == (("u1", "u2"),)

    def test_empty_neighbourhood(self, semi_lp):
        inst = instance("unweighted", [("u1", 1.0)], [[]])
        matcher = two_choice_greedy(semi_lp, optimal_semi_ocs())
        assert matcher.plan(inst).fixed == [None]
        matched, value = matcher.run(inst, seed=1)
        assert matched == {"v1": None} and value == 0.0

    def test_dummy_only_when_every_value_is_negative(self, flag_lp):
        inst = instance("edge-weighted", [("u1", 1.0), ("u2", 1.0)], [[("u1", 10.0)], [("u1", 1.0)], [("u2", 1.0)]])
        plan = edge_weighted_matcher(flag_lp, FlagOCS()).plan(inst)
        assert plan.fixed[0] == "u1"
        # the cheap edge to u1 would cost more than it gains
        assert plan.fixed[1] is None and plan.details[1]["delta1"] == 0.0
        assert plan.fixed[2] == "u2"
        matched, _ = edge_weighted_matcher(flag_lp, FlagOCS()).run(inst, seed=0)
        assert matched["v2"] is None

    def test_dummy_id(self):
        assert dummy_id("v3") == "⊥v3"

    def test_two_choice_rejects_edge_weights(self, semi_lp):
        inst = instance("edge-weighted", [("u1", 1.0)], [[("u1", 2.0)]])
        with pytest.raises(MatchingError):
            two_choice_greedy(semi_lp, optimal_semi_ocs()).plan(inst)

    def test_plan_is_deterministic(self, flag_lp):
        inst = gen_random_bipartite(6, 8, kind="edge-weighted", seed=3)
        m = edge_weighted_matcher(flag_lp, FlagOCS())
        assert m.plan(inst).selection == m.plan(inst).selection

    @pytest.mark.parametrize("name,kind", [("two-choice", "vertex-weighted"), ("edge-weighted", "edge-weighted"), ("balance", "unweighted")])
    def test_run_is_a_valid_assignment(self, name, kind):
        inst = gen_random_bipartite(5, 7, kind=kind, seed=11)
        matched, value = build_matcher(name).run(inst, seed=4)
        nbrs = {v.id: {e.u for e in v.edges} for v in inst.online}
        for v, u in matched.items():
            assert u is None or u in nbrs[v]
        assert 0.0 <= value <= sum(max(e.w for e in v.edges) for v in inst.online)


class TestBalance:
    def test_equal_masses_when_symmetric(self, balance):
        x, _ = balance.masses(np.ones(4), np.zeros(4))
        np.testing.assert_allclose(x, np.full(4, 0.25), atol=1e-9)

    def test_single_neighbour(self, balance):
        x, theta = balance.masses(np.array([2.0]), np.array([0.3]))
        np.testing.assert_array_equal(x, [1.0])

    @settings(max_examples=60)
    @given(
        w=st.lists(st.floats(0.5, 4.0), min_size=2, max_size=5),
        data=st.data(),
    )
    def test_water_level(self, balance, w, data):
        y = np.array(data.draw(st.lists(st.floats(0.0, 3.0), min_size=len(w), max_size=len(w))))
        w = np.array(w)
        x, theta = balance.masses(w, y)
        assert x.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(x >= 0)
        level = w * balance.lp.b(y + x)
        np.testing.assert_allclose(level[x > 1e-9], theta, rtol=1e-6)
        assert np.all(w[x <= 1e-9] * balance.lp.b(y[x <= 1e-9]) <= theta * (1 + 1e-6))

    def test_mass_conservation(self, balance):
        inst = gen_random_bipartite(6, 9, kind="vertex-weighted", seed=5)
        plan = balance.plan(inst)
        total = sum(x for rnd in plan.selection.rounds for _, x in rnd)
        assert total == pytest.approx(len(inst.online), abs=1e-9)

    def test_rejects_edge_weights(self, balance):
        with pytest.raises(MatchingError):
            balance.plan(gen_random_bipartite(3, 3, kind="edge-weighted", seed=0))

    def test_lp_matches_matcher(self):
        assert build_matcher("balance").lp.gamma == pytest.approx(balance_lp(multiway_continuous_bound()).gamma)


def small_bipartite():
    return st.integers(0, 10_000).flatmap(
        lambda seed: st.tuples(st.integers(1, 4), st.integers(1, 5), st.sampled_from(["unweighted", "vertex-weighted", "edge-weighted"])).map(
            lambda t: gen_random_bipartite(t[0], t[1], kind=t[2], seed=seed)
        )
    )


class TestOptimum:
    @settings(max_examples=80)
    @given(inst=small_bipartite())
    def test_against_brute_force(self, inst):
        assert offline_optimum(inst) == pytest.approx(brute_force_optimum(inst), abs=1e-9)

    def test_upper_triangular(self):
        assert offline_optimum(gen_upper_triangular(8)) == 8.0

    def test_single_edge(self):
        assert offline_optimum(instance("edge-weighted", [("u1", 1.0)], [[("u1", 5.0)]])) == 5.0

    def test_star(self):
        # three online vertices compete for one heavy offline vertex
        inst = instance("vertex-weighted", [("u1", 3.0), ("u2", 1.0)], [[("u1", 3.0)], [("u1", 3.0)], [("u1", 3.0)]])
        assert offline_optimum(inst) == 3.0


class TestRatio:
    @pytest.mark.parametrize("name,target", [("two-choice", 0.536), ("balance", 0.593), ("edge-weighted", 0.519)])
    def test_upper_triangular_above_target(self, name, target):
        res = competitive_ratio(build_matcher(name), gen_upper_triangular(8), 20_000, seed=7)
        assert res.optimum == 8.0
        assert res.ratio >= target - res.ci

    def test_two_choice_upper_triangular_value(self):
        res = competitive_ratio(build_matcher("two-choice"), gen_upper_triangular(8), 40_000, seed=2)
        assert res.ratio == pytest.approx(0.75, abs=res.ci + 1e-3)

    def test_run_and_simulation_agree(self):
        inst = gen_upper_triangular(4)
        m = build_matcher("two-choice")
        runs = np.mean([m.run(inst, seed=s)[1] for s in range(3000)])
        mean, ci = m.expected_value(inst, 3000, seed=9)
        assert runs == pytest.approx(mean, abs=0.1)
