import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ocs_lab.automata import (
    NO,
    NO2,
    YES,
    AutomatonParams,
    ForestConstructor,
    build_structure,
    combined_ocs,
    debug_dump,
    f_sequence,
    forest_ocs,
    good_forest_violations,
    path_decision_law,
    sigma_minus,
    sigma_plus,
    sigma_star,
    stationary,
    subsequence_bound,
    transition_matrix,
    verify_good_forest,
    verify_partition,
)
from ocs_lab.checks import exact_subset_checks, mc_subset_checks
from ocs_lab.core import exact_law, stream
from ocs_lab.instances import gen_adversarial_two_way_corpus, gen_path_instance, gen_random_two_way

P = AutomatonParams().p
# rounds of the worked example with elements {a,c},{b,d},{a,b},{a,c},{b,c},{b,c}
EXAMPLE = [("a", "c"), ("b", "d"), ("a", "b"), ("a", "c"), ("b", "c"), ("b", "c")]


class TestTables:
    @pytest.mark.parametrize("table", [sigma_plus(P), sigma_minus(P), sigma_star(math.sqrt(2) - 1)])
    def test_rows_sum_to_one(self, table):
        for outs in table.values():
            assert sum(o[0] for o in outs) == pytest.approx(1.0)

    def test_stationary_closed_form(self):
        np.testing.assert_allclose(stationary(P), np.array([1, 1 - P, 1]) / (3 - P), rtol=1e-15)

    @pytest.mark.parametrize("table", [sigma_plus, sigma_minus])
    def test_stationary_is_invariant(self, table):
        pi = stationary(P)
        np.testing.assert_allclose(pi @ transition_matrix(table(P)), pi, atol=1e-15)

    def test_plus_decisions(self):
        table = sigma_plus(P)
        assert {(q, d) for _, q, d in table[NO2]} == {(YES, True)}
        assert {(q, d) for _, q, d in table[YES]} == {(NO, False)}

    def test_params(self):
        # alpha * beta rounds down to the quoted 0.1673
        assert 0.1673 <= AutomatonParams().gamma < 0.1674


class TestFSequence:
    def test_f6_exact(self):
        p = Fraction(3, 5)
        assert f_sequence(p, 6)[6] == p**3 + (1 - p) ** 2

    def test_recurrence_start(self):
        assert f_sequence(0.6, 3) == [1, 0, 0.6, pytest.approx(0.4)]

    @pytest.mark.parametrize("p", np.linspace((math.sqrt(5) - 1) / 2, 2 / 3, 9))
    def test_lower_bounds(self, p):
        f = np.array(f_sequence(p, 200))
        assert np.all(f[2:] >= 1 - p - 1e-12)
        assert np.all(f[4:] >= p**3 + (1 - p) ** 2 - 1e-12)

    def test_negative_length(self):
        with pytest.raises(ValueError):
            f_sequence(0.6, -1)


class TestPathLaw:
    @pytest.mark.parametrize("length", range(1, 7))
    def test_reverse_equivalence(self, length):
        ref = path_decision_law(P, length, 1)
        for i0 in range(2, length + 1):
            law = path_decision_law(P, length, i0)
            for key in set(ref) | set(law):
                assert law.get(key, 0.0) == pytest.approx(ref.get(key, 0.0), abs=1e-12)

    def test_no_two_adjacent_matched(self):
        for key in path_decision_law(P, 6, 3):
            assert not any(a and b for a, b in zip(key, key[1:]))

    def test_marginal_match_rate(self):
        # each decision is M with the stationary mass of the states that emit M
        law = path_decision_law(P, 1, 1)
        pi = stationary(P)
        assert law[(True,)] == pytest.approx(pi[NO] * P + pi[NO2])


class TestStructure:
    def test_worked_example_paths(self):
        g, pp, _ = build_structure(EXAMPLE)
        paths = [[(g.arcs[a].origin + 1, g.arcs[a].dest + 1, g.arcs[a].element) for a in p] for p in pp.paths]
        assert paths == [
            [(3, 4, "a"), (1, 4, "c"), (1, 3, "a"), (2, 3, "b")],
            [(3, 5, "b"), (4, 5, "c")],
            [(5, 6, "b"), (5, 6, "c")],
        ]
        assert verify_partition(g, pp) == []

    @given(seed=st.integers(0, 100_000), t=st.integers(1, 12), m=st.integers(2, 6))
    @settings(max_examples=80)
    def test_partition_valid(self, seed, t, m):
        g, pp, _ = build_structure(gen_random_two_way(t, m, seed=seed).rounds)
        assert verify_partition(g, pp) == []

    @given(seed=st.integers(0, 100_000))
    @settings(max_examples=30)
    def test_constructor_builds_good_forest(self, seed):
        inst = gen_random_two_way(10, 4, seed=seed)
        fc = ForestConstructor(rng=stream(seed))
        for rnd in inst.rounds:
            fc.ingest(rnd)
        assert verify_good_forest(fc.graph, fc.paths, fc.forest) == []

    def test_vectorised_forest_check_agrees(self):
        g, pp, _ = build_structure(EXAMPLE)
        rng = np.random.default_rng(0)
        matched = rng.random((300, len(g.arcs))) < 0.4
        flags = good_forest_violations(g, pp, matched)
        for row, flag in zip(matched, flags):
            assert flag == bool(verify_good_forest(g, pp, np.flatnonzero(row)))


class TestForestOCS:
    def test_root_is_fair(self):
        sel = forest_ocs().bind(gen_path_instance(1))
        assert sorted(b.prob for b in sel.transitions((), 0)) == [0.5, 0.5]

    def test_child_copies_label(self):
        # with the parent arc on "a", the child's H label is a iff the parent's H label is a
        from ocs_lab.automata import Arc

        inst = gen_path_instance(2)
        sel = forest_ocs({1: Arc(0, 1, "a")}).bind(inst)
        law = exact_law(sel, inst, lambda acc, t, e: acc + (e,), ())
        beta = math.sqrt(2) - 1
        # from state H, the next label is H w.p. (1-beta)/2
        assert law[("a", "a")] == pytest.approx(0.5 * (1 - beta) / 2)


class TestCombinedOCS:
    @pytest.mark.parametrize("k", [3, 4, 5, 6])
    def test_batch_marginals_match_exact(self, k):
        # the round count once shadowed a state constant and biased only k = 4
        inst = gen_path_instance(k)
        sel, _, _ = combined_ocs().simulate_full(inst, 100_000, stream(5))
        law = exact_law(combined_ocs(), inst, lambda acc, t, e: acc + (e,), ())
        for t in range(k):
            exact = sum(pr for trace, pr in law.items() if trace[t] == "a")
            assert np.mean(sel[:, t] == 0) == pytest.approx(exact, abs=5 * math.sqrt(0.25 / 100_000))

    def test_batch_joint_law_matches_exact(self):
        inst = gen_random_two_way(6, 3, seed=12)
        law = exact_law(combined_ocs(), inst, lambda acc, t, e: acc + (e,), ())
        sel, _, _ = combined_ocs().simulate_full(inst, 200_000, stream(8))
        elements = inst.elements
        counts: dict = {}
        for row in map(tuple, sel):
            key = tuple(elements[i] for i in row)
            counts[key] = counts.get(key, 0) + 1
        for trace, pr in law.items():
            assert counts.get(trace, 0) / 200_000 == pytest.approx(pr, abs=5 * math.sqrt(pr * (1 - pr) / 200_000) + 1e-4)

    @pytest.mark.parametrize("j", range(0, 40, 3))
    def test_exact_gamma_bound_on_corpus(self, j):
        inst = gen_adversarial_two_way_corpus(40, 8, seed=2)[j]
        gamma = AutomatonParams().gamma
        for c in exact_subset_checks(combined_ocs(), inst, lambda pat: subsequence_bound(pat, gamma)):
            assert c.observed <= c.bound + 1e-12

    def test_mc_checks_cover_all_subsets(self):
        inst = gen_path_instance(3)
        sel = combined_ocs().simulate(inst, 1000, stream(0))
        checks = mc_subset_checks(inst, sel, lambda pat: subsequence_bound(pat, 0.1673))
        assert len(checks) == 2 * 7

    def test_debug_dump(self):
        lines = debug_dump(gen_path_instance(3), seed=1)
        recs = [json.loads(line) for line in lines]
        assert [r["round"] for r in recs] == [0, 1, 2]
        assert recs[0]["arcs"] == [] and recs[0]["parent"] is None
        assert all(r["selected"] in ("a", "b") for r in recs)
        assert {a["decision"] for r in recs for a in r["arcs"]} <= {"M", "U"}
