"""Verification routines shared by the CLI harness and the acceptance tests."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .automata import CombinedOCS, good_forest_violations, subsequence_bound
from .core import Selector, chunks, exact_law, stream, unselected_law
from .flag import FlagOCS, flag_bound, relaxed_guarantee
from .instances import MultiWayInstance, TwoWayInstance
from .multiway import WeightFunction
from .semi import RoundView, WeightedTwoWay


# ---------------------------------------------------------------- subset bookkeeping


def superset_sums(f: np.ndarray, m: int) -> np.ndarray:
    """g[S] = Σ_{T ⊇ S} f[T] over bitmask-indexed arrays (last axis has length 2^m)."""
    g = np.array(f, dtype=float, copy=True)
    for i in range(m):
        bit = 1 << i
        idx = np.arange(g.shape[-1])
        lo = idx[(idx & bit) == 0]
        g[..., lo] += g[..., lo | bit]
    return g


def law_to_vector(law: dict, elements: Sequence[str]) -> np.ndarray:
    """Unselected-set law as a 2^m probability vector indexed by bitmask."""
    pos = {e: i for i, e in enumerate(elements)}
    v = np.zeros(1 << len(elements))
    for U, pr in law.items():
        v[sum(1 << pos[e] for e in U)] += pr
    return v


def runs(mask: int, k: int) -> list[int]:
    """Lengths of the maximal consecutive runs of set bits among the low ``k`` bits."""
    out, cur = [], 0
    for i in range(k):
        if mask >> i & 1:
            cur += 1
        elif cur:
            out.append(cur)
            cur = 0
    if cur:
        out.append(cur)
    return out


def mask_counts(hit: np.ndarray) -> np.ndarray:
    """For an (n, k) boolean matrix: number of rows whose true-set contains each subset."""
    k = hit.shape[1]
    codes = (hit.astype(np.int64) << np.arange(k)).sum(axis=1)
    return superset_sums(np.bincount(codes, minlength=1 << k).astype(float), k)


# ---------------------------------------------------------------- two-way negative correlation


def random_weight_rule(instance: TwoWayInstance, rng: np.random.Generator):
    """A weight table over (round, element) that never looks at past selections."""
    table = {}
    for t, pair in enumerate(instance.rounds):
        for e in pair:
            kind = rng.integers(0, 4)
            table[(t, e)] = 0.0 if kind == 0 else float(rng.exponential()) if kind < 3 else float(rng.integers(1, 4))

    def rule(view: RoundView):
        return tuple(table[(view.t, e)] for e in view.pair)

    return rule


def negative_correlation_gap(selector: Selector, instance) -> float:
    """max over t and disjoint non-empty A, B of Pr[A∪B ⊆ U^t] - Pr[A ⊆ U^t] Pr[B ⊆ U^t]."""
    elements = instance.elements
    m = len(elements)
    layers = unselected_law(selector, instance, per_round=True)
    g = superset_sums(np.stack([law_to_vector(law, elements) for law in layers]), m)
    full = (1 << m) - 1
    A, B = [], []
    for a in range(1, full + 1):
        rest = full & ~a
        b = rest
        while b:
            if a < b:
                A.append(a)
                B.append(b)
            b = (b - 1) & rest
    if not A:
        return -math.inf
    A, B = np.array(A), np.array(B)
    return float(np.max(g[:, A | B] - g[:, A] * g[:, B]))


# ---------------------------------------------------------------- multi-way subset bound


def subset_bound_gap(selector: Selector, instance: MultiWayInstance, w: WeightFunction | None = None) -> float:
    """max over non-empty E' of Pr[E' ⊆ U] - ∏ p(y_e)."""
    w = WeightFunction() if w is None else w
    elements = instance.elements
    m = len(elements)
    g = superset_sums(law_to_vector(unselected_law(selector, instance), elements), m)
    y = instance.cumulative_mass()
    log_p = np.array([-float(w.log(y[e])) for e in elements])
    masks = np.arange(1, 1 << m)
    bits = (masks[:, None] >> np.arange(m)) & 1
    bound = np.exp(bits @ log_p)
    return float(np.max(g[masks] - bound))


# ---------------------------------------------------------------- OCS subset suites


@dataclass
class SubsetCheck:
    element: str
    rounds: tuple[int, ...]
    pattern: tuple[int, ...]
    observed: float
    bound: float
    sigma: float

    def margin(self, z: float) -> float:
        return self.observed - self.bound - z * self.sigma


def appearance_rounds(instance: TwoWayInstance) -> dict[str, list[int]]:
    out: dict[str, list[int]] = {}
    for t, pair in enumerate(instance.rounds):
        for e in pair:
            out.setdefault(e, []).append(t)
    return out


def mc_subset_checks(
    instance: TwoWayInstance, selections: np.ndarray, bound_fn: Callable[[list[int]], float]
) -> list[SubsetCheck]:
    """Every non-empty subset of every element's appearances, estimated from simulated runs."""
    n = selections.shape[0]
    index = {e: i for i, e in enumerate(instance.elements)}
    out = []
    for e, rounds in appearance_rounds(instance).items():
        k = len(rounds)
        counts = mask_counts(selections[:, rounds] != index[e])
        for mask in range(1, 1 << k):
            p = counts[mask] / n
            pat = runs(mask, k)
            out.append(
                SubsetCheck(
                    e, tuple(r for i, r in enumerate(rounds) if mask >> i & 1), tuple(pat), p, bound_fn(pat), math.sqrt(p * (1 - p) / n)
                )
            )
    return out


def exact_subset_checks(
    selector: Selector, instance: TwoWayInstance, bound_fn: Callable[[list[int]], float], single_runs_only: bool = False
) -> list[SubsetCheck]:
    """Exact unselected probabilities over subsets of appearances via the full trace law."""
    law = exact_law(selector, instance, lambda acc, t, e: acc + (e,), ())
    out = []
    for e, rounds in appearance_rounds(instance).items():
        k = len(rounds)
        f = np.zeros(1 << k)
        for trace, pr in law.items():
            f[sum(1 << i for i, r in enumerate(rounds) if trace[r] != e)] += pr
        g = superset_sums(f, k)
        for mask in range(1, 1 << k):
            pat = runs(mask, k)
            if single_runs_only and len(pat) != 1:
                continue
            out.append(SubsetCheck(e, tuple(r for i, r in enumerate(rounds) if mask >> i & 1), tuple(pat), float(g[mask]), bound_fn(pat), 0.0))
    return out


def gamma_suite(
    instance: TwoWayInstance, trials: int, seed: int, gamma: float, ocs: CombinedOCS | None = None
) -> tuple[list[SubsetCheck], int]:
    """Subset checks for the combined OCS and the number of runs whose forest was not good."""
    ocs = CombinedOCS() if ocs is None else ocs
    blocks, bad = [], 0
    for i, size in chunks(trials):
        sel, matched, bound = ocs.simulate_full(instance, size, stream(seed, i))
        bad += int(good_forest_violations(bound.graph, bound.paths, matched).sum())
        blocks.append(sel)
    sel = np.concatenate(blocks) if blocks else np.zeros((0, len(instance.rounds)), dtype=np.int64)
    return mc_subset_checks(instance, sel, lambda pat: subsequence_bound(pat, gamma)), bad


def flag_suite(instance: TwoWayInstance, a) -> tuple[list[SubsetCheck], list[SubsetCheck]]:
    """(single-run checks against flag_bound, all-subset checks against the relaxed guarantee)."""
    sel = FlagOCS()
    single = exact_subset_checks(sel, instance, lambda pat: flag_bound(sum(pat)), single_runs_only=True)
    relaxed = exact_subset_checks(sel, instance, lambda pat: relaxed_guarantee(pat, a))
    return single, relaxed


# ---------------------------------------------------------------- hardness family


def hardness_event_sum(selections: np.ndarray, zero: int) -> np.ndarray:
    """Per run, the number of satisfied A/B/C events on the alternating instance (1-indexed parity)."""
    T = selections.shape[1]
    chose0 = selections == zero
    even = np.arange(1, T + 1) % 2 == 0
    j_e = chose0[:, even].sum(axis=1)
    j_o = chose0[:, ~even].sum(axis=1)
    n_odd, n_even = int((~even).sum()), int(even.sum())
    return j_e + (n_odd - j_o) * (n_even - j_e) + j_o * (j_o - 1) // 2 + j_e * (j_e - 1) // 2


def hardness_event_probs(selections: np.ndarray, zero: int) -> float:
    """Σ Pr[A] + Σ Pr[B] + Σ Pr[C] estimated event by event."""
    T = selections.shape[1]
    chose0 = selections == zero
    total = 0.0
    for t in range(1, T + 1):
        if t % 2 == 0:
            total += chose0[:, t - 1].mean()
    for t, u in itertools.combinations(range(1, T + 1), 2):
        if (t + u) % 2 == 1:
            total += (~chose0[:, t - 1] & ~chose0[:, u - 1]).mean()
        else:
            total += (chose0[:, t - 1] & chose0[:, u - 1]).mean()
    return float(total)


def tournament_trials(k: int, trials: int, seed: int) -> tuple[int, int]:
    """(hits, trials) for 'winner never selected' over fresh tournament instances per run."""
    from .instances import tournament_batch
    from .semi import optimal_semi_ocs_batch

    hits = 0
    for i, size in chunks(trials):
        rng = stream(seed, i)
        pairs, winner = tournament_batch(k, size, rng)
        sel = optimal_semi_ocs_batch(pairs, 2**k, rng)
        hits += int(np.count_nonzero(~(sel == winner[:, None]).any(axis=1)))
    return hits, trials


def uniform_tournament_trials(k: int, trials: int, seed: int) -> tuple[int, int]:
    """Same experiment with unweighted sampling without replacement (for contrast)."""
    from .instances import tournament_batch
    from .semi import two_way_batch

    hits = 0
    for i, size in chunks(trials):
        rng = stream(seed, i)
        pairs, winner = tournament_batch(k, size, rng)
        sel = two_way_batch(pairs, np.ones((1, pairs.shape[1], 2)), 2**k, size, rng)
        hits += int(np.count_nonzero(~(sel == winner[:, None]).any(axis=1)))
    return hits, trials
