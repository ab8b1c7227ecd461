"""Two-way semi-OCS: weighted sampling without replacement and its optimal special case."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import Branch, Selector


@dataclass(frozen=True)
class RoundView:
    """What a weight rule may look at when round ``t`` arrives."""

    t: int
    pair: tuple[str, str]
    k: tuple[int, int]  # previous appearances of each element of the pair
    selected: frozenset[str]


WeightRule = Callable[[RoundView], tuple[float, float]]


def more_appearances(view: RoundView) -> tuple[float, float]:
    ka, kb = view.k
    return (1.0 if ka >= kb else 0.0, 1.0 if kb >= ka else 0.0)


def uniform_weights(view: RoundView) -> tuple[float, float]:
    return (1.0, 1.0)


class WeightedTwoWay(Selector):
    """Among unselected members of the pair, pick proportionally to the rule's weights.

    Both selected: uniform. All unselected weights zero: uniform over the unselected.
    ``selection_free`` declares that the rule ignores ``view.selected``, which lets
    :meth:`simulate` precompute weights and vectorise over trials.
    """

    name = "weighted-two-way"

    def __init__(self, rule: WeightRule = uniform_weights, selection_free: bool = False):
        self.rule = rule
        self.selection_free = selection_free
        super().__init__()

    def reset(self):
        self._count: dict[str, int] = {}
        self._k: list[tuple[int, int]] = []
        super().reset()

    def _observe(self, t, rnd):
        a, b = rnd
        self._k.append((self._count.get(a, 0), self._count.get(b, 0)))
        self._count[a] = self._count.get(a, 0) + 1
        self._count[b] = self._count.get(b, 0) + 1

    def initial_state(self):
        return frozenset()

    def transitions(self, state, t):
        a, b = self.rounds[t]
        sa, sb = a in state, b in state
        if sa and sb:
            return [Branch(0.5, a, state), Branch(0.5, b, state)]
        if sa:
            return [Branch(1.0, b, state | {b})]
        if sb:
            return [Branch(1.0, a, state | {a})]
        wa, wb = self.rule(RoundView(t, (a, b), self._k[t], state))
        if wa < 0 or wb < 0:
            raise ValueError(f"round {t}: negative weight ({wa}, {wb})")
        total = wa + wb
        pa = 0.5 if total == 0 else wa / total
        out = []
        if pa > 0:
            out.append(Branch(pa, a, state | {a}))
        if pa < 1:
            out.append(Branch(1.0 - pa, b, state | {b}))
        return out

    def _batch_weights(self, pairs_idx: np.ndarray, instance) -> np.ndarray:
        sel = self.clone().bind(instance)
        w = np.array(
            [sel.rule(RoundView(t, tuple(r), sel._k[t], frozenset())) for t, r in enumerate(instance.rounds)],
            dtype=float,
        ).reshape(-1, 2)
        return w

    def simulate(self, instance, n, rng):
        if not self.selection_free:
            return super().simulate(instance, n, rng)
        pairs = instance.index_array()
        w = self._batch_weights(pairs, instance)
        return two_way_batch(pairs[None], w[None], len(instance.elements), n, rng)


class OptimalSemiOCS(WeightedTwoWay):
    """Neither selected: the element with more previous appearances wins; ties are a fair coin."""

    name = "optimal-semi-ocs"

    def __init__(self):
        super().__init__(more_appearances, selection_free=True)

    def simulate(self, instance, n, rng):
        pairs = instance.index_array()
        return optimal_semi_ocs_batch(np.broadcast_to(pairs, (n,) + pairs.shape), len(instance.elements), rng)


def optimal_semi_ocs() -> OptimalSemiOCS:
    return OptimalSemiOCS()


def weighted_two_way(rule: WeightRule, selection_free: bool = False) -> WeightedTwoWay:
    return WeightedTwoWay(rule, selection_free)


def two_way_batch(pairs: np.ndarray, weights: np.ndarray, n_elements: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorised weighted two-way sampling.

    ``pairs`` and ``weights`` have shape (B, T, 2) with B equal to 1 or ``n``;
    returns selections of shape (n, T).
    """
    T = pairs.shape[1]
    pairs = np.broadcast_to(pairs, (n, T, 2))
    weights = np.broadcast_to(weights, (n, T, 2))
    selected = np.zeros((n, n_elements), dtype=bool)
    rows = np.arange(n)
    out = np.empty((n, T), dtype=np.int64)
    for t in range(T):
        a, b = pairs[:, t, 0], pairs[:, t, 1]
        sa, sb = selected[rows, a], selected[rows, b]
        wa = np.where(sa, 0.0, weights[:, t, 0])
        wb = np.where(sb, 0.0, weights[:, t, 1])
        total = wa + wb
        # zero total covers both-selected and all-zero weights; one-selected forces the other
        pa = np.where(total > 0, wa / np.where(total > 0, total, 1.0), 0.5)
        pa = np.where(sa & ~sb, 0.0, np.where(sb & ~sa, 1.0, pa))
        pick_a = rng.random(n) < pa
        s = np.where(pick_a, a, b)
        selected[rows, s] = True
        out[:, t] = s
    return out


def optimal_semi_ocs_batch(pairs: np.ndarray, n_elements: int, rng: np.random.Generator) -> np.ndarray:
    """Optimal semi-OCS over per-trial pair sequences of shape (n, T, 2)."""
    n, T, _ = pairs.shape
    counts = np.zeros((n, n_elements), dtype=np.int64)
    selected = np.zeros((n, n_elements), dtype=bool)
    rows = np.arange(n)
    out = np.empty((n, T), dtype=np.int64)
    for t in range(T):
        a, b = pairs[:, t, 0], pairs[:, t, 1]
        sa, sb = selected[rows, a], selected[rows, b]
        ka, kb = counts[rows, a], counts[rows, b]
        coin = rng.random(n) < 0.5
        pick_a = np.where(sa == sb, np.where(sa | (ka == kb), coin, ka > kb), sb)
        s = np.where(pick_a, a, b)
        selected[rows, s] = True
        counts[rows, a] += 1
        counts[rows, b] += 1
        out[:, t] = s
    return out


def semi_ocs_log2_bound(k: int) -> int:
    """Exact base-2 logarithm of the bound, 1 - 2^k."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return 1 - 2**k


def semi_ocs_bound(k: int) -> float:
    """2^(1-2^k); exact whenever representable as a double, 0.0 once it underflows (k >= 11)."""
    e = semi_ocs_log2_bound(k)
    return math.ldexp(1.0, e) if k <= 30 else 0.0
