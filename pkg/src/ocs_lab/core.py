"""Selector contract, seeded randomness, traces, the exact oracle and the Monte Carlo estimator."""

from __future__ import annotations

import copy
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Hashable, Iterable, Iterator, Sequence

import numpy as np


Z99 = 2.5758293035489004
DEFAULT_BUDGET = 10**7
CHUNK = 1 << 15


class BudgetExceeded(RuntimeError):
    def __init__(self, t: int, size: int, budget: int):
        super().__init__(f"enumeration frontier reached {size} entries at round {t} (budget {budget})")
        self.round = t
        self.size = size


# ---------------------------------------------------------------- randomness


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, index)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def chunks(n_trials: int, chunk: int = CHUNK) -> Iterator[tuple[int, int]]:
    """``(chunk index, size)`` blocks covering ``n_trials``; each block owns one stream."""
    for i, start in enumerate(range(0, n_trials, chunk)):
        yield i, min(chunk, n_trials - start)


# ---------------------------------------------------------------- traces


@dataclass(frozen=True)
class Branch:
    prob: float
    element: str
    state: Hashable


@dataclass(frozen=True)
class Trace:
    elements: tuple[str, ...]
    selections: tuple[str, ...]

    def __len__(self):
        return len(self.selections)

    def unselected(self, t: int | None = None) -> frozenset[str]:
        """U^t: elements not selected in the first ``t`` rounds (all rounds by default)."""
        chosen = set(self.selections[: len(self.selections) if t is None else t])
        return frozenset(e for e in self.elements if e not in chosen)

    def unselected_in(self, e: str, rounds: Iterable[int]) -> bool:
        return all(self.selections[t] != e for t in rounds)


def _universe(instance) -> tuple[str, ...]:
    return instance.elements


# ---------------------------------------------------------------- selector contract


class Selector:
    """Online selector with a pure transition kernel.

    Subclasses implement :meth:`_observe` (deterministic per-round bookkeeping that
    only looks at rounds seen so far), :meth:`initial_state` and :meth:`transitions`.
    States must be hashable; equal states are interchangeable for the future.
    """

    name = "selector"

    def __init__(self):
        self.reset()

    # deterministic context
    def reset(self) -> None:
        self.rounds: list = []
        self._t = 0
        self._state = self.initial_state()

    def observe(self, rnd) -> int:
        t = len(self.rounds)
        self.rounds.append(rnd)
        self._observe(t, rnd)
        return t

    def _observe(self, t: int, rnd) -> None:
        pass

    def bind(self, instance) -> "Selector":
        """Reset and ingest every round of ``instance`` (for the oracle and batch simulation)."""
        self.reset()
        for rnd in instance.rounds:
            self.observe(rnd)
        return self

    # kernel
    def initial_state(self) -> Hashable:
        raise NotImplementedError

    def transitions(self, state: Hashable, t: int) -> list[Branch]:
        raise NotImplementedError

    # stateful stepping
    def _next_round(self, rnd) -> int:
        t = self._t
        if t == len(self.rounds):
            self.observe(rnd)
        elif self.rounds[t] != rnd:
            raise ValueError(f"round {t} differs from the round already observed there")
        return t

    def enumerate(self, rnd) -> list[Branch]:
        return self.transitions(self._state, self._next_round(rnd))

    def step(self, rnd, rng: np.random.Generator) -> str:
        t = self._next_round(rnd)
        branches = self.transitions(self._state, t)
        if len(branches) == 1:
            b = branches[0]
        else:
            probs = np.fromiter((b.prob for b in branches), float, len(branches))
            b = branches[int(rng.choice(len(branches), p=probs / probs.sum()))]
        self._state = b.state
        self._t = t + 1
        return b.element

    def snapshot(self) -> tuple[int, Hashable]:
        return (self._t, self._state)

    def restore(self, snap: tuple[int, Hashable]) -> None:
        t, state = snap
        if t > len(self.rounds):
            raise ValueError(f"snapshot at round {t} is ahead of the observed prefix")
        self._t, self._state = t, state

    def clone(self) -> "Selector":
        return copy.deepcopy(self)

    # batch simulation
    def simulate(self, instance, n: int, rng: np.random.Generator) -> np.ndarray:
        """Selections of ``n`` independent runs as indices into ``instance.elements``, shape (n, T)."""
        index = {e: i for i, e in enumerate(instance.elements)}
        out = np.empty((n, len(instance.rounds)), dtype=np.int64)
        for r in range(n):
            trace = run(self, instance, rng=rng)
            out[r] = [index[e] for e in trace.selections]
        return out


def run(selector: Selector, instance, seed: int | None = None, rng: np.random.Generator | None = None) -> Trace:
    """Feed ``instance`` to a fresh copy of ``selector`` round by round."""
    if rng is None:
        rng = stream(0 if seed is None else seed)
    sel = selector.clone()
    sel.reset()
    picks = tuple(sel.step(rnd, rng) for rnd in instance.rounds)
    return Trace(_universe(instance), picks)


# ---------------------------------------------------------------- events


class Event:
    """Predicate over a full :class:`Trace`.

    ``fold``/``accept`` let the exact oracle merge branches on a compact accumulator;
    the default accumulator is the full selection tuple.
    """

    def __call__(self, trace: Trace) -> bool:
        raise NotImplementedError

    def init(self, instance):
        return ()

    def fold(self, acc, t: int, element: str):
        return acc + (element,)

    def accept(self, acc, instance) -> bool:
        return self(Trace(_universe(instance), acc))

    def batch(self, selections: np.ndarray, instance) -> np.ndarray:
        elements = _universe(instance)
        return np.array([self(Trace(elements, tuple(elements[i] for i in row))) for row in selections], dtype=bool)


class PredicateEvent(Event):
    def __init__(self, predicate: Callable[[Trace], bool]):
        self.predicate = predicate

    def __call__(self, trace):
        return bool(self.predicate(trace))


class Unselected(Event):
    """Every element of ``elements`` is unselected in ``rounds`` (all rounds by default)."""

    def __init__(self, elements: Iterable[str] | str, rounds: Iterable[int] | None = None):
        self.elements = frozenset([elements] if isinstance(elements, str) else elements)
        self.rounds = None if rounds is None else frozenset(rounds)

    def _watch(self, t):
        return self.rounds is None or t in self.rounds

    def __call__(self, trace):
        return all(not (s in self.elements and self._watch(t)) for t, s in enumerate(trace.selections))

    def init(self, instance):
        return True

    def fold(self, acc, t, element):
        return acc and not (element in self.elements and self._watch(t))

    def accept(self, acc, instance):
        return acc

    def batch(self, selections, instance):
        index = {e: i for i, e in enumerate(_universe(instance))}
        ids = np.array([index[e] for e in self.elements if e in index], dtype=np.int64)
        cols = selections if self.rounds is None else selections[:, sorted(self.rounds)]
        return ~np.isin(cols, ids).any(axis=1)


class Always(Event):
    def __call__(self, trace):
        return True

    def init(self, instance):
        return True

    def fold(self, acc, t, element):
        return True

    def accept(self, acc, instance):
        return True

    def batch(self, selections, instance):
        return np.ones(len(selections), dtype=bool)


# ---------------------------------------------------------------- exact oracle


def exact_law(
    selector: Selector,
    instance,
    fold: Callable,
    init,
    budget: int = DEFAULT_BUDGET,
    per_round: bool = False,
):
    """Distribution of a trace accumulator by exhaustive branch enumeration.

    Branches are merged when both the selector state and the accumulator coincide.
    Returns ``{acc: prob}``, or one such dict per prefix length when ``per_round``.
    """
    sel = selector.clone().bind(instance)
    frontier: dict = {(sel.initial_state(), init): 1.0}
    layers = []

    def marginal():
        out: dict = {}
        for (_, acc), pr in frontier.items():
            out[acc] = out.get(acc, 0.0) + pr
        return out

    if per_round:
        layers.append(marginal())
    for t in range(len(instance.rounds)):
        nxt: dict = {}
        for (state, acc), pr in frontier.items():
            for b in sel.transitions(state, t):
                key = (b.state, fold(acc, t, b.element))
                nxt[key] = nxt.get(key, 0.0) + pr * b.prob
            if len(nxt) > budget:
                raise BudgetExceeded(t, len(nxt), budget)
        frontier = nxt
        if per_round:
            layers.append(marginal())
    return layers if per_round else marginal()


def exact_event_prob(selector: Selector, instance, event: Event | Callable, budget: int = DEFAULT_BUDGET) -> float:
    if not isinstance(event, Event):
        event = PredicateEvent(event)
    law = exact_law(selector, instance, event.fold, event.init(instance), budget)
    return float(sum(pr for acc, pr in law.items() if event.accept(acc, instance)))


def unselected_law(selector: Selector, instance, per_round: bool = False, budget: int = DEFAULT_BUDGET):
    """Law of the unselected set U^t as ``{frozenset: prob}`` (final, or per prefix length)."""
    universe = frozenset(_universe(instance))
    return exact_law(selector, instance, lambda acc, t, e: acc - {e}, universe, budget, per_round)


# ---------------------------------------------------------------- Monte Carlo


def ci_halfwidth(p_hat: float, n: int, z: float = Z99) -> float:
    """99% normal half-width, or the Wilson half-width when p̂n < 5."""
    if p_hat * n < 5:
        z2 = z * z
        return z * math.sqrt(p_hat * (1 - p_hat) / n + z2 / (4 * n * n)) / (1 + z2 / n)
    return z * math.sqrt(p_hat * (1 - p_hat) / n)


def simulate(selector: Selector, instance, trials: int, seed: int, workers: int = 1) -> Iterator[np.ndarray]:
    """Yield selection blocks, one per chunk, in chunk order regardless of ``workers``."""

    def block(args):
        i, size = args
        return selector.clone().simulate(instance, size, stream(seed, i))

    if workers <= 1:
        for args in chunks(trials):
            yield block(args)
    else:
        with ThreadPoolExecutor(workers) as pool:
            yield from pool.map(block, list(chunks(trials)))


def monte_carlo_counts(
    selector: Selector, instance, events: Sequence[Event], trials: int, seed: int, workers: int = 1
) -> np.ndarray:
    """Number of trials satisfying each event, from one shared set of simulated runs."""
    counts = np.zeros(len(events), dtype=np.int64)
    for sel in simulate(selector, instance, trials, seed, workers):
        for j, ev in enumerate(events):
            counts[j] += int(np.count_nonzero(ev.batch(sel, instance)))
    return counts


def monte_carlo_event_prob(
    selector: Selector, instance, event: Event | Callable, trials: int, seed: int, workers: int = 1
) -> tuple[float, float]:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not isinstance(event, Event):
        event = PredicateEvent(event)
    hits = int(monte_carlo_counts(selector, instance, [event], trials, seed, workers)[0])
    p_hat = hits / trials
    return p_hat, ci_halfwidth(p_hat, trials)
