"""Multi-way semi-OCS: weighted sampling without replacement on cumulative masses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import Branch, Selector

C_CUBIC = (4.0 - 2.0 * math.sqrt(3.0)) / 3.0


@dataclass(frozen=True)
class WeightFunction:
    """w(y) = exp(a1 y + a2 y^2 + c y^3)."""

    c: float = C_CUBIC
    a1: float = 1.0
    a2: float = 0.5

    @classmethod
    def constant(cls) -> "WeightFunction":
        return cls(0.0, 0.0, 0.0)

    def log(self, y):
        y = np.asarray(y, dtype=float)
        return y * (self.a1 + y * (self.a2 + self.c * y))

    def __call__(self, y):
        return np.exp(self.log(y))

    def dlog(self, y):
        """Derivative of ln w."""
        y = np.asarray(y, dtype=float)
        return self.a1 + y * (2 * self.a2 + 3 * self.c * y)

    def bound(self, y):
        """p(y) = 1 / w(y)."""
        return np.exp(-self.log(y))


def multiway_bound(y, c: float = C_CUBIC):
    """exp(-y - y^2/2 - c y^3)."""
    return WeightFunction(c).bound(y)


class MultiwaySelector(Selector):
    """Pick an unselected member of the round with probability ∝ x_e · w(y_e before the round)."""

    name = "multiway"

    def __init__(self, w: WeightFunction | None = None):
        self.w = WeightFunction() if w is None else w
        super().__init__()

    def reset(self):
        self._y: dict[str, float] = {}
        self._logits: list[tuple[tuple[str, ...], np.ndarray]] = []
        super().reset()

    def _observe(self, t, rnd):
        items = rnd.items() if isinstance(rnd, dict) else rnd
        ids = tuple(e for e, x in items if x > 0)
        xs = np.array([x for _, x in items if x > 0], dtype=float)
        ys = np.array([self._y.get(e, 0.0) for e in ids])
        self._logits.append((ids, np.log(xs) + self.w.log(ys)))
        for e, x in zip(ids, xs):
            self._y[e] = self._y.get(e, 0.0) + float(x)

    def cumulative_mass(self) -> dict[str, float]:
        return dict(self._y)

    def initial_state(self):
        return frozenset()

    def transitions(self, state, t):
        ids, logits = self._logits[t]
        free = [i for i, e in enumerate(ids) if e not in state]
        if not free:
            return [Branch(1.0 / len(ids), e, state) for e in ids]
        lg = logits[free]
        if np.all(np.isneginf(lg)):
            probs = np.full(len(free), 1.0 / len(free))
        else:
            probs = np.exp(lg - logsumexp(lg))
        return [Branch(float(pr), ids[i], state | {ids[i]}) for i, pr in zip(free, probs) if pr > 0]

    def simulate(self, instance, n, rng):
        sel = self.clone().bind(instance)
        index = {e: i for i, e in enumerate(instance.elements)}
        selected = np.zeros((n, len(index)), dtype=bool)
        out = np.empty((n, len(instance.rounds)), dtype=np.int64)
        for t, (ids, logits) in enumerate(sel._logits):
            cols = np.array([index[e] for e in ids])
            free = ~selected[:, cols]
            none_free = ~free.any(axis=1)
            shifted = np.exp(logits - logits.max())
            wts = np.where(free, shifted, 0.0)
            wts[none_free] = 1.0
            cum = np.cumsum(wts, axis=1)
            u = rng.random(n) * cum[:, -1]
            pick = np.minimum((cum <= u[:, None]).sum(axis=1), len(ids) - 1)
            s = cols[pick]
            selected[np.arange(n), s] = True
            out[:, t] = s
        return out


def multiway_selector(w: WeightFunction | None = None) -> MultiwaySelector:
    return MultiwaySelector(w)


@dataclass
class InequalityReport:
    points: int
    max_violation: float  # largest ln(lhs/rhs); <= 0 means the inequality holds
    violations: int
    worst: tuple

    @property
    def ok(self) -> bool:
        return self.violations == 0


def check_cubic_inequality(x_grid, y_grid, w: WeightFunction | None = None, tol: float = 1e-9) -> InequalityReport:
    """w(y+x)/w(y) <= x/(1-x)·w(y) + 1 on the product grid, compared in log space."""
    w = WeightFunction() if w is None else w
    x, y = np.meshgrid(np.asarray(x_grid, float), np.asarray(y_grid, float), indexing="ij")
    lhs = w.log(y + x) - w.log(y)
    rhs = np.logaddexp(0.0, np.log(x) - np.log1p(-x) + w.log(y))
    gap = lhs - rhs
    i = np.unravel_index(np.argmax(gap), gap.shape)
    return InequalityReport(gap.size, float(gap[i]), int(np.count_nonzero(gap > tol)), (float(x[i]), float(y[i])))


def condition_gap(x, y, w: WeightFunction | None = None) -> float:
    """ln(lhs) - ln(rhs) for one case; -inf when the left side vanishes."""
    w = WeightFunction() if w is None else w
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    s = x.sum()
    log_rhs = float(np.sum(w.log(y) - w.log(y + x)))
    if s >= 1:
        return -math.inf
    rest = math.log1p(-s)
    terms = np.append(np.log(x[x > 0]) + w.log(y[x > 0]), rest)
    return rest - float(logsumexp(terms)) - log_rhs


def check_condition_inequality(cases, w: WeightFunction | None = None, tol: float = 1e-9) -> InequalityReport:
    """(1-Σx)/(Σ x w(y) + 1 - Σx) <= ∏ w(y)/w(y+x) for each ``(x, y)`` case."""
    w = WeightFunction() if w is None else w
    cases = list(cases)
    if not cases:
        return InequalityReport(0, -math.inf, 0, ())
    width = max(len(x) for x, _ in cases)
    # zero padding: a missing element has x = 0 and contributes nothing to either side
    X = np.zeros((len(cases), width))
    Y = np.zeros((len(cases), width))
    for i, (x, y) in enumerate(cases):
        X[i, : len(x)] = x
        Y[i, : len(y)] = y
    s = X.sum(axis=1)
    log_rhs = np.sum(w.log(Y) - w.log(Y + X), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rest = np.log1p(-np.minimum(s, 1.0))
        terms = np.concatenate([np.log(X) + w.log(Y), rest[:, None]], axis=1)
        gap = rest - logsumexp(terms, axis=1) - log_rhs
    gap = np.where(s >= 1, -np.inf, gap)
    i = int(np.argmax(gap))
    k = len(cases[i][0])
    worst = (tuple(map(float, X[i, :k])), tuple(map(float, Y[i, :k])))
    return InequalityReport(len(cases), float(gap[i]), int(np.count_nonzero(gap > tol)), worst)


def random_condition_cases(n: int, k_max: int, rng: np.random.Generator, y_max: float = 6.0):
    """Masses on the simplex interior (plus slack) and cumulative masses in [0, y_max]."""
    cases = []
    for _ in range(n):
        k = int(rng.integers(1, k_max + 1))
        x = rng.dirichlet(np.ones(k + 1))[:k]
        y = rng.uniform(0.0, y_max, size=k)
        cases.append((x, y))
    return cases
