"""Online bipartite matching driven by online selection, plus offline reference solvers."""

from __future__ import annotations

import bisect
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import Z99, Selector, chunks, stream
from .instances import MatchingInstance, MultiWayInstance, TwoWayInstance
from .lp import ContinuousLpSolution, DiscreteLpSolution

BISECT_ITERS = 200
MASS_TOL = 1e-10


class MatchingError(RuntimeError):
    pass


def dummy_id(v: str) -> str:
    """The weight-0 offline vertex private to online vertex ``v``."""
    return f"⊥{v}"


# ---------------------------------------------------------------- step profile


class StepProfile:
    """k_u(w): how many shortlist events of u had edge weight ≥ w."""

    def __init__(self):
        self.levels: list[float] = []  # ascending distinct weights
        self.counts: list[int] = []

    def add(self, w: float, times: int = 1) -> None:
        i = bisect.bisect_left(self.levels, w)
        if i < len(self.levels) and self.levels[i] == w:
            self.counts[i] += times
        else:
            self.levels.insert(i, w)
            self.counts.insert(i, times)

    def k(self, w: float) -> int:
        i = bisect.bisect_left(self.levels, w)
        return sum(self.counts[i:])

    def copy(self) -> "StepProfile":
        out = StepProfile()
        out.levels, out.counts = list(self.levels), list(self.counts)
        return out

    def segments(self):
        """(lo, hi, k) with k_u constant on (lo, hi]; covers (0, largest level]."""
        lo, total = 0.0, sum(self.counts)
        for level, c in zip(self.levels, self.counts):
            yield lo, level, total
            total -= c
            lo = level

    def value(self, w_uv: float, lp: DiscreteLpSolution) -> float:
        """∫_0^w b(k_u(w)) dw - ½ ∫_w^∞ Σ_{i<k_u(w)} a(i) dw, exactly over the steps."""
        gain, loss, top = 0.0, 0.0, 0.0
        for lo, hi, k in self.segments():
            top = hi
            if lo < w_uv:
                gain += (min(hi, w_uv) - lo) * lp.b(k)
            if hi > w_uv:
                loss += (hi - max(lo, w_uv)) * lp.cum_a(k)
        if w_uv > top:
            gain += (w_uv - top) * lp.b(0)
        return gain - 0.5 * loss


# ---------------------------------------------------------------- plans


@dataclass
class MatchingPlan:
    """The selection instance a matcher feeds its selector, and how selections map to edges.

    Shortlists and masses never depend on selector outcomes, so the plan is fixed by
    the matching instance; only the selector's choices are random.
    """

    instance: MatchingInstance
    selection: TwoWayInstance | MultiWayInstance
    round_of: list[int | None]  # online vertex -> selection round, None if decided without the selector
    fixed: list[str | None]  # deterministic match (or None) when round_of is None
    details: list[dict] = field(default_factory=list)

    def values(self, selections: np.ndarray) -> np.ndarray:
        """Free-disposal objective of each simulated run."""
        inst = self.instance
        n = selections.shape[0]
        offline = [u.id for u in inst.offline]
        col = {u: i for i, u in enumerate(offline)}
        sel_index = {e: i for i, e in enumerate(self.selection.elements)}
        best = np.zeros((n, len(offline)))
        for j, v in enumerate(inst.online):
            weight = {e.u: e.w for e in v.edges}
            t = self.round_of[j]
            if t is None:
                u = self.fixed[j]
                if u is not None:
                    best[:, col[u]] = np.maximum(best[:, col[u]], weight[u])
                continue
            for u in _round_ids(self.selection, t):
                if u not in col:
                    continue
                hit = selections[:, t] == sel_index[u]
                best[:, col[u]] = np.where(hit, np.maximum(best[:, col[u]], weight[u]), best[:, col[u]])
        return best.sum(axis=1)


def _round_ids(inst, t):
    rnd = inst.rounds[t]
    return [e for e, _ in rnd] if isinstance(inst, MultiWayInstance) else list(rnd)


def _value_of(instance: MatchingInstance, matched: dict[str, str | None]) -> float:
    best: dict[str, float] = {}
    for v in instance.online:
        u = matched.get(v.id)
        if u is None:
            continue
        w = next(e.w for e in v.edges if e.u == u)
        best[u] = max(best.get(u, 0.0), w)
    return sum(best.values())


class Matcher:
    name = "matcher"
    selector: Selector

    def plan(self, instance: MatchingInstance) -> MatchingPlan:
        raise NotImplementedError

    def run(self, instance: MatchingInstance, seed: int = 0) -> tuple[dict[str, str | None], float]:
        """One online pass; the selector sees a round only when its vertex arrives."""
        plan = self.plan(instance)
        sel = self.selector.clone()
        sel.reset()
        rng = stream(seed)
        matched = {}
        for j, v in enumerate(instance.online):
            t = plan.round_of[j]
            pick = plan.fixed[j] if t is None else sel.step(plan.selection.rounds[t], rng)
            matched[v.id] = None if pick is None or pick.startswith("⊥") else pick
        return matched, _value_of(instance, matched)

    def expected_value(self, instance: MatchingInstance, trials: int, seed: int) -> tuple[float, float]:
        """Monte Carlo mean objective and its 99% half-width."""
        plan = self.plan(instance)
        total, total_sq = 0.0, 0.0
        for i, size in chunks(trials):
            vals = plan.values(self.selector.clone().simulate(plan.selection, size, stream(seed, i)))
            total += float(vals.sum())
            total_sq += float((vals**2).sum())
        mean = total / trials
        var = max(total_sq / trials - mean * mean, 0.0)
        return mean, Z99 * math.sqrt(var / trials)


class EdgeWeightedMatcher(Matcher):
    """Shortlist two candidates by the Δ_u β_v rule; equal candidates match outright,
    distinct ones become one round of the selector."""

    name = "edge-weighted"

    def __init__(self, lp: DiscreteLpSolution, ocs: Selector):
        self.lp = lp
        self.selector = ocs

    def _argmax(self, v, weights, profiles, order):
        best_u, best = None, 0.0  # the private dummy has value 0 and loses ties
        for e in sorted(v.edges, key=lambda e: order[e.u]):
            val = profiles[e.u].value(e.w, self.lp)
            if val > best or (best_u is None and val >= best):
                best_u, best = e.u, val
        return best_u, best

    def plan(self, instance):
        order = {u.id: i for i, u in enumerate(instance.offline)}
        profiles = {u.id: StepProfile() for u in instance.offline}
        rounds, round_of, fixed, details = [], [], [], []
        for v in instance.online:
            weight = {e.u: e.w for e in v.edges}
            u1, d1 = self._argmax(v, weight, profiles, order)
            if u1 is not None:
                profiles[u1].add(weight[u1])
            u2, d2 = self._argmax(v, weight, profiles, order)
            if u2 is not None:
                profiles[u2].add(weight[u2])
            details.append({"v": v.id, "u1": u1, "u2": u2, "delta1": d1, "delta2": d2})
            if u1 == u2:
                round_of.append(None)
                fixed.append(u1)
            else:
                pair = tuple(u if u is not None else dummy_id(v.id) for u in (u1, u2))
                round_of.append(len(rounds))
                fixed.append(None)
                rounds.append(pair)
        return MatchingPlan(instance, TwoWayInstance(tuple(rounds)), round_of, fixed, details)


def edge_weighted_matcher(lp: DiscreteLpSolution, ocs: Selector) -> EdgeWeightedMatcher:
    return EdgeWeightedMatcher(lp, ocs)


class TwoChoiceGreedy(EdgeWeightedMatcher):
    """The single-weight-level case: Δ_u β_v reduces to w_u · b(k_u)."""

    name = "two-choice"

    def plan(self, instance):
        if instance.kind == "edge-weighted":
            raise MatchingError("two-choice greedy needs an unweighted or vertex-weighted instance")
        return super().plan(instance)


def two_choice_greedy(lp: DiscreteLpSolution, semi_ocs: Selector) -> TwoChoiceGreedy:
    return TwoChoiceGreedy(lp, semi_ocs)


class BalanceMatcher(Matcher):
    """Water-filling on discounted weights w_u b(y_u), rounded by a multi-way selector."""

    name = "balance"

    def __init__(self, lp: ContinuousLpSolution, mw: Selector):
        self.lp = lp
        self.selector = mw

    def masses(self, weights: np.ndarray, levels: np.ndarray) -> tuple[np.ndarray, float]:
        """Mass per neighbour summing to one, and the common water level θ."""
        if len(weights) == 1:
            return np.ones(1), float(weights[0] * self.lp.b(levels[0]))

        def total(theta):
            return np.maximum(self.lp.b_inv(theta / weights) - levels, 0.0)

        lo, hi = 0.0, float(np.max(weights * self.lp.b(levels)))
        for _ in range(BISECT_ITERS):
            mid = 0.5 * (lo + hi)
            s = total(mid).sum()
            if abs(s - 1.0) <= MASS_TOL * 1e-2:
                lo = hi = mid
                break
            if s > 1.0:
                lo = mid
            else:
                hi = mid
        theta = 0.5 * (lo + hi)
        x = total(theta)
        if abs(x.sum() - 1.0) > 1e-6:
            raise MatchingError(f"water level did not converge (mass {x.sum()})")
        return x / x.sum(), theta

    def plan(self, instance):
        if instance.kind == "edge-weighted":
            raise MatchingError("Balance needs an unweighted or vertex-weighted instance")
        wts = instance.offline_weight
        y = {u.id: 0.0 for u in instance.offline}
        rounds, round_of, fixed, details = [], [], [], []
        for v in instance.online:
            if not v.edges:
                round_of.append(None)
                fixed.append(None)
                details.append({"v": v.id, "theta": None, "x": {}})
                continue
            ids = [e.u for e in v.edges]
            x, theta = self.masses(np.array([wts[u] for u in ids]), np.array([y[u] for u in ids]))
            for u, xu in zip(ids, x):
                y[u] += float(xu)
            rnd = tuple((u, float(xu)) for u, xu in zip(ids, x) if xu > 0)
            details.append({"v": v.id, "theta": theta, "x": dict(rnd), "y": {u: y[u] for u in ids}})
            round_of.append(len(rounds))
            fixed.append(None)
            rounds.append(rnd)
        return MatchingPlan(instance, MultiWayInstance(tuple(rounds)), round_of, fixed, details)


def balance_matcher(lp: ContinuousLpSolution, mw: Selector) -> BalanceMatcher:
    return BalanceMatcher(lp, mw)


# ---------------------------------------------------------------- offline optimum


def weight_matrix(instance: MatchingInstance) -> np.ndarray:
    col = {u.id: i for i, u in enumerate(instance.offline)}
    m = np.zeros((len(instance.offline), len(instance.online)))
    for j, v in enumerate(instance.online):
        for e in v.edges:
            m[col[e.u], j] = e.w
    return m


def offline_optimum(instance: MatchingInstance) -> float:
    """Maximum-weight bipartite matching value."""
    m = weight_matrix(instance)
    if m.size == 0:
        return 0.0
    rows, cols = linear_sum_assignment(m, maximize=True)
    return float(m[rows, cols].sum())


def brute_force_optimum(instance: MatchingInstance) -> float:
    """Exhaustive search over injective assignments; tiny instances only."""
    m = weight_matrix(instance)
    n_off, n_on = m.shape
    best = 0.0
    options = [[None] + [i for i in range(n_off) if m[i, j] > 0] for j in range(n_on)]
    for choice in itertools.product(*options):
        used = [c for c in choice if c is not None]
        if len(used) != len(set(used)):
            continue
        best = max(best, sum(m[c, j] for j, c in enumerate(choice) if c is not None))
    return float(best)


@dataclass
class RatioResult:
    instance_id: str
    algorithm: str
    trials: int
    mean: float
    optimum: float
    ratio: float
    ci: float


def competitive_ratio(matcher: Matcher, instance: MatchingInstance, trials: int, seed: int, instance_id: str = "") -> RatioResult:
    opt = offline_optimum(instance)
    mean, ci = matcher.expected_value(instance, trials, seed)
    ratio = mean / opt if opt > 0 else 1.0
    return RatioResult(instance_id, matcher.name, trials, mean, opt, ratio, ci / opt if opt > 0 else 0.0)
