"""Closed-form solutions of the matching LPs (discrete two-choice and continuous Balance)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import integrate

from .flag import flag_bound
from .multiway import WeightFunction
from .semi import semi_ocs_bound

SERIES_TOL = 1e-13
CUTOFF_TOL = 1e-14


class PreconditionError(ValueError):
    pass


class QuadratureError(RuntimeError):
    pass


# ---------------------------------------------------------------- discrete


@dataclass(frozen=True)
class DiscreteBound:
    """k ↦ p(k), the probability an element with k appearances stays unselected."""

    fn: Callable[[int], float]
    name: str = "custom"

    def __call__(self, k: int) -> float:
        return 1.0 if k == 0 else float(self.fn(int(k)))

    @cached_property
    def cutoff(self) -> int:
        """Smallest K with p(K) < 1e-14."""
        k = 0
        while self(k) >= CUTOFF_TOL:
            k += 1
            if k > 10_000:
                raise PreconditionError(f"{self.name}: p(k) does not decay")
        return k

    def check(self) -> None:
        for k in range(self.cutoff + 1):
            if self(k + 1) > (2.0 / 3.0) * self(k) * (1 + 1e-12):
                raise PreconditionError(f"{self.name}: p({k + 1}) > (2/3) p({k}) at k={k}")


def semi_bound() -> DiscreteBound:
    return DiscreteBound(semi_ocs_bound, "semi")


def flag_discrete_bound() -> DiscreteBound:
    return DiscreteBound(flag_bound, "flag")


def gamma_bound(gamma: float) -> DiscreteBound:
    """p(k) = 2^(-k) (1-γ)^(k-1) for k ≥ 1, p(0) = 1."""
    return DiscreteBound(lambda k: 2.0**-k * (1.0 - gamma) ** (k - 1), "gamma")


def gamma_closed_form(gamma: float) -> float:
    return (3.0 + 2.0 * gamma) / (6.0 + 3.0 * gamma)


@dataclass(frozen=True)
class DiscreteLpSolution:
    gamma: float
    p: DiscreteBound
    a_table: np.ndarray
    b_table: np.ndarray

    @property
    def K(self) -> int:
        return len(self.a_table) - 1

    def b(self, k: int) -> float:
        if k < len(self.b_table):
            return float(self.b_table[k])
        return _b_series(self.p, k)

    def a(self, k: int) -> float:
        if k < len(self.a_table):
            return float(self.a_table[k])
        return self.p(k) - self.p(k + 1) - _b_series(self.p, k)

    @cached_property
    def _cum_a(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.a_table)])

    def cum_a(self, k: int) -> float:
        """Σ_{i<k} a(i)."""
        if k < len(self._cum_a):
            return float(self._cum_a[k])
        return float(self._cum_a[-1]) + sum(self.a(i) for i in range(len(self.a_table), k))

    def residuals(self) -> dict[str, float]:
        """Worst violation of each feasibility constraint (≤ 0 means satisfied)."""
        ks = np.arange(len(self.a_table))
        drop = np.array([self.p(k) - self.p(k + 1) for k in ks])
        cum = self._cum_a[:-1]
        return {
            "gain_split": float(np.max(self.a_table + self.b_table - drop)),
            "dual_feasible": float(np.max(self.gamma - cum - 2 * self.b_table)),
            "dual_equality": float(np.max(np.abs(self.gamma - cum - 2 * self.b_table))),
            "b_monotone": float(np.max(np.diff(self.b_table), initial=-np.inf)),
            "a_nonneg": float(np.max(-self.a_table)),
            "b_nonneg": float(np.max(-self.b_table)),
        }


def _b_series(p: DiscreteBound, k: int) -> float:
    total, i, w = 0.0, k, 1.0 / 3.0
    while True:
        term = w * (p(i) - p(i + 1))
        total += term
        if i > k and abs(term) < SERIES_TOL * 1e-3:
            return total
        i += 1
        w *= 2.0 / 3.0


def two_choice_lp(p: DiscreteBound) -> DiscreteLpSolution:
    """Γ = 1 - (1/3) Σ (2/3)^i p(i); b(k) = (1/3) Σ_{i≥k} (2/3)^(i-k) (p(i)-p(i+1)); a = p(k)-p(k+1)-b(k)."""
    p.check()
    gamma, i, w = 1.0, 0, 1.0 / 3.0
    while True:
        term = w * p(i)
        gamma -= term
        # terms shrink at least by 4/9, so the tail is below term·4/5
        if term < SERIES_TOL:
            break
        i += 1
        w *= 2.0 / 3.0
    K = p.cutoff
    tail = K + 80
    drops = np.array([p(k) - p(k + 1) for k in range(tail + 1)])
    b = np.zeros(tail + 2)
    for k in range(tail, -1, -1):
        b[k] = drops[k] / 3.0 + (2.0 / 3.0) * b[k + 1]
    b = b[: K + 1]
    a = drops[: K + 1] - b
    return DiscreteLpSolution(gamma, p, a, b)


# ---------------------------------------------------------------- continuous


@dataclass(frozen=True)
class ContinuousBound:
    p: Callable
    dp: Callable
    name: str = "custom"


def multiway_continuous_bound(w: WeightFunction | None = None) -> ContinuousBound:
    w = WeightFunction() if w is None else w
    return ContinuousBound(lambda y: w.bound(y), lambda y: -w.dlog(y) * w.bound(y), "multiway")


def exponential_bound() -> ContinuousBound:
    return ContinuousBound(lambda y: np.exp(-np.asarray(y, float)), lambda y: -np.exp(-np.asarray(y, float)), "exp")


def idealized_bound(y):
    """max(1-y, 0): reference curve only; no selector attains it."""
    return np.maximum(1.0 - np.asarray(y, float), 0.0)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)


@dataclass
class ContinuousLpSolution:
    """Γ and the gain split a(y), b(y) with b evaluated from a dense log-grid."""

    gamma: float
    bound: ContinuousBound
    ys: np.ndarray
    log_b: np.ndarray
    dlog_b: np.ndarray = field(repr=False)

    def b_exact(self, y: float) -> float:
        """b(y) = ∫_y^∞ -p'(z) e^(y-z) dz by adaptive quadrature."""
        val, err = integrate.quad(lambda s: -float(self.bound.dp(y + s)) * math.exp(-s), 0.0, np.inf, epsabs=1e-16, epsrel=1e-10, limit=200)
        return val

    def b(self, y):
        y = np.asarray(y, float)
        return np.exp(self._hermite(y))

    def a(self, y):
        return -np.asarray(self.bound.dp(y), float) - self.b(y)

    def _hermite(self, y):
        ys, f, df = self.ys, self.log_b, self.dlog_b
        y = np.clip(y, 0.0, None)
        i = np.clip(np.searchsorted(ys, y, side="right") - 1, 0, len(ys) - 2)
        h = ys[i + 1] - ys[i]
        s = (y - ys[i]) / h
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        out = h00 * f[i] + h10 * h * df[i] + h01 * f[i + 1] + h11 * h * df[i + 1]
        beyond = y > ys[-1]
        if np.any(beyond):
            out = np.where(beyond, f[-1] + df[-1] * (y - ys[-1]), out)
        return out

    def b_inv(self, theta):
        """y with b(y) = θ; 0 when θ ≥ b(0) (vectorised)."""
        theta = np.asarray(theta, float)
        target = np.log(np.maximum(theta, 1e-300))
        out = np.zeros_like(target)
        inside = target < self.log_b[0]
        if not np.any(inside):
            return out
        tg = target[inside]
        neg = -self.log_b  # increasing
        i = np.searchsorted(neg, -tg, side="left") - 1
        res = np.empty_like(tg)
        far = i >= len(self.ys) - 1
        if np.any(far):
            res[far] = self.ys[-1] + (tg[far] - self.log_b[-1]) / self.dlog_b[-1]
        near = ~far
        if np.any(near):
            lo = self.ys[np.maximum(i[near], 0)]
            hi = self.ys[np.maximum(i[near], 0) + 1]
            t = tg[near]
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                above = self._hermite(mid) > t
                lo = np.where(above, mid, lo)
                hi = np.where(above, hi, mid)
            res[near] = 0.5 * (lo + hi)
        out[inside] = res
        return out


def balance_lp(bound: ContinuousBound, n_grid: int = 4000, y_max: float | None = None) -> ContinuousLpSolution:
    """Γ = ∫ e^(-z)(1-p(z)) dz and b(y) = -e^y ∫_y^∞ p'(z) e^(-z) dz."""
    gamma, err = integrate.quad(
        lambda z: math.exp(-z) * (1.0 - float(bound.p(z))), 0.0, np.inf, epsabs=1e-14, epsrel=1e-9, limit=200
    )
    if not err < 1e-8:
        raise QuadratureError(f"Γ quadrature error estimate {err}")
    if y_max is None:
        # beyond y_max the integrand of b is below 1e-16 relative to its scale
        y_max = 1.0
        while float(bound.p(y_max)) * math.exp(-y_max) > 1e-18 and y_max < 200:
            y_max *= 1.25
    ys = np.linspace(0.0, y_max, n_grid + 1)
    # tail integrals F(y_i) = ∫_{y_i}^∞ -p'(z) e^(-z) dz, interval by interval
    lo, hi = ys[:-1], ys[1:]
    mid, half = (lo + hi) / 2, (hi - lo) / 2
    z = mid[:, None] + half[:, None] * _GL_X[None, :]
    g = -np.asarray(bound.dp(z), float) * np.exp(-z)
    pieces = (g * _GL_W[None, :]).sum(axis=1) * half
    tail, _ = integrate.quad(lambda s: -float(bound.dp(s)) * math.exp(-s), y_max, np.inf, epsabs=1e-300, limit=200)
    F = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]]) + tail
    with np.errstate(divide="ignore"):
        log_b = np.log(F) + ys
    if not np.all(np.isfinite(log_b)):
        raise QuadratureError("b vanished on the grid; choose a smaller y_max")
    dp = np.asarray(bound.dp(ys), float)
    dlog_b = 1.0 + dp / np.exp(log_b)
    return ContinuousLpSolution(gamma, bound, ys, log_b, dlog_b)
