"""Flag-probing OCS and its relaxed guarantee."""

from __future__ import annotations

import math
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import Branch, Selector


class FlagOCS(Selector):
    """Each element carries a random bit. A round probes one member uniformly:
    bit 1 selects the probed element and clears the bit, bit 0 selects the other and sets it.

    ``forced_probes`` maps a round index to the element whose probe is fixed there;
    the exact oracle uses it to condition on probe realizations.
    """

    name = "flag-ocs"

    def __init__(self, forced_probes: Mapping[int, str] | None = None):
        self.forced_probes = dict(forced_probes or {})
        super().__init__()

    def initial_state(self):
        # flags are materialised on first appearance
        return frozenset()

    def transitions(self, state, t):
        a, b = self.rounds[t]
        flags = dict(state)
        inits = [{}]
        for e in (a, b):
            if e not in flags:
                inits = [dict(f, **{e: v}) for f in inits for v in (0, 1)]
        forced = self.forced_probes.get(t)
        if forced is not None and forced not in (a, b):
            raise ValueError(f"round {t}: forced probe {forced!r} not in {(a, b)}")
        probes = [forced] if forced is not None else [a, b]
        weight = 1.0 / (len(inits) * len(probes))
        merged: dict = {}
        for init in inits:
            for probe in probes:
                f = dict(flags, **init)
                other = b if probe == a else a
                if f[probe] == 1:
                    picked, f[probe] = probe, 0
                else:
                    picked, f[probe] = other, 1
                key = (picked, frozenset(f.items()))
                merged[key] = merged.get(key, 0.0) + weight
        return [Branch(pr, e, st) for (e, st), pr in merged.items()]

    def simulate(self, instance, n, rng):
        pairs = instance.index_array()
        index = {e: i for i, e in enumerate(instance.elements)}
        flags = rng.integers(0, 2, size=(n, len(index)), dtype=np.int8)
        rows = np.arange(n)
        out = np.empty((n, len(pairs)), dtype=np.int64)
        for t, (a, b) in enumerate(pairs):
            forced = self.forced_probes.get(t)
            if forced is None:
                probe_a = rng.random(n) < 0.5
            else:
                probe_a = np.full(n, index[forced] == a)
            probe = np.where(probe_a, a, b)
            other = np.where(probe_a, b, a)
            bit = flags[rows, probe]
            out[:, t] = np.where(bit == 1, probe, other)
            flags[rows, probe] = 1 - bit
        return out


def flag_ocs(forced_probes: Mapping[int, str] | None = None) -> FlagOCS:
    return FlagOCS(forced_probes)


def flag_bound(k: int) -> float:
    """2^(-k-min(k,⌈(k+2)/2⌉)) + k·2^(-k-min(k,⌈(k+3)/2⌉))."""
    if k < 0:
        raise ValueError("k must be >= 0")
    e1 = -k - min(k, math.ceil((k + 2) / 2))
    e2 = -k - min(k, math.ceil((k + 3) / 2))
    return math.ldexp(1.0, e1) + k * math.ldexp(1.0, e2)


def conditional_bound(k: int) -> float:
    """Unselected probability given the probes of the k rounds: 2^(-min(k,⌈(k+2)/2⌉))."""
    return math.ldexp(1.0, -min(k, math.ceil((k + 2) / 2)))


def relaxed_guarantee(
    pattern: Sequence[int],
    a: Callable[[int], float] | Sequence[float],
    p: Callable[[int], float] = flag_bound,
) -> float:
    """p(Σk) + ½ Σ_{i≥2} Σ_{j < k_1+…+k_{i-1}} a(j)."""
    if not pattern or any(k < 1 for k in pattern):
        raise ValueError("pattern needs positive run lengths")
    get = a if callable(a) else a.__getitem__
    prefix = np.cumsum(pattern)
    extra = sum(sum(get(j) for j in range(int(prefix[i - 1]))) for i in range(1, len(pattern)))
    return p(int(prefix[-1])) + 0.5 * extra
