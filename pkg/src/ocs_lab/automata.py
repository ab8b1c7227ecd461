"""Automata-based OCS: ex-ante graph, pseudo-path partition, forest constructor and forest OCS.

Rounds are 0-indexed. An arc ``(t, t')_e`` joins consecutive appearances of ``e``.
Path automata states are ``NO``, ``NO2``, ``YES``; tree automaton states are
``O``, ``H``, ``H2``, ``T``, ``T2`` with labels ``"H"``/``"T"``.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import Branch, Selector, stream

NO, NO2, YES = 0, 1, 2
O, H, H2, T, T2 = 0, 1, 2, 3, 4
P_DEFAULT = 0.6616
BETA_DEFAULT = math.sqrt(2.0) - 1.0
STATE_NAMES = ("no", "no2", "yes")
STAR_NAMES = ("O", "H", "H2", "T", "T2")


# ---------------------------------------------------------------- automata


def sigma_plus(p: float) -> dict[int, list[tuple[float, int, bool]]]:
    """Positive-end automaton: state -> [(prob, next state, matched)]."""
    return {
        NO: [(p, YES, True), (1.0 - p, NO2, False)],
        NO2: [(1.0, YES, True)],
        YES: [(1.0, NO, False)],
    }


def sigma_minus(p: float) -> dict[int, list[tuple[float, int, bool]]]:
    """Negative-end automaton, the time reversal of :func:`sigma_plus`."""
    return {
        NO: [(1.0, YES, False)],
        NO2: [(1.0, NO, False)],
        YES: [(p, NO, True), (1.0 - p, NO2, True)],
    }


def transition_matrix(table: dict) -> np.ndarray:
    m = np.zeros((3, 3))
    for q, outs in table.items():
        for pr, q2, _ in outs:
            m[q, q2] += pr
    return m


def stationary(p: float) -> np.ndarray:
    return np.array([1.0, 1.0 - p, 1.0]) / (3.0 - p)


def sigma_star(beta: float) -> dict[int, list[tuple[float, int, str]]]:
    """Tree automaton: state -> [(prob, next state, label)]."""
    lo, hi = (1.0 - beta) / 2.0, (1.0 + beta) / 2.0
    return {
        O: [(0.5, H, "H"), (0.5, T, "T")],
        H: [(lo, H2, "H"), (hi, T, "T")],
        T: [(hi, H, "H"), (lo, T2, "T")],
        H2: [(1.0, O, "T")],
        T2: [(1.0, O, "H")],
    }


def _prune(table):
    return {q: [o for o in outs if o[0] > 0] for q, outs in table.items()}


def f_sequence(p, n: int) -> list:
    """f_0=1, f_1=0, f_2=p, f_i = p f_{i-2} + (1-p) f_{i-3}; exact when ``p`` is a Fraction."""
    if n < 0:
        raise ValueError("n must be >= 0")
    zero = p - p
    f = [zero + 1, zero, p]
    for i in range(3, n + 1):
        f.append(p * f[i - 2] + (1 - p) * f[i - 3])
    return f[: n + 1]


def alpha(p: float) -> float:
    return min(3 * p * (1 - p) / (1 + p), p**3 + (1 - p) ** 2, 1 / (3 - p))


def subsequence_bound(pattern: Sequence[int], gamma: float) -> float:
    """∏ 2^(-k_i) (1-γ)^(k_i - 1)."""
    if not pattern or any(k < 1 for k in pattern):
        raise ValueError("pattern needs positive run lengths")
    return math.prod(2.0**-k * (1.0 - gamma) ** (k - 1) for k in pattern)


@dataclass(frozen=True)
class AutomatonParams:
    p: float = P_DEFAULT
    beta: float = BETA_DEFAULT

    @property
    def alpha(self) -> float:
        return alpha(self.p)

    @property
    def gamma(self) -> float:
        return self.alpha * self.beta

    @property
    def pi(self) -> np.ndarray:
        return stationary(self.p)


def path_decision_law(p: float, length: int, i0: int = 1) -> dict[tuple[bool, ...], float]:
    """Exact joint law of the decisions d^1..d^length of one pseudo-path.

    The first arc to arrive has index ``i0``: the state sampled from the stationary
    law drives the positive automaton for indices ``i0..length`` and the negative
    automaton, from the same state, for indices ``i0-1`` down to 1.
    ``i0 = 1`` is the pure positive run.
    """
    if not 1 <= i0 <= length:
        raise ValueError("need 1 <= i0 <= length")
    plus, minus = _prune(sigma_plus(p)), _prune(sigma_minus(p))
    pi = stationary(p)
    law: dict = {}
    for q0 in range(3):
        if pi[q0] == 0:
            continue
        fwd = [(pi[q0], q0, ())]
        for _ in range(i0, length + 1):
            fwd = [(pr * pt, q2, ds + (d,)) for pr, q, ds in fwd for pt, q2, d in plus[q]]
        bwd = [(1.0, q0, ())]
        for _ in range(1, i0):
            bwd = [(pr * pt, q2, (d,) + ds) for pr, q, ds in bwd for pt, q2, d in minus[q]]
        for pf, _, df in fwd:
            for pb, _, db in bwd:
                key = db + df
                law[key] = law.get(key, 0.0) + pf * pb
    return law


# ---------------------------------------------------------------- structure


@dataclass(frozen=True)
class Arc:
    origin: int
    dest: int
    element: str


class ExAnteGraph:
    """Online ex-ante dependence graph; parallel arcs are kept."""

    def __init__(self):
        self.rounds: list[tuple[str, str]] = []
        self.arcs: list[Arc] = []
        self.in_arcs: list[list[int]] = []
        self.arc_from: dict[tuple[int, str], int] = {}
        self._last: dict[str, int] = {}

    def ingest(self, rnd) -> list[Arc]:
        t = len(self.rounds)
        self.rounds.append(tuple(rnd))
        new = []
        for e in rnd:
            if e in self._last:
                aid = len(self.arcs)
                self.arcs.append(Arc(self._last[e], t, e))
                self.arc_from[(self._last[e], e)] = aid
                new.append(aid)
            self._last[e] = t
        self.in_arcs.append(new)
        return [self.arcs[i] for i in new]

    def other(self, t: int, e: str) -> str:
        a, b = self.rounds[t]
        return b if e == a else a

    def common(self, *ts: int) -> bool:
        shared = set(self.rounds[ts[0]])
        for t in ts[1:]:
            shared &= set(self.rounds[t])
        return bool(shared)

    def out_arcs(self, t: int) -> list[int]:
        return [self.arc_from[(t, e)] for e in self.rounds[t] if (t, e) in self.arc_from]

    def adjacent(self, i: int, j: int) -> bool:
        a, b = self.arcs[i], self.arcs[j]
        if i == j:
            return False
        if a.dest == b.dest:
            return True
        return a.origin == b.origin and self.common(a.origin, a.dest, b.dest)


@dataclass(frozen=True)
class Attachment:
    arc: int
    path: int
    sign: int  # +1 positive end, -1 negative end
    fresh: bool  # first arc of its path


class PseudoPaths:
    """Online partition of arcs into pseudo-paths; arcs only ever extend a path end."""

    def __init__(self, graph: ExAnteGraph):
        self.graph = graph
        self.paths: list[deque[int]] = []
        self.where: dict[int, tuple[int, int]] = {}

    def _link(self, aid: int, t: int, new: list[int]) -> int | None:
        g = self.graph
        arc = g.arcs[aid]
        sib = g.arc_from.get((arc.origin, g.other(arc.origin, arc.element)))
        if sib is None or sib in new:
            return None
        return sib if g.common(arc.origin, g.arcs[sib].dest, t) else None

    def attach(self, t: int) -> list[Attachment]:
        g = self.graph
        new = list(g.in_arcs[t])
        if not new:
            return []
        links = {a: s for a in new if (s := self._link(a, t, new)) is not None}
        if len(links) > 1:
            raise AssertionError(f"round {t}: both in-arcs extend existing pseudo-paths; a merge would be needed")
        out = []
        if links:
            (aid, sib), = links.items()
            pid, _ = self.where[sib]
            path = self.paths[pid]
            if len(path) == 1 or path[-1] == sib:
                sign = +1
            elif path[0] == sib:
                sign = -1
            else:
                raise AssertionError(f"round {t}: arc {aid} would attach to the interior of path {pid}")
            order = [aid] + [a for a in new if a != aid]
            for a in order:
                path.append(a) if sign > 0 else path.appendleft(a)
                self.where[a] = (pid, sign)
                out.append(Attachment(a, pid, sign, False))
        else:
            pid = len(self.paths)
            order = sorted(new, key=lambda a: g.arcs[a].element)
            self.paths.append(deque(order))
            for i, a in enumerate(order):
                self.where[a] = (pid, +1)
                out.append(Attachment(a, pid, +1, i == 0))
        return out


def build_structure(rounds: Iterable) -> tuple[ExAnteGraph, PseudoPaths, list[list[Attachment]]]:
    g = ExAnteGraph()
    pp = PseudoPaths(g)
    att = []
    for t, rnd in enumerate(rounds):
        g.ingest(rnd)
        att.append(pp.attach(t))
    return g, pp, att


def verify_partition(graph: ExAnteGraph, paths: PseudoPaths) -> list[str]:
    """Problems with the partition: coverage, adjacency along paths, maximality across paths."""
    problems = []
    seen = [a for p in paths.paths for a in p]
    if sorted(seen) != list(range(len(graph.arcs))):
        problems.append("arcs are not covered exactly once")
    home = {a: i for i, p in enumerate(paths.paths) for a in p}
    for i, p in enumerate(paths.paths):
        p = list(p)
        for x, y in zip(p, p[1:]):
            if not graph.adjacent(x, y):
                problems.append(f"path {i}: arcs {x},{y} are not adjacent")
            if graph.arcs[x].element == graph.arcs[y].element:
                problems.append(f"path {i}: arcs {x},{y} share subscript")
    for x in range(len(graph.arcs)):
        for y in range(x + 1, len(graph.arcs)):
            if graph.adjacent(x, y) and home.get(x) != home.get(y):
                problems.append(f"adjacent arcs {x},{y} lie in different paths")
    return problems


def verify_good_forest(graph: ExAnteGraph, paths: PseudoPaths, forest: Iterable[int]) -> list[str]:
    """Problems with a set of arc ids as a good forest."""
    forest = set(forest)
    problems = []
    indeg: dict[int, int] = {}
    for a in forest:
        indeg[graph.arcs[a].dest] = indeg.get(graph.arcs[a].dest, 0) + 1
    problems += [f"node {t} has {d} in-arcs" for t, d in indeg.items() if d > 1]
    for t in range(len(graph.rounds)):
        kids = [a for a in graph.out_arcs(t) if a in forest]
        if len(kids) == 2 and graph.common(t, graph.arcs[kids[0]].dest, graph.arcs[kids[1]].dest):
            problems.append(f"node {t} has two children sharing an element with it")
    for i, p in enumerate(paths.paths):
        p = list(p)
        for x, y in zip(p, p[1:]):
            if x in forest and y in forest:
                problems.append(f"path {i}: adjacent arcs {x},{y} both selected")
    return problems


def good_forest_violations(graph: ExAnteGraph, paths: PseudoPaths, matched: np.ndarray) -> np.ndarray:
    """Vectorised :func:`verify_good_forest`: per-trial flag over an (n, A) decision matrix."""
    bad = np.zeros(matched.shape[0], dtype=bool)
    for ins in graph.in_arcs:
        if len(ins) == 2:
            bad |= matched[:, ins[0]] & matched[:, ins[1]]
    for t in range(len(graph.rounds)):
        kids = graph.out_arcs(t)
        if len(kids) == 2 and graph.common(t, graph.arcs[kids[0]].dest, graph.arcs[kids[1]].dest):
            bad |= matched[:, kids[0]] & matched[:, kids[1]]
    for p in paths.paths:
        p = list(p)
        for x, y in zip(p, p[1:]):
            bad |= matched[:, x] & matched[:, y]
    return bad


# ---------------------------------------------------------------- forest constructor


class ForestConstructor:
    """Online arc selection: one path automaton pair per pseudo-path."""

    def __init__(self, params: AutomatonParams = AutomatonParams(), rng: np.random.Generator | None = None):
        self.params = params
        self.rng = stream(0) if rng is None else rng
        self.graph = ExAnteGraph()
        self.paths = PseudoPaths(self.graph)
        self.state: dict[int, list[int]] = {}  # path -> [q+, q-]
        self.decisions: dict[int, bool] = {}
        self._tables = {+1: sigma_plus(params.p), -1: sigma_minus(params.p)}

    def ingest(self, rnd) -> list[tuple[Attachment, bool]]:
        t = len(self.graph.rounds)
        self.graph.ingest(rnd)
        out = []
        for att in self.paths.attach(t):
            if att.fresh:
                q0 = int(self.rng.choice(3, p=self.params.pi))
                self.state[att.path] = [q0, q0]
            slot = 0 if att.sign > 0 else 1
            outs = self._tables[att.sign][self.state[att.path][slot]]
            pr, q2, d = outs[int(self.rng.choice(len(outs), p=[o[0] for o in outs]))]
            self.state[att.path][slot] = q2
            self.decisions[att.arc] = d
            out.append((att, d))
        return out

    @property
    def forest(self) -> set[int]:
        return {a for a, d in self.decisions.items() if d}


def forest_constructor(params: AutomatonParams = AutomatonParams(), rng=None) -> ForestConstructor:
    return ForestConstructor(params, rng)


# ---------------------------------------------------------------- selectors


def _star_step(star, nodes, t, rnd, parent: Arc | None):
    """Outcomes of the tree automaton at node ``t``: [(prob, element, (state, H-element))]."""
    if parent is None:
        h_elem, q_prev = min(rnd), O
    else:
        q_prev, h_par = nodes[parent.origin]
        e1 = parent.element
        h_elem = e1 if h_par == e1 else (rnd[1] if rnd[0] == e1 else rnd[0])
    t_elem = rnd[1] if rnd[0] == h_elem else rnd[0]
    return [(pr, h_elem if lab == "H" else t_elem, (q2, h_elem), lab) for pr, q2, lab in star[q_prev]]


class ForestOCS(Selector):
    """Tree-automaton selection over a fixed forest given as ``{node: parent arc}``."""

    name = "forest-ocs"

    def __init__(self, parents: dict[int, Arc] | None = None, params: AutomatonParams = AutomatonParams()):
        self.parents = dict(parents or {})
        self.params = params
        self._star = _prune(sigma_star(params.beta))
        super().__init__()

    def initial_state(self):
        return ()

    def transitions(self, state, t):
        nodes = dict(state)
        rnd = self.rounds[t]
        out = []
        for pr, e, node, _ in _star_step(self._star, nodes, t, rnd, self.parents.get(t)):
            out.append(Branch(pr, e, tuple(sorted({**nodes, t: node}.items()))))
        return out


def forest_ocs(parents=None, params: AutomatonParams = AutomatonParams()) -> ForestOCS:
    return ForestOCS(parents, params)


class CombinedOCS(Selector):
    """Forest constructor piped into the forest OCS, one round at a time.

    The graph and pseudo-path structure depend only on the rounds seen so far, so
    they live outside the random state. After :meth:`bind` the state forgets paths
    and nodes that no later round can touch, which keeps the exact oracle small.
    """

    name = "combined-ocs"

    def __init__(self, params: AutomatonParams = AutomatonParams()):
        self.params = params
        self._tables = {+1: _prune(sigma_plus(params.p)), -1: _prune(sigma_minus(params.p))}
        self._star = _prune(sigma_star(params.beta))
        self._pi = [(float(x), q) for q, x in enumerate(stationary(params.p)) if x > 0]
        super().__init__()

    def reset(self):
        self.graph = ExAnteGraph()
        self.paths = PseudoPaths(self.graph)
        self.attachments: list[list[Attachment]] = []
        self._path_last: dict[int, int] | None = None
        self._node_last: dict[int, int] | None = None
        super().reset()

    def _observe(self, t, rnd):
        self.graph.ingest(rnd)
        self.attachments.append(self.paths.attach(t))

    def bind(self, instance):
        super().bind(instance)
        g = self.graph
        self._path_last = {i: max(g.arcs[a].dest for a in p) for i, p in enumerate(self.paths.paths)}
        self._node_last = {t: max([g.arcs[a].dest for a in g.out_arcs(t)], default=t) for t in range(len(g.rounds))}
        return self

    def initial_state(self):
        return ((), ())

    def outcomes(self, state, t):
        """All outcomes of round ``t``: (prob, element, next state, info)."""
        g = self.graph
        paths, nodes = dict(state[0]), dict(state[1])
        rnd = g.rounds[t]
        partial = [(1.0, paths, ())]
        for att in self.attachments[t]:
            nxt = []
            for pr, ps, ds in partial:
                inits = [(x, (q, q)) for x, q in self._pi] if att.fresh else [(1.0, ps[att.path])]
                for px, (qp, qm) in inits:
                    for pt, q2, d in self._tables[att.sign][qp if att.sign > 0 else qm]:
                        nxt.append((pr * px * pt, {**ps, att.path: (q2, qm) if att.sign > 0 else (qp, q2)}, ds + (d,)))
            partial = nxt
        out = []
        for pr, ps, ds in partial:
            chosen = [att.arc for att, d in zip(self.attachments[t], ds) if d]
            assert len(chosen) <= 1, f"round {t}: two in-arcs matched"
            parent = g.arcs[chosen[0]] if chosen else None
            for ps_star, e, node, lab in _star_step(self._star, nodes, t, rnd, parent):
                nodes2 = {**nodes, t: node}
                ps2 = ps
                if self._path_last is not None:
                    ps2 = {k: v for k, v in ps.items() if self._path_last[k] > t}
                    nodes2 = {k: v for k, v in nodes2.items() if self._node_last[k] > t}
                nstate = (tuple(sorted(ps2.items())), tuple(sorted(nodes2.items())))
                info = {
                    "round": t,
                    "elements": list(rnd),
                    "arcs": [
                        {
                            "arc": [g.arcs[a.arc].origin, g.arcs[a.arc].dest, g.arcs[a.arc].element],
                            "path": a.path,
                            "end": "+" if a.sign > 0 else "-",
                            "decision": "M" if d else "U",
                            "path_state": STATE_NAMES[ps[a.path][0 if a.sign > 0 else 1]],
                        }
                        for a, d in zip(self.attachments[t], ds)
                    ],
                    "parent": None if parent is None else parent.origin,
                    "labels": {"H": node[1], "T": rnd[1] if rnd[0] == node[1] else rnd[0]},
                    "label": lab,
                    "state": STAR_NAMES[node[0]],
                    "selected": e,
                }
                out.append((pr * ps_star, e, nstate, info))
        return out

    def transitions(self, state, t):
        merged: dict = {}
        for pr, e, ns, _ in self.outcomes(state, t):
            merged[(e, ns)] = merged.get((e, ns), 0.0) + pr
        return [Branch(pr, e, ns) for (e, ns), pr in merged.items()]

    def step_with_info(self, rnd, rng: np.random.Generator) -> dict:
        t = self._next_round(rnd)
        outs = self.outcomes(self._state, t)
        probs = np.array([o[0] for o in outs])
        pr, e, ns, info = outs[int(rng.choice(len(outs), p=probs / probs.sum()))]
        self._state, self._t = ns, t + 1
        return info

    def simulate(self, instance, n, rng):
        return self.simulate_full(instance, n, rng)[0]

    def simulate_full(self, instance, n, rng):
        """Selections (n, T) and arc decisions (n, A) of ``n`` independent runs."""
        sel = self.clone().bind(instance)
        g = sel.graph
        index = {e: i for i, e in enumerate(instance.elements)}
        p, beta = self.params.p, self.params.beta
        pi_cum = np.cumsum(stationary(p))
        n_rounds, A, P = len(g.rounds), len(g.arcs), len(sel.paths.paths)
        qplus = np.zeros((n, P), dtype=np.int8)
        qminus = np.zeros((n, P), dtype=np.int8)
        star = np.zeros((n, n_rounds), dtype=np.int8)
        h_of = np.zeros((n, n_rounds), dtype=np.int64)
        matched = np.zeros((n, A), dtype=bool)
        out = np.empty((n, n_rounds), dtype=np.int64)
        lo = (1.0 - beta) / 2.0
        for t, rnd in enumerate(g.rounds):
            a_idx, b_idx = index[rnd[0]], index[rnd[1]]
            for att in sel.attachments[t]:
                if att.fresh:
                    q0 = np.searchsorted(pi_cum, rng.random(n) * pi_cum[-1], side="right").astype(np.int8)
                    q0 = np.minimum(q0, 2)
                    qplus[:, att.path] = q0
                    qminus[:, att.path] = q0
                u = rng.random(n)
                if att.sign > 0:
                    q = qplus[:, att.path]
                    to_yes = (q == NO2) | ((q == NO) & (u < p))
                    nq = np.where(q == YES, NO, np.where(to_yes, YES, NO2))
                    d = to_yes
                    qplus[:, att.path] = nq
                else:
                    q = qminus[:, att.path]
                    nq = np.where(q == NO, YES, np.where(q == NO2, NO, np.where(u < p, NO, NO2)))
                    d = q == YES
                    qminus[:, att.path] = nq
                matched[:, att.arc] = d
            # parent arc, if any
            has_parent = np.zeros(n, dtype=bool)
            q_prev = np.full(n, O, dtype=np.int8)
            h = np.full(n, index[min(rnd)], dtype=np.int64)
            for att in sel.attachments[t]:
                arc = g.arcs[att.arc]
                m = matched[:, att.arc]
                e1 = index[arc.element]
                other = b_idx if e1 == a_idx else a_idx
                h = np.where(m, np.where(h_of[:, arc.origin] == e1, e1, other), h)
                q_prev = np.where(m, star[:, arc.origin], q_prev)
                has_parent |= m
            u = rng.random(n)
            pick_h = np.select(
                [q_prev == O, q_prev == H, q_prev == T, q_prev == H2],
                [u < 0.5, u < lo, u >= lo, np.zeros(n, dtype=bool)],
                default=np.ones(n, dtype=bool),
            )
            nxt = np.select(
                [q_prev == O, q_prev == H, q_prev == T],
                [np.where(pick_h, H, T), np.where(pick_h, H2, T), np.where(pick_h, H, T2)],
                default=O,
            ).astype(np.int8)
            star[:, t] = nxt
            h_of[:, t] = h
            t_elem = np.where(h == a_idx, b_idx, a_idx)
            out[:, t] = np.where(pick_h, h, t_elem)
        return out, matched, sel


def combined_ocs(params: AutomatonParams = AutomatonParams()) -> CombinedOCS:
    return CombinedOCS(params)


def debug_dump(instance, seed: int, params: AutomatonParams = AutomatonParams()) -> list[str]:
    """One JSON line per round describing arcs, decisions, labels, state and selection."""
    sel = CombinedOCS(params)
    rng = stream(seed)
    return [json.dumps(sel.step_with_info(rnd, rng)) for rnd in instance.rounds]
