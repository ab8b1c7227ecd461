"""Online selection and matching instances: types, validation, generators, JSON I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Union

import numpy as np

MASS_TOL = 1e-9
KINDS = ("unweighted", "vertex-weighted", "edge-weighted")


class InstanceError(ValueError):
    """Raised when an instance violates one of its invariants."""


def _first_appearance(rounds: Iterable[Iterable[str]]) -> tuple[str, ...]:
    seen: dict[str, None] = {}
    for rnd in rounds:
        for e in rnd:
            seen.setdefault(e, None)
    return tuple(seen)


@dataclass(frozen=True)
class TwoWayInstance:
    """Rounds of unordered element pairs."""

    rounds: tuple[tuple[str, str], ...]

    def __post_init__(self):
        object.__setattr__(self, "rounds", tuple(tuple(r) for r in self.rounds))

    def __len__(self):
        return len(self.rounds)

    @property
    def elements(self) -> tuple[str, ...]:
        return _first_appearance(self.rounds)

    def appearances(self, e: str) -> list[int]:
        return [t for t, r in enumerate(self.rounds) if e in r]

    def index_array(self) -> np.ndarray:
        """(T, 2) array of element indices into ``self.elements``."""
        index = {e: i for i, e in enumerate(self.elements)}
        return np.array([[index[a], index[b]] for a, b in self.rounds], dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True)
class MultiWayInstance:
    """Rounds of mass vectors; only positive-mass entries are stored."""

    rounds: tuple[tuple[tuple[str, float], ...], ...]

    def __post_init__(self):
        norm = []
        for rnd in self.rounds:
            items = rnd.items() if isinstance(rnd, Mapping) else rnd
            norm.append(tuple((str(e), float(x)) for e, x in items if x != 0))
        object.__setattr__(self, "rounds", tuple(norm))

    def __len__(self):
        return len(self.rounds)

    def round(self, t: int) -> dict[str, float]:
        return dict(self.rounds[t])

    @property
    def elements(self) -> tuple[str, ...]:
        return _first_appearance([e for e, _ in r] for r in self.rounds)

    def cumulative_mass(self, t: int | None = None) -> dict[str, float]:
        """y_e after the first ``t`` rounds (all rounds by default)."""
        y = {e: 0.0 for e in self.elements}
        for rnd in self.rounds[: len(self.rounds) if t is None else t]:
            for e, x in rnd:
                y[e] += x
        return y

    def mass_matrix(self) -> np.ndarray:
        """(T, n) matrix of masses indexed like ``self.elements``."""
        index = {e: i for i, e in enumerate(self.elements)}
        out = np.zeros((len(self.rounds), len(index)))
        for t, rnd in enumerate(self.rounds):
            for e, x in rnd:
                out[t, index[e]] = x
        return out


@dataclass(frozen=True)
class OfflineVertex:
    id: str
    weight: float = 1.0


@dataclass(frozen=True)
class Edge:
    u: str
    w: float = 1.0


@dataclass(frozen=True)
class OnlineVertex:
    id: str
    edges: tuple[Edge, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(self.edges))


@dataclass(frozen=True)
class MatchingInstance:
    kind: str
    offline: tuple[OfflineVertex, ...]
    online: tuple[OnlineVertex, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "offline", tuple(self.offline))
        object.__setattr__(self, "online", tuple(self.online))

    @property
    def offline_weight(self) -> dict[str, float]:
        return {u.id: u.weight for u in self.offline}


Instance = Union[TwoWayInstance, MultiWayInstance, MatchingInstance]


def validate(instance: Instance) -> None:
    """Raise :class:`InstanceError` naming the first violated invariant."""
    if isinstance(instance, TwoWayInstance):
        for t, rnd in enumerate(instance.rounds):
            if len(rnd) != 2:
                raise InstanceError(f"round {t}: expected 2 elements, got {len(rnd)}")
            if any(not isinstance(e, str) or not e for e in rnd):
                raise InstanceError(f"round {t}: element ids must be non-empty strings")
            if rnd[0] == rnd[1]:
                raise InstanceError(f"round {t}: elements must be distinct, got {rnd[0]!r} twice")
    elif isinstance(instance, MultiWayInstance):
        for t, rnd in enumerate(instance.rounds):
            ids = [e for e, _ in rnd]
            if not ids:
                raise InstanceError(f"round {t}: no element with positive mass")
            if any(not e for e in ids):
                raise InstanceError(f"round {t}: element ids must be non-empty strings")
            if len(set(ids)) != len(ids):
                raise InstanceError(f"round {t}: duplicate element id")
            for e, x in rnd:
                if not x >= 0 or not np.isfinite(x):
                    raise InstanceError(f"round {t}: mass of {e!r} is {x}, must be non-negative")
            total = sum(x for _, x in rnd)
            if abs(total - 1.0) > MASS_TOL:
                raise InstanceError(f"round {t}: mass sum {total:g} ≠ 1")
    elif isinstance(instance, MatchingInstance):
        if instance.kind not in KINDS:
            raise InstanceError(f"unknown matching kind {instance.kind!r}")
        ids = [u.id for u in instance.offline]
        if len(set(ids)) != len(ids) or any(not u for u in ids):
            raise InstanceError("offline vertex ids must be unique and non-empty")
        weights = instance.offline_weight
        for u in instance.offline:
            if not u.weight > 0:
                raise InstanceError(f"offline vertex {u.id!r}: weight {u.weight} must be positive")
        online_ids = [v.id for v in instance.online]
        if len(set(online_ids)) != len(online_ids) or any(not v for v in online_ids):
            raise InstanceError("online vertex ids must be unique and non-empty")
        for j, v in enumerate(instance.online):
            nbrs = [edge.u for edge in v.edges]
            if len(set(nbrs)) != len(nbrs):
                raise InstanceError(f"online vertex {j} ({v.id!r}): parallel edges")
            for edge in v.edges:
                if edge.u not in weights:
                    raise InstanceError(f"online vertex {j} ({v.id!r}): unknown offline vertex {edge.u!r}")
                if not edge.w > 0:
                    raise InstanceError(f"online vertex {j} ({v.id!r}): edge weight {edge.w} must be positive")
                if instance.kind == "unweighted" and (edge.w != 1.0 or weights[edge.u] != 1.0):
                    raise InstanceError(f"online vertex {j} ({v.id!r}): unweighted instance needs all weights 1")
                if instance.kind == "vertex-weighted" and edge.w != weights[edge.u]:
                    raise InstanceError(
                        f"online vertex {j} ({v.id!r}): edge weight {edge.w} differs from w_{edge.u}={weights[edge.u]}"
                    )
    else:
        raise InstanceError(f"not an instance: {type(instance).__name__}")


# ---------------------------------------------------------------- generators


def gen_tournament(k: int, seed=None) -> tuple[TwoWayInstance, str]:
    """Knockout-tournament instance over 2^k elements and its final winner.

    Winners of each pair are drawn uniformly, independently of any selector.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    stage = [str(i) for i in range(1, 2**k + 1)]
    rounds = []
    while len(stage) > 1:
        pairs = [(stage[2 * j], stage[2 * j + 1]) for j in range(len(stage) // 2)]
        rounds.extend(pairs)
        coins = rng.integers(0, 2, size=len(pairs))
        stage = [pair[c] for pair, c in zip(pairs, coins)]
    return TwoWayInstance(tuple(rounds)), stage[0]


def tournament_batch(k: int, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`gen_tournament`: ``(pairs (n, 2^k-1, 2), winner (n,))`` as indices 0..2^k-1."""
    stage = np.broadcast_to(np.arange(2**k), (n, 2**k))
    blocks = []
    while stage.shape[1] > 1:
        pairs = stage.reshape(n, -1, 2)
        blocks.append(pairs)
        coins = rng.integers(0, 2, size=pairs.shape[:2])
        stage = np.take_along_axis(pairs, coins[..., None], axis=2)[..., 0]
    return np.concatenate(blocks, axis=1), stage[:, 0]


def gen_ocs_hardness(i: int) -> TwoWayInstance:
    """Three elements, 2i+1 rounds: {0,1} in odd rounds and {0,2} in even rounds (1-indexed)."""
    if i < 1:
        raise ValueError("i must be >= 1")
    return TwoWayInstance(tuple(("0", "1") if t % 2 == 1 else ("0", "2") for t in range(1, 2 * i + 2)))


def gen_positive_correlation_counterexample() -> MultiWayInstance:
    third = 1.0 / 3.0
    groups = [("1", "4", "5")] * 2 + [("2", "6", "7")] * 2 + [("3", "8", "9")] * 2 + [("1", "2", "3")]
    return MultiWayInstance(tuple(tuple((e, third) for e in g) for g in groups))


def gen_upper_triangular(n: int) -> MatchingInstance:
    """Unweighted: online v_j neighbours offline u_j..u_n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    offline = tuple(OfflineVertex(f"u{i}") for i in range(1, n + 1))
    online = tuple(
        OnlineVertex(f"v{j}", tuple(Edge(f"u{i}") for i in range(j, n + 1))) for j in range(1, n + 1)
    )
    return MatchingInstance("unweighted", offline, online)


def gen_random_two_way(n_rounds: int, n_elements: int, seed=None) -> TwoWayInstance:
    rng = np.random.default_rng(seed)
    ids = [chr(ord("a") + i) if n_elements <= 26 else f"e{i}" for i in range(n_elements)]
    rounds = []
    for _ in range(n_rounds):
        a, b = rng.choice(n_elements, size=2, replace=False)
        rounds.append((ids[a], ids[b]))
    return TwoWayInstance(tuple(rounds))


def gen_path_instance(k: int, pair: tuple[str, str] = ("a", "b")) -> TwoWayInstance:
    """The same pair in each of ``k`` rounds."""
    return TwoWayInstance(tuple(pair for _ in range(k)))


def gen_adversarial_two_way_corpus(n: int, max_rounds: int = 10, seed=None) -> list[TwoWayInstance]:
    """Mixed small instances: repeated pairs, alternating and chained overlaps,
    knockout brackets and dense random rounds over few elements."""
    rng = np.random.default_rng(seed)
    out = []
    families = ("random", "dense", "path", "alternating", "chain", "tournament", "repeat")
    for j in range(n):
        fam = families[j % len(families)]
        T = int(rng.integers(2, max_rounds + 1))
        if fam == "random":
            out.append(gen_random_two_way(T, int(rng.integers(3, 7)), seed=rng))
        elif fam == "dense":
            out.append(gen_random_two_way(T, 3, seed=rng))
        elif fam == "path":
            out.append(gen_path_instance(T))
        elif fam == "alternating":
            out.append(TwoWayInstance(tuple(("0", "1") if t % 2 == 0 else ("0", "2") for t in range(T))))
        elif fam == "chain":
            m = int(rng.integers(3, 6))
            ids = [chr(ord("a") + i) for i in range(m)]
            out.append(TwoWayInstance(tuple((ids[t % m], ids[(t + 1) % m]) for t in range(T))))
        elif fam == "tournament":
            k = 3 if max_rounds >= 7 else 2
            out.append(gen_tournament(k, seed=rng)[0])
        else:
            base = gen_random_two_way(max(1, T // 2), 4, seed=rng).rounds
            out.append(TwoWayInstance(tuple(r for r in base for _ in range(2))[:T]))
    return out


def gen_random_multi_way(n_rounds: int, n_elements: int, seed=None, max_support: int | None = None) -> MultiWayInstance:
    """Random supports with Dirichlet masses, rounded to keep the mass sum exact."""
    rng = np.random.default_rng(seed)
    ids = [chr(ord("a") + i) for i in range(n_elements)]
    max_support = min(max_support or n_elements, n_elements)
    rounds = []
    for _ in range(n_rounds):
        size = int(rng.integers(1, max_support + 1))
        support = rng.choice(n_elements, size=size, replace=False)
        masses = rng.dirichlet(np.ones(size))
        masses[-1] = 1.0 - masses[:-1].sum()
        rounds.append(tuple((ids[i], float(x)) for i, x in zip(support, masses) if x > 0))
    return MultiWayInstance(tuple(rounds))


def gen_random_bipartite(
    n_offline: int,
    n_online: int,
    edge_prob: float = 0.4,
    kind: str = "unweighted",
    seed=None,
    max_weight: float = 5.0,
) -> MatchingInstance:
    """Erdős–Rényi bipartite graph; every online vertex gets at least one edge."""
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    rng = np.random.default_rng(seed)
    if kind == "vertex-weighted":
        wts = np.round(rng.uniform(1.0, max_weight, size=n_offline), 3)
    else:
        wts = np.ones(n_offline)
    offline = tuple(OfflineVertex(f"u{i + 1}", float(wts[i])) for i in range(n_offline))
    online = []
    for j in range(n_online):
        nbrs = np.flatnonzero(rng.random(n_offline) < edge_prob)
        if nbrs.size == 0:
            nbrs = rng.choice(n_offline, size=1)
        edges = []
        for i in nbrs:
            w = float(np.round(rng.uniform(1.0, max_weight), 3)) if kind == "edge-weighted" else float(wts[i])
            edges.append(Edge(f"u{i + 1}", w))
        online.append(OnlineVertex(f"v{j + 1}", tuple(edges)))
    return MatchingInstance(kind, offline, tuple(online))


# ---------------------------------------------------------------- JSON


def to_json(instance: Instance) -> dict:
    if isinstance(instance, TwoWayInstance):
        return {"type": "two-way", "rounds": [list(r) for r in instance.rounds]}
    if isinstance(instance, MultiWayInstance):
        return {"type": "multi-way", "rounds": [dict(r) for r in instance.rounds]}
    if isinstance(instance, MatchingInstance):
        return {
            "type": "matching",
            "kind": instance.kind,
            "offline": [{"id": u.id, "weight": u.weight} for u in instance.offline],
            "online": [{"id": v.id, "edges": [{"u": e.u, "w": e.w} for e in v.edges]} for v in instance.online],
        }
    raise InstanceError(f"not an instance: {type(instance).__name__}")


def from_json(data: dict) -> Instance:
    """Parse and validate an instance document."""
    kind = data.get("type")
    if kind == "two-way":
        inst = TwoWayInstance(tuple(tuple(r) for r in data["rounds"]))
    elif kind == "multi-way":
        inst = MultiWayInstance(tuple(tuple(r.items()) for r in data["rounds"]))
    elif kind == "matching":
        inst = MatchingInstance(
            data["kind"],
            tuple(OfflineVertex(str(u["id"]), float(u.get("weight", 1.0))) for u in data["offline"]),
            tuple(
                OnlineVertex(str(v["id"]), tuple(Edge(str(e["u"]), float(e.get("w", 1.0))) for e in v["edges"]))
                for v in data["online"]
            ),
        )
    else:
        raise InstanceError(f"unknown instance type {kind!r}")
    validate(inst)
    return inst


def dumps(instance: Instance) -> str:
    return json.dumps(to_json(instance))


def loads(text: str) -> Instance:
    return from_json(json.loads(text))


def load(path: str | Path) -> Instance:
    return loads(Path(path).read_text())


def dump(instance: Instance, path: str | Path) -> None:
    Path(path).write_text(dumps(instance) + "\n")
