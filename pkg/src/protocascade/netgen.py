"""Synthetic social graphs for cascade simulation.

Person degrees follow a discrete power law; a small set of page (hub) nodes
get degrees scaled up from the same law. Stubs are wired with a
planted-partition bias: each stub is matched inside its community with the
probability a pair-level ``p_in``/``p_out`` weighting implies, and every stub
that cannot be placed there falls back to global configuration-model
matching. Self-loops and duplicate edges are erased.

Every edge carries a cached mutual-friend count, the endpoint that initiated
the friendship and the Euclidean distance between the endpoints' positions.
Reals are stored rounded to six significant digits so the text format
round-trips exactly.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import UndefinedValueError

GRID_SPACING = 10.0
BIAS_SIGMA = 0.5


def round_sig(values, digits: int = 6) -> np.ndarray:
    """Round to ``digits`` significant digits via the decimal text form."""
    fmt = f"{{:.{digits}g}}"
    return np.array([float(fmt.format(v)) for v in np.asarray(values, dtype=float).ravel()],
                    dtype=float).reshape(np.shape(values))


@dataclass(frozen=True)
class GraphConfig:
    n: int = 50_000
    page_fraction: float = 0.002
    degree_exponent: float = 2.5
    page_degree_scale: float = 10.0
    communities: int = 5000
    p_in: float = 1.0
    p_out: float = 0.00001
    rng_seed: int = 1
    min_degree: int = 5
    # person-degree cutoff; None -> structural cutoff sqrt(3 * min_degree * n)
    max_degree: int | None = 300
    # explicit (u, v) pairs; bypasses degree sampling and wiring
    edges: tuple[tuple[int, int], ...] | None = None

    def validate(self) -> None:
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0.0 <= self.page_fraction <= 1.0:
            raise ValueError("page_fraction must lie in [0, 1]")
        if self.degree_exponent <= 1.0:
            raise ValueError("degree_exponent must be > 1")
        if self.page_degree_scale <= 0:
            raise ValueError("page_degree_scale must be positive")
        if self.communities < 1:
            raise ValueError("communities must be >= 1")
        if self.p_out < 0 or self.p_in < self.p_out:
            raise ValueError("require p_in >= p_out >= 0")
        if self.p_in <= 0:
            raise ValueError("p_in must be positive")
        if self.min_degree < 1:
            raise ValueError("min_degree must be >= 1")

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(payload.encode()).hexdigest()

    def degree_cap(self) -> int:
        if self.max_degree is not None:
            return max(1, min(self.max_degree, self.n - 1))
        return max(1, min(self.n - 1, int(math.sqrt(3 * self.min_degree * self.n))))


class NodeAttrs(NamedTuple):
    id: int
    is_page: bool
    community: int
    position: tuple[float, float]
    initiation_bias: float


class EdgeMeta(NamedTuple):
    mutual_friends: int
    initiated_by: int
    distance: float


def _edge_key(u: int, v: int, n: int) -> int:
    return min(u, v) * n + max(u, v)


class SocialGraph:
    """Undirected friendship graph with node attributes and cached edge metadata.

    Immutable after construction. ``adjacency[u]`` is the sorted friend list
    of ``u`` and ``adj_mutual[u][i]`` the mutual-friend count of the edge to
    ``adjacency[u][i]``.
    """

    def __init__(self, is_page, community, positions, initiation_bias,
                 edges_u, edges_v, initiated_by, identity: str = "",
                 mutual=None, distance=None):
        self.is_page = np.asarray(is_page, dtype=bool)
        self.community = np.asarray(community, dtype=np.int64)
        self.positions = np.asarray(positions, dtype=float).reshape(-1, 2)
        self.initiation_bias = np.asarray(initiation_bias, dtype=float)
        n = len(self.is_page)
        if not (len(self.community) == len(self.positions) == len(self.initiation_bias) == n):
            raise ValueError("node attribute arrays differ in length")
        if np.any(self.initiation_bias <= 0):
            raise ValueError("initiation_bias must be positive")
        self.identity = identity

        eu = np.asarray(edges_u, dtype=np.int64)
        ev = np.asarray(edges_v, dtype=np.int64)
        lo, hi = np.minimum(eu, ev), np.maximum(eu, ev)
        if np.any(lo == hi):
            raise ValueError("self-loops are not allowed")
        if len(lo) and (lo.min() < 0 or hi.max() >= n):
            raise ValueError("edge endpoint out of range")
        keys = lo * n + hi
        order = np.argsort(keys, kind="stable")
        if len(keys) and np.any(np.diff(keys[order]) == 0):
            raise ValueError("duplicate edges are not allowed")
        self.edges_u = lo[order]
        self.edges_v = hi[order]
        init = np.asarray(initiated_by, dtype=np.int64)[order]
        if np.any((init != self.edges_u) & (init != self.edges_v)):
            raise ValueError("initiated_by must be an endpoint of its edge")
        self.initiated_by = init
        self._key_index = {int(k): i for i, k in enumerate(keys[order])}

        adjacency: list[list[int]] = [[] for _ in range(n)]
        for u, v in zip(self.edges_u.tolist(), self.edges_v.tolist()):
            adjacency[u].append(v)
            adjacency[v].append(u)
        for friends in adjacency:
            friends.sort()
        self.adjacency = adjacency
        self.degree = np.array([len(a) for a in adjacency], dtype=np.int64)

        if mutual is None:
            mutual = self._count_mutual()
        else:
            mutual = np.asarray(mutual, dtype=np.int64)[order]
        self.mutual = mutual
        if distance is None:
            d = self.positions[self.edges_u] - self.positions[self.edges_v]
            distance = round_sig(np.hypot(d[:, 0], d[:, 1])) if len(d) else np.zeros(0)
        else:
            distance = np.asarray(distance, dtype=float)[order]
        self.distance = distance

        mut_list = self.mutual.tolist()
        self.adj_mutual = [
            [mut_list[self._key_index[_edge_key(u, v, n)]] for v in adjacency[u]]
            for u in range(n)
        ]

    def _count_mutual(self) -> np.ndarray:
        sets = [set(a) for a in self.adjacency]
        return np.array([len(sets[u] & sets[v])
                         for u, v in zip(self.edges_u.tolist(), self.edges_v.tolist())],
                        dtype=np.int64)

    @classmethod
    def from_edges(cls, edges: Sequence[tuple[int, int]], n: int | None = None, *,
                   is_page=None, community=None, positions=None,
                   initiation_bias=None, initiated_by=None, identity: str = "") -> "SocialGraph":
        """Hand-built graph; unspecified attributes get neutral defaults."""
        edges = [(int(u), int(v)) for u, v in edges]
        if n is None:
            n = 1 + max((max(e) for e in edges), default=-1)
        eu = [e[0] for e in edges]
        ev = [e[1] for e in edges]
        return cls(
            is_page=np.zeros(n, bool) if is_page is None else is_page,
            community=np.zeros(n, np.int64) if community is None else community,
            positions=np.zeros((n, 2)) if positions is None else positions,
            initiation_bias=np.ones(n) if initiation_bias is None else initiation_bias,
            edges_u=eu, edges_v=ev,
            initiated_by=eu if initiated_by is None else initiated_by,
            identity=identity,
        )

    @property
    def n(self) -> int:
        return len(self.is_page)

    @property
    def n_edges(self) -> int:
        return len(self.edges_u)

    def node(self, u: int) -> NodeAttrs:
        self._check(u)
        x, y = self.positions[u]
        return NodeAttrs(u, bool(self.is_page[u]), int(self.community[u]),
                         (float(x), float(y)), float(self.initiation_bias[u]))

    @property
    def nodes(self) -> list[NodeAttrs]:
        return [self.node(u) for u in range(self.n)]

    def edges(self) -> Iterator[tuple[int, int, EdgeMeta]]:
        for i in range(self.n_edges):
            yield (int(self.edges_u[i]), int(self.edges_v[i]),
                   EdgeMeta(int(self.mutual[i]), int(self.initiated_by[i]), float(self.distance[i])))

    def has_edge(self, u: int, v: int) -> bool:
        return _edge_key(u, v, self.n) in self._key_index

    def edge_meta(self, u: int, v: int) -> EdgeMeta:
        i = self._key_index.get(_edge_key(u, v, self.n))
        if i is None:
            raise KeyError(f"no edge ({u}, {v})")
        return EdgeMeta(int(self.mutual[i]), int(self.initiated_by[i]), float(self.distance[i]))

    def _check(self, u: int) -> None:
        if not 0 <= u < self.n:
            raise KeyError(f"unknown node id {u}")

    def top_degree_nodes(self, fraction: float = 0.01) -> np.ndarray:
        """Ids of the ``ceil(fraction * n)`` highest-degree nodes (ties by lower id)."""
        k = max(1, math.ceil(fraction * self.n))
        order = np.lexsort((np.arange(self.n), -self.degree))
        return np.sort(order[:k])


def mutual_friends(graph: SocialGraph, u: int, v: int) -> int:
    """Number of friends ``u`` and ``v`` have in common."""
    graph._check(u)
    graph._check(v)
    if u == v:
        raise ValueError("mutual_friends needs two distinct nodes")
    a, b = graph.adjacency[u], graph.adjacency[v]
    if len(a) > len(b):
        a, b = b, a
    sb = set(b)
    return sum(1 for w in a if w in sb)


def initiation_fraction(graph: SocialGraph, u: int) -> float:
    graph._check(u)
    deg = int(graph.degree[u])
    if deg == 0:
        raise UndefinedValueError(f"node {u} has no friendships")
    mask = (graph.edges_u == u) | (graph.edges_v == u)
    return float(np.count_nonzero(graph.initiated_by[mask] == u)) / deg


def initiation_fractions(graph: SocialGraph) -> np.ndarray:
    """Vectorised initiation fraction for every node; NaN where degree is 0."""
    counts = np.bincount(graph.initiated_by, minlength=graph.n).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(graph.degree > 0, counts / np.maximum(graph.degree, 1), np.nan)


def _sample_degrees(config: GraphConfig, is_page: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = config.n
    u = rng.random(n)
    raw = np.floor(config.min_degree * (1.0 - u) ** (-1.0 / (config.degree_exponent - 1.0)))
    raw = np.minimum(raw, 10.0 * n)
    deg = np.minimum(raw, config.degree_cap())
    page_deg = np.minimum(np.round(config.page_degree_scale * raw), n - 1)
    return np.where(is_page, page_deg, deg).astype(np.int64)


INTRA_ROUNDS = 10


def _wire(config: GraphConfig, community: np.ndarray, deg: np.ndarray,
          rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n = config.n
    sizes = np.bincount(community, minlength=config.communities).astype(float)
    w_in = config.p_in * (sizes - 1)
    w_out = config.p_out * (n - sizes)
    with np.errstate(invalid="ignore", divide="ignore"):
        q = np.where(w_in + w_out > 0, w_in / (w_in + w_out), 0.0)
    # a node cannot have more intra-community friends than its community has members
    intra = np.minimum(rng.binomial(deg, q[community]), np.maximum(sizes[community] - 1, 0).astype(np.int64))

    edge_keys = np.zeros(0, np.int64)
    pending = np.repeat(np.arange(n), intra)
    for _ in range(INTRA_ROUNDS):
        if len(pending) < 2:
            break
        order = np.lexsort((rng.random(len(pending)), community[pending]))
        stubs = pending[order]
        comm = community[stubs]
        counts = np.bincount(comm, minlength=config.communities)
        starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
        rank = np.arange(len(stubs)) - starts[comm]
        odd_tail = (counts[comm] % 2 == 1) & (rank == counts[comm] - 1)
        paired = stubs[~odd_tail]
        a, b = paired[0::2], paired[1::2]
        keys = np.minimum(a, b) * n + np.maximum(a, b)
        ok = (a != b) & ~np.isin(keys, edge_keys)
        cand = keys[ok]
        _, first = np.unique(cand, return_index=True)
        accepted = np.zeros(len(cand), bool)
        accepted[first] = True
        edge_keys = np.concatenate([edge_keys, cand[accepted]])
        rejected = np.flatnonzero(ok)[~accepted]
        bad = np.concatenate([np.flatnonzero(~ok), rejected])
        pending = np.concatenate([stubs[odd_tail], a[bad], b[bad]])
    leftover = [pending]

    pool = np.concatenate([np.repeat(np.arange(n), deg - intra)] + leftover)
    for _ in range(10):
        if len(pool) < 2:
            break
        pool = pool[rng.permutation(len(pool))]
        if len(pool) % 2:
            pool = pool[:-1]
        a, b = pool[0::2], pool[1::2]
        keys = np.minimum(a, b) * n + np.maximum(a, b)
        ok = (a != b) & ~np.isin(keys, edge_keys)
        cand = keys[ok]
        _, first = np.unique(cand, return_index=True)
        accepted = np.zeros(len(cand), bool)
        accepted[first] = True
        edge_keys = np.concatenate([edge_keys, cand[accepted]])
        rejected = np.flatnonzero(ok)[~accepted]
        bad = np.concatenate([np.flatnonzero(~ok), rejected])
        pool = np.concatenate([a[bad], b[bad]])
    edge_keys = np.sort(edge_keys)
    return edge_keys // n, edge_keys % n


def generate_graph(config: GraphConfig) -> SocialGraph:
    """Generate a graph; the same config (seed included) gives an identical graph."""
    config.validate()
    rng = np.random.default_rng(config.rng_seed)
    n = config.n
    n_pages = int(round(config.page_fraction * n))
    is_page = np.zeros(n, bool)
    if n_pages:
        is_page[rng.choice(n, size=n_pages, replace=False)] = True
    community = rng.integers(0, config.communities, size=n)

    if config.edges is not None:
        pairs = np.asarray(config.edges, dtype=np.int64).reshape(-1, 2)
        eu, ev = pairs[:, 0], pairs[:, 1]
    elif n > 1:
        deg = _sample_degrees(config, is_page, rng)
        eu, ev = _wire(config, community, deg, rng)
    else:
        eu = ev = np.zeros(0, np.int64)

    side = math.ceil(math.sqrt(config.communities))
    centers = np.stack([community % side, community // side], axis=1) * GRID_SPACING
    positions = round_sig(centers + rng.standard_normal((n, 2)))
    bias = round_sig(rng.lognormal(0.0, BIAS_SIGMA, size=n))

    bu, bv = bias[eu], bias[ev]
    initiated = np.where(rng.random(len(eu)) < bu / (bu + bv), eu, ev)
    identity = f"{config.rng_seed}-{config.config_hash()[:16]}"
    return SocialGraph(is_page, community, positions, bias, eu, ev, initiated, identity=identity)


def intra_community_fraction(graph: SocialGraph) -> float:
    if graph.n_edges == 0:
        raise UndefinedValueError("graph has no edges")
    same = graph.community[graph.edges_u] == graph.community[graph.edges_v]
    return float(np.mean(same))


# ---------------------------------------------------------------- file format

def graph_to_text(graph: SocialGraph) -> str:
    lines = [f"#nodes {graph.n}"]
    if graph.identity:
        lines.append(f"#identity {graph.identity}")
    for u in range(graph.n):
        x, y = graph.positions[u]
        lines.append(f"N {u} {int(graph.is_page[u])} {int(graph.community[u])} "
                     f"{x:.6g} {y:.6g} {graph.initiation_bias[u]:.6g}")
    for i in range(graph.n_edges):
        lines.append(f"E {graph.edges_u[i]} {graph.edges_v[i]} {graph.mutual[i]} "
                     f"{graph.initiated_by[i]} {graph.distance[i]:.6g}")
    return "\n".join(lines) + "\n"


def write_graph(graph: SocialGraph, path) -> None:
    Path(path).write_text(graph_to_text(graph))


def parse_graph(text: str) -> SocialGraph:
    n = None
    identity = ""
    node_rows: dict[int, tuple] = {}
    eu, ev, mut, init, dist = [], [], [], [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if parts[0] == "#nodes":
            n = int(parts[1])
        elif parts[0] == "#identity":
            identity = parts[1] if len(parts) > 1 else ""
        elif parts[0].startswith("#"):
            continue
        elif parts[0] == "N" and len(parts) == 7:
            node_rows[int(parts[1])] = (parts[2] == "1", int(parts[3]), float(parts[4]),
                                        float(parts[5]), float(parts[6]))
        elif parts[0] == "E" and len(parts) == 6:
            eu.append(int(parts[1]))
            ev.append(int(parts[2]))
            mut.append(int(parts[3]))
            init.append(int(parts[4]))
            dist.append(float(parts[5]))
        else:
            raise ValueError(f"line {lineno}: malformed graph record")
    if n is None:
        raise ValueError("missing '#nodes' header")
    if sorted(node_rows) != list(range(n)):
        raise ValueError("node records do not cover ids 0..n-1")
    rows = [node_rows[u] for u in range(n)]
    return SocialGraph(
        is_page=[r[0] for r in rows], community=[r[1] for r in rows],
        positions=[(r[2], r[3]) for r in rows], initiation_bias=[r[4] for r in rows],
        edges_u=eu, edges_v=ev, initiated_by=init, identity=identity,
        mutual=mut, distance=dist,
    )


def read_graph(path) -> SocialGraph:
    return parse_graph(Path(path).read_text())
