"""Depth-bounded subtree sampling and structural features.

Edges point from child to parent, so a node's in-degree is its number of
children within the subtree.
"""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .engine import CascadeTree

FEATURE_NAMES = ("n_nodes", "n_edges", "leaf_fraction", "indegree_entropy",
                 "mean_internal_indegree", "depth")


@dataclass(frozen=True, eq=False)
class Subtree:
    root: int
    depth_limit: int
    nodes: tuple[int, ...]
    # (child, parent), listed breadth-first
    edges: tuple[tuple[int, int], ...]

    @cached_property
    def children(self) -> dict[int, list[int]]:
        ch: dict[int, list[int]] = {u: [] for u in self.nodes}
        for c, p in self.edges:
            ch[p].append(c)
        return ch

    @cached_property
    def node_depth(self) -> dict[int, int]:
        depth = {self.root: 0}
        for c, p in self.edges:
            depth[c] = depth[p] + 1
        return depth

    def indegrees(self) -> list[int]:
        ch = self.children
        return [len(ch[u]) for u in self.nodes]

    def open_nodes(self) -> list[int]:
        """Nodes above the depth limit, whose child counts are uncensored."""
        d = self.node_depth
        return [u for u in self.nodes if d[u] < self.depth_limit]


@dataclass(frozen=True)
class FeatureVector:
    n_nodes: int
    n_edges: int
    leaf_fraction: float
    indegree_entropy: float
    mean_internal_indegree: float
    depth: int

    def as_tuple(self) -> tuple:
        return (self.n_nodes, self.n_edges, self.leaf_fraction, self.indegree_entropy,
                self.mean_internal_indegree, self.depth)


def extract_subtree(tree: CascadeTree, root: int, depth: int) -> Subtree:
    if depth < 0:
        raise ValueError("depth must be >= 0")
    nodes = [root]
    edges = []
    frontier = [root]
    for _ in range(depth):
        nxt = []
        for p in frontier:
            for c in tree.children[p]:
                nodes.append(c)
                edges.append((c, p))
                nxt.append(c)
        if not nxt:
            break
        frontier = nxt
    return Subtree(root, depth, tuple(nodes), tuple(edges))


def sample_subtrees(tree: CascadeTree, count: int, depth: int, rng) -> list[Subtree]:
    """``count`` subtrees rooted at uniformly drawn nodes (with replacement).

    Subtrees sharing a root are the same object.
    """
    if len(tree) == 0:
        raise ValueError("cannot sample from an empty tree")
    if depth < 0:
        raise ValueError("depth must be >= 0")
    rng = np.random.default_rng(rng)
    nodes = tree.nodes
    picks = rng.integers(0, len(nodes), size=count)
    cache: dict[int, Subtree] = {}
    out = []
    for i in picks.tolist():
        st = cache.get(i)
        if st is None:
            st = cache[i] = extract_subtree(tree, nodes[i], depth)
        out.append(st)
    return out


def _entropy_bits(values: Iterable[int]) -> float:
    counts = Counter(values)
    total = sum(counts.values())
    h = 0.0
    for c in counts.values():
        q = c / total
        h -= q * math.log2(q)
    return h + 0.0


def features(subtree: Subtree) -> FeatureVector:
    indeg = subtree.indegrees()
    n = len(indeg)
    if n == 0:
        raise ValueError("empty subtree")
    internal = [k for k in indeg if k > 0]
    return FeatureVector(
        n_nodes=n,
        n_edges=len(subtree.edges),
        leaf_fraction=(n - len(internal)) / n,
        indegree_entropy=_entropy_bits(indeg),
        mean_internal_indegree=sum(internal) / len(internal) if internal else 0.0,
        depth=max(subtree.node_depth.values()),
    )


def feature_matrix(items: Sequence) -> np.ndarray:
    """Rows of features for Subtrees or FeatureVectors (shared objects computed once)."""
    cache: dict[int, tuple] = {}
    rows = []
    for it in items:
        key = id(it)
        row = cache.get(key)
        if row is None:
            fv = it if isinstance(it, FeatureVector) else features(it)
            row = cache[key] = fv.as_tuple()
        rows.append(row)
    return np.array(rows, dtype=float).reshape(len(rows), len(FEATURE_NAMES))


def feature_vectors(subtrees: Sequence[Subtree]) -> list[FeatureVector]:
    cache: dict[int, FeatureVector] = {}
    out = []
    for st in subtrees:
        fv = cache.get(id(st))
        if fv is None:
            fv = cache[id(st)] = features(st)
        out.append(fv)
    return out


def features_to_csv(matrix: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FEATURE_NAMES)
    for row in matrix.tolist():
        w.writerow([int(v) if i in (0, 1, 5) else repr(v) for i, v in enumerate(row)])
    return buf.getvalue()


def features_from_csv(text: str) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != FEATURE_NAMES:
        raise ValueError("unexpected feature header")
    return np.array([[float(x) for x in r] for r in rows[1:]], dtype=float).reshape(-1, len(FEATURE_NAMES))


def subtrees_to_text(subtrees: Sequence[Subtree]) -> str:
    """``S id root depth_limit n_nodes`` followed by ``E id child parent`` lines."""
    lines = []
    for i, st in enumerate(subtrees):
        lines.append(f"S {i} {st.root} {st.depth_limit} {len(st.nodes)}")
        lines.extend(f"E {i} {c} {p}" for c, p in st.edges)
    return "\n".join(lines) + ("\n" if lines else "")


def parse_subtrees(text: str) -> list[Subtree]:
    heads: list[tuple[int, int, int]] = []
    edges: dict[int, list[tuple[int, int]]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "S" and len(parts) == 5:
            sid = int(parts[1])
            heads.append((sid, int(parts[2]), int(parts[3])))
            edges[sid] = []
        elif parts[0] == "E" and len(parts) == 4:
            edges[int(parts[1])].append((int(parts[2]), int(parts[3])))
        else:
            raise ValueError(f"line {lineno}: malformed subtree record")
    out = []
    for sid, root, d in heads:
        es = tuple(edges[sid])
        out.append(Subtree(root, d, (root,) + tuple(c for c, _ in es), es))
    return out


def write_subtrees(subtrees: Sequence[Subtree], path) -> None:
    Path(path).write_text(subtrees_to_text(subtrees))


def read_subtrees(path) -> list[Subtree]:
    return parse_subtrees(Path(path).read_text())
