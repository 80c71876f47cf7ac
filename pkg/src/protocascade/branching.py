"""Branching-process models of depth-bounded cascade subtrees.

Three models of increasing fidelity:

* ``Baseline(k, p)``: every node asks ``k`` others, each joins with
  probability ``p`` (Binomial offspring).
* ``DegreeModel``: offspring counts drawn i.i.d. from an empirical pmf.
* ``ConditionalDegreeModel``: the root draws from its own pmf; every other
  node draws conditionally on its parent's realised child count.

Nodes sitting at a subtree's depth limit have censored child counts and are
left out of every fitted statistic and likelihood term.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.stats import binom

from .structure import Subtree

PMF_TOL = 1e-8
MODEL_KINDS = ("baseline", "degree", "conditional")


def _check_pmf(pmf, what: str) -> tuple[float, ...]:
    pmf = tuple(float(x) for x in pmf)
    if not pmf or any(x < 0 for x in pmf) or abs(sum(pmf) - 1.0) > PMF_TOL:
        raise ValueError(f"{what} is not a probability vector")
    return pmf


@dataclass(frozen=True)
class Baseline:
    k: int
    p: float
    kind = "baseline"

    def __post_init__(self):
        if self.k < 1 or not 0.0 <= self.p <= 1.0:
            raise ValueError("Baseline needs k >= 1 and p in [0, 1]")


@dataclass(frozen=True)
class DegreeModel:
    indegree_pmf: tuple[float, ...]
    kind = "degree"

    def __post_init__(self):
        object.__setattr__(self, "indegree_pmf", _check_pmf(self.indegree_pmf, "indegree_pmf"))


@dataclass(frozen=True)
class ConditionalDegreeModel:
    root_pmf: tuple[float, ...]
    # parent in-degree -> child in-degree pmf
    cond_pmf: dict[int, tuple[float, ...]] = field(hash=False)
    smoothing_alpha: float = 0.5
    kind = "conditional"

    def __post_init__(self):
        object.__setattr__(self, "root_pmf", _check_pmf(self.root_pmf, "root_pmf"))
        rows = {int(j): _check_pmf(row, f"cond_pmf[{j}]") for j, row in self.cond_pmf.items()}
        object.__setattr__(self, "cond_pmf", rows)
        if self.smoothing_alpha < 0:
            raise ValueError("smoothing_alpha must be >= 0")
        d_max = len(self.root_pmf) - 1
        for j in range(1, d_max + 1):
            if self.root_pmf[j] > 0 and j not in rows:
                raise ValueError(f"cond_pmf has no row for reachable parent in-degree {j}")


BranchingModel = Union[Baseline, DegreeModel, ConditionalDegreeModel]


# --------------------------------------------------------------------- fitting

def _weighted_unique(subtrees: Sequence[Subtree]) -> list[tuple[Subtree, int]]:
    counts = Counter(id(st) for st in subtrees)
    seen = {}
    for st in subtrees:
        seen.setdefault(id(st), st)
    return [(seen[i], c) for i, c in counts.items()]


def fit(model_kind: str, subtrees: Sequence[Subtree], smoothing_alpha: float = 0.5) -> BranchingModel:
    if not subtrees:
        raise ValueError("cannot fit on an empty sample")
    if model_kind not in MODEL_KINDS:
        raise ValueError(f"model_kind must be one of {MODEL_KINDS}")
    offspring: Counter = Counter()
    roots: Counter = Counter()
    pairs: Counter = Counter()
    for st, w in _weighted_unique(subtrees):
        ch = st.children
        depth = st.node_depth
        limit = st.depth_limit
        if limit < 1:
            continue
        roots[len(ch[st.root])] += w
        for u in st.nodes:
            if depth[u] < limit:
                offspring[len(ch[u])] += w
        for c, p in st.edges:
            if depth[c] < limit:
                pairs[(len(ch[p]), len(ch[c]))] += w
    if not offspring:
        raise ValueError("every node in the sample is truncated at the depth limit")

    d_max = max(offspring)
    total = sum(offspring.values())
    if model_kind == "baseline":
        mean = sum(k * c for k, c in offspring.items()) / total
        if d_max == 0:
            return Baseline(k=1, p=0.0)
        return Baseline(k=d_max, p=mean / d_max)

    pmf = tuple(offspring.get(k, 0) / total for k in range(d_max + 1))
    if model_kind == "degree":
        return DegreeModel(pmf)

    n_roots = sum(roots.values())
    root_pmf = tuple(roots.get(k, 0) / n_roots for k in range(d_max + 1))
    pooled = Counter()
    for (_, c), w in pairs.items():
        pooled[c] += w
    cond = {}
    a = smoothing_alpha
    for j in range(1, d_max + 1):
        row = [pairs.get((j, c), 0) for c in range(d_max + 1)]
        n = sum(row)
        if n + a * (d_max + 1) > 0:
            cond[j] = tuple((x + a) / (n + a * (d_max + 1)) for x in row)
        elif pooled:
            m = sum(pooled.values())
            cond[j] = tuple(pooled.get(c, 0) / m for c in range(d_max + 1))
        else:
            cond[j] = pmf
    return ConditionalDegreeModel(root_pmf, cond, smoothing_alpha)


# ------------------------------------------------------------------ generation

def _draw(pmf: tuple[float, ...], size: int, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(pmf)
    idx = np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right")
    return np.minimum(idx, len(pmf) - 1)


def _offspring(model: BranchingModel, level: int, parent_indeg: np.ndarray | None,
               size: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(model, Baseline):
        return rng.binomial(model.k, model.p, size=size)
    if isinstance(model, DegreeModel):
        return _draw(model.indegree_pmf, size, rng)
    if level == 0:
        return _draw(model.root_pmf, size, rng)
    out = np.empty(size, dtype=np.int64)
    for j in np.unique(parent_indeg).tolist():
        mask = parent_indeg == j
        out[mask] = _draw(model.cond_pmf[j], int(mask.sum()), rng)
    return out


def generate(model: BranchingModel, count: int, depth: int, rng) -> list[Subtree]:
    """``count`` synthetic subtrees truncated at ``depth``; node ids are BFS positions."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    rng = np.random.default_rng(rng)
    sid = np.arange(count)
    local = np.zeros(count, dtype=np.int64)
    size = np.ones(count, dtype=np.int64)
    parent_indeg = None
    levels = []
    for level in range(depth + 1):
        if level == depth or len(sid) == 0:
            break
        indeg = _offspring(model, level, parent_indeg, len(sid), rng).astype(np.int64)
        # sid stays sorted, so each subtree's children form one contiguous block
        child_sid = np.repeat(sid, indeg)
        child_parent = np.repeat(local, indeg)
        m = len(child_sid)
        offset = np.zeros(m, dtype=np.int64)
        if m:
            bstart = np.flatnonzero(np.r_[True, child_sid[1:] != child_sid[:-1]])
            offset = np.arange(m) - np.repeat(bstart, np.diff(np.r_[bstart, m]))
        child_local = size[child_sid] + offset
        np.add.at(size, child_sid, 1)
        levels.append((child_sid, child_local, child_parent))
        sid, local, parent_indeg = child_sid, child_local, np.repeat(indeg, indeg)

    edges_by_sid: list[list[tuple[int, int]]] = [[] for _ in range(count)]
    for child_sid, child_local, child_parent in levels:
        for s, c, p in zip(child_sid.tolist(), child_local.tolist(), child_parent.tolist()):
            edges_by_sid[s].append((c, p))
    out = []
    for s in range(count):
        es = tuple(edges_by_sid[s])
        out.append(Subtree(0, depth, (0,) + tuple(c for c, _ in es), es))
    return out


# ------------------------------------------------------------------ likelihood

def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def _pmf_at(pmf: tuple[float, ...], c: int) -> float:
    return pmf[c] if c < len(pmf) else 0.0


def loglik(model: BranchingModel, subtree: Subtree) -> float:
    """Log-probability of the uncensored child counts of ``subtree``."""
    ch = subtree.children
    depth = subtree.node_depth
    limit = subtree.depth_limit
    parent = {c: p for c, p in subtree.edges}
    total = 0.0
    for u in subtree.nodes:
        if depth[u] >= limit:
            continue
        c = len(ch[u])
        if isinstance(model, Baseline):
            term = float(binom.logpmf(c, model.k, model.p)) if c <= model.k else -math.inf
        elif isinstance(model, DegreeModel):
            term = _log(_pmf_at(model.indegree_pmf, c))
        elif u == subtree.root:
            term = _log(_pmf_at(model.root_pmf, c))
        else:
            row = model.cond_pmf.get(len(ch[parent[u]]))
            term = -math.inf if row is None else _log(_pmf_at(row, c))
        total += term
        if total == -math.inf:
            return total
    return total


# ------------------------------------------------------------------ model files

def model_to_text(model: BranchingModel) -> str:
    lines = [f"kind {model.kind}"]
    if isinstance(model, Baseline):
        lines += [f"k {model.k}", f"p {model.p:.9g}"]
    elif isinstance(model, DegreeModel):
        lines += [f"pmf {v} {q:.9g}" for v, q in enumerate(model.indegree_pmf)]
    else:
        lines.append(f"smoothing_alpha {model.smoothing_alpha:.9g}")
        lines += [f"root {v} {q:.9g}" for v, q in enumerate(model.root_pmf)]
        for j in sorted(model.cond_pmf):
            lines += [f"cond {j} {v} {q:.9g}" for v, q in enumerate(model.cond_pmf[j])]
    return "\n".join(lines) + "\n"


def _vector(entries: dict[int, float]) -> tuple[float, ...]:
    n = max(entries) + 1 if entries else 0
    return tuple(entries.get(i, 0.0) for i in range(n))


def parse_model(text: str) -> BranchingModel:
    kind = None
    scalars: dict[str, str] = {}
    pmf: dict[int, float] = {}
    root: dict[int, float] = {}
    cond: dict[int, dict[int, float]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        tag = parts[0]
        if tag == "kind":
            kind = parts[1]
        elif tag in ("k", "p", "smoothing_alpha"):
            scalars[tag] = parts[1]
        elif tag == "pmf":
            pmf[int(parts[1])] = float(parts[2])
        elif tag == "root":
            root[int(parts[1])] = float(parts[2])
        elif tag == "cond":
            cond.setdefault(int(parts[1]), {})[int(parts[2])] = float(parts[3])
        else:
            raise ValueError(f"line {lineno}: unknown record {tag!r}")
    if kind == "baseline":
        return Baseline(int(scalars["k"]), float(scalars["p"]))
    if kind == "degree":
        return DegreeModel(_vector(pmf))
    if kind == "conditional":
        return ConditionalDegreeModel(_vector(root), {j: _vector(r) for j, r in cond.items()},
                                      float(scalars.get("smoothing_alpha", 0.5)))
    raise ValueError(f"unknown model kind {kind!r}")


def write_model(model: BranchingModel, path) -> None:
    Path(path).write_text(model_to_text(model))


def read_model(path) -> BranchingModel:
    return parse_model(Path(path).read_text())
