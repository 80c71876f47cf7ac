"""Random-forest classifier, AUC, and the three prediction tasks.

The forest is a plain bagged ensemble of depth-limited Gini trees. Training
collapses identical rows into one weighted row: subtree feature vectors
repeat heavily, so a 400k-row dataset often has only a few thousand distinct
rows, and bootstrap multiplicities become row weights.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .branching import BranchingModel, generate
from .engine import Cascade, CascadeTree, EventKind
from .errors import InsufficientDataError
from .netgen import SocialGraph, initiation_fractions
from .seeding import derive_seed
from .structure import FEATURE_NAMES, FeatureVector, Subtree, feature_matrix

ADOPTION_FEATURES = ("degree", "is_page", "mutual_friends", "prior_adopted_friends",
                     "exposures_received", "initiation_fraction", "community_match")


# ----------------------------------------------------------------------- data

@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ValueError("X must be 2-D with one row per label")
        if self.X.shape[1] != len(self.feature_names):
            raise ValueError("feature_names does not match the row width")
        if len(self.y) and not np.isin(self.y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        self.feature_names = tuple(self.feature_names)

    @classmethod
    def from_rows(cls, rows: Sequence[tuple[Sequence[float], int]], feature_names) -> "Dataset":
        X = np.array([r[0] for r in rows], dtype=float).reshape(len(rows), len(feature_names))
        return cls(X, np.array([r[1] for r in rows], dtype=np.int64), tuple(feature_names))

    def __len__(self) -> int:
        return len(self.y)

    @property
    def rows(self) -> list[tuple[tuple[float, ...], int]]:
        return [(tuple(x), int(c)) for x, c in zip(self.X.tolist(), self.y.tolist())]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.feature_names)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(self.feature_names) + ["label"])
        for x, c in zip(self.X.tolist(), self.y.tolist()):
            w.writerow([repr(v) for v in x] + [c])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Dataset":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][-1] != "label":
            raise ValueError("dataset CSV needs a trailing 'label' column")
        names = tuple(rows[0][:-1])
        body = rows[1:]
        X = np.array([[float(v) for v in r[:-1]] for r in body], dtype=float).reshape(len(body), len(names))
        return cls(X, np.array([int(r[-1]) for r in body], dtype=np.int64), names)


def train_test_split(y: np.ndarray, test_fraction: float = 0.2, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint, class-stratified index split; deterministic for a fixed seed."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(rng)
    y = np.asarray(y)
    train, test = [], []
    for c in (0, 1):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(len(idx))]
        n_test = int(round(test_fraction * len(idx)))
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


# ---------------------------------------------------------------------- trees

@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int = 8
    subsample_fraction: float = 0.8
    # None -> round(sqrt(#features))
    features_per_split: Optional[int] = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 1:
            raise ValueError("n_trees and max_depth must be >= 1")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise ValueError("subsample_fraction must lie in (0, 1]")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValueError("features_per_split must be >= 1")


@dataclass(frozen=True, eq=False)
class DecisionTree:
    """Array-encoded tree; ``feature[i] < 0`` marks a leaf whose vote is ``value[i]``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return self.value[node]
            go_left = X[rows, np.where(inner, f, 0)] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)


def _best_split(X, pos, neg, features):
    """Best (gain, feature, threshold) by weighted Gini over ``features``."""
    tot_p, tot_n = pos.sum(), neg.sum()
    total = tot_p + tot_n
    parent = (tot_p * tot_p + tot_n * tot_n) / total
    best = (0.0, -1, 0.0)
    for f in features:
        col = X[:, f]
        order = np.argsort(col, kind="stable")
        v = col[order]
        distinct = v[1:] > v[:-1]
        if not distinct.any():
            continue
        lp = np.cumsum(pos[order])[:-1][distinct]
        ln = np.cumsum(neg[order])[:-1][distinct]
        lw = lp + ln
        rp, rn = tot_p - lp, tot_n - ln
        rw = rp + rn
        score = (lp * lp + ln * ln) / lw + (rp * rp + rn * rn) / rw
        i = int(np.argmax(score))
        gain = score[i] - parent
        if gain > best[0] + 1e-12:
            lo = v[:-1][distinct][i]
            hi = v[1:][distinct][i]
            best = (gain, int(f), float(lo + (hi - lo) / 2.0))
    return best


def _grow(X, pos, neg, params: ForestParams, n_feat_split: int, rng) -> DecisionTree:
    d = X.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    stack = [(new_node(), np.arange(len(X)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        p, q = pos[idx], neg[idx]
        wp, wn = p.sum(), q.sum()
        value[node] = 1.0 if wp > wn else 0.0 if wp < wn else 0.5
        if depth >= params.max_depth or wp == 0 or wn == 0 or len(idx) < 2:
            continue
        order = rng.permutation(d)
        gain, f, thr = _best_split(X[idx], p, q, order[:n_feat_split])
        if f < 0 and n_feat_split < d:
            # none of the drawn features can split this node; fall back to the rest
            gain, f, thr = _best_split(X[idx], p, q, order[n_feat_split:])
        if f < 0:
            continue
        mask = X[idx, f] <= thr
        feature[node], threshold[node] = f, thr
        left[node], right[node] = new_node(), new_node()
        stack.append((right[node], idx[~mask], depth + 1))
        stack.append((left[node], idx[mask], depth + 1))
    return DecisionTree(np.array(feature, dtype=np.int64), np.array(threshold),
                        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                        np.array(value))


def _train_tree(args) -> DecisionTree:
    U, inverse, y_unique, n_rows, params, n_feat_split, tree_index = args
    rng = np.random.default_rng(derive_seed(params.rng_seed, "tree", tree_index))
    m = max(1, int(round(params.subsample_fraction * n_rows)))
    draws = np.bincount(inverse[rng.integers(0, n_rows, size=m)], minlength=len(U)).astype(float)
    keep = draws > 0
    w = draws[keep]
    yk = y_unique[keep]
    return _grow(U[keep], w * (yk == 1), w * (yk == 0), params, n_feat_split, rng)


@dataclass(eq=False)
class ForestClassifier:
    params: ForestParams
    n_features: int
    trees: list[DecisionTree] = field(default_factory=list)

    def predict_proba(self, X) -> np.ndarray:
        """Fraction of trees voting 1 (a tied leaf casts half a vote)."""
        X = np.asarray(X, dtype=float).reshape(-1, self.n_features)
        if len(X) == 0:
            return np.zeros(0)
        U, inverse = np.unique(X, axis=0, return_inverse=True)
        votes = np.zeros(len(U))
        for t in self.trees:
            votes += t.apply(U)
        return (votes / len(self.trees))[inverse.reshape(-1)]


def train(data: Dataset, params: Optional[ForestParams] = None, jobs: int = 1) -> ForestClassifier:
    params = params or ForestParams()
    if len(data) < 2:
        raise InsufficientDataError("training needs at least 2 rows")
    if len(np.unique(data.y)) < 2:
        raise InsufficientDataError("training needs both classes")
    d = data.X.shape[1]
    n_feat_split = params.features_per_split or max(1, int(round(math.sqrt(d))))
    n_feat_split = min(n_feat_split, d)
    # identical (features, label) rows collapse to one weighted row
    Z = np.column_stack([data.X, data.y])
    Zu, inverse = np.unique(Z, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    U, y_unique = Zu[:, :-1], Zu[:, -1].astype(np.int64)
    tasks = [(U, inverse, y_unique, len(data), params, n_feat_split, i) for i in range(params.n_trees)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            trees = list(pool.map(_train_tree, tasks, chunksize=max(1, params.n_trees // (4 * jobs))))
    else:
        trees = [_train_tree(t) for t in tasks]
    return ForestClassifier(params, d, trees)


# ------------------------------------------------------------------------ AUC

def auc(scores, labels=None) -> float:
    """P(random positive outranks random negative), ties counted 1/2.

    Accepts either ``(scores, labels)`` arrays or one sequence of
    ``(score, label)`` pairs.
    """
    if labels is None:
        pairs = list(scores)
        scores = [s for s, _ in pairs]
        labels = [c for _, c in pairs]
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise InsufficientDataError("AUC needs both classes")
    ranks = rankdata(s, method="average")
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def single_feature_aucs(data: Dataset) -> dict[str, float]:
    return {name: auc(data.X[:, j], data.y) for j, name in enumerate(data.feature_names)}


# ---------------------------------------------------------------------- tasks

@dataclass(frozen=True)
class TaskResult:
    auc: float
    n_train: int
    n_test: int
    feature_aucs: dict = field(default_factory=dict, compare=False)

    def __float__(self) -> float:
        return self.auc


def evaluate(data: Dataset, rng=None, params: Optional[ForestParams] = None,
             test_fraction: float = 0.2, jobs: int = 1) -> TaskResult:
    """80/20 split, train on the first part, AUC on the held-out part."""
    rng = np.random.default_rng(rng)
    train_idx, test_idx = train_test_split(data.y, test_fraction, rng)
    if params is None:
        params = ForestParams(rng_seed=int(rng.integers(2**63)))
    model = train(data.subset(train_idx), params, jobs=jobs)
    test = data.subset(test_idx)
    score = auc(model.predict_proba(test.X), test.y)
    return TaskResult(score, len(train_idx), len(test_idx), single_feature_aucs(test))


def _balanced(pos: np.ndarray, neg: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
    n = min(len(pos), len(neg))
    return (np.sort(rng.choice(pos, size=n, replace=False)),
            np.sort(rng.choice(neg, size=n, replace=False)))


def adoption_dataset(cascade: Cascade, tree: CascadeTree, graph: SocialGraph, rng,
                     min_each: int = 50) -> Dataset:
    """Balanced exposure-decision rows: successful vs. failed decisions.

    Each logged View is one adoption decision by a not-yet-committed person.
    Features describe the viewer, the exposer of that View, and the state of
    the cascade at that moment.
    """
    rng = np.random.default_rng(rng)
    views = [e for e in cascade.events if e.kind == EventKind.View]
    success = {(e.actor, e.exposure_index) for e in cascade.events
               if e.kind in (EventKind.Signup, EventKind.Adopt) and e.exposure_index is not None}
    labels = np.array([(e.actor, e.exposure_index) in success for e in views], dtype=bool)
    pos, neg = np.flatnonzero(labels), np.flatnonzero(~labels)
    if len(pos) < min_each or len(neg) < min_each:
        raise InsufficientDataError(
            f"need >= {min_each} successful and failed exposures, have {len(pos)} and {len(neg)}")
    pos, neg = _balanced(pos, neg, rng)
    chosen = np.concatenate([pos, neg])
    frac = initiation_fractions(graph)
    at = tree.adoption_time
    rows = []
    for i in chosen.tolist():
        e = views[i]
        v, u, t = e.actor, e.source, e.time
        prior = sum(1 for w in graph.adjacency[v] if w in at and at[w] < t)
        rows.append((graph.degree[v], graph.is_page[v], graph.edge_meta(u, v).mutual_friends,
                     prior, e.exposure_index, frac[v],
                     graph.community[u] == graph.community[v]))
    X = np.array(rows, dtype=float)
    X[np.isnan(X)] = -1.0
    y = np.concatenate([np.ones(len(pos), np.int64), np.zeros(len(neg), np.int64)])
    return Dataset(X, y, ADOPTION_FEATURES)


def adoption_task(cascade: Cascade, tree: CascadeTree, graph: SocialGraph, rng,
                  params: Optional[ForestParams] = None, jobs: int = 1) -> TaskResult:
    rng = np.random.default_rng(rng)
    data = adoption_dataset(cascade, tree, graph, rng)
    return evaluate(data, rng, params, jobs=jobs)


def _as_matrix(items) -> np.ndarray:
    if isinstance(items, np.ndarray):
        return np.asarray(items, dtype=float).reshape(-1, len(FEATURE_NAMES))
    return feature_matrix(items)


def structure_dataset(a, b, rng, min_each: int = 100) -> Dataset:
    """Balanced rows from two structural samples (A labelled 1)."""
    rng = np.random.default_rng(rng)
    A, B = _as_matrix(a), _as_matrix(b)
    if len(A) < min_each or len(B) < min_each:
        raise InsufficientDataError(f"need >= {min_each} subtrees per side, have {len(A)} and {len(B)}")
    n = min(len(A), len(B))
    ia = np.sort(rng.choice(len(A), size=n, replace=False))
    ib = np.sort(rng.choice(len(B), size=n, replace=False))
    X = np.vstack([A[ia], B[ib]])
    y = np.concatenate([np.ones(n, np.int64), np.zeros(n, np.int64)])
    return Dataset(X, y, FEATURE_NAMES)


def differentiate_task(subtrees_a: Sequence[FeatureVector | Subtree] | np.ndarray,
                       subtrees_b: Sequence[FeatureVector | Subtree] | np.ndarray, rng,
                       params: Optional[ForestParams] = None, jobs: int = 1) -> TaskResult:
    rng = np.random.default_rng(rng)
    return evaluate(structure_dataset(subtrees_a, subtrees_b, rng), rng, params, jobs=jobs)


def real_vs_synthetic_task(real: Sequence[Subtree], model: BranchingModel, rng,
                           params: Optional[ForestParams] = None, synthetic=None,
                           jobs: int = 1) -> TaskResult:
    """Real subtrees (label 1) against as many synthetic ones from ``model``.

    ``synthetic`` may supply pre-generated subtrees; otherwise they are drawn
    at the real sample's depth limit.
    """
    if len(real) < 100:
        raise InsufficientDataError(f"need >= 100 real subtrees, have {len(real)}")
    rng = np.random.default_rng(rng)
    if synthetic is None:
        synthetic = generate(model, len(real), real[0].depth_limit, rng)
    return evaluate(structure_dataset(real, synthetic, rng), rng, params, jobs=jobs)


# -------------------------------------------------------------------- results

RESULT_COLUMNS = ("task", "config_hash", "auc", "n_train", "n_test", "seed")


def results_to_csv(rows: Sequence[tuple[str, str, TaskResult, int]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for task, config_hash, res, seed in rows:
        w.writerow([task, config_hash, repr(res.auc), res.n_train, res.n_test, seed])
    return buf.getvalue()


def append_results(path, rows: Sequence[tuple[str, str, TaskResult, int]]) -> None:
    path = Path(path)
    text = results_to_csv(rows)
    if path.exists() and path.stat().st_size:
        text = text.split("\n", 1)[1]
    with path.open("a") as fh:
        fh.write(text)
