"""Cascade-level statistics: adoption counts, hub share, tie strength, delays,
exposure-response curves, status differentials and the reproduction number.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np

from .engine import DEFAULT_HORIZON, Cascade, CascadeTree, EventKind, build_tree, simulate
from .errors import CalibrationError, UndefinedValueError
from .netgen import SocialGraph, initiation_fractions
from .protocol import ProtocolSpec, with_base_rate


@dataclass(frozen=True)
class CascadeSummary:
    adoptions: int
    exposures_per_adopter: float
    top1pct_share: Optional[float]
    mean_mutual_friends: Optional[float]
    mean_prior_adopted_friends: Optional[float]
    median_prior_adopted_friends: Optional[float]
    mean_adoption_delay: Optional[float]
    reproduction_number: Optional[float]
    mean_edge_distance: Optional[float] = None


SUMMARY_FIELDS = [f.name for f in fields(CascadeSummary)]


@dataclass(frozen=True)
class CurvePoint:
    n_at_risk: int
    n_adopted: int
    p_k: float


class ExposureCurve(dict):
    """Mapping exposure index k -> CurvePoint."""

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "n_at_risk", "n_adopted", "p_k"])
        for k in sorted(self):
            pt = self[k]
            w.writerow([k, pt.n_at_risk, pt.n_adopted, repr(pt.p_k)])
        return buf.getvalue()

    @classmethod
    def pooled(cls, curves: Sequence["ExposureCurve"]) -> "ExposureCurve":
        out = cls()
        for k in sorted({k for c in curves for k in c}):
            r = sum(c[k].n_at_risk for c in curves if k in c)
            a = sum(c[k].n_adopted for c in curves if k in c)
            out[k] = CurvePoint(r, a, a / r)
        return out


def reproduction_number(tree: CascadeTree) -> float:
    """Mean number of children over internal (non-leaf) tree nodes."""
    counts = [len(c) for c in tree.children.values() if c]
    if not counts:
        raise UndefinedValueError("tree has no internal nodes")
    return sum(counts) / len(counts)


def reproduction_by_depth(tree: CascadeTree) -> dict[int, float]:
    depth = tree.depths()
    sums: dict[int, list[int]] = {}
    for u, ch in tree.children.items():
        if ch:
            sums.setdefault(depth[u], []).append(len(ch))
    return {d: sum(v) / len(v) for d, v in sorted(sums.items())}


def exposure_curve(cascade: Cascade) -> ExposureCurve:
    """Per-exposure adoption hazard.

    Only Views reaching a not-yet-committed individual are logged, so the
    k-th logged View of an actor is exactly its k-th at-risk exposure. The
    exposure index carried by an Adopt event names the View whose decision
    produced the adoption.
    """
    at_risk: dict[int, int] = {}
    adopted: dict[int, int] = {}
    for e in cascade.events:
        if e.kind == EventKind.View:
            at_risk[e.exposure_index] = at_risk.get(e.exposure_index, 0) + 1
        elif e.kind == EventKind.Adopt and e.exposure_index is not None:
            adopted[e.exposure_index] = adopted.get(e.exposure_index, 0) + 1
    curve = ExposureCurve()
    for k in sorted(at_risk):
        a = adopted.get(k, 0)
        curve[k] = CurvePoint(at_risk[k], a, a / at_risk[k])
    return curve


def _post_times(cascade: Cascade) -> dict[int, float]:
    return {e.actor: e.time for e in cascade.events if e.kind == EventKind.Post}


def prior_adopted_friends(tree: CascadeTree, graph: SocialGraph, node: int) -> int:
    t = tree.adoption_time[node]
    at = tree.adoption_time
    return sum(1 for w in graph.adjacency[node] if w in at and at[w] < t)


def summarize(cascade: Cascade, tree: CascadeTree, graph: SocialGraph) -> CascadeSummary:
    if len(tree) == 0:
        raise UndefinedValueError("empty cascade tree")
    n_views = sum(1 for e in cascade.events if e.kind == EventKind.View)
    adoptions = len(tree)
    edges = tree.edges()

    top = set(graph.top_degree_nodes(0.01).tolist())
    top_share = sum(1 for _, p in edges if p in top) / len(edges) if edges else None
    if edges:
        mutual = [graph.edge_meta(c, p) for c, p in edges]
        mean_mutual = float(np.mean([m.mutual_friends for m in mutual]))
        mean_dist = float(np.mean([m.distance for m in mutual]))
    else:
        mean_mutual = mean_dist = None

    non_seed = list(tree.parent)
    if non_seed:
        prior = [prior_adopted_friends(tree, graph, v) for v in non_seed]
        mean_prior = float(np.mean(prior))
        median_prior = float(statistics.median(prior))
        posts = _post_times(cascade)
        delays = [tree.adoption_time[v] - posts.get(p, tree.adoption_time[p])
                  for v, p in tree.parent.items()]
        mean_delay = float(np.mean(delays))
    else:
        mean_prior = median_prior = mean_delay = None
    try:
        r = reproduction_number(tree)
    except UndefinedValueError:
        r = None
    return CascadeSummary(
        adoptions=adoptions,
        exposures_per_adopter=n_views / adoptions,
        top1pct_share=top_share,
        mean_mutual_friends=mean_mutual,
        mean_prior_adopted_friends=mean_prior,
        median_prior_adopted_friends=median_prior,
        mean_adoption_delay=mean_delay,
        reproduction_number=r,
        mean_edge_distance=mean_dist,
    )


def summaries_to_csv(rows: Sequence[tuple[str, int, CascadeSummary]]) -> str:
    """One row per cascade: protocol name, replicate index, summary fields."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["protocol", "replicate"] + SUMMARY_FIELDS)
    for name, rep, s in rows:
        vals = asdict(s)
        w.writerow([name, rep] + ["" if vals[f] is None else repr(vals[f]) for f in SUMMARY_FIELDS])
    return buf.getvalue()


def summary_record(s: CascadeSummary) -> str:
    """Structured text form: one ``key = value`` line per field."""
    return "\n".join(f"{k} = {'absent' if v is None else repr(v)}"
                     for k, v in asdict(s).items()) + "\n"


@dataclass(frozen=True)
class StatusDifferential:
    mean_if_parent: Optional[float]
    mean_if_child: Optional[float]
    mean_if_exposed_only: Optional[float]
    friend_count_gap: Optional[float]


def status_differential(cascade: Cascade, tree: CascadeTree, graph: SocialGraph) -> StatusDifferential:
    frac = initiation_fractions(graph)
    parents = sorted({p for p in tree.parent.values()})
    children = list(tree.parent)
    viewed = {e.actor for e in cascade.events if e.kind == EventKind.View}
    exposed_only = sorted(viewed - set(tree.adoption_time))

    def _mean(ids):
        vals = frac[ids] if ids else np.array([])
        vals = vals[~np.isnan(vals)]
        return float(vals.mean()) if len(vals) else None

    gap = None
    if parents and children:
        gap = float(graph.degree[parents].mean() - graph.degree[children].mean())
    return StatusDifferential(_mean(parents), _mean(children), _mean(exposed_only), gap)


# ---------------------------------------------------------------- calibration

def measured_reproduction(graph: SocialGraph, spec: ProtocolSpec, seeds: Sequence[int],
                          runs: int, rng_seed: int = 0,
                          horizon: float = DEFAULT_HORIZON) -> float:
    """Mean reproduction number over ``runs`` simulations.

    Run ``i`` always uses stream ``(rng_seed, i)``. A run that never spreads
    beyond its seeds contributes 0.
    """
    from .seeding import derive_seed

    values = []
    for i in range(runs):
        tree = build_tree(simulate(graph, spec, seeds, horizon, derive_seed(rng_seed, "calibrate", i)))
        try:
            values.append(reproduction_number(tree))
        except UndefinedValueError:
            values.append(0.0)
    return float(np.mean(values))


def calibrate_reproduction(graph: SocialGraph, spec: ProtocolSpec, seeds: Sequence[int],
                           target_R: float = 1.8, tol: float = 0.1, runs: int = 5, *,
                           rng_seed: int = 0, horizon: float = DEFAULT_HORIZON,
                           max_iter: int = 40, log=None) -> ProtocolSpec:
    """Rescale ``response.base_rate`` until the mean measured R is within ``tol``.

    R must be monotone in the base rate, though not necessarily increasing:
    protocols with capped offspring lose R to saturation as the rate grows.
    The direction is read off a probe at twice (or half) the spec's rate,
    the rate is then doubled or halved until the target is bracketed, and
    the bracket is bisected in log space. Each doubling step is checked for
    consistency with the assumed direction; inside the bracket, Monte-Carlo
    noise may make neighbouring rates look non-monotone and is tolerated.
    """
    if not target_R > 0 or not tol > 0:
        raise ValueError("target_R and tol must be positive")
    cache: dict[float, float] = {}

    def measure(rate: float) -> float:
        if rate not in cache:
            cache[rate] = measured_reproduction(graph, with_base_rate(spec, rate), seeds, runs,
                                                rng_seed, horizon)
            if log:
                log(f"base_rate={rate:.6g} R={cache[rate]:.4f}")
        return cache[rate]

    def done(rate: float) -> bool:
        return abs(measure(rate) - target_R) <= tol

    def check(x: float, y: float) -> None:
        if (measure(y) - measure(x)) * (y - x) * slope < 0:
            raise CalibrationError(f"non-monotone bracket: R({x:.3g})={measure(x):.3f}, "
                                   f"R({y:.3g})={measure(y):.3f}")

    x = spec.response.base_rate if spec.response.base_rate > 0 else 1e-3
    if done(x):
        return with_base_rate(spec, x)
    probe = x * 2.0 if x * 2.0 <= 1.0 else x / 2.0
    if done(probe):
        return with_base_rate(spec, probe)
    slope = 1.0 if (measure(probe) - measure(x)) * (probe - x) >= 0 else -1.0
    up = (measure(x) < target_R) == (slope > 0)
    while True:
        if up and x >= 1.0:
            raise CalibrationError(f"R={measure(x):.3f} at base_rate=1 does not reach {target_R}")
        y = min(1.0, x * 2.0) if up else x / 2.0
        if y < 1e-12:
            raise CalibrationError(f"R={measure(x):.3f} does not reach {target_R} "
                                   "for vanishing base rates")
        if done(y):
            return with_base_rate(spec, y)
        check(x, y)
        if (measure(y) < target_R) != (measure(x) < target_R):
            break
        x = y
    lo, hi = min(x, y), max(x, y)
    for _ in range(max_iter):
        mid = math.sqrt(lo * hi)
        if done(mid):
            return with_base_rate(spec, mid)
        if (measure(mid) < target_R) == (measure(lo) < target_R):
            lo = mid
        else:
            hi = mid
    raise CalibrationError(f"no base rate within {tol} of R={target_R} after {max_iter} steps")
