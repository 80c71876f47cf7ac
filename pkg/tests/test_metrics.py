from __future__ import annotations

import math
import random

import numpy as np
import pytest

from oracles import mean_children_over_internal, random_parent_map
from protocascade.engine import Cascade, CascadeTree, Event, EventKind, build_tree, simulate
from protocascade.errors import CalibrationError, UndefinedValueError
from protocascade.metrics import (calibrate_reproduction, exposure_curve, measured_reproduction,
                                  reproduction_by_depth, reproduction_number, status_differential,
                                  summaries_to_csv, summarize, summary_record)
from protocascade.netgen import GraphConfig, SocialGraph, generate_graph
from protocascade.protocol import DelayModel, ExposureResponse, TransientCopy


def test_reproduction_number_examples():
    binary = {0: None, **{i: (i - 1) // 2 for i in range(1, 15)}}
    assert reproduction_number(CascadeTree.from_parents(binary)) == 2.0
    chain = {0: None, 1: 0, 2: 1, 3: 2}
    assert reproduction_number(CascadeTree.from_parents(chain)) == 1.0
    mixed = {0: None, 1: 0, 2: 0, 3: 0, 4: 1}
    assert reproduction_number(CascadeTree.from_parents(mixed)) == 2.0
    with pytest.raises(UndefinedValueError):
        reproduction_number(CascadeTree.from_parents({0: None}))


def test_reproduction_number_matches_child_count_enumeration():
    rng = random.Random(99)
    for _ in range(200):
        parent = random_parent_map(rng, rng.randint(2, 50))
        tree = CascadeTree.from_parents(parent)
        r = reproduction_number(tree)
        assert r == mean_children_over_internal(parent)
        internal = {p for p in parent.values() if p is not None}
        assert r == (len(parent) - 1) / len(internal)


def test_reproduction_by_depth():
    tree = CascadeTree.from_parents({0: None, 1: 0, 2: 0, 3: 1, 4: 1, 5: 1})
    assert reproduction_by_depth(tree) == {0: 2.0, 1: 3.0}


def chain_cascade():
    g = SocialGraph.from_edges([(0, 1), (1, 2)])
    spec = TransientCopy(view_prob=1.0, response=ExposureResponse(base_rate=1.0),
                         delays=DelayModel(view_delay_median=1.0, effort_delay_median=2.0,
                                           dispersion=0.0))
    c = simulate(g, spec, [0], rng=0)
    return g, c, build_tree(c)


def test_chain_delay_is_view_plus_effort():
    g, c, tree = chain_cascade()
    s = summarize(c, tree, g)
    assert s.adoptions == 3
    assert s.mean_adoption_delay == 3.0
    assert s.reproduction_number == 1.0
    assert s.mean_mutual_friends == 0.0
    assert s.median_prior_adopted_friends == 1.0
    assert summarize(c, tree, g) == s


def test_zero_spread_summary_reports_absent_values():
    g = SocialGraph.from_edges([(0, 1)])
    c = simulate(g, TransientCopy(view_prob=0.0), [0], rng=0)
    s = summarize(c, build_tree(c), g)
    assert s.adoptions == 1
    assert s.mean_adoption_delay is None and s.reproduction_number is None
    assert "mean_adoption_delay = absent" in summary_record(s)
    row = summaries_to_csv([("x", 0, s)]).splitlines()[1].split(",")
    assert row[:3] == ["x", "0", "1"]


def test_summarize_rejects_empty_tree():
    g = SocialGraph.from_edges([(0, 1)])
    with pytest.raises(UndefinedValueError):
        summarize(Cascade(TransientCopy(), "", (0,), ()), CascadeTree(), g)


def test_top1pct_share_counts_hub_parents():
    # node 0 is the single top-1% node of a 100-node star-like graph
    edges = [(0, i) for i in range(1, 60)] + [(i, i + 1) for i in range(60, 99)]
    g = SocialGraph.from_edges(edges, n=100)
    events = [Event(0.0, EventKind.Adopt, 0), Event(0.0, EventKind.Adopt, 60)]
    t = 1.0
    for child, parent in ((1, 0), (2, 0), (61, 60), (62, 61)):
        events += [Event(t, EventKind.View, child, parent, 1), Event(t + 0.5, EventKind.Adopt, child, parent, 1)]
        t += 1.0
    c = Cascade(TransientCopy(), "", (0, 60), tuple(events))
    s = summarize(c, build_tree(c), g)
    assert s.top1pct_share == 0.5
    assert s.exposures_per_adopter == 4 / 6


def _flat_world(shape: str, base: float):
    g = generate_graph(GraphConfig(n=4000, communities=1, page_fraction=0.0, rng_seed=2))
    spec = TransientCopy(view_prob=0.5, visibility_window=1e9,
                         response=ExposureResponse(base_rate=base, shape=shape, shape_strength=1.0))
    return g, spec


def test_flat_response_gives_flat_curve():
    g, spec = _flat_world("flat", 0.3)
    c = simulate(g, spec, list(range(0, 4000, 40)), rng=4)
    curve = exposure_curve(c)
    for k in (1, 2):
        pt = curve[k]
        assert pt.n_at_risk >= 500
        sigma = math.sqrt(0.3 * 0.7 / pt.n_at_risk)
        assert abs(pt.p_k - 0.3) <= 3 * sigma
    tree = build_tree(c)
    assert sum(pt.n_adopted for pt in curve.values()) == len(tree) - len(c.seeds)
    risks = [curve[k].n_at_risk for k in sorted(curve)]
    assert risks == sorted(risks, reverse=True)


def test_decreasing_response_halves_second_exposure():
    g, spec = _flat_world("decreasing", 0.4)
    c = simulate(g, spec, list(range(0, 4000, 40)), rng=4)
    curve = exposure_curve(c)
    p1, p2 = curve[1], curve[2]
    ratio = p2.p_k / p1.p_k
    # delta-method standard error of the ratio
    se = ratio * math.sqrt((1 - p1.p_k) / (p1.n_at_risk * p1.p_k) + (1 - p2.p_k) / (p2.n_at_risk * p2.p_k))
    assert abs(ratio - 0.5) <= 3 * se


def test_no_views_gives_empty_curve():
    g = SocialGraph.from_edges([(0, 1)])
    assert exposure_curve(simulate(g, TransientCopy(view_prob=0.0), [0], rng=0)) == {}


def test_status_differential_hand_example():
    g = SocialGraph.from_edges([(0, 1), (0, 2), (2, 3)], initiated_by=[0, 0, 2])
    events = (
        Event(0.0, EventKind.Adopt, 0),
        Event(1.0, EventKind.View, 1, 0, 1), Event(1.0, EventKind.View, 2, 0, 1),
        Event(2.0, EventKind.Adopt, 1, 0, 1), Event(2.0, EventKind.Adopt, 2, 0, 1),
    )
    c = Cascade(TransientCopy(), "", (0,), events)
    sd = status_differential(c, build_tree(c), g)
    assert sd.mean_if_parent == 1.0
    assert sd.mean_if_child == 0.25
    assert sd.mean_if_exposed_only is None
    assert sd.friend_count_gap == 2 - 1.5


def test_status_differential_symmetric_bias():
    base = generate_graph(GraphConfig(n=3000, communities=300, rng_seed=8))
    rng = np.random.default_rng(0)
    init = np.where(rng.random(base.n_edges) < 0.5, base.edges_u, base.edges_v)
    g = SocialGraph(base.is_page, base.community, base.positions, np.ones(base.n),
                    base.edges_u, base.edges_v, init)
    spec = TransientCopy(view_prob=0.5, response=ExposureResponse(base_rate=0.3))
    c = simulate(g, spec, list(range(0, 3000, 30)), rng=1)
    sd = status_differential(c, build_tree(c), g)
    for v in (sd.mean_if_parent, sd.mean_if_child, sd.mean_if_exposed_only):
        assert v == pytest.approx(0.5, abs=0.05)


def test_hub_seeded_cascade_has_positive_friend_gap():
    g = generate_graph(GraphConfig(n=3000, communities=300, rng_seed=8))
    hubs = np.argsort(-g.degree, kind="stable")[:10].tolist()
    spec = TransientCopy(view_prob=0.5, response=ExposureResponse(base_rate=0.2))
    c = simulate(g, spec, hubs, rng=1)
    assert status_differential(c, build_tree(c), g).friend_count_gap > 0


@pytest.fixture(scope="module")
def calib_world():
    g = generate_graph(GraphConfig(n=3000, communities=300, rng_seed=5))
    return g, list(range(0, 3000, 30))


def test_calibration_fixed_point(calib_world):
    g, seeds = calib_world
    spec = TransientCopy(response=ExposureResponse(base_rate=0.2, shape="decreasing", shape_strength=1.0))
    r = measured_reproduction(g, spec, seeds, runs=3)
    out = calibrate_reproduction(g, spec, seeds, target_R=r, tol=0.05, runs=3)
    assert out.response.base_rate == 0.2


def test_calibration_reaches_target(calib_world):
    g, seeds = calib_world
    spec = TransientCopy(response=ExposureResponse(base_rate=0.05))
    out = calibrate_reproduction(g, spec, seeds, target_R=1.6, tol=0.05, runs=3)
    assert abs(measured_reproduction(g, out, seeds, runs=3) - 1.6) <= 0.05


def test_calibration_bracket_failure_on_regular_graph():
    n = 200
    edges = {(i, (i + s) % n) for i in range(n) for s in (1, 2)} | {(i, i + n // 2) for i in range(n // 2)}
    g = SocialGraph.from_edges(sorted((min(u, v), max(u, v)) for u, v in edges), n=n)
    assert set(g.degree.tolist()) == {5}
    with pytest.raises(CalibrationError):
        calibrate_reproduction(g, TransientCopy(response=ExposureResponse(base_rate=0.5)),
                               [0, 50, 100], target_R=50, tol=0.1, runs=2)


def test_calibration_argument_checks(calib_world):
    g, seeds = calib_world
    with pytest.raises(ValueError):
        calibrate_reproduction(g, TransientCopy(), seeds, target_R=0)
