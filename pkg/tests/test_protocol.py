from __future__ import annotations

import random
import statistics

import pytest
from hypothesis import given, strategies as st

from protocascade.errors import ConfigError
from protocascade.netgen import SocialGraph
from protocascade.protocol import (DelayModel, ExposureResponse, Nomination, PersistentCopy,
                                   TransientCopy, Volunteer, adoption_probability,
                                   default_protocols, exposure_targets, protocol_from_dict,
                                   protocol_to_dict, sample_delay, tie_strength_norm,
                                   with_base_rate)


def star(leaves: int) -> SocialGraph:
    return SocialGraph.from_edges([(0, i) for i in range(1, leaves + 1)])


def test_copy_protocols_broadcast_untargeted():
    g = star(5)
    for spec in (TransientCopy(), PersistentCopy(), Volunteer()):
        out = exposure_targets(spec, 0, g, random.Random(1))
        assert sorted(out) == [(i, False) for i in range(1, 6)]


def test_nomination_fanout_exceeding_degree_takes_all():
    g = star(2)
    out = exposure_targets(Nomination(fanout=3), 0, g, random.Random(1))
    assert sorted(out) == [(1, True), (2, True)]


def test_nomination_subset_is_reproducible():
    g = star(10)
    spec = Nomination(fanout=3)
    a = exposure_targets(spec, 0, g, random.Random(42))
    b = exposure_targets(spec, 0, g, random.Random(42))
    assert a == b
    assert len(a) == 3 and len({v for v, _ in a}) == 3
    assert all(t for _, t in a) and all(1 <= v <= 10 for v, _ in a)


def test_isolated_adopter_has_no_targets():
    g = SocialGraph.from_edges([(1, 2)], n=3)
    assert exposure_targets(TransientCopy(), 0, g, random.Random(0)) == []


def test_adoption_probability_examples():
    zero = ExposureResponse(base_rate=0.0, tie_boost=3.0, social_cost_boost=1.0)
    assert all(adoption_probability(zero, k, 1.0, True) == 0.0 for k in (1, 2, 5))
    flat = ExposureResponse(base_rate=0.3)
    assert [adoption_probability(flat, k, 0.0, False) for k in (1, 2, 3)] == [0.3] * 3
    dec = ExposureResponse(base_rate=0.4, shape="decreasing", shape_strength=1.0)
    got = [adoption_probability(dec, k, 0.0, False) for k in (1, 2, 3)]
    assert got == pytest.approx([0.4, 0.2, 0.4 / 3], abs=1e-12)


def test_increasing_shape_is_normalised_and_capped():
    inc = ExposureResponse(base_rate=0.1, shape="increasing", shape_strength=1.0, increasing_cap=3.0)
    got = [adoption_probability(inc, k, 0.0, False) for k in (1, 2, 3, 4, 10)]
    assert got == pytest.approx([0.1, 0.2, 0.3, 0.3, 0.3])


def test_probability_is_clamped():
    r = ExposureResponse(base_rate=0.9, tie_boost=5.0, social_cost_boost=2.0)
    assert adoption_probability(r, 1, 1.0, True) == 1.0


def test_zero_exposure_count_is_rejected():
    with pytest.raises(ValueError):
        adoption_probability(ExposureResponse(), 0, 0.0, False)


def test_tie_strength_norm():
    assert tie_strength_norm(0) == 0.0
    assert tie_strength_norm(3) == 0.75


@given(base=st.floats(0, 1), shape=st.sampled_from(["flat", "decreasing", "increasing"]),
       s=st.floats(0, 3), tie=st.floats(0, 5), cost=st.floats(0, 3), k=st.integers(1, 30),
       t1=st.floats(0, 1), t2=st.floats(0, 1))
def test_probability_monotonicity(base, shape, s, tie, cost, k, t1, t2):
    r = ExposureResponse(base_rate=base, shape=shape, shape_strength=s, tie_boost=tie,
                         social_cost_boost=cost)
    lo, hi = sorted((t1, t2))
    p = adoption_probability(r, k, lo, False)
    assert 0.0 <= p <= 1.0
    assert adoption_probability(r, k, hi, False) >= p
    assert adoption_probability(r, k, lo, True) >= p
    nxt = adoption_probability(r, k + 1, lo, False)
    if shape == "decreasing":
        assert nxt <= p
    elif shape == "increasing":
        assert nxt >= p
    else:
        assert nxt == p


def test_degenerate_delay_is_the_median():
    d = DelayModel(view_delay_median=3.0, effort_delay_median=7.0, dispersion=0.0)
    rng = random.Random(0)
    assert {sample_delay(d, "view", rng) for _ in range(20)} == {3.0}
    assert {sample_delay(d, "effort", rng) for _ in range(20)} == {7.0}


@pytest.mark.parametrize("median", [22.5, 4.42e4])
def test_lognormal_delay_median(median):
    d = DelayModel(view_delay_median=median, effort_delay_median=median, dispersion=0.5)
    rng = random.Random(11)
    xs = [sample_delay(d, "view", rng) for _ in range(100_000)]
    assert min(xs) > 0
    assert statistics.median(xs) == pytest.approx(median, rel=0.05)


def test_unknown_delay_kind():
    with pytest.raises(ValueError):
        sample_delay(DelayModel(), "nap", random.Random(0))


def test_spec_validation():
    with pytest.raises(ValueError):
        Nomination(fanout=0)
    with pytest.raises(ValueError):
        Volunteer(max_assignments=0)
    with pytest.raises(ValueError):
        ExposureResponse(shape="sigmoid")
    with pytest.raises(ValueError):
        DelayModel(view_delay_median=0)


def test_shipped_defaults():
    d = default_protocols()
    assert set(d) == {"transient_copy", "persistent_copy", "nomination", "volunteer"}
    assert d["transient_copy"].visibility_window < d["persistent_copy"].visibility_window
    assert d["transient_copy"].response.shape == "decreasing"
    assert d["nomination"].response.shape == "decreasing"
    assert d["persistent_copy"].response.shape == "increasing"
    assert d["volunteer"].response.shape == "increasing"
    medians = {k: v.delays.view_delay_median + v.delays.effort_delay_median for k, v in d.items()}
    assert medians["transient_copy"] == pytest.approx(22.5)
    assert medians["persistent_copy"] == pytest.approx(153.0)


def test_protocol_dict_round_trip():
    for spec in default_protocols().values():
        assert protocol_from_dict(protocol_to_dict(spec)) == spec
    tuned = with_base_rate(default_protocols()["volunteer"], 0.123)
    assert protocol_from_dict(protocol_to_dict(tuned)).response.base_rate == 0.123


def test_protocol_dict_errors_name_the_field():
    with pytest.raises(ConfigError) as e:
        protocol_from_dict({"kind": "telepathy"}, "protocols.x")
    assert e.value.field == "protocols.x.kind"
    with pytest.raises(ConfigError) as e:
        protocol_from_dict({"kind": "nomination", "fanout": 2, "colour": 1}, "protocols.n")
    assert e.value.field == "protocols.n.colour"
