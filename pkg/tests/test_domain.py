import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from blendmarket.domain import (
    Bid,
    GNode,
    GNodeKind,
    MarketScenario,
    Network,
    Node,
    Offer,
    avoided_emissions,
    calorific_value,
    carbon_intensity,
    validate_network,
    validate_scenario,
)
from helpers import node, pipe, two_node

fractions = st.floats(0.0, 1.0, allow_nan=False)


def test_calorific_value_examples():
    assert calorific_value(0.0) == 44.2
    assert calorific_value(1.0) == 141.8
    assert calorific_value(0.1) == pytest.approx(0.1 * 141.8 + 0.9 * 44.2, rel=1e-15)
    assert calorific_value(0.1) == pytest.approx(53.96)


@pytest.mark.parametrize("bad", [-0.01, 1.01, float("nan")])
def test_fraction_out_of_range_rejected(bad):
    with pytest.raises(ValueError):
        calorific_value(bad)
    with pytest.raises(ValueError):
        carbon_intensity(bad)


def test_avoided_emissions_examples():
    assert avoided_emissions(37.0, 0.1) == pytest.approx(37 * 0.1 * (141.8 / 44.2) * 2.75, rel=1e-14)
    assert avoided_emissions(37.0, 0.1) == pytest.approx(32.64, abs=5e-3)
    assert avoided_emissions(100.0, 0.0) == 0.0
    assert avoided_emissions(0.0, 0.5) == 0.0
    with pytest.raises(ValueError):
        avoided_emissions(-1.0, 0.1)


def test_carbon_intensity_examples():
    assert carbon_intensity(0.0) == pytest.approx(0.0622, rel=5e-3)
    assert carbon_intensity(0.1) == pytest.approx(0.0459, abs=2e-4)
    assert carbon_intensity(1.0) == 0.0


@given(fractions, fractions)
def test_calorific_value_affine_and_increasing(a, b):
    lo, hi = sorted((a, b))
    if hi - lo > 1e-12:
        assert calorific_value(hi) > calorific_value(lo)
    mid = 0.5 * (lo + hi)
    assert calorific_value(mid) == pytest.approx(0.5 * (calorific_value(lo) + calorific_value(hi)))


@given(fractions, fractions)
def test_carbon_intensity_decreasing(a, b):
    lo, hi = sorted((a, b))
    if hi - lo > 1e-9:
        assert carbon_intensity(hi) < carbon_intensity(lo)


@given(st.floats(0, 1e4), fractions, st.floats(0, 100))
def test_avoided_emissions_scales_linearly(d, g, k):
    assert avoided_emissions(k * d, g) == pytest.approx(k * avoided_emissions(d, g), rel=1e-12, abs=1e-12)


def test_bundled_8node_is_valid(net8):
    rep = validate_network(net8)
    assert rep.ok, str(rep)
    assert len(net8.compressors) == 3
    assert [n.id for n in net8.slack_nodes] == ["J1"]


def test_single_node_without_slack():
    net = Network(nodes=(Node("A", 3e6, 6e6),))
    assert validate_network(net).codes == {"no_slack"}


def test_dangling_pipe_endpoint():
    net = Network(nodes=(node("A", slack=4.0), node("B")), pipes=(pipe("P1", "A", "Z"),))
    rep = validate_network(net)
    assert "dangling_id" in rep.codes
    assert any("Z" in i.message for i in rep.issues)


def test_disconnected_network():
    net = Network(nodes=(node("A", slack=4.0), node("B"), node("C")), pipes=(pipe("P1", "A", "B"),))
    assert "disconnected" in validate_network(net).codes


def test_consumer_unreachable_against_orientation():
    net = Network(
        nodes=(node("A", slack=4.0), node("B")),
        pipes=(pipe("P1", "B", "A"),),
        gnodes=(GNode("S", "A", GNodeKind.NG_SUPPLIER), GNode("D", "B", GNodeKind.FLEXIBLE_CONSUMER)),
    )
    assert "unreachable" in validate_network(net).codes


def test_adjacency_consistent(net8):
    for k, e in enumerate(net8.edges):
        for n in net8.nodes:
            assert (k in net8.incoming(n.id)) == (e.to_node == n.id)
            assert (k in net8.outgoing(n.id)) == (e.from_node == n.id)


def test_scenario_rejects_negative_values():
    with pytest.raises(ValueError):
        MarketScenario({"S": Offer(-0.1)})
    with pytest.raises(ValueError):
        MarketScenario(bids={"D": Bid(0.01, -1.0)})
    with pytest.raises(ValueError):
        MarketScenario(co2_incentive={"D": -0.01})


def test_validate_scenario_names_unknown_gnode():
    net = two_node()
    sc = MarketScenario({"S": Offer(0.2)}, {"D": Bid(0.02, 10.0), "GHOST": Bid(0.02, 10.0)})
    rep = validate_scenario(net, sc)
    assert "unknown_gnode" in rep.codes
    assert any("GHOST" in i.message for i in rep.issues)


def test_with_incentive_sets_every_consumer():
    sc = MarketScenario({"S": Offer(0.2)}, {"D": Bid(0.02, 10.0)}, {}, {"D": 0.0})
    assert sc.with_incentive(0.155).incentive("D") == 0.155
    assert sc.incentive("D") == 0.0


def test_default_constants():
    sc = MarketScenario()
    gc = sc.constants
    assert gc.zeta == 44.0 / 16.0
    assert (gc.r_h2, gc.r_ng, gc.a_h2, gc.a_ng) == (141.8, 44.2, 1090.0, 370.0)
    assert (gc.k_comp, gc.m_nom) == (22.18, 0.325)
    assert sc.compressor_cost_rate == pytest.approx(0.13 / 3600)
    assert math.isclose(gc.co2_per_kg_h2, 141.8 / 44.2 * 2.75)
