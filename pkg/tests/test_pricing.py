import dataclasses

import numpy as np
import pytest

from blendmarket.io import load_scenario
from blendmarket.nlp import assemble
from blendmarket.pricing import (
    decompose_consumer_price,
    market_report,
    nodal_prices,
    pass_through_credits,
)
from blendmarket.solver import SolveOptions, solve
from helpers import two_node, two_node_scenario

R_NG, R_H2 = 44.2, 141.8


def _with_state(sol, node_id, gamma, lam_ng, lam_h2, scenario=None):
    """Copy of ``sol`` with one node's concentration and duals overwritten."""
    p = sol.problem if scenario is None else assemble(sol.problem.network, scenario)
    j = p.network.node_index[node_id]
    x, y = sol.x.copy(), sol.y.copy()
    x[p.var["gamma_node"].start + j] = gamma
    y[p.eq["ng_balance"].start + j] = lam_ng
    y[p.eq["h2_balance"].start + j] = lam_h2
    return dataclasses.replace(sol, problem=p, x=x, y=y)


def _all_solves(sol8_s1, sol8_s2, sol40, sol40_ci):
    return (sol8_s1, sol8_s2, sol40) + tuple(sol40_ci)


def test_price_identities_hold(sol8_s1, sol8_s2, sol40, sol40_ci):
    for sol in _all_solves(sol8_s1, sol8_s2, sol40, sol40_ci):
        pr = nodal_prices(sol)
        g = pr.gamma
        assert np.array_equal(pr.blend, (1 - g) * pr.lambda_ng + g * pr.lambda_h2)
        assert np.array_equal(pr.energy, pr.blend / (R_H2 * g + R_NG * (1 - g)))
        for rec in market_report(sol).consumers:
            assert rec.lambda_e == pytest.approx(rec.revenue_component + rec.premium, rel=1e-15, abs=0)


def test_table_point_blend_and_energy_price(sol8_s2):
    pr = nodal_prices(_with_state(sol8_s2, "J3", 0.1, 0.20, 0.94)).row("J3")
    assert pr["lambda"] == pytest.approx(0.9 * 0.20 + 0.1 * 0.94, rel=1e-12)
    assert pr["lambda"] == pytest.approx(0.274, abs=5e-4)
    assert pr["lambda_e"] == pytest.approx(0.274 / 53.96, rel=1e-12)
    assert pr["lambda_e"] == pytest.approx(0.00508, abs=1e-5)


def test_ng_only_energy_price(sol8_s1):
    pr = nodal_prices(sol8_s1)
    assert np.allclose(pr.energy, 0.20 / R_NG, rtol=1e-6)
    assert pr.energy[0] == pytest.approx(0.004525, abs=1e-6)
    assert not pr.h2_supported.any()
    assert pr.row("J1")["lambda_h2"] is None


@pytest.mark.parametrize("gamma", [0.0, 0.03, 0.1, 0.5, 1.0])
def test_equal_component_prices_give_same_blend_price(sol8_s2, gamma):
    assert nodal_prices(_with_state(sol8_s2, "J4", gamma, 0.31, 0.31)).row("J4")["lambda"] == pytest.approx(0.31, rel=1e-14)


@pytest.mark.parametrize("incentive, expected", [(0.055, 8.99e-4), (0.155, 2.53e-3)])
def test_premium_table_values(sol8_s2, incentive, expected):
    net = sol8_s2.problem.network
    sc = load_scenario("scenario2.mkt", net).with_incentive(incentive)
    sol = _with_state(sol8_s2, "J3", 0.1, 0.20, 0.94, scenario=sc)
    rec = decompose_consumer_price(sol, "D1")
    assert rec.node_id == "J3"
    assert rec.premium == pytest.approx(expected, rel=1e-2)
    assert rec.premium == pytest.approx(incentive * 0.1 * (R_H2 / R_NG) * 2.75 / 53.96, rel=1e-12)


def test_premium_vanishes_without_incentive_or_hydrogen(sol8_s1, sol8_s2):
    for rec in market_report(sol8_s1).consumers:
        assert rec.premium == 0.0 and rec.credit == 0.0
    net = sol8_s2.problem.network
    sol = _with_state(sol8_s2, "J3", 0.1, 0.2, 0.9, scenario=load_scenario("scenario2.mkt", net).with_incentive(0.0))
    assert decompose_consumer_price(sol, "D1").premium == 0.0
    sol = _with_state(sol8_s2, "J3", 0.0, 0.2, 0.9)
    assert decompose_consumer_price(sol, "D1").premium == 0.0


def test_credit_equals_incentive_times_energy(sol8_s2, sol40, sol40_ci):
    for sol in (sol8_s2, sol40) + tuple(sol40_ci):
        D = sol.problem.data
        for m, rec in enumerate(market_report(sol).consumers):
            assert rec.credit == pytest.approx(D.cons_co2[m] * rec.energy * rec.gamma * (R_H2 / R_NG) * 2.75 / (
                R_H2 * rec.gamma + R_NG * (1 - rec.gamma)), rel=1e-12, abs=1e-15)
            # with c the incentive per kg of avoided CO2, the credit is c times avoided emissions
            avoided = rec.withdrawal * rec.gamma * (R_H2 / R_NG) * 2.75
            assert rec.credit == pytest.approx(D.cons_co2[m] * avoided, rel=1e-12, abs=1e-15)


def test_scenario2_credits_reconcile(sol8_s2):
    credits, total = pass_through_credits(sol8_s2)
    assert set(credits) == {"D1", "D2", "D3"}
    assert total == pytest.approx(3.87, rel=1e-2)
    assert total == pytest.approx(sol8_s2.objective.j_cem, rel=1e-6)
    assert pass_through_credits(sol8_s2).reconciled


def test_all_ng_solution_has_no_credits(sol8_s1):
    ptc = pass_through_credits(sol8_s1)
    assert ptc.total == 0.0 and all(v == 0.0 for v in ptc.credits.values())
    assert ptc.reconciled


def test_co2_totals(sol8_s1, sol8_s2):
    r1, r2 = market_report(sol8_s1), market_report(sol8_s2)
    assert r1.total_co2 == pytest.approx(373.0, abs=1.5)
    assert r2.total_co2 == pytest.approx(303.0, abs=1.5)
    assert r1.total_co2 == pytest.approx(r1.total_ng * 2.75, rel=1e-12)
    assert r2.average_carbon_intensity == pytest.approx(r2.total_co2 / r2.total_energy, rel=1e-14)
    assert r2.total_energy == pytest.approx(6000.0, rel=1e-6)


def test_empty_market_report_is_zero():
    sol = solve(assemble(two_node(), two_node_scenario(max_energy=0.0)))
    rep = market_report(sol)
    assert rep.total_energy == rep.total_co2 == rep.total_ng == rep.total_h2 == 0.0
    assert rep.average_carbon_intensity == 0.0 and rep.d_ptc == 0.0


def test_marginal_consumer_price_equals_bid():
    # the pressure floor, not the consumer's own limit, caps the withdrawal
    sol = solve(assemble(two_node(), two_node_scenario(bid=0.019, max_energy=5000.0)))
    rec = decompose_consumer_price(sol, "D")
    assert 0.0 < rec.energy < 5000.0
    assert rec.lambda_e == pytest.approx(0.019, rel=1e-6)
    assert rec.bid_component == pytest.approx(rec.lambda_e, rel=1e-6)


def test_non_optimal_solution_rejected():
    sol = solve(assemble(two_node(), two_node_scenario()), SolveOptions(max_iterations=1))
    for fn in (nodal_prices, market_report, pass_through_credits):
        with pytest.raises(ValueError):
            fn(sol)
    with pytest.raises(KeyError):
        decompose_consumer_price(solve(assemble(two_node(), two_node_scenario())), "S")
