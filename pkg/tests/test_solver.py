import dataclasses

import numpy as np
import pytest

from blendmarket.domain import Bid, GNode, GNodeKind, MarketScenario, Network, Offer
from blendmarket.io import load_network, load_scenario
from blendmarket.nlp import assemble
from blendmarket.pricing import nodal_prices
from blendmarket.solver import SolveOptions, SolveStatus, solve
from blendmarket.verify import check_complementarity_and_signs, verify_solution
from helpers import fd_price, node, two_node, two_node_scenario


def _grid_optimum(p, step):
    """Best objective over a (phi, d) grid; balance and pressure checked by hand."""
    D = p.data
    kV = D.pipe_coeff[0] * D.v_ng
    pa, pmin = D.slack_pressure[0], D.p_min[1]
    R = D.r_ng
    grid = np.arange(0.0, 120.0 + step, step)
    phi, d = np.meshgrid(grid, grid, indexing="ij")
    feasible = (np.abs(phi - d) < 0.5 * step) & (pa**2 - kV * phi**2 >= pmin**2)
    feasible &= d * R <= D.cons_max[0]
    value = D.cons_bid[0] * R * d - D.ng_price[0] * phi
    value[~feasible] = -np.inf
    k = np.unravel_index(np.argmax(value), value.shape)
    return value[k], d[k]


@pytest.mark.parametrize("max_energy", [2000.0, 5000.0])  # energy cap binds, then pressure
def test_two_node_matches_grid_oracle(max_energy):
    p = assemble(two_node(), two_node_scenario(max_energy=max_energy))
    sol = solve(p)
    assert sol.ok
    step = 0.05
    best, d_grid = _grid_optimum(p, step)
    d = sol.primal()["d"][0]
    assert abs(d - d_grid) <= step
    assert sol.objective.j_ev >= best - 1e-9
    slope = p.data.cons_bid[0] * p.data.r_ng - p.data.ng_price[0]
    assert sol.objective.j_ev - best <= slope * step


def test_scenario1_values(sol8_s1):
    assert sol8_s1.ok
    v = sol8_s1.primal()
    energy = v["d"] * sol8_s1.problem.calorific(v["gamma_node"][sol8_s1.problem.data.cons_node])
    assert np.allclose(energy, 2000.0, rtol=1e-6)
    assert np.all(np.abs(v["gamma_node"]) <= 10 * SolveOptions().kkt_tolerance)
    assert sol8_s1.objective.j_ev == pytest.approx(86.85, abs=0.01)


def _empty_cases():
    net8 = load_network("8node.net")
    sc8 = load_scenario("scenario2.mkt", net8)
    fixed = Network(
        nodes=(node("A", slack=4.0), node("B")),
        pipes=two_node().pipes,
        gnodes=(GNode("S", "A", GNodeKind.NG_SUPPLIER), GNode("F", "B", GNodeKind.FIXED_CONSUMER)),
    )
    suppliers_only = dataclasses.replace(net8, gnodes=tuple(g for g in net8.gnodes if g.kind.is_supplier))
    return {
        "two_node_zero_cap": (two_node(), two_node_scenario(max_energy=0.0)),
        "two_node_fixed_zero": (fixed, MarketScenario({"S": Offer(0.2)}, {}, {"F": 0.0})),
        "8node_zero_cap": (net8, dataclasses.replace(
            sc8, bids={g: Bid(b.price, 0.0) for g, b in sc8.bids.items()})),
        "8node_no_consumers": (suppliers_only, dataclasses.replace(sc8, bids={}, co2_incentive={})),
    }


@pytest.mark.parametrize("case", sorted(_empty_cases()))
def test_zero_demand_gives_zero_flow(case):
    net, sc = _empty_cases()[case]
    sol = solve(assemble(net, sc))
    assert sol.status is SolveStatus.OPTIMAL
    v = sol.primal()
    for block in ("phi", "s_ng", "s_h2", "d"):
        assert np.all(np.abs(v[block]) <= 1e-8), block
    assert sol.objective.j_ev == pytest.approx(0.0, abs=1e-9)
    assert verify_solution(sol).first_order_ok


def test_iteration_limit_status():
    sol = solve(assemble(two_node(), two_node_scenario()), SolveOptions(max_iterations=1))
    assert sol.status is SolveStatus.ITERATION_LIMIT
    assert not sol.ok
    assert len(sol.history) == 2
    assert sol.kkt_residual == sol.history[-1]["kkt"]


def test_infeasible_fixed_demand():
    net = Network(
        nodes=(node("A", slack=4.0), node("B")),
        pipes=two_node(length=200000.0, diameter=0.2).pipes,
        gnodes=(GNode("S", "A", GNodeKind.NG_SUPPLIER), GNode("F", "B", GNodeKind.FIXED_CONSUMER)),
    )
    sol = solve(assemble(net, MarketScenario({"S": Offer(0.2)}, {}, {"F": 1e5})))
    assert sol.status is SolveStatus.INFEASIBLE


def test_uncongested_ng_price_is_offer(sol8_s1):
    assert np.allclose(nodal_prices(sol8_s1).lambda_ng, 0.20, rtol=1e-6)


def test_inactive_rows_have_zero_multipliers(sol8_s2, sol40):
    for sol in (sol8_s2, sol40):
        p = sol.problem
        slack = -p.inequalities(sol.x)
        scale = np.maximum(1.0, np.abs([r.limit for r in p.ineq_rows]))
        far = slack > 1e-3 * scale
        assert far.any()
        assert np.all(np.abs(sol.z[far]) * slack[far] <= 1e-6 * scale[far])
        assert check_complementarity_and_signs(sol).ok


def test_multiplier_signs(sol8_s1, sol8_s2, sol40):
    for sol in (sol8_s1, sol8_s2, sol40):
        assert np.all(sol.z >= -1e-8)
        for name, vals in sol.duals().items():
            assert np.all(np.isfinite(vals)), name


@pytest.mark.parametrize("node_id", ["J3", "J4", "J7"])
def test_price_matches_perturbation(node_id, sol8_s2):
    net = sol8_s2.problem.network
    sc = load_scenario("scenario2.mkt", net)
    lam = nodal_prices(sol8_s2).lambda_ng[net.node_index[node_id]]
    assert fd_price(net, sc, node_id, 1e-3) == pytest.approx(lam, rel=1e-2)


def test_duals_have_one_entry_per_row(sol40):
    d = sol40.duals()
    D = sol40.problem.data
    assert len(d["lambda_ng"]) == len(d["lambda_h2"]) == D.n_nodes
    assert len(d["mu"]) == len(D.pipe_coeff)
    assert len(d["chi_ng_u"]) == len(D.ng_node)


def test_solve_is_deterministic():
    net = load_network("8node.net")
    p = assemble(net, load_scenario("scenario2.mkt", net))
    a, b = solve(p), solve(p)
    assert a.iterations == b.iterations
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y) and np.array_equal(a.z, b.z)
    assert [h["kkt"] for h in a.history] == [h["kkt"] for h in b.history]


@pytest.mark.parametrize(
    "kwargs", [{"kkt_tolerance": 0.0}, {"kkt_tolerance": -1e-8}, {"max_iterations": 0}, {"initialization": "cold"}]
)
def test_options_validation(kwargs):
    with pytest.raises(ValueError):
        SolveOptions(**kwargs)
