import dataclasses

import numpy as np
import pytest

from blendmarket.nlp import assemble
from blendmarket.pricing import nodal_prices
from blendmarket.solver import solve
from blendmarket.verify import (
    VerificationError,
    check_complementarity_and_signs,
    check_credit_adequacy,
    check_feasibility,
    check_price_flow_alignment,
    check_sosc_pipe_signs,
    check_stationarity,
    stationarity_residuals,
    verify_solution,
)
from helpers import chain, chain_scenario, two_node, two_node_scenario

TOL = 1e-6


def _mutate(sol, x=None, y=None, z=None):
    return dataclasses.replace(
        sol,
        x=sol.x.copy() if x is None else x,
        y=sol.y.copy() if y is None else y,
        z=sol.z.copy() if z is None else z,
    )


def _row(p, block, k):
    return p.eq[block].start + k


@pytest.fixture(scope="module")
def chain_sol():
    net = chain(3)
    return solve(assemble(net, chain_scenario(net, max_energy=2000.0)))


def test_converged_solves_accepted_at_ten_times_tolerance(sol8_s1, sol8_s2, sol40, chain_sol):
    for sol in (sol8_s1, sol8_s2, sol40, chain_sol):
        rep = verify_solution(sol, tol=1e-7, sign_tol=1e-7)
        assert rep.first_order_ok, [(c.name, c.residual, c.location) for c in rep.failures]
    assert verify_solution(chain_sol).ok


def test_stationarity_detects_dual_perturbation(sol8_s2):
    p = sol8_s2.problem
    delta = 1e-3
    base = dict(stationarity_residuals(sol8_s2)["s_ng"])["S1"]
    y = sol8_s2.y.copy()
    y[_row(p, "ng_balance", p.network.node_index["J1"])] += delta
    bad = _mutate(sol8_s2, y=y)
    grown = dict(stationarity_residuals(bad)["s_ng"])["S1"]
    assert abs(grown - base) == pytest.approx(delta / sol8_s2.basis.c0, rel=1e-9)
    rep = check_stationarity(bad)
    assert not rep.ok
    assert rep.checks["stationarity"].location


def test_feasibility_detects_primal_corruption(sol8_s2):
    p = sol8_s2.problem
    x = sol8_s2.x.copy()
    x[p.var["P"].start + p.network.node_index["J4"]] *= 1.01
    rep = check_feasibility(_mutate(sol8_s2, x=x))
    assert not rep.ok
    assert "[" in rep.checks["primal_feasibility"].location
    assert check_feasibility(sol8_s2).ok


def test_positive_multiplier_on_slack_row_fails_with_location(sol8_s2):
    p = sol8_s2.problem
    slack = -p.inequalities(sol8_s2.x)
    r = p.ineq["p_min"].start + int(np.argmax(slack[p.ineq["p_min"]]))
    assert slack[r] > 1e5  # pressure well above its floor
    z = sol8_s2.z.copy()
    z[r] = 1e-3
    rep = check_complementarity_and_signs(_mutate(sol8_s2, z=z))
    c = rep.checks["complementarity"]
    assert not c.passed
    assert c.location == f"p_min[{p.network.nodes[r - p.ineq['p_min'].start].id}]"


def test_negative_multiplier_fails_sign_check(sol8_s2):
    p = sol8_s2.problem
    z = sol8_s2.z.copy()
    sl = p.ineq["gamma_max"]
    k = int(np.argmax(z[sl]))
    assert z[sl][k] > 0  # the blend cap binds somewhere in this scenario
    z[sl.start + k] = -z[sl.start + k]
    rep = check_complementarity_and_signs(_mutate(sol8_s2, z=z))
    assert not rep.checks["dual_sign"].passed
    assert rep.checks["dual_sign"].location.startswith("gamma_max[")


def test_flipped_pipe_multiplier_fails_sosc(chain_sol):
    rep = check_sosc_pipe_signs(chain_sol)
    assert rep.ok and all(flowing for _, flowing, _, _ in rep.pipe_signs)
    y = chain_sol.y.copy()
    w = chain_sol.problem.eq["weymouth"]
    y[w] = -y[w]
    rep = check_sosc_pipe_signs(_mutate(chain_sol, y=y))
    assert not rep.ok
    assert rep.checks["sosc_pipe_sign"].location in ("P1", "P2")


def test_zero_flow_pipe_is_exempt_from_sign_check():
    sol = solve(assemble(two_node(), two_node_scenario(max_energy=0.0)))
    y = sol.y.copy()
    y[sol.problem.eq["weymouth"]] = 5.0
    rep = check_sosc_pipe_signs(_mutate(sol, y=y))
    assert rep.ok
    assert not rep.pipe_signs[0][1]


def test_credit_check_detects_dual_corruption(sol8_s2):
    assert check_credit_adequacy(sol8_s2, tol=1e-2).ok
    p = sol8_s2.problem
    z = sol8_s2.z.copy()
    z[p.ineq["demand_max"].start] += 1e-3
    assert not check_credit_adequacy(_mutate(sol8_s2, z=z)).ok


def test_all_ng_credit_is_trivially_adequate(sol8_s1):
    c = check_credit_adequacy(sol8_s1).checks["credit_adequacy"]
    assert c.passed and c.residual < 1e-12


def test_chain_prices_are_monotone(chain_sol):
    blend = nodal_prices(chain_sol).blend
    assert np.all(np.diff(blend) >= -TOL)
    rep = check_price_flow_alignment(chain_sol)
    assert rep.ok
    assert [m[0] for m in rep.monotonicity] == ["N2", "N3"]


def test_two_inflow_node_is_exempt_from_monotonicity(sol40):
    net = sol40.problem.network
    (edge,) = [e for e in net.edges if (e.from_node, e.to_node) == ("8", "26")]
    assert len(net.incoming("26")) == 2
    pr = nodal_prices(sol40)
    assert pr.row("26")["lambda_e"] < pr.row("8")["lambda_e"]  # price falls downstream
    rep = check_price_flow_alignment(sol40)
    assert "26" not in [m[0] for m in rep.monotonicity]
    assert edge.id in [e for e, _, _ in rep.price_flow]


def test_zero_flow_network_passes_vacuously():
    sol = solve(assemble(two_node(), two_node_scenario(max_energy=0.0)))
    rep = verify_solution(sol)
    assert rep.price_flow == [] and rep.monotonicity == []
    assert rep.checks["price_flow"].passed and rep.checks["monotonicity"].passed
    assert rep.first_order_ok


def test_zero_flow_zero_dual_residuals_vanish():
    sol = solve(assemble(two_node(), two_node_scenario(price=0.0, bid=0.0, max_energy=0.0)))
    zero = _mutate(sol, y=np.zeros_like(sol.y), z=np.zeros_like(sol.z))
    for fam, rows in stationarity_residuals(zero).items():
        assert all(r == 0.0 for _, r in rows), fam


def test_missing_duals_raise(sol8_s2):
    with pytest.raises(VerificationError):
        verify_solution(dataclasses.replace(sol8_s2, y=None))
    with pytest.raises(VerificationError):
        verify_solution(dataclasses.replace(sol8_s2, z=sol8_s2.z[:-1]))
    orphan = assemble(sol8_s2.problem.network, sol8_s2.problem.scenario)
    orphan.network = None
    with pytest.raises(VerificationError):
        check_stationarity(dataclasses.replace(sol8_s2, problem=orphan))


def test_report_serializes(sol8_s2):
    d = verify_solution(sol8_s2).as_dict()
    assert set(d["checks"]) >= {"stationarity", "primal_feasibility", "complementarity", "dual_sign",
                                "sosc_pipe_sign", "price_flow", "monotonicity", "credit_adequacy"}
    assert all(isinstance(v["passed"], bool) for v in d["checks"].values())
