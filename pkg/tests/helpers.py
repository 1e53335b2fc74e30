"""Small network builders and scenario generators shared by the tests."""

import math

import numpy as np

from blendmarket.domain import (
    Bid,
    Compressor,
    GNode,
    GNodeKind,
    MarketScenario,
    Network,
    Node,
    Offer,
    Pipe,
)
from blendmarket.io import load_network, load_scenario
from blendmarket.nlp import assemble
from blendmarket.solver import solve

MPA = 1e6


def pipe(pid, a, b, length=5000.0, diameter=0.5, friction=0.01):
    return Pipe(pid, a, b, friction, length, diameter, math.pi * diameter**2 / 4)


def node(nid, slack=None, pmin=3.0, pmax=6.0, gmax=0.1):
    return Node(nid, pmin * MPA, pmax * MPA, 0.0, gmax, None if slack is None else slack * MPA)


def two_node(length=20000.0, diameter=0.5):
    """Slack supplier node A feeding a flexible consumer at B through one pipe."""
    return Network(
        nodes=(node("A", slack=4.0), node("B")),
        pipes=(pipe("P1", "A", "B", length, diameter),),
        gnodes=(GNode("S", "A", GNodeKind.NG_SUPPLIER), GNode("D", "B", GNodeKind.FLEXIBLE_CONSUMER)),
    )


def two_node_scenario(price=0.2, bid=0.019, max_energy=2000.0, co2=0.0):
    return MarketScenario({"S": Offer(price)}, {"D": Bid(bid, max_energy)}, {}, {"D": co2})


def chain(n=3, length=10000.0, diameter=0.5):
    """Linear chain N1 -> N2 -> ... with one supplier at N1 and consumers downstream."""
    ids = [f"N{k}" for k in range(1, n + 1)]
    nodes = tuple(node(i, slack=4.0 if k == 0 else None) for k, i in enumerate(ids))
    pipes = tuple(pipe(f"P{k}", ids[k - 1], ids[k], length, diameter) for k in range(1, n))
    gnodes = (GNode("S", ids[0], GNodeKind.NG_SUPPLIER),) + tuple(
        GNode(f"D{i}", i, GNodeKind.FLEXIBLE_CONSUMER) for i in ids[1:]
    )
    return Network(nodes, pipes, (), gnodes)


def chain_scenario(net, price=0.2, bid=0.019, max_energy=500.0):
    bids = {g.id: Bid(bid, max_energy) for g in net.consumers}
    return MarketScenario({"S": Offer(price)}, bids, {}, {g: 0.0 for g in bids})


def compressor_pair():
    """Slack node feeding a consumer through a compressor and a pipe."""
    return Network(
        nodes=(node("A", slack=4.0), node("B"), node("C")),
        pipes=(pipe("P1", "B", "C", 30000.0, 0.4),),
        compressors=(Compressor("C1", "A", "B", 1.4),),
        gnodes=(GNode("S", "A", GNodeKind.NG_SUPPLIER), GNode("D", "C", GNodeKind.FLEXIBLE_CONSUMER)),
    )


def random_scenario(net, rng, name=""):
    """Offers, bids and a uniform incentive drawn from wide but plausible ranges."""
    offers = {}
    for g in net.gnodes_of_kind(GNodeKind.NG_SUPPLIER):
        cap = None if rng.random() < 0.7 else rng.uniform(100, 400)
        offers[g.id] = Offer(rng.uniform(0.15, 0.25), cap)
    for g in net.gnodes_of_kind(GNodeKind.H2_SUPPLIER):
        cap = None if rng.random() < 0.7 else rng.uniform(2, 30)
        offers[g.id] = Offer(rng.uniform(0.5, 1.0), cap)
    bids = {g.id: Bid(rng.uniform(0.005, 0.03), rng.uniform(500, 2500)) for g in net.consumers}
    co2 = rng.uniform(0.0, 0.2)
    return MarketScenario(offers, bids, {}, {g: co2 for g in bids}, name=name)


def random_cases(count=20, seed=7):
    """(label, network, scenario) triples spread over the bundled networks."""
    rng = np.random.default_rng(seed)
    nets = [load_network(n) for n in ("8node.net", "40node.net", "40node_ci.net")]
    out = []
    for k in range(count):
        net = nets[k % len(nets)]
        out.append((f"{net.name or 'net'}#{k}", net, random_scenario(net, rng)))
    return out


def solve_files(net_name, scn_name, opts=None):
    net = load_network(net_name)
    sc = load_scenario(scn_name, net)
    return solve(assemble(net, sc), opts)


def random_state(p, rng, flow=150.0, supply=200.0):
    """Point inside the variable box of ``p`` (data units), duals drawn at random."""
    D = p.data
    u = D.units
    x = np.zeros(p.n)
    v = p.split(x)
    v["P"][:] = rng.uniform(D.p_min, D.p_max)
    v["phi"][:] = rng.uniform(0.0, flow / u.flow, D.n_edges)
    v["gamma_node"][:] = rng.uniform(D.gamma_min, D.gamma_max)
    v["gamma_edge"][:] = rng.uniform(0.0, 0.1, D.n_edges)
    v["alpha"][:] = rng.uniform(1.0, D.alpha_max)
    v["s_ng"][:] = rng.uniform(0.0, supply / u.flow, len(D.ng_node))
    v["s_h2"][:] = rng.uniform(0.0, 0.1 * supply / u.flow, len(D.h2_node))
    v["d"][:] = rng.uniform(0.0, flow / u.flow, len(D.cons_node))
    y = rng.normal(size=p.m_eq)
    z = rng.uniform(0.0, 1.0, p.m_ineq)
    return x, y, z


def fd_jacobian(fun, x, h=1e-6):
    f0 = np.asarray(fun(x))
    J = np.zeros((f0.size, x.size))
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h * max(1.0, abs(x[k]))
        J[:, k] = (np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * e[k])
    return J


def rel_err(approx, exact):
    """Largest entrywise error relative to max(|exact|, 1)."""
    a, b = np.asarray(approx, float), np.asarray(exact, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1.0), initial=0.0))


def fd_price(net, sc, node_id, delta, gamma=0.0):
    """-dJ_EV/d(withdrawal) at ``node_id`` by central differences.

    The forced withdrawal has hydrogen fraction ``gamma``; with gamma = 0 the
    result estimates the NG nodal price, otherwise the blend price.
    """
    p = assemble(net, sc)
    j = net.node_index[node_id]
    vals = []
    for s in (+1.0, -1.0):
        ng = np.zeros(len(net.nodes))
        h2 = np.zeros(len(net.nodes))
        ng[j] = s * delta * (1.0 - gamma)
        h2[j] = s * delta * gamma
        sol = solve(p.with_balance_shift(ng, h2))
        assert sol.ok, sol.status
        vals.append(sol.objective.j_ev)
    return -(vals[0] - vals[1]) / (2.0 * delta)
