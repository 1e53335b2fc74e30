"""Economic read-out of a cleared market.

Nodal blend prices, energy prices, the split of each consumer's energy price
into a revenue component and a decarbonization premium, the pass-through
credits that return the collected carbon incentive to consumers, and an
aggregate market report.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nlp import ObjectiveBreakdown
from .solver import Solution

H2_PRESENCE_TOL = 1e-6


@dataclass(frozen=True)
class NodalPrices:
    node_ids: tuple
    lambda_ng: np.ndarray  # $/kg NG
    lambda_h2: np.ndarray  # $/kg H2
    blend: np.ndarray  # $/kg blend
    energy: np.ndarray  # $/MJ
    gamma: np.ndarray
    carbon_intensity: np.ndarray  # kgCO2/MJ
    h2_supported: np.ndarray  # False where no hydrogen is present

    def row(self, node_id) -> dict:
        k = self.node_ids.index(node_id)
        return {
            "node": node_id,
            "gamma": float(self.gamma[k]),
            "lambda_ng": float(self.lambda_ng[k]),
            "lambda_h2": float(self.lambda_h2[k]) if self.h2_supported[k] else None,
            "lambda": float(self.blend[k]),
            "lambda_e": float(self.energy[k]),
            "carbon_intensity": float(self.carbon_intensity[k]),
        }


@dataclass(frozen=True)
class ConsumerPriceDecomposition:
    gnode_id: str
    node_id: str
    withdrawal: float  # kg/s
    energy: float  # MJ/s
    gamma: float
    lambda_e: float  # $/MJ at the consumer's node
    revenue_component: float  # $/MJ, lambda_e - premium
    premium: float  # $/MJ
    credit: float  # $/s
    bid_component: float  # $/MJ, bid plus demand-limit multipliers


@dataclass(frozen=True)
class PassThroughCredits:
    credits: dict  # gNode id -> $/s
    total: float  # D_PTC
    j_cem: float
    reconciled: bool

    def __iter__(self):
        # allows ``credits, d_ptc = pass_through_credits(sol)``
        yield self.credits
        yield self.total


@dataclass(frozen=True)
class MarketReport:
    objective: ObjectiveBreakdown
    total_ng: float  # kg/s delivered
    total_h2: float  # kg/s delivered
    total_energy: float  # MJ/s
    average_carbon_intensity: float  # kgCO2/MJ
    total_co2: float  # kgCO2/s
    d_ptc: float  # $/s
    reconciled: bool
    nodes: NodalPrices
    consumers: tuple
    supply_ng: float = 0.0  # kg/s injected
    supply_h2: float = 0.0
    compression_cost: float = 0.0


def _ids(sol: Solution):
    p = sol.problem
    net = p.network
    if net is None:
        n_nodes = p.data.n_nodes
        node_ids = tuple(str(k) for k in range(n_nodes))
        cons_ids = tuple(f"consumer{k}" for k in range(len(p.data.cons_node)))
    else:
        node_ids = tuple(n.id for n in net.nodes)
        cons_ids = tuple(g.id for g in net.consumers)
    return node_ids, cons_ids


def _require_optimal(sol: Solution):
    if not sol.ok:
        raise ValueError(f"solution status is {sol.status.value}, prices need an optimal solve")


def nodal_prices(sol: Solution) -> NodalPrices:
    _require_optimal(sol)
    p, D = sol.problem, sol.problem.data
    v = p.split(sol.x)
    y = sol.y
    lam_ng = np.asarray(y[p.eq["ng_balance"]], float)
    lam_h2 = np.asarray(y[p.eq["h2_balance"]], float)
    g = np.asarray(v["gamma_node"], float)
    blend = (1.0 - g) * lam_ng + g * lam_h2
    R = D.r_h2 * g + D.r_ng * (1.0 - g)
    zeta = D.co2_per_h2 * D.r_ng / D.r_h2
    node_ids, _ = _ids(sol)
    return NodalPrices(
        node_ids=node_ids,
        lambda_ng=lam_ng,
        lambda_h2=lam_h2,
        blend=blend,
        energy=blend / R,
        gamma=g,
        carbon_intensity=(1.0 - g) * zeta / R,
        h2_supported=g > H2_PRESENCE_TOL,
    )


def _decompositions(sol: Solution, prices: NodalPrices):
    p, D = sol.problem, sol.problem.data
    v = p.split(sol.x)
    z = sol.z
    n_cons = len(D.cons_node)
    chi_l = np.zeros(n_cons)
    chi_u = np.zeros(n_cons)
    chi_f = np.zeros(n_cons)
    chi_l[p.flex_idx] = z[p.ineq["demand_min"]]
    chi_u[p.flex_idx] = z[p.ineq["demand_max"]]
    chi_f[p.fixed_idx] = sol.y[p.eq["fixed_demand"]]
    node_ids, cons_ids = _ids(sol)
    out = []
    for m, j in enumerate(D.cons_node):
        g = prices.gamma[j]
        R = D.r_h2 * g + D.r_ng * (1.0 - g)
        d = float(v["d"][m])
        premium = D.cons_co2[m] * g * D.co2_per_h2 / R
        lam_e = prices.energy[j]
        out.append(
            ConsumerPriceDecomposition(
                gnode_id=cons_ids[m],
                node_id=node_ids[j],
                withdrawal=d,
                energy=d * R,
                gamma=float(g),
                lambda_e=float(lam_e),
                revenue_component=float(lam_e - premium),
                premium=float(premium),
                credit=float(premium * d * R),
                bid_component=float(D.cons_bid[m] + chi_l[m] - chi_u[m] - chi_f[m]),
            )
        )
    return out


def decompose_consumer_price(sol: Solution, gnode_id: str) -> ConsumerPriceDecomposition:
    for rec in _decompositions(sol, nodal_prices(sol)):
        if rec.gnode_id == gnode_id:
            return rec
    raise KeyError(f"{gnode_id!r} is not a consumer")


def pass_through_credits(sol: Solution, rel_tol: float = 1e-6) -> PassThroughCredits:
    recs = _decompositions(sol, nodal_prices(sol))
    credits = {r.gnode_id: r.credit for r in recs}
    total = float(sum(credits.values()))
    j_cem = sol.objective.j_cem
    ok = abs(total - j_cem) <= rel_tol * max(1.0, abs(j_cem))
    return PassThroughCredits(credits, total, j_cem, ok)


def market_report(sol: Solution) -> MarketReport:
    prices = nodal_prices(sol)
    recs = _decompositions(sol, prices)
    p, D = sol.problem, sol.problem.data
    v = p.split(sol.x)
    zeta = D.co2_per_h2 * D.r_ng / D.r_h2
    d = np.asarray(v["d"], float)
    g = prices.gamma[D.cons_node]
    R = D.r_h2 * g + D.r_ng * (1.0 - g)
    energy = float(np.sum(d * R))
    co2 = float(np.sum(d * (1.0 - g) * zeta))
    obj = sol.objective
    credits = float(sum(r.credit for r in recs))
    return MarketReport(
        objective=obj,
        total_ng=float(np.sum(d * (1.0 - g))),
        total_h2=float(np.sum(d * g)),
        total_energy=energy,
        average_carbon_intensity=co2 / energy if energy > 0 else 0.0,
        total_co2=co2,
        d_ptc=credits,
        reconciled=abs(credits - obj.j_cem) <= 1e-6 * max(1.0, abs(obj.j_cem)),
        nodes=prices,
        consumers=tuple(recs),
        supply_ng=float(np.sum(v["s_ng"])),
        supply_h2=float(np.sum(v["s_h2"])),
        compression_cost=obj.j_gc,
    )
