"""Market-clearing nonlinear program: indexing, objective, constraints, derivatives.

The program maximizes economic value J_EV = J_MR + J_CEM - J_GC.  Evaluators
work on a flat variable vector laid out in blocks::

    P | phi | gamma_node | gamma_edge | alpha | s_ng | s_h2 | d

Equality rows (residual = 0)::

    weymouth | ng_balance | h2_balance | continuity | slack | compressor | fixed_demand

Inequality rows are stored as g(x) <= 0, one row per one-sided limit, in the
same orientation as they are adjoined to the Lagrangian
L = -J_EV + y.c(x) + z.g(x) with z >= 0.

All coefficients live in a :class:`ProblemData`, which may hold SI data or
non-dimensional data; the evaluators do not care which.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .domain import (
    GNodeKind,
    MarketScenario,
    Network,
    NetworkValidationError,
    validate_network,
    validate_scenario,
)

VAR_BLOCKS = ("P", "phi", "gamma_node", "gamma_edge", "alpha", "s_ng", "s_h2", "d")
EQ_BLOCKS = (
    "weymouth",
    "ng_balance",
    "h2_balance",
    "continuity",
    "slack",
    "compressor",
    "fixed_demand",
)
INEQ_BLOCKS = (
    "p_min",
    "gamma_min",
    "gamma_max",
    "discharge",
    "alpha_min",
    "alpha_max",
    "s_ng_min",
    "s_ng_max",
    "s_h2_min",
    "s_h2_max",
    "demand_min",
    "demand_max",
    "flow_min",
)


@dataclass(frozen=True)
class Units:
    """Size of one data unit expressed in SI (all ones for SI data)."""

    pressure: float = 1.0  # Pa
    flow: float = 1.0  # kg/s
    energy: float = 1.0  # MJ/kg
    price: float = 1.0  # $/kg
    length: float = 1.0  # m
    area: float = 1.0  # m^2

    @property
    def objective(self) -> float:
        return self.price * self.flow

    @property
    def energy_flow(self) -> float:
        return self.flow * self.energy


@dataclass(frozen=True)
class ProblemData:
    """Numeric coefficients of the program in one consistent unit system."""

    n_nodes: int
    edge_from: np.ndarray
    edge_to: np.ndarray
    n_pipes: int
    pipe_coeff: np.ndarray  # Weymouth coefficient multiplying V(gamma) phi^2
    v_h2: float
    v_ng: float
    p_min: np.ndarray
    p_max: np.ndarray
    gamma_min: np.ndarray
    gamma_max: np.ndarray
    slack_node: np.ndarray
    slack_pressure: np.ndarray
    alpha_max: np.ndarray
    ng_node: np.ndarray
    ng_price: np.ndarray
    ng_max: np.ndarray  # inf where unbounded
    h2_node: np.ndarray
    h2_price: np.ndarray
    h2_max: np.ndarray
    cons_node: np.ndarray
    cons_fixed: np.ndarray  # bool
    cons_bid: np.ndarray  # 0 for fixed consumers
    cons_max: np.ndarray  # max energy (flexible) or fixed energy
    cons_co2: np.ndarray
    r_h2: float
    r_ng: float
    co2_per_h2: float
    comp_cost: float  # eta * K
    m_nom: float
    units: Units = field(default_factory=Units)
    ng_balance_shift: Optional[np.ndarray] = None  # forced extra NG withdrawal per node
    h2_balance_shift: Optional[np.ndarray] = None

    @property
    def n_edges(self) -> int:
        return len(self.edge_from)

    @property
    def n_comp(self) -> int:
        return self.n_edges - self.n_pipes

    @property
    def comp_from(self):
        return self.edge_from[self.n_pipes :]

    @property
    def comp_to(self):
        return self.edge_to[self.n_pipes :]


def problem_data(net: Network, scenario: MarketScenario) -> ProblemData:
    """Collect SI coefficients for ``net`` under ``scenario``."""
    rep = validate_network(net)
    rep.issues.extend(validate_scenario(net, scenario).issues)
    if not rep.ok:
        raise NetworkValidationError(rep)
    idx = net.node_index
    gc = scenario.constants
    ng = net.gnodes_of_kind(GNodeKind.NG_SUPPLIER)
    h2 = net.gnodes_of_kind(GNodeKind.H2_SUPPLIER)
    cons = net.consumers

    def maxsup(g):
        v = scenario.offers[g.id].max_supply
        return np.inf if v is None else v

    fixed = np.array([g.kind is GNodeKind.FIXED_CONSUMER for g in cons], dtype=bool)
    return ProblemData(
        n_nodes=len(net.nodes),
        edge_from=np.array([idx[e.from_node] for e in net.edges], dtype=int),
        edge_to=np.array([idx[e.to_node] for e in net.edges], dtype=int),
        n_pipes=len(net.pipes),
        pipe_coeff=np.array([p.resistance for p in net.pipes], dtype=float),
        v_h2=gc.a_h2**2,
        v_ng=gc.a_ng**2,
        p_min=np.array([n.min_pressure for n in net.nodes], dtype=float),
        p_max=np.array([n.max_pressure for n in net.nodes], dtype=float),
        gamma_min=np.array([n.min_h2_fraction for n in net.nodes], dtype=float),
        gamma_max=np.array([n.max_h2_fraction for n in net.nodes], dtype=float),
        slack_node=np.array([idx[n.id] for n in net.slack_nodes], dtype=int),
        slack_pressure=np.array([n.slack_pressure for n in net.slack_nodes], dtype=float),
        alpha_max=np.array([c.max_boost for c in net.compressors], dtype=float),
        ng_node=np.array([idx[g.physical_node] for g in ng], dtype=int),
        ng_price=np.array([scenario.offers[g.id].price for g in ng], dtype=float),
        ng_max=np.array([maxsup(g) for g in ng], dtype=float),
        h2_node=np.array([idx[g.physical_node] for g in h2], dtype=int),
        h2_price=np.array([scenario.offers[g.id].price for g in h2], dtype=float),
        h2_max=np.array([maxsup(g) for g in h2], dtype=float),
        cons_node=np.array([idx[g.physical_node] for g in cons], dtype=int),
        cons_fixed=fixed,
        cons_bid=np.array(
            [0.0 if f else scenario.bids[g.id].price for g, f in zip(cons, fixed)], dtype=float
        ),
        cons_max=np.array(
            [
                scenario.fixed_demands[g.id] if f else scenario.bids[g.id].max_energy
                for g, f in zip(cons, fixed)
            ],
            dtype=float,
        ),
        cons_co2=np.array([scenario.incentive(g.id) for g in cons], dtype=float),
        r_h2=gc.r_h2,
        r_ng=gc.r_ng,
        co2_per_h2=gc.co2_per_kg_h2,
        comp_cost=scenario.compressor_cost_rate * gc.k_comp,
        m_nom=gc.m_nom,
    )


@dataclass(frozen=True)
class ObjectiveBreakdown:
    j_mr: float
    j_cem: float
    j_gc: float

    @property
    def j_ev(self) -> float:
        return self.j_mr + self.j_cem - self.j_gc

    def scaled(self, factor: float) -> "ObjectiveBreakdown":
        return ObjectiveBreakdown(self.j_mr * factor, self.j_cem * factor, self.j_gc * factor)


@dataclass(frozen=True)
class InequalityRow:
    block: str
    kind: str  # "bound" or "general"
    var: int = -1  # bound rows: variable index
    func: int = -1  # general rows: general-function index
    side: str = "upper"  # "lower" means g = limit - value, "upper" means g = value - limit
    limit: float = 0.0


def _blocks(sizes: dict) -> dict:
    out, k = {}, 0
    for name, size in sizes.items():
        out[name] = slice(k, k + size)
        k += size
    return out


def _sym(rows, cols, vals, n):
    """Symmetric sparse matrix from entries given once per unordered pair."""
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    off = rows != cols
    r = np.concatenate([rows, cols[off]])
    c = np.concatenate([cols, rows[off]])
    v = np.concatenate([vals, vals[off]])
    return sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()


class NlpProblem:
    """Indexed nonlinear program built from a :class:`ProblemData`.

    Optionally keeps a reference to the network and scenario it came from.
    """

    def __init__(self, data: ProblemData, network: Network | None = None,
                 scenario: MarketScenario | None = None):
        self.data = data
        self.network = network
        self.scenario = scenario
        D = data
        nV, nE, nC = D.n_nodes, D.n_edges, D.n_comp
        self.var = _blocks(
            {
                "P": nV,
                "phi": nE,
                "gamma_node": nV,
                "gamma_edge": nE,
                "alpha": nC,
                "s_ng": len(D.ng_node),
                "s_h2": len(D.h2_node),
                "d": len(D.cons_node),
            }
        )
        self.n = self.var["d"].stop
        self.eq = _blocks(
            {
                "weymouth": D.n_pipes,
                "ng_balance": nV,
                "h2_balance": nV,
                "continuity": nE,
                "slack": len(D.slack_node),
                "compressor": nC,
                "fixed_demand": int(D.cons_fixed.sum()),
            }
        )
        self.m_eq = self.eq["fixed_demand"].stop
        self.fixed_idx = np.flatnonzero(D.cons_fixed)
        self.flex_idx = np.flatnonzero(~D.cons_fixed)
        self.h2_free = self._h2_free_nodes()
        self._build_inequalities()

    def _h2_free_nodes(self):
        """Nodes that no hydrogen supplier reaches along edge orientation."""
        D = self.data
        reach = np.zeros(D.n_nodes, dtype=bool)
        reach[D.h2_node] = True
        stack = list(np.unique(D.h2_node))
        while stack:
            i = stack.pop()
            for j in D.edge_to[D.edge_from == i]:
                if not reach[j]:
                    reach[j] = True
                    stack.append(j)
        return ~reach

    # ------------------------------------------------------------------
    def _build_inequalities(self):
        D, V = self.data, self.var
        rows: list[InequalityRow] = []
        blocks = {}

        def add(block, items):
            start = len(rows)
            rows.extend(items)
            blocks[block] = slice(start, len(rows))

        def vi(block, k):
            return V[block].start + k

        nV = D.n_nodes
        add("p_min", [InequalityRow("p_min", "bound", vi("P", j), side="lower",
                                    limit=D.p_min[j]) for j in range(nV)])
        add("gamma_min", [InequalityRow("gamma_min", "bound", vi("gamma_node", j), side="lower",
                                        limit=D.gamma_min[j]) for j in range(nV)])
        add("gamma_max", [InequalityRow("gamma_max", "bound", vi("gamma_node", j), side="upper",
                                        limit=D.gamma_max[j]) for j in range(nV)])
        # general functions: discharge h = alpha * P_from, then demand h = d R(gamma)
        self.general_kind = []
        self.general_index = []
        disch = []
        for c in range(D.n_comp):
            self.general_kind.append("discharge")
            self.general_index.append(c)
            disch.append(InequalityRow("discharge", "general", func=len(self.general_kind) - 1,
                                       side="upper", limit=D.p_max[D.comp_to[c]]))
        add("discharge", disch)
        add("alpha_min", [InequalityRow("alpha_min", "bound", vi("alpha", c), side="lower",
                                        limit=1.0) for c in range(D.n_comp)])
        add("alpha_max", [InequalityRow("alpha_max", "bound", vi("alpha", c), side="upper",
                                        limit=D.alpha_max[c]) for c in range(D.n_comp)])
        add("s_ng_min", [InequalityRow("s_ng_min", "bound", vi("s_ng", k), side="lower", limit=0.0)
                         for k in range(len(D.ng_node))])
        add("s_ng_max", [InequalityRow("s_ng_max", "bound", vi("s_ng", k), side="upper",
                                       limit=D.ng_max[k])
                         for k in range(len(D.ng_node)) if np.isfinite(D.ng_max[k])])
        add("s_h2_min", [InequalityRow("s_h2_min", "bound", vi("s_h2", k), side="lower", limit=0.0)
                         for k in range(len(D.h2_node))])
        add("s_h2_max", [InequalityRow("s_h2_max", "bound", vi("s_h2", k), side="upper",
                                       limit=D.h2_max[k])
                         for k in range(len(D.h2_node)) if np.isfinite(D.h2_max[k])])
        first_dem = len(self.general_kind)
        for m in self.flex_idx:
            self.general_kind.append("demand")
            self.general_index.append(int(m))
        add("demand_min", [InequalityRow("demand_min", "general", func=first_dem + k,
                                         side="lower", limit=0.0)
                           for k, m in enumerate(self.flex_idx)])
        add("demand_max", [InequalityRow("demand_max", "general", func=first_dem + k,
                                         side="upper", limit=D.cons_max[m])
                           for k, m in enumerate(self.flex_idx)])
        add("flow_min", [InequalityRow("flow_min", "bound", vi("phi", e), side="lower", limit=0.0)
                         for e in range(D.n_edges)])
        self.ineq_rows = rows
        self.ineq = blocks
        self.m_ineq = len(rows)
        self.n_general = len(self.general_kind)
        self._row_var = np.array([r.var for r in rows], dtype=int)
        self._row_func = np.array([r.func for r in rows], dtype=int)
        self._row_upper = np.array([r.side == "upper" for r in rows], dtype=bool)
        self._row_limit = np.array([r.limit for r in rows], dtype=float)
        self._row_bound = np.array([r.kind == "bound" for r in rows], dtype=bool)

    # ------------------------------------------------------------------
    def split(self, x) -> dict:
        return {k: x[s] for k, s in self.var.items()}

    def variable_bounds(self):
        """Lower/upper arrays implied by the single-variable inequality rows."""
        lo = np.full(self.n, -np.inf)
        hi = np.full(self.n, np.inf)
        for r in self.ineq_rows:
            if r.kind != "bound":
                continue
            if r.side == "lower":
                lo[r.var] = max(lo[r.var], r.limit)
            else:
                hi[r.var] = min(hi[r.var], r.limit)
        return lo, hi

    def hydrogen_free_structure(self):
        """Variables and equality rows that vanish identically.

        At nodes no hydrogen supplier reaches, the node and outgoing edge
        concentrations are 0 at every feasible point, and their H2 balance
        and continuity rows hold trivially.  Returns (variable indices, row
        indices) into x and the equality vector.
        """
        D = self.data
        nodes = np.flatnonzero(self.h2_free)
        edges = np.flatnonzero(self.h2_free[D.edge_from])
        cols = np.r_[self.var["gamma_node"].start + nodes, self.var["gamma_edge"].start + edges]
        rows = np.r_[self.eq["h2_balance"].start + nodes, self.eq["continuity"].start + edges]
        return cols.astype(int), rows.astype(int)

    def general_bounds(self):
        lo = np.full(self.n_general, -np.inf)
        hi = np.full(self.n_general, np.inf)
        for r in self.ineq_rows:
            if r.kind != "general":
                continue
            if r.side == "lower":
                lo[r.func] = r.limit
            else:
                hi[r.func] = r.limit
        return lo, hi

    def calorific(self, gamma):
        D = self.data
        return D.r_h2 * gamma + D.r_ng * (1.0 - gamma)

    def wave_speed_sq(self, gamma):
        D = self.data
        return D.v_h2 * gamma + D.v_ng * (1.0 - gamma)

    def with_balance_shift(self, ng=None, h2=None) -> "NlpProblem":
        """Copy whose balances carry forced extra withdrawals (data units)."""
        D = self.data
        z = np.zeros(D.n_nodes)
        data = replace(
            D,
            ng_balance_shift=z.copy() if ng is None else np.asarray(ng, float),
            h2_balance_shift=z.copy() if h2 is None else np.asarray(h2, float),
        )
        return NlpProblem(data, self.network, self.scenario)

    # ------------------------------------------------------------------
    # objective
    def objective_breakdown(self, x) -> ObjectiveBreakdown:
        D, v = self.data, self.split(x)
        gj = v["gamma_node"][D.cons_node]
        d = v["d"]
        j_mr = (
            np.sum(D.cons_bid * d * self.calorific(gj))
            - np.sum(D.ng_price * v["s_ng"])
            - np.sum(D.h2_price * v["s_h2"])
        )
        j_cem = np.sum(D.cons_co2 * D.co2_per_h2 * d * gj)
        phic = v["phi"][D.n_pipes :]
        j_gc = np.sum(D.comp_cost * (v["alpha"] ** D.m_nom - 1.0) * phic)
        return ObjectiveBreakdown(float(j_mr), float(j_cem), float(j_gc))

    def objective_gradient(self, x):
        """Gradient of J_EV."""
        D, v = self.data, self.split(x)
        g = np.zeros(self.n)
        gv = self.split(g)  # views into g
        gj = v["gamma_node"][D.cons_node]
        d = v["d"]
        dR = D.r_h2 - D.r_ng
        gv["d"][:] = D.cons_bid * self.calorific(gj) + D.cons_co2 * D.co2_per_h2 * gj
        np.add.at(gv["gamma_node"], D.cons_node, (D.cons_bid * dR + D.cons_co2 * D.co2_per_h2) * d)
        gv["s_ng"][:] = -D.ng_price
        gv["s_h2"][:] = -D.h2_price
        a = v["alpha"]
        phic = v["phi"][D.n_pipes :]
        gv["alpha"][:] = -D.comp_cost * D.m_nom * a ** (D.m_nom - 1.0) * phic
        gv["phi"][D.n_pipes :] = -D.comp_cost * (a**D.m_nom - 1.0)
        return g

    # ------------------------------------------------------------------
    # equality constraints
    def constraints(self, x):
        D, v = self.data, self.split(x)
        P, phi, G, ge = v["P"], v["phi"], v["gamma_node"], v["gamma_edge"]
        fr, to, nP = D.edge_from, D.edge_to, D.n_pipes
        c = np.empty(self.m_eq)
        cv = {k: c[s] for k, s in self.eq.items()}
        pf, pt = fr[:nP], to[:nP]
        cv["weymouth"][:] = (
            P[pf] ** 2 - P[pt] ** 2 - D.pipe_coeff * self.wave_speed_sq(ge[:nP]) * phi[:nP] ** 2
        )
        through = np.bincount(fr, weights=phi, minlength=D.n_nodes) + np.bincount(
            D.cons_node, weights=v["d"], minlength=D.n_nodes
        )
        in_ng = np.bincount(to, weights=(1.0 - ge) * phi, minlength=D.n_nodes)
        in_h2 = np.bincount(to, weights=ge * phi, minlength=D.n_nodes)
        sup_ng = np.bincount(D.ng_node, weights=v["s_ng"], minlength=D.n_nodes)
        sup_h2 = np.bincount(D.h2_node, weights=v["s_h2"], minlength=D.n_nodes)
        cv["ng_balance"][:] = (1.0 - G) * through - in_ng - sup_ng
        cv["h2_balance"][:] = G * through - in_h2 - sup_h2
        if D.ng_balance_shift is not None:
            cv["ng_balance"][:] += D.ng_balance_shift
        if D.h2_balance_shift is not None:
            cv["h2_balance"][:] += D.h2_balance_shift
        cv["continuity"][:] = G[fr] - ge
        cv["slack"][:] = P[D.slack_node] - D.slack_pressure
        a = v["alpha"]
        cf, ct = D.comp_from, D.comp_to
        cv["compressor"][:] = P[ct] ** 2 - a**2 * P[cf] ** 2
        fx = self.fixed_idx
        cv["fixed_demand"][:] = v["d"][fx] * self.calorific(G[D.cons_node[fx]]) - D.cons_max[fx]
        return c

    def jacobian(self, x) -> sp.csr_matrix:
        D, v, V, E = self.data, self.split(x), self.var, self.eq
        P, phi, G, ge, d = v["P"], v["phi"], v["gamma_node"], v["gamma_edge"], v["d"]
        fr, to, nP = D.edge_from, D.edge_to, D.n_pipes
        nV, nE = D.n_nodes, D.n_edges
        R, C, X = [], [], []

        def put(r, c, val):
            r = np.atleast_1d(np.asarray(r))
            R.append(r)
            C.append(np.broadcast_to(np.asarray(c), r.shape))
            X.append(np.broadcast_to(np.asarray(val, dtype=float), r.shape))

        pipes = np.arange(nP)
        rw = E["weymouth"].start + pipes
        Vp = self.wave_speed_sq(ge[:nP])
        put(rw, V["P"].start + fr[:nP], 2 * P[fr[:nP]])
        put(rw, V["P"].start + to[:nP], -2 * P[to[:nP]])
        put(rw, V["phi"].start + pipes, -2 * D.pipe_coeff * Vp * phi[:nP])
        put(rw, V["gamma_edge"].start + pipes, -D.pipe_coeff * (D.v_h2 - D.v_ng) * phi[:nP] ** 2)

        nodes = np.arange(nV)
        edges = np.arange(nE)
        through = np.bincount(fr, weights=phi, minlength=nV) + np.bincount(
            D.cons_node, weights=d, minlength=nV
        )
        rn, rh = E["ng_balance"].start, E["h2_balance"].start
        cons = np.arange(len(D.cons_node))
        # NG balance
        put(rn + nodes, V["gamma_node"].start + nodes, -through)
        put(rn + fr, V["phi"].start + edges, 1.0 - G[fr])
        put(rn + D.cons_node, V["d"].start + cons, 1.0 - G[D.cons_node])
        put(rn + to, V["phi"].start + edges, -(1.0 - ge))
        put(rn + to, V["gamma_edge"].start + edges, phi)
        put(rn + D.ng_node, V["s_ng"].start + np.arange(len(D.ng_node)), -1.0)
        # H2 balance
        put(rh + nodes, V["gamma_node"].start + nodes, through)
        put(rh + fr, V["phi"].start + edges, G[fr])
        put(rh + D.cons_node, V["d"].start + cons, G[D.cons_node])
        put(rh + to, V["phi"].start + edges, -ge)
        put(rh + to, V["gamma_edge"].start + edges, -phi)
        put(rh + D.h2_node, V["s_h2"].start + np.arange(len(D.h2_node)), -1.0)
        # continuity
        rc = E["continuity"].start + edges
        put(rc, V["gamma_node"].start + fr, 1.0)
        put(rc, V["gamma_edge"].start + edges, -1.0)
        # slack
        put(E["slack"].start + np.arange(len(D.slack_node)), V["P"].start + D.slack_node, 1.0)
        # compressors
        comps = np.arange(D.n_comp)
        a = v["alpha"]
        cf, ct = D.comp_from, D.comp_to
        rk = E["compressor"].start + comps
        put(rk, V["P"].start + ct, 2 * P[ct])
        put(rk, V["P"].start + cf, -2 * a**2 * P[cf])
        put(rk, V["alpha"].start + comps, -2 * a * P[cf] ** 2)
        # fixed demand
        fx = self.fixed_idx
        rf = E["fixed_demand"].start + np.arange(len(fx))
        jn = D.cons_node[fx]
        put(rf, V["d"].start + fx, self.calorific(G[jn]))
        put(rf, V["gamma_node"].start + jn, (D.r_h2 - D.r_ng) * d[fx])
        return sp.coo_matrix(
            (np.concatenate(X), (np.concatenate(R), np.concatenate(C))), shape=(self.m_eq, self.n)
        ).tocsr()

    # ------------------------------------------------------------------
    # general inequality functions (bound rows need no evaluator)
    def general(self, x):
        D, v = self.data, self.split(x)
        h = np.empty(self.n_general)
        nC = D.n_comp
        h[:nC] = v["alpha"] * v["P"][D.comp_from]
        fl = self.flex_idx
        h[nC:] = v["d"][fl] * self.calorific(v["gamma_node"][D.cons_node[fl]])
        return h

    def general_jacobian(self, x) -> sp.csr_matrix:
        D, v, V = self.data, self.split(x), self.var
        nC = D.n_comp
        comps = np.arange(nC)
        fl = self.flex_idx
        k = nC + np.arange(len(fl))
        jn = D.cons_node[fl]
        rows = np.concatenate([comps, comps, k, k])
        cols = np.concatenate(
            [
                V["alpha"].start + comps,
                V["P"].start + D.comp_from,
                V["d"].start + fl,
                V["gamma_node"].start + jn,
            ]
        )
        vals = np.concatenate(
            [
                v["P"][D.comp_from],
                v["alpha"],
                self.calorific(v["gamma_node"][jn]),
                (D.r_h2 - D.r_ng) * v["d"][fl],
            ]
        )
        return sp.coo_matrix((vals, (rows, cols)), shape=(self.n_general, self.n)).tocsr()

    def inequalities(self, x):
        """Paper-orientation inequality rows g(x) <= 0."""
        val = np.where(self._row_bound, x[np.maximum(self._row_var, 0)], 0.0)
        h = self.general(x)
        val = np.where(self._row_bound, val, h[np.maximum(self._row_func, 0)])
        return np.where(self._row_upper, val - self._row_limit, self._row_limit - val)

    def inequality_jacobian(self, x) -> sp.csr_matrix:
        sign = np.where(self._row_upper, 1.0, -1.0)
        Jh = self.general_jacobian(x).tocoo()
        R, C, X = [], [], []
        b = np.flatnonzero(self._row_bound)
        R.append(b)
        C.append(self._row_var[b])
        X.append(sign[b])
        gen = np.flatnonzero(~self._row_bound)
        # map each general function to its rows
        for r in gen:
            f = self._row_func[r]
            sel = Jh.row == f
            R.append(np.full(sel.sum(), r))
            C.append(Jh.col[sel])
            X.append(sign[r] * Jh.data[sel])
        return sp.coo_matrix(
            (np.concatenate(X), (np.concatenate(R), np.concatenate(C))), shape=(self.m_ineq, self.n)
        ).tocsr()

    def general_multipliers(self, z):
        """Collapse inequality-row multipliers onto the general functions.

        Returns w with sum_rows z_r grad g_r = sum_f w_f grad h_f for general rows.
        """
        w = np.zeros(self.n_general)
        gen = ~self._row_bound
        sign = np.where(self._row_upper, 1.0, -1.0)
        np.add.at(w, self._row_func[gen], sign[gen] * z[gen])
        return w

    # ------------------------------------------------------------------
    def lagrangian_hessian(self, x, y, z=None, obj_factor=1.0, general_w=None) -> sp.csr_matrix:
        """Hessian of obj_factor*(-J_EV) + y.c(x) + z.g(x).

        ``general_w`` may be given instead of ``z`` as multipliers of the
        general functions h (see :meth:`general_multipliers`).
        """
        D, v, V, E = self.data, self.split(x), self.var, self.eq
        if general_w is None:
            general_w = self.general_multipliers(z) if z is not None else np.zeros(self.n_general)
        P, phi, G, ge, d = v["P"], v["phi"], v["gamma_node"], v["gamma_edge"], v["d"]
        a = v["alpha"]
        fr, to, nP = D.edge_from, D.edge_to, D.n_pipes
        nV, nE, nC = D.n_nodes, D.n_edges, D.n_comp
        dR = D.r_h2 - D.r_ng
        R, C, X = [], [], []

        def put(r, c, val):
            r = np.atleast_1d(np.asarray(r))
            R.append(r)
            C.append(np.broadcast_to(np.asarray(c), r.shape))
            X.append(np.broadcast_to(np.asarray(val, dtype=float), r.shape))

        cons = np.arange(len(D.cons_node))
        comps = np.arange(nC)
        edges = np.arange(nE)
        pipes = np.arange(nP)
        vd, vg, vp, vf = V["d"].start, V["gamma_node"].start, V["P"].start, V["phi"].start
        va, ve = V["alpha"].start, V["gamma_edge"].start
        # objective (-J_EV)
        put(vd + cons, vg + D.cons_node, -obj_factor * (D.cons_bid * dR + D.cons_co2 * D.co2_per_h2))
        phic = phi[nP:]
        m = D.m_nom
        put(va + comps, va + comps, obj_factor * D.comp_cost * m * (m - 1) * a ** (m - 2) * phic)
        put(va + comps, vf + nP + comps, obj_factor * D.comp_cost * m * a ** (m - 1))
        # weymouth
        yw = y[E["weymouth"]]
        put(vp + fr[:nP], vp + fr[:nP], 2 * yw)
        put(vp + to[:nP], vp + to[:nP], -2 * yw)
        put(vf + pipes, vf + pipes, -2 * D.pipe_coeff * self.wave_speed_sq(ge[:nP]) * yw)
        put(vf + pipes, ve + pipes, -2 * D.pipe_coeff * (D.v_h2 - D.v_ng) * phi[:nP] * yw)
        # balances: ng rows carry (1-G), h2 rows carry G -> cross terms
        yn, yh = y[E["ng_balance"]], y[E["h2_balance"]]
        put(vg + fr, vf + edges, yh[fr] - yn[fr])
        put(vg + D.cons_node, vd + cons, yh[D.cons_node] - yn[D.cons_node])
        put(vf + edges, ve + edges, yn[to] - yh[to])
        # compressors
        yc = y[E["compressor"]]
        cf, ct = D.comp_from, D.comp_to
        put(vp + ct, vp + ct, 2 * yc)
        put(vp + cf, vp + cf, -2 * a**2 * yc)
        put(va + comps, va + comps, -2 * P[cf] ** 2 * yc)
        put(va + comps, vp + cf, -4 * a * P[cf] * yc)
        # fixed demand
        fx = self.fixed_idx
        yf = y[E["fixed_demand"]]
        put(vd + fx, vg + D.cons_node[fx], dR * yf)
        # general functions
        w = general_w
        put(va + comps, vp + cf, w[:nC])
        fl = self.flex_idx
        put(vd + fl, vg + D.cons_node[fl], dR * w[nC:])
        return _sym(R, C, X, self.n)

    # ------------------------------------------------------------------
    def lagrangian_gradient(self, x, y, z):
        """Gradient of -J_EV + y.c + z.g."""
        return (
            -self.objective_gradient(x)
            + self.jacobian(x).T @ y
            + self.inequality_jacobian(x).T @ z
        )

    def variable_names(self) -> list[str]:
        names = []
        net = self.network
        for block, s in self.var.items():
            for k in range(s.stop - s.start):
                names.append(f"{block}[{self._label(block, k)}]")
        return names

    def _label(self, block, k):
        net = self.network
        if net is None:
            return str(k)
        if block in ("P", "gamma_node", "ng_balance", "h2_balance", "p_min", "gamma_min", "gamma_max"):
            return net.nodes[k].id
        if block in ("phi", "gamma_edge", "continuity"):
            return net.edges[k].id
        if block == "weymouth":
            return net.pipes[k].id
        if block in ("alpha", "compressor"):
            return net.compressors[k].id
        if block == "s_ng":
            return net.gnodes_of_kind(GNodeKind.NG_SUPPLIER)[k].id
        if block == "s_h2":
            return net.gnodes_of_kind(GNodeKind.H2_SUPPLIER)[k].id
        if block == "d":
            return net.consumers[k].id
        return str(k)


def assemble(net: Network, scenario: MarketScenario) -> NlpProblem:
    """Build the SI-unit program for ``net`` under ``scenario``."""
    return NlpProblem(problem_data(net, scenario), net, scenario)


def eval_objective(p: NlpProblem, x):
    """Return (J_EV, gradient of J_EV, ObjectiveBreakdown)."""
    b = p.objective_breakdown(x)
    return b.j_ev, p.objective_gradient(x), b


def eval_constraints(p: NlpProblem, x):
    return p.constraints(x)


def eval_jacobian(p: NlpProblem, x):
    return p.jacobian(x)


def eval_lagrangian_hessian(p: NlpProblem, x, y, z=None):
    return p.lagrangian_hessian(x, y, z)
