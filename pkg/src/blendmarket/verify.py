"""Independent audit of a cleared market against its optimality conditions.

Everything here is recomputed from the network, the scenario and the raw
primal/dual vectors.  Stationarity is written family by family (supplies,
withdrawals, pipe flows, compressor flows, boost ratios, edge and node
concentrations, pressures) rather than taken from the program's Jacobian,
so a wrong derivative or a mislabelled multiplier in the solver shows up
here.  Residuals are reported in non-dimensional units: stationarity in
units of the objective scale per scaled variable, feasibility per scaled
row, complementarity per objective scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .domain import GNodeKind
from .scaling import ScalingBasis

STATIONARITY_FAMILIES = (
    "s_ng",
    "s_h2",
    "d",
    "phi_pipe",
    "phi_compressor",
    "alpha",
    "gamma_edge",
    "gamma_node",
    "P",
)


class VerificationError(ValueError):
    pass


@dataclass
class Check:
    name: str
    residual: float
    tolerance: float
    location: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.residual <= self.tolerance)


STRUCTURAL_CHECKS = ("sosc_pipe_sign", "price_flow", "monotonicity")


@dataclass
class KktReport:
    tolerance: float
    checks: dict = field(default_factory=dict)  # name -> Check
    stationarity: dict = field(default_factory=dict)  # family -> max residual
    pipe_signs: list = field(default_factory=list)  # (pipe id, flowing, mu_scaled, passed)
    price_flow: list = field(default_factory=list)  # (edge id, difference, passed)
    monotonicity: list = field(default_factory=list)  # (node id, upstream id, difference, passed)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks.values())

    @property
    def first_order_ok(self) -> bool:
        """Stationarity, feasibility, complementarity, signs and credits only.

        The pipe-sign, price-flow and monotonicity checks test structural
        consequences that need not hold on meshed networks with forced loop
        flows; they are reported but excluded here.
        """
        return all(c.passed for n, c in self.checks.items() if n not in STRUCTURAL_CHECKS)

    @property
    def failures(self) -> list:
        return [c for c in self.checks.values() if not c.passed]

    def add(self, check: Check):
        self.checks[check.name] = check

    def as_dict(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "ok": self.ok,
            "first_order_ok": self.first_order_ok,
            "checks": {
                k: {"residual": c.residual, "tolerance": c.tolerance, "passed": c.passed,
                    "location": c.location}
                for k, c in self.checks.items()
            },
            "stationarity": dict(self.stationarity),
        }


# ---------------------------------------------------------------------------
# unpacking


class _State:
    """Primal and dual values keyed by component id, in SI units."""

    def __init__(self, sol):
        p = sol.problem
        net = p.network
        if net is None or p.scenario is None:
            raise VerificationError("solution must carry its network and scenario")
        if sol.y is None or sol.z is None:
            raise VerificationError("solution has no multipliers")
        x, y, z = (np.asarray(a, float) for a in (sol.x, sol.y, sol.z))
        if len(x) != p.n or len(y) != p.m_eq or len(z) != p.m_ineq:
            raise VerificationError("primal or dual vector has the wrong length")
        self.net, self.sc = net, p.scenario
        self.gc = p.scenario.constants
        self.basis = sol.basis or _default_basis(net, self.gc)
        nodes = [n.id for n in net.nodes]
        edges = [e.id for e in net.edges]
        pipes = [e.id for e in net.pipes]
        comps = [c.id for c in net.compressors]
        ng = [g.id for g in net.gnodes_of_kind(GNodeKind.NG_SUPPLIER)]
        h2 = [g.id for g in net.gnodes_of_kind(GNodeKind.H2_SUPPLIER)]
        cons = [g.id for g in net.consumers]
        flex = [g.id for g in net.consumers if g.kind is GNodeKind.FLEXIBLE_CONSUMER]
        fixed = [g.id for g in net.consumers if g.kind is GNodeKind.FIXED_CONSUMER]

        def take(vec, sl, keys):
            vals = vec[sl]
            assert len(vals) == len(keys)
            return dict(zip(keys, vals))

        V, E, I = p.var, p.eq, p.ineq
        self.P = take(x, V["P"], nodes)
        self.phi = take(x, V["phi"], edges)
        self.G = take(x, V["gamma_node"], nodes)
        self.ge = take(x, V["gamma_edge"], edges)
        self.alpha = take(x, V["alpha"], comps)
        self.s = {**take(x, V["s_ng"], ng), **take(x, V["s_h2"], h2)}
        self.d = take(x, V["d"], cons)

        self.lam_ng = take(y, E["ng_balance"], nodes)
        self.lam_h2 = take(y, E["h2_balance"], nodes)
        self.mu = take(y, E["weymouth"], pipes)
        self.omega_e = take(y, E["continuity"], edges)
        self.beta_e = take(y, E["slack"], [n.id for n in net.slack_nodes])
        self.theta_e = take(y, E["compressor"], comps)
        self.chi_f = take(y, E["fixed_demand"], fixed)

        self.beta_l = take(z, I["p_min"], nodes)
        self.omega_l = take(z, I["gamma_min"], nodes)
        self.omega_u = take(z, I["gamma_max"], nodes)
        self.theta_u = take(z, I["discharge"], comps)
        self.theta_cl = take(z, I["alpha_min"], comps)
        self.theta_cu = take(z, I["alpha_max"], comps)
        self.chi_s_l = {**take(z, I["s_ng_min"], ng), **take(z, I["s_h2_min"], h2)}
        caps = {g: self.sc.offers[g].max_supply for g in ng + h2}
        ng_capped = [g for g in ng if caps[g] is not None]
        h2_capped = [g for g in h2 if caps[g] is not None]
        self.chi_s_u = {g: 0.0 for g in ng + h2}
        self.chi_s_u.update(take(z, I["s_ng_max"], ng_capped))
        self.chi_s_u.update(take(z, I["s_h2_max"], h2_capped))
        self.chi_l = take(z, I["demand_min"], flex)
        self.chi_u = take(z, I["demand_max"], flex)
        self.nu = take(z, I["flow_min"], edges)
        self.z_vector = z

    def R(self, g):
        return self.gc.r_h2 * g + self.gc.r_ng * (1.0 - g)

    def V(self, g):
        return self.gc.a_h2**2 * g + self.gc.a_ng**2 * (1.0 - g)

    @property
    def rho_zeta(self):
        return self.gc.co2_per_kg_h2

    @property
    def comp_cost(self):
        return self.sc.compressor_cost_rate * self.gc.k_comp


def _default_basis(net, gc) -> ScalingBasis:
    slack = net.slack_nodes
    P0 = slack[0].slack_pressure if slack else max(n.max_pressure for n in net.nodes)
    return ScalingBasis(P0=P0, a0=math.sqrt(gc.a_h2 * gc.a_ng), R0=gc.r_ng)


# ---------------------------------------------------------------------------
# stationarity


def stationarity_residuals(sol) -> dict:
    """Per-family lists of (component id, scaled residual)."""
    st = _State(sol)
    net, sc, b = st.net, st.sc, st.basis
    J0 = b.J0
    out = {f: [] for f in STATIONARITY_FAMILIES}
    node_of = {g.id: g.physical_node for g in net.gnodes}
    kind = {g.id: g.kind for g in net.gnodes}
    dR = st.gc.r_h2 - st.gc.r_ng

    for gid, s in st.s.items():
        j = node_of[gid]
        if kind[gid] is GNodeKind.NG_SUPPLIER:
            r = sc.offers[gid].price - st.lam_ng[j] - st.chi_s_l[gid] + st.chi_s_u[gid]
            out["s_ng"].append((gid, r * b.phi0 / J0))
        else:
            r = sc.offers[gid].price - st.lam_h2[j] - st.chi_s_l[gid] + st.chi_s_u[gid]
            out["s_h2"].append((gid, r * b.phi0 / J0))

    for gid, d in st.d.items():
        j = node_of[gid]
        g = st.G[j]
        R = st.R(g)
        bid = sc.bids[gid].price if gid in sc.bids else 0.0
        r = (
            -bid * R
            - sc.incentive(gid) * st.rho_zeta * g
            + st.lam_ng[j] * (1.0 - g)
            + st.lam_h2[j] * g
            - st.chi_l.get(gid, 0.0) * R
            + st.chi_u.get(gid, 0.0) * R
            + st.chi_f.get(gid, 0.0) * R
        )
        out["d"].append((gid, r * b.phi0 / J0))

    m = st.gc.m_nom
    for e in net.pipes:
        i, j = e.from_node, e.to_node
        ge, phi = st.ge[e.id], st.phi[e.id]
        r = (
            st.lam_ng[i] * (1.0 - st.G[i])
            + st.lam_h2[i] * st.G[i]
            - st.lam_ng[j] * (1.0 - ge)
            - st.lam_h2[j] * ge
            - 2.0 * st.mu[e.id] * e.resistance * st.V(ge) * phi
            - st.nu[e.id]
        )
        out["phi_pipe"].append((e.id, r * b.phi0 / J0))
        r = (
            (st.lam_ng[j] - st.lam_h2[j]) * phi
            - st.mu[e.id] * e.resistance * phi * phi * (st.gc.a_h2**2 - st.gc.a_ng**2)
            - st.omega_e[e.id]
        )
        out["gamma_edge"].append((e.id, r / J0))
    for c in net.compressors:
        i, j = c.from_node, c.to_node
        ge, phi, a = st.ge[c.id], st.phi[c.id], st.alpha[c.id]
        r = (
            st.lam_ng[i] * (1.0 - st.G[i])
            + st.lam_h2[i] * st.G[i]
            - st.lam_ng[j] * (1.0 - ge)
            - st.lam_h2[j] * ge
            + st.comp_cost * (a**m - 1.0)
            - st.nu[c.id]
        )
        out["phi_compressor"].append((c.id, r * b.phi0 / J0))
        r = (
            st.comp_cost * m * a ** (m - 1.0) * phi
            - 2.0 * st.theta_e[c.id] * a * st.P[i] ** 2
            + st.theta_u[c.id] * st.P[i]
            - st.theta_cl[c.id]
            + st.theta_cu[c.id]
        )
        out["alpha"].append((c.id, r / J0))
        r = (st.lam_ng[j] - st.lam_h2[j]) * phi - st.omega_e[c.id]
        out["gamma_edge"].append((c.id, r / J0))

    slack = set(st.beta_e)
    for n in net.nodes:
        j = n.id
        outs = [net.edges[k] for k in net.outgoing(j)]
        ins = [net.edges[k] for k in net.incoming(j)]
        through = sum(st.phi[e.id] for e in outs)
        r = 0.0
        for g in net.colocated(j):
            if not g.kind.is_consumer:
                continue
            d = st.d[g.id]
            bid = sc.bids[g.id].price if g.id in sc.bids else 0.0
            r += (
                -bid * dR * d
                - sc.incentive(g.id) * st.rho_zeta * d
                + (st.lam_h2[j] - st.lam_ng[j]) * d
                + (st.chi_u.get(g.id, 0.0) + st.chi_f.get(g.id, 0.0) - st.chi_l.get(g.id, 0.0))
                * dR
                * d
            )
        r += (st.lam_h2[j] - st.lam_ng[j]) * through
        r += sum(st.omega_e[e.id] for e in outs)
        r += -st.omega_l[j] + st.omega_u[j]
        out["gamma_node"].append((j, r / J0))

        P = st.P[j]
        r = -st.beta_l[j] + (st.beta_e[j] if j in slack else 0.0)
        pipe_ids = {p.id for p in net.pipes}
        for e in outs:
            if e.id in pipe_ids:
                r += 2.0 * st.mu[e.id] * P
            else:
                a = st.alpha[e.id]
                r += -2.0 * st.theta_e[e.id] * a * a * P + st.theta_u[e.id] * a
        for e in ins:
            if e.id in pipe_ids:
                r += -2.0 * st.mu[e.id] * P
            else:
                r += 2.0 * st.theta_e[e.id] * P
        out["P"].append((j, r * b.P0 / J0))
    return out


def check_stationarity(sol, tol: float = 1e-6) -> KktReport:
    rep = KktReport(tol)
    res = stationarity_residuals(sol)
    worst, where = 0.0, ""
    for fam, rows in res.items():
        mx = max((abs(r) for _, r in rows), default=0.0)
        rep.stationarity[fam] = mx
        if mx > worst:
            worst = mx
            where = f"{fam}[{max(rows, key=lambda t: abs(t[1]))[0]}]"
    rep.add(Check("stationarity", worst, tol, where))
    return rep


# ---------------------------------------------------------------------------
# feasibility, complementarity and signs


def _inequality_rows(st: _State):
    """(label, g value SI, row scale, multiplier) for every inequality row."""
    net, sc, b = st.net, st.sc, st.basis
    rows = []
    node_of = {g.id: g.physical_node for g in net.gnodes}
    for n in net.nodes:
        rows.append((f"p_min[{n.id}]", n.min_pressure - st.P[n.id], b.P0, st.beta_l[n.id]))
    for n in net.nodes:
        rows.append((f"gamma_min[{n.id}]", n.min_h2_fraction - st.G[n.id], 1.0, st.omega_l[n.id]))
    for n in net.nodes:
        rows.append((f"gamma_max[{n.id}]", st.G[n.id] - n.max_h2_fraction, 1.0, st.omega_u[n.id]))
    for c in net.compressors:
        pmax = net.node(c.to_node).max_pressure
        rows.append((f"discharge[{c.id}]", st.alpha[c.id] * st.P[c.from_node] - pmax, b.P0,
                     st.theta_u[c.id]))
        rows.append((f"alpha_min[{c.id}]", 1.0 - st.alpha[c.id], 1.0, st.theta_cl[c.id]))
        rows.append((f"alpha_max[{c.id}]", st.alpha[c.id] - c.max_boost, 1.0, st.theta_cu[c.id]))
    for gid, s in st.s.items():
        rows.append((f"supply_min[{gid}]", -s, b.phi0, st.chi_s_l[gid]))
        cap = sc.offers[gid].max_supply
        if cap is not None:
            rows.append((f"supply_max[{gid}]", s - cap, b.phi0, st.chi_s_u[gid]))
    for gid in st.chi_l:
        e = st.d[gid] * st.R(st.G[node_of[gid]])
        rows.append((f"demand_min[{gid}]", -e, b.phi0 * b.R0, st.chi_l[gid]))
        rows.append((f"demand_max[{gid}]", e - sc.bids[gid].max_energy, b.phi0 * b.R0,
                     st.chi_u[gid]))
    for e in net.edges:
        rows.append((f"flow_min[{e.id}]", -st.phi[e.id], b.phi0, st.nu[e.id]))
    return rows


def _equality_rows(st: _State):
    """(label, residual SI, row scale) for every equality row."""
    net, sc, b = st.net, st.sc, st.basis
    rows = []
    for e in net.pipes:
        r = (st.P[e.from_node] ** 2 - st.P[e.to_node] ** 2
             - e.resistance * st.V(st.ge[e.id]) * st.phi[e.id] ** 2)
        rows.append((f"weymouth[{e.id}]", r, b.P0**2))
    for n in net.nodes:
        j = n.id
        outs = [net.edges[k] for k in net.outgoing(j)]
        ins = [net.edges[k] for k in net.incoming(j)]
        withdraw = sum(st.phi[e.id] for e in outs) + sum(
            st.d[g.id] for g in net.colocated(j) if g.kind.is_consumer
        )
        ng_in = sum((1.0 - st.ge[e.id]) * st.phi[e.id] for e in ins) + sum(
            st.s[g.id] for g in net.colocated(j) if g.kind is GNodeKind.NG_SUPPLIER
        )
        h2_in = sum(st.ge[e.id] * st.phi[e.id] for e in ins) + sum(
            st.s[g.id] for g in net.colocated(j) if g.kind is GNodeKind.H2_SUPPLIER
        )
        rows.append((f"ng_balance[{j}]", (1.0 - st.G[j]) * withdraw - ng_in, b.phi0))
        rows.append((f"h2_balance[{j}]", st.G[j] * withdraw - h2_in, b.phi0))
    for e in net.edges:
        rows.append((f"continuity[{e.id}]", st.G[e.from_node] - st.ge[e.id], 1.0))
    for n in net.slack_nodes:
        rows.append((f"slack[{n.id}]", st.P[n.id] - n.slack_pressure, b.P0))
    for c in net.compressors:
        r = st.P[c.to_node] ** 2 - st.alpha[c.id] ** 2 * st.P[c.from_node] ** 2
        rows.append((f"compressor[{c.id}]", r, b.P0**2))
    for g in net.consumers:
        if g.kind is GNodeKind.FIXED_CONSUMER:
            r = st.d[g.id] * st.R(st.G[g.physical_node]) - sc.fixed_demands[g.id]
            rows.append((f"fixed_demand[{g.id}]", r, b.phi0 * b.R0))
    return rows


def _worst(items):
    """(value, label) of the largest value, (0, '') for an empty list."""
    best = (0.0, "")
    for label, v in items:
        if v > best[0]:
            best = (v, label)
    return best


def check_feasibility(sol, tol: float = 1e-6) -> KktReport:
    st = _State(sol)
    rep = KktReport(tol)
    eq = [(lab, abs(r) / s) for lab, r, s in _equality_rows(st)]
    ineq = [(lab, max(g, 0.0) / s) for lab, g, s, _ in _inequality_rows(st)]
    v, where = _worst(eq + ineq)
    rep.add(Check("primal_feasibility", v, tol, where))
    return rep


def check_complementarity_and_signs(sol, tol: float = 1e-6, sign_tol: float = 1e-8) -> KktReport:
    """Scaled |multiplier * constraint| per inequality row and multiplier signs."""
    st = _State(sol)
    rep = KktReport(tol)
    J0 = st.basis.J0
    rows = _inequality_rows(st)
    comp = [(lab, abs(z * g) / J0) for lab, g, s, z in rows]
    v, where = _worst(comp)
    rep.add(Check("complementarity", v, tol, where))
    neg = [(lab, -z * s / J0) for lab, g, s, z in rows]
    v, where = _worst(neg)
    rep.add(Check("dual_sign", v, sign_tol, where))
    return rep


def check_sosc_pipe_signs(sol, tol: float = 1e-8) -> KktReport:
    """mu <= tol (scaled) on every pipe carrying flow above tol (scaled)."""
    st = _State(sol)
    b = st.basis
    rep = KktReport(tol)
    worst, where = 0.0, ""
    for e in st.net.pipes:
        flowing = st.phi[e.id] / b.phi0 > tol
        mu_bar = st.mu[e.id] * b.P0**2 / b.J0
        passed = (not flowing) or mu_bar <= tol
        rep.pipe_signs.append((e.id, flowing, mu_bar, passed))
        if flowing and mu_bar > worst:
            worst, where = mu_bar, e.id
    # the check passes when the largest positive mu on a flowing pipe is within tol
    rep.add(Check("sosc_pipe_sign", worst, tol, where))
    return rep


def check_price_flow_alignment(sol, tol: float = 1e-6) -> KktReport:
    """Delivered value rises along every flowing edge.

    The single-inflow nodal monotonicity lambda_j >= lambda_i is checked only
    at nodes with exactly one incoming edge, that edge flowing, and no
    supplier attached; elsewhere prices may fall downstream.
    """
    st = _State(sol)
    b = st.basis
    rep = KktReport(tol)
    worst, where = 0.0, ""
    for e in st.net.edges:
        if st.phi[e.id] / b.phi0 <= tol:
            continue
        i, j = e.from_node, e.to_node
        up = st.lam_ng[i] * (1.0 - st.G[i]) + st.lam_h2[i] * st.G[i]
        down = st.lam_ng[j] * (1.0 - st.ge[e.id]) + st.lam_h2[j] * st.ge[e.id]
        diff = (down - up) / b.c0
        ok = diff >= -tol
        rep.price_flow.append((e.id, diff, ok))
        if -diff > worst:
            worst, where = -diff, e.id
    rep.add(Check("price_flow", worst, tol, where))

    worst, where = 0.0, ""
    for n in st.net.nodes:
        ins = st.net.incoming(n.id)
        if len(ins) != 1:
            continue
        if any(g.kind.is_supplier for g in st.net.colocated(n.id)):
            continue
        e = st.net.edges[ins[0]]
        if st.phi[e.id] / b.phi0 <= tol:
            continue
        i, j = e.from_node, n.id
        lam_i = st.lam_ng[i] * (1.0 - st.G[i]) + st.lam_h2[i] * st.G[i]
        lam_j = st.lam_ng[j] * (1.0 - st.G[j]) + st.lam_h2[j] * st.G[j]
        diff = (lam_j - lam_i) / b.c0
        ok = diff >= -tol
        rep.monotonicity.append((j, i, diff, ok))
        if -diff > worst:
            worst, where = -diff, j
    rep.add(Check("monotonicity", worst, tol, where))
    return rep


def dual_credit_total(sol) -> tuple[float, float]:
    """(credits implied by the duals, J_CEM recomputed from the primal), $/s.

    The premium is the part of the nodal energy price not explained by the
    consumer's bid and demand-limit multipliers.
    """
    st = _State(sol)
    net, sc = st.net, st.sc
    total = 0.0
    j_cem = 0.0
    for g in net.consumers:
        j = g.physical_node
        G = st.G[j]
        R = st.R(G)
        lam_e = (st.lam_ng[j] * (1.0 - G) + st.lam_h2[j] * G) / R
        bid = sc.bids[g.id].price if g.id in sc.bids else 0.0
        own = bid + st.chi_l.get(g.id, 0.0) - st.chi_u.get(g.id, 0.0) - st.chi_f.get(g.id, 0.0)
        total += (lam_e - own) * st.d[g.id] * R
        j_cem += sc.incentive(g.id) * st.rho_zeta * st.d[g.id] * G
    return total, j_cem


def check_credit_adequacy(sol, tol: float = 1e-6) -> KktReport:
    rep = KktReport(tol)
    total, j_cem = dual_credit_total(sol)
    rel = abs(total - j_cem) / max(1.0, abs(j_cem))
    rep.add(Check("credit_adequacy", rel, tol, f"D_PTC={total:.6g} J_CEM={j_cem:.6g}"))
    return rep


def verify_solution(sol, tol: float = 1e-6, sign_tol: float = 1e-8) -> KktReport:
    """Run every check and merge the results into one report."""
    rep = KktReport(tol)
    parts = [
        check_stationarity(sol, tol),
        check_feasibility(sol, tol),
        check_complementarity_and_signs(sol, tol, sign_tol),
        check_sosc_pipe_signs(sol, sign_tol),
        check_price_flow_alignment(sol, tol),
        check_credit_adequacy(sol, tol),
    ]
    for part in parts:
        rep.checks.update(part.checks)
        rep.stationarity.update(part.stationarity)
        rep.pipe_signs.extend(part.pipe_signs)
        rep.price_flow.extend(part.price_flow)
        rep.monotonicity.extend(part.monotonicity)
    return rep
