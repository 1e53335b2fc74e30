"""Non-dimensionalization of the market-clearing program.

Pressures are measured against a reference pressure P0 (the slack pressure by
default), flows against phi0 = rho0 * u0 * A0 with rho0 = P0 / a0^2, and the
objective against J0 = c0 * phi0.  Energies use R0 = R_NG, so a bid price in
$/MJ becomes c^d * R0 / c0 in scaled units.

Residual rows are divided by their natural size (P0^2 for Weymouth and
compressor rows, phi0 for mass balances, ...).  Multipliers of the scaled
program are mapped back to SI with the chain rule: y_SI = J0 * y_bar / rowscale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .domain import DEFAULT_CONSTANTS, GasConstants, MarketScenario, Network, _check_fraction
from .nlp import NlpProblem, ProblemData, Units, problem_data

UNIVERSAL_GAS_CONSTANT = 8.314  # J/(mol K)


def wave_speed(molar_mass: float, temperature: float) -> float:
    """Isothermal wave speed sqrt(R_u T / M) [m/s] of an ideal gas."""
    if molar_mass <= 0 or temperature <= 0:
        raise ValueError("molar mass and temperature must be positive")
    return math.sqrt(UNIVERSAL_GAS_CONSTANT * temperature / molar_mass)


def blend_wave_speed_sq(gamma: float, constants: GasConstants = DEFAULT_CONSTANTS) -> float:
    """Squared wave speed V(gamma) of the blend [(m/s)^2]."""
    _check_fraction(gamma)
    return gamma * constants.a_h2**2 + (1.0 - gamma) * constants.a_ng**2


@dataclass(frozen=True)
class ScalingBasis:
    """Reference magnitudes used to non-dimensionalize the program.

    rho0, u0 and phi0 are derived from P0 and a0.  c0 and R0 fix the price
    and energy units of the objective.
    """

    P0: float
    l0: float = 5000.0
    A0: float = 1.0
    a0: float = math.sqrt(370.0 * 1090.0)
    c0: float = 1.0
    R0: float = 44.2

    def __post_init__(self):
        for name in ("P0", "l0", "A0", "a0", "c0", "R0"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"scaling basis entry {name} must be positive and finite")

    @property
    def rho0(self) -> float:
        return self.P0 / self.a0**2

    @property
    def u0(self) -> float:
        return math.ceil(self.a0) / 300.0

    @property
    def phi0(self) -> float:
        return self.rho0 * self.u0 * self.A0

    @property
    def J0(self) -> float:
        return self.c0 * self.phi0

    @property
    def units(self) -> Units:
        return Units(
            pressure=self.P0,
            flow=self.phi0,
            energy=self.R0,
            price=self.c0,
            length=self.l0,
            area=self.A0,
        )

    @classmethod
    def for_network(cls, net: Network, constants: GasConstants = DEFAULT_CONSTANTS, **kw):
        """Basis anchored at the first slack pressure of ``net``."""
        slack = net.slack_nodes
        P0 = slack[0].slack_pressure if slack else max(n.max_pressure for n in net.nodes)
        kw.setdefault("a0", math.sqrt(constants.a_ng * constants.a_h2))
        kw.setdefault("R0", constants.r_ng)
        return cls(P0=P0, **kw)


# ---------------------------------------------------------------------------
# data-level transforms


def _convert(data: ProblemData, u: Units, sign: int) -> ProblemData:
    """Express ``data`` in units ``u`` (sign=+1) or back from them (sign=-1)."""
    Pp, Ff, Ee, Cc = (u.pressure**sign, u.flow**sign, u.energy**sign, u.price**sign)

    def shift(v):
        return None if v is None else v / Ff

    return replace(
        data,
        p_min=data.p_min / Pp,
        p_max=data.p_max / Pp,
        slack_pressure=data.slack_pressure / Pp,
        ng_price=data.ng_price / Cc,
        ng_max=data.ng_max / Ff,
        h2_price=data.h2_price / Cc,
        h2_max=data.h2_max / Ff,
        cons_bid=data.cons_bid * Ee / Cc,
        cons_max=data.cons_max / (Ff * Ee),
        cons_co2=data.cons_co2 / Cc,
        r_h2=data.r_h2 / Ee,
        r_ng=data.r_ng / Ee,
        comp_cost=data.comp_cost / Cc,
        ng_balance_shift=shift(data.ng_balance_shift),
        h2_balance_shift=shift(data.h2_balance_shift),
    )


def scale_data(data: ProblemData, basis: ScalingBasis) -> ProblemData:
    """Non-dimensional copy of SI ``data``."""
    if data.units != Units():
        raise ValueError("data is already scaled")
    u = basis.units
    out = _convert(data, u, 1)
    # k V phi^2 / P0^2 with V = a0^2 Vbar and phi = phi0 phibar
    return replace(
        out,
        pipe_coeff=data.pipe_coeff * basis.phi0**2 * basis.a0**2 / basis.P0**2,
        v_h2=data.v_h2 / basis.a0**2,
        v_ng=data.v_ng / basis.a0**2,
        units=u,
    )


def unscale_data(data: ProblemData, basis: ScalingBasis) -> ProblemData:
    """Inverse of :func:`scale_data`."""
    u = basis.units
    if data.units != u:
        raise ValueError("data was not scaled with this basis")
    out = _convert(data, u, -1)
    return replace(
        out,
        pipe_coeff=data.pipe_coeff * basis.P0**2 / (basis.phi0**2 * basis.a0**2),
        v_h2=data.v_h2 * basis.a0**2,
        v_ng=data.v_ng * basis.a0**2,
        units=Units(),
    )


def nondimensionalize(net: Network, scenario: MarketScenario, basis: ScalingBasis | None = None):
    """Scaled program for ``net`` under ``scenario``."""
    if basis is None:
        basis = ScalingBasis.for_network(net, scenario.constants)
    return NlpProblem(scale_data(problem_data(net, scenario), basis), net, scenario)


def scale_problem(p: NlpProblem, basis: ScalingBasis) -> NlpProblem:
    return NlpProblem(scale_data(p.data, basis), p.network, p.scenario)


def unscale_problem(p: NlpProblem, basis: ScalingBasis) -> NlpProblem:
    return NlpProblem(unscale_data(p.data, basis), p.network, p.scenario)


# ---------------------------------------------------------------------------
# vector scale factors (size of one scaled unit in SI, per entry)


def variable_scales(p: NlpProblem, basis: ScalingBasis) -> np.ndarray:
    s = np.ones(p.n)
    for block in ("P",):
        s[p.var[block]] = basis.P0
    for block in ("phi", "s_ng", "s_h2", "d"):
        s[p.var[block]] = basis.phi0
    return s


def equality_scales(p: NlpProblem, basis: ScalingBasis) -> np.ndarray:
    s = np.ones(p.m_eq)
    s[p.eq["weymouth"]] = basis.P0**2
    s[p.eq["compressor"]] = basis.P0**2
    s[p.eq["ng_balance"]] = basis.phi0
    s[p.eq["h2_balance"]] = basis.phi0
    s[p.eq["slack"]] = basis.P0
    s[p.eq["fixed_demand"]] = basis.phi0 * basis.R0
    return s


def inequality_scales(p: NlpProblem, basis: ScalingBasis) -> np.ndarray:
    s = np.ones(p.m_ineq)
    for block in ("p_min", "discharge"):
        s[p.ineq[block]] = basis.P0
    for block in ("s_ng_min", "s_ng_max", "s_h2_min", "s_h2_max", "flow_min"):
        s[p.ineq[block]] = basis.phi0
    for block in ("demand_min", "demand_max"):
        s[p.ineq[block]] = basis.phi0 * basis.R0
    return s


def scale_primal(p, x, basis):
    return np.asarray(x, float) / variable_scales(p, basis)


def unscale_primal(p, xbar, basis):
    return np.asarray(xbar, float) * variable_scales(p, basis)


def unscale_duals(p, ybar, zbar, basis):
    """Chain-rule map of scaled multipliers to SI multipliers."""
    y = basis.J0 * np.asarray(ybar, float) / equality_scales(p, basis)
    z = basis.J0 * np.asarray(zbar, float) / inequality_scales(p, basis)
    return y, z


def scale_duals(p, y, z, basis):
    ybar = np.asarray(y, float) * equality_scales(p, basis) / basis.J0
    zbar = np.asarray(z, float) * inequality_scales(p, basis) / basis.J0
    return ybar, zbar


def redimensionalize_solution(sol, basis: ScalingBasis, si_problem: NlpProblem | None = None):
    """Solution of the scaled program expressed in SI and $ units.

    ``sol`` is any dataclass with ``problem``, ``x``, ``y`` and ``z`` fields.
    """
    p = sol.problem
    if si_problem is None:
        si_problem = unscale_problem(p, basis)
    x = unscale_primal(p, sol.x, basis)
    y, z = unscale_duals(p, sol.y, sol.z, basis)
    return replace(sol, problem=si_problem, x=x, y=y, z=z)
