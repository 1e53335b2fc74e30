"""Network and market data model for natural-gas/hydrogen blend pipelines.

Pressures are stored in Pa, lengths in m, mass flows in kg/s, energy flows
in MJ/s and prices in $/kg or $/MJ.  All objects are frozen after
construction so they can be shared between concurrent solves.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Mapping, Optional


class GNodeKind(str, Enum):
    NG_SUPPLIER = "NGSupplier"
    H2_SUPPLIER = "H2Supplier"
    FLEXIBLE_CONSUMER = "FlexibleConsumer"
    FIXED_CONSUMER = "FixedConsumer"

    @property
    def is_consumer(self) -> bool:
        return self in (GNodeKind.FLEXIBLE_CONSUMER, GNodeKind.FIXED_CONSUMER)

    @property
    def is_supplier(self) -> bool:
        return not self.is_consumer


@dataclass(frozen=True)
class GasConstants:
    """Physical constants of the binary blend.

    Attributes:
        r_h2, r_ng: calorific values [MJ/kg].
        zeta: CO2 / CH4 molecular weight ratio.
        a_h2, a_ng: wave speeds [m/s].
        k_comp: compressor work constant [kW per kg/s].
        m_nom: compressor exponent (kappa - 1) / kappa at nominal blend.
    """

    r_h2: float = 141.8
    r_ng: float = 44.2
    zeta: float = 44.0 / 16.0
    a_h2: float = 1090.0
    a_ng: float = 370.0
    k_comp: float = 22.18
    m_nom: float = 0.325

    @property
    def co2_per_kg_h2(self) -> float:
        """kg of CO2 avoided per kg of delivered hydrogen."""
        return self.r_h2 / self.r_ng * self.zeta


DEFAULT_CONSTANTS = GasConstants()


@dataclass(frozen=True)
class Node:
    id: str
    min_pressure: float
    max_pressure: float
    min_h2_fraction: float = 0.0
    max_h2_fraction: float = 1.0
    slack_pressure: Optional[float] = None

    @property
    def is_slack(self) -> bool:
        return self.slack_pressure is not None


@dataclass(frozen=True)
class Pipe:
    id: str
    from_node: str
    to_node: str
    friction: float
    length: float
    diameter: float
    area: float

    @property
    def resistance(self) -> float:
        """Weymouth coefficient f L / (D A^2) [1/m^4]."""
        return self.friction * self.length / (self.diameter * self.area**2)


@dataclass(frozen=True)
class Compressor:
    id: str
    from_node: str
    to_node: str
    max_boost: float = 1.4


@dataclass(frozen=True)
class GNode:
    id: str
    physical_node: str
    kind: GNodeKind


@dataclass(frozen=True)
class Network:
    """Directed pipeline graph plus the market participants bound to it.

    Pipes and compressors are disjoint edge classes; both take part in the
    nodal mass balances.  Edges are ordered pipes first, then compressors.
    """

    nodes: tuple[Node, ...]
    pipes: tuple[Pipe, ...] = ()
    compressors: tuple[Compressor, ...] = ()
    gnodes: tuple[GNode, ...] = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "pipes", tuple(self.pipes))
        object.__setattr__(self, "compressors", tuple(self.compressors))
        object.__setattr__(self, "gnodes", tuple(self.gnodes))

    # -- indexing -----------------------------------------------------------
    @property
    def node_index(self) -> Mapping[str, int]:
        return MappingProxyType({n.id: k for k, n in enumerate(self.nodes)})

    @property
    def edges(self) -> tuple:
        return self.pipes + self.compressors

    def node(self, node_id: str) -> Node:
        return self.nodes[self.node_index[node_id]]

    def gnode(self, gnode_id: str) -> GNode:
        for g in self.gnodes:
            if g.id == gnode_id:
                return g
        raise KeyError(gnode_id)

    def gnodes_of_kind(self, *kinds: GNodeKind) -> list[GNode]:
        return [g for g in self.gnodes if g.kind in kinds]

    @property
    def consumers(self) -> list[GNode]:
        return [g for g in self.gnodes if g.kind.is_consumer]

    @property
    def slack_nodes(self) -> list[Node]:
        return [n for n in self.nodes if n.is_slack]

    # -- adjacency ----------------------------------------------------------
    def incoming(self, node_id: str) -> list[int]:
        """Edge indices (into ``edges``) ending at ``node_id``."""
        return [k for k, e in enumerate(self.edges) if e.to_node == node_id]

    def outgoing(self, node_id: str) -> list[int]:
        return [k for k, e in enumerate(self.edges) if e.from_node == node_id]

    def colocated(self, node_id: str) -> list[GNode]:
        return [g for g in self.gnodes if g.physical_node == node_id]


# ---------------------------------------------------------------------------
# Market scenario


@dataclass(frozen=True)
class Offer:
    price: float  # $/kg
    max_supply: Optional[float] = None  # kg/s; None means no upper bound


@dataclass(frozen=True)
class Bid:
    price: float  # $/MJ
    max_energy: float  # MJ/s


@dataclass(frozen=True)
class MarketScenario:
    """Offers, bids, fixed demands and incentives keyed by gNode id."""

    offers: Mapping[str, Offer] = field(default_factory=dict)
    bids: Mapping[str, Bid] = field(default_factory=dict)
    fixed_demands: Mapping[str, float] = field(default_factory=dict)  # MJ/s
    co2_incentive: Mapping[str, float] = field(default_factory=dict)  # $/kgCO2
    compressor_cost_rate: float = 0.13 / 3600.0  # $/(kW s)
    constants: GasConstants = DEFAULT_CONSTANTS
    name: str = ""

    def __post_init__(self):
        for attr in ("offers", "bids", "fixed_demands", "co2_incentive"):
            object.__setattr__(self, attr, MappingProxyType(dict(getattr(self, attr))))
        for gid, o in self.offers.items():
            if o.price < 0 or (o.max_supply is not None and o.max_supply < 0):
                raise ValueError(f"offer {gid!r}: prices and quantities must be >= 0")
        for gid, b in self.bids.items():
            if b.price < 0 or b.max_energy < 0:
                raise ValueError(f"bid {gid!r}: prices and quantities must be >= 0")
        for gid, g in self.fixed_demands.items():
            if g < 0:
                raise ValueError(f"fixed demand {gid!r} must be >= 0")
        for gid, c in self.co2_incentive.items():
            if c < 0:
                raise ValueError(f"co2 incentive {gid!r} must be >= 0")
        if self.compressor_cost_rate < 0:
            raise ValueError("compressor_cost_rate must be >= 0")

    def incentive(self, gnode_id: str) -> float:
        return self.co2_incentive.get(gnode_id, 0.0)

    def with_incentive(self, value: float, gnode_ids=None) -> "MarketScenario":
        """Copy with ``co2_incentive`` set to ``value`` for the given consumers.

        ``gnode_ids`` defaults to every consumer already listed in the
        scenario (bids, fixed demands or explicit incentives).
        """
        if gnode_ids is None:
            gnode_ids = set(self.bids) | set(self.fixed_demands) | set(self.co2_incentive)
        co2 = dict(self.co2_incentive)
        co2.update({g: float(value) for g in gnode_ids})
        return MarketScenario(
            offers=self.offers,
            bids=self.bids,
            fixed_demands=self.fixed_demands,
            co2_incentive=co2,
            compressor_cost_rate=self.compressor_cost_rate,
            constants=self.constants,
            name=self.name,
        )


# ---------------------------------------------------------------------------
# Validation


@dataclass
class ValidationIssue:
    code: str
    message: str
    location: str = ""

    def __str__(self):
        loc = f"{self.location}: " if self.location else ""
        return f"[{self.code}] {loc}{self.message}"


@dataclass
class ValidationReport:
    issues: list[ValidationIssue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    @property
    def codes(self) -> set[str]:
        return {i.code for i in self.issues}

    def add(self, code, message, location=""):
        self.issues.append(ValidationIssue(code, message, location))

    def __str__(self):
        return "valid" if self.ok else "\n".join(str(i) for i in self.issues)


class NetworkValidationError(ValueError):
    def __init__(self, report: ValidationReport):
        super().__init__(str(report))
        self.report = report


def validate_network(net: Network) -> ValidationReport:
    rep = ValidationReport()
    ids = [n.id for n in net.nodes]
    known = set(ids)
    if len(known) != len(ids):
        rep.add("duplicate_id", "duplicate node ids")
    for n in net.nodes:
        loc = f"node {n.id}"
        if not (0.0 <= n.min_h2_fraction <= n.max_h2_fraction <= 1.0):
            rep.add("bad_bounds", "need 0 <= min_h2_fraction <= max_h2_fraction <= 1", loc)
        if not (0.0 < n.min_pressure <= n.max_pressure):
            rep.add("bad_bounds", "need 0 < min_pressure <= max_pressure", loc)
        if n.slack_pressure is not None and not (
            n.min_pressure <= n.slack_pressure <= n.max_pressure
        ):
            rep.add("bad_bounds", "slack pressure outside [min_pressure, max_pressure]", loc)

    edge_ids = [e.id for e in net.edges]
    if len(set(edge_ids)) != len(edge_ids):
        rep.add("duplicate_id", "duplicate edge ids")
    for e in net.edges:
        loc = f"edge {e.id}"
        for end in (e.from_node, e.to_node):
            if end not in known:
                rep.add("dangling_id", f"unknown node {end!r}", loc)
        if e.from_node == e.to_node:
            rep.add("self_loop", "edge endpoints coincide", loc)
    for p in net.pipes:
        if min(p.friction, p.length, p.diameter, p.area) <= 0:
            rep.add("bad_pipe", "friction, length, diameter and area must be > 0", f"pipe {p.id}")
    for c in net.compressors:
        if c.max_boost < 1.0:
            rep.add("bad_compressor", "max_boost must be >= 1", f"compressor {c.id}")

    gids = [g.id for g in net.gnodes]
    if len(set(gids)) != len(gids):
        rep.add("duplicate_id", "duplicate gNode ids")
    for g in net.gnodes:
        if g.physical_node not in known:
            rep.add("dangling_id", f"unknown node {g.physical_node!r}", f"gnode {g.id}")

    if not net.slack_nodes:
        rep.add("no_slack", "network has no slack node")
    if "dangling_id" in rep.codes or not net.nodes:
        return rep

    # connectivity of the underlying undirected graph
    adj: dict[str, set[str]] = {i: set() for i in ids}
    for e in net.edges:
        adj[e.from_node].add(e.to_node)
        adj[e.to_node].add(e.from_node)
    seen = _reach(adj, [ids[0]])
    if len(seen) != len(known):
        missing = sorted(known - seen)
        rep.add("disconnected", f"nodes not connected to {ids[0]}: {missing}")

    # every consumer must be reachable from a supplier along edge orientation
    fwd: dict[str, set[str]] = {i: set() for i in ids}
    for e in net.edges:
        fwd[e.from_node].add(e.to_node)
    sources = [g.physical_node for g in net.gnodes if g.kind.is_supplier]
    reach = _reach(fwd, sources)
    for g in net.consumers:
        if g.physical_node not in reach:
            rep.add("unreachable", "consumer not reachable from any supplier", f"gnode {g.id}")
    return rep


def _reach(adj, starts) -> set:
    seen = set(starts)
    queue = deque(starts)
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def validate_scenario(net: Network, scenario: MarketScenario) -> ValidationReport:
    """Cross-check a scenario against the participants of ``net``."""
    rep = ValidationReport()
    kinds = {g.id: g.kind for g in net.gnodes}
    for gid in scenario.offers:
        if gid not in kinds:
            rep.add("unknown_gnode", f"offer for unknown gNode {gid!r}", f"offers.{gid}")
        elif not kinds[gid].is_supplier:
            rep.add("kind_mismatch", f"offer for non-supplier {gid!r}", f"offers.{gid}")
    for gid in scenario.bids:
        if gid not in kinds:
            rep.add("unknown_gnode", f"bid for unknown gNode {gid!r}", f"bids.{gid}")
        elif kinds[gid] is not GNodeKind.FLEXIBLE_CONSUMER:
            rep.add("kind_mismatch", f"bid for non-flexible gNode {gid!r}", f"bids.{gid}")
    for gid in scenario.fixed_demands:
        if gid not in kinds:
            rep.add("unknown_gnode", f"fixed demand for unknown gNode {gid!r}", f"fixed_demands.{gid}")
        elif kinds[gid] is not GNodeKind.FIXED_CONSUMER:
            rep.add("kind_mismatch", f"fixed demand for {gid!r}", f"fixed_demands.{gid}")
    for gid in scenario.co2_incentive:
        if gid not in kinds:
            rep.add("unknown_gnode", f"incentive for unknown gNode {gid!r}", f"co2_incentive.{gid}")
    for g in net.gnodes:
        if g.kind.is_supplier and g.id not in scenario.offers:
            rep.add("missing_offer", f"supplier {g.id!r} has no offer")
        elif g.kind is GNodeKind.FLEXIBLE_CONSUMER and g.id not in scenario.bids:
            rep.add("missing_bid", f"flexible consumer {g.id!r} has no bid")
        elif g.kind is GNodeKind.FIXED_CONSUMER and g.id not in scenario.fixed_demands:
            rep.add("missing_bid", f"fixed consumer {g.id!r} has no fixed demand")
    return rep


# ---------------------------------------------------------------------------
# Closed-form blend quantities


def _check_fraction(gamma):
    if not 0.0 <= gamma <= 1.0 or math.isnan(gamma):
        raise ValueError(f"hydrogen mass fraction {gamma!r} outside [0, 1]")


def calorific_value(gamma: float, constants: GasConstants = DEFAULT_CONSTANTS) -> float:
    """Energy content of the blend [MJ/kg], affine in the H2 mass fraction."""
    _check_fraction(gamma)
    return constants.r_h2 * gamma + constants.r_ng * (1.0 - gamma)


def avoided_emissions(d: float, gamma: float, constants: GasConstants = DEFAULT_CONSTANTS) -> float:
    """CO2 avoided [kg/s] by delivering ``d`` kg/s of blend at fraction ``gamma``.

    Each kg of hydrogen displaces r_h2/r_ng kg of methane, each of which
    would have emitted zeta kg of CO2.
    """
    if d < 0:
        raise ValueError("withdrawal must be non-negative")
    _check_fraction(gamma)
    return d * gamma * constants.co2_per_kg_h2


def carbon_intensity(gamma: float, constants: GasConstants = DEFAULT_CONSTANTS) -> float:
    """CO2 emitted per MJ of delivered blend [kgCO2/MJ]."""
    _check_fraction(gamma)
    return (1.0 - gamma) * constants.zeta / calorific_value(gamma, constants)
