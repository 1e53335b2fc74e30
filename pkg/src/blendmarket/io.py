"""File formats and result export.

Networks (``.net``) and scenarios (``.mkt``) are JSON documents.  Pressures
in files are in MPa and converted to Pa on load; everything else is SI
(m, m^2, kg/s, MJ/s) or $ per SI unit.  Unknown keys are rejected so that
typos do not silently fall back to defaults.  Errors name the offending
field path, or the line and column for malformed JSON.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .domain import (
    Bid,
    Compressor,
    GasConstants,
    GNode,
    GNodeKind,
    MarketScenario,
    Network,
    NetworkValidationError,
    Node,
    Offer,
    Pipe,
    validate_network,
    validate_scenario,
)
from .nlp import assemble
from .solver import Solution, SolveStatus

MPA = 1e6
BUNDLED = ("8node.net", "scenario1.mkt", "scenario2.mkt", "40node.net", "40node_ci.net",
           "40node_baseline.mkt", "40node_ci_s1.mkt", "40node_ci_s2.mkt", "40node_ci_s3.mkt")


class InputError(ValueError):
    """Malformed or inconsistent input file."""

    def __init__(self, message, path=None, location=""):
        where = ": ".join(str(p) for p in (path, location) if p)
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.location = location


def data_path(name: str) -> Path:
    """Path of a bundled data file."""
    p = resources.files("blendmarket") / "data" / name
    return Path(str(p))


def resolve(path) -> Path:
    """``path`` itself if it exists, else a bundled file of that name."""
    p = Path(path)
    if p.exists():
        return p
    b = data_path(p.name)
    if b.exists():
        return b
    raise InputError("file not found", path)


# ---------------------------------------------------------------------------
# helpers


def _read_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(str(exc), path) from exc
    if not text.strip():
        raise InputError("empty file (line 1, column 1)", path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{exc.msg} (line {exc.lineno}, column {exc.colno})", path) from exc


def _obj(d, loc, required=(), optional=()):
    if not isinstance(d, dict):
        raise InputError("expected an object", location=loc)
    unknown = set(d) - set(required) - set(optional)
    if unknown:
        raise InputError(f"unknown key(s) {sorted(unknown)}", location=loc)
    missing = [k for k in required if k not in d]
    if missing:
        raise InputError(f"missing key(s) {missing}", location=loc)
    return d


def _num(d, key, loc, default=None, allow_none=False):
    if key not in d:
        return default
    v = d[key]
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise InputError(f"expected a finite number, got {v!r}", location=f"{loc}.{key}")
    return float(v)


def _str(d, key, loc):
    v = d[key]
    if not isinstance(v, str) or not v:
        raise InputError(f"expected a non-empty string, got {v!r}", location=f"{loc}.{key}")
    return v


def _list(d, key, loc):
    v = d.get(key, [])
    if not isinstance(v, list):
        raise InputError("expected a list", location=f"{loc}.{key}")
    return v


# ---------------------------------------------------------------------------
# networks


def network_from_dict(d: dict, validate: bool = True) -> Network:
    _obj(d, "network", optional=("name", "nodes", "pipes", "compressors", "gnodes"))
    nodes, pipes, comps, gnodes = [], [], [], []
    for k, n in enumerate(_list(d, "nodes", "network")):
        loc = f"nodes[{k}]"
        _obj(n, loc, required=("id", "min_pressure", "max_pressure"),
             optional=("min_h2_fraction", "max_h2_fraction", "slack_pressure"))
        slack = _num(n, "slack_pressure", loc, allow_none=True)
        nodes.append(Node(
            id=_str(n, "id", loc),
            min_pressure=_num(n, "min_pressure", loc) * MPA,
            max_pressure=_num(n, "max_pressure", loc) * MPA,
            min_h2_fraction=_num(n, "min_h2_fraction", loc, 0.0),
            max_h2_fraction=_num(n, "max_h2_fraction", loc, 1.0),
            slack_pressure=None if slack is None else slack * MPA,
        ))
    for k, p in enumerate(_list(d, "pipes", "network")):
        loc = f"pipes[{k}]"
        _obj(p, loc, required=("id", "from", "to", "friction", "length", "diameter", "area"))
        pipes.append(Pipe(
            id=_str(p, "id", loc), from_node=_str(p, "from", loc), to_node=_str(p, "to", loc),
            friction=_num(p, "friction", loc), length=_num(p, "length", loc),
            diameter=_num(p, "diameter", loc), area=_num(p, "area", loc),
        ))
    for k, c in enumerate(_list(d, "compressors", "network")):
        loc = f"compressors[{k}]"
        _obj(c, loc, required=("id", "from", "to"), optional=("max_boost",))
        comps.append(Compressor(
            id=_str(c, "id", loc), from_node=_str(c, "from", loc), to_node=_str(c, "to", loc),
            max_boost=_num(c, "max_boost", loc, 1.4),
        ))
    kinds = {k.value: k for k in GNodeKind}
    for k, g in enumerate(_list(d, "gnodes", "network")):
        loc = f"gnodes[{k}]"
        _obj(g, loc, required=("id", "node", "kind"))
        kind = g["kind"]
        if kind not in kinds:
            raise InputError(f"unknown kind {kind!r}, expected one of {sorted(kinds)}",
                             location=f"{loc}.kind")
        gnodes.append(GNode(_str(g, "id", loc), _str(g, "node", loc), kinds[kind]))
    net = Network(nodes, pipes, comps, gnodes, name=d.get("name", ""))
    if validate:
        rep = validate_network(net)
        if not rep.ok:
            raise NetworkValidationError(rep)
    return net


def network_to_dict(net: Network) -> dict:
    out = {"name": net.name, "nodes": [], "pipes": [], "compressors": [], "gnodes": []}
    for n in net.nodes:
        rec = {
            "id": n.id,
            "min_pressure": n.min_pressure / MPA,
            "max_pressure": n.max_pressure / MPA,
            "min_h2_fraction": n.min_h2_fraction,
            "max_h2_fraction": n.max_h2_fraction,
        }
        if n.slack_pressure is not None:
            rec["slack_pressure"] = n.slack_pressure / MPA
        out["nodes"].append(rec)
    for p in net.pipes:
        out["pipes"].append({"id": p.id, "from": p.from_node, "to": p.to_node,
                             "friction": p.friction, "length": p.length,
                             "diameter": p.diameter, "area": p.area})
    for c in net.compressors:
        out["compressors"].append({"id": c.id, "from": c.from_node, "to": c.to_node,
                                   "max_boost": c.max_boost})
    for g in net.gnodes:
        out["gnodes"].append({"id": g.id, "node": g.physical_node, "kind": g.kind.value})
    return out


def load_network(path) -> Network:
    path = resolve(path)
    d = _read_json(path)
    try:
        return network_from_dict(d)
    except InputError as exc:
        raise InputError(str(exc), path) from exc


def dump_network(net: Network, path):
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1) + "\n")


# ---------------------------------------------------------------------------
# scenarios

_GAS_KEYS = tuple(f.name for f in fields(GasConstants))


def scenario_from_dict(d: dict, net: Network | None = None) -> MarketScenario:
    _obj(d, "scenario", optional=("name", "defaults", "offers", "bids", "fixed_demands"))
    defaults = _obj(d.get("defaults", {}), "defaults",
                    optional=("co2_incentive", "compressor_cost_rate", "gas"))
    gas = _obj(defaults.get("gas", {}), "defaults.gas", optional=_GAS_KEYS)
    constants = GasConstants(**{k: _num(gas, k, "defaults.gas") for k in gas})
    co2_default = _num(defaults, "co2_incentive", "defaults", 0.0)
    eta = _num(defaults, "compressor_cost_rate", "defaults", 0.13 / 3600.0)

    offers, bids, fixed, co2 = {}, {}, {}, {}
    src = d.get("offers", {})
    _obj(src, "offers", optional=tuple(src) if isinstance(src, dict) else ())
    for gid, o in src.items():
        loc = f"offers.{gid}"
        _obj(o, loc, required=("price",), optional=("max_supply",))
        offers[gid] = Offer(_num(o, "price", loc), _num(o, "max_supply", loc, allow_none=True))
    src = d.get("bids", {})
    _obj(src, "bids", optional=tuple(src) if isinstance(src, dict) else ())
    for gid, b in src.items():
        loc = f"bids.{gid}"
        _obj(b, loc, required=("price", "max_energy"), optional=("co2_incentive",))
        bids[gid] = Bid(_num(b, "price", loc), _num(b, "max_energy", loc))
        co2[gid] = _num(b, "co2_incentive", loc, co2_default)
    src = d.get("fixed_demands", {})
    _obj(src, "fixed_demands", optional=tuple(src) if isinstance(src, dict) else ())
    for gid, f in src.items():
        loc = f"fixed_demands.{gid}"
        _obj(f, loc, required=("energy",), optional=("co2_incentive",))
        fixed[gid] = _num(f, "energy", loc)
        co2[gid] = _num(f, "co2_incentive", loc, co2_default)
    try:
        sc = MarketScenario(offers, bids, fixed, co2, eta, constants, name=d.get("name", ""))
    except ValueError as exc:
        raise InputError(str(exc), location="scenario") from exc
    if net is not None:
        rep = validate_scenario(net, sc)
        if not rep.ok:
            raise InputError(str(rep), location="scenario")
    return sc


def scenario_to_dict(sc: MarketScenario) -> dict:
    gas = {k: getattr(sc.constants, k) for k in _GAS_KEYS}
    out = {
        "name": sc.name,
        "defaults": {"compressor_cost_rate": sc.compressor_cost_rate, "gas": gas},
        "offers": {g: {"price": o.price, "max_supply": o.max_supply} for g, o in sc.offers.items()},
        "bids": {
            g: {"price": b.price, "max_energy": b.max_energy, "co2_incentive": sc.incentive(g)}
            for g, b in sc.bids.items()
        },
        "fixed_demands": {
            g: {"energy": e, "co2_incentive": sc.incentive(g)} for g, e in sc.fixed_demands.items()
        },
    }
    return out


def load_scenario(path, net: Network | None = None) -> MarketScenario:
    path = resolve(path)
    d = _read_json(path)
    try:
        return scenario_from_dict(d, net)
    except InputError as exc:
        raise InputError(str(exc), path) from exc


def dump_scenario(sc: MarketScenario, path):
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=1) + "\n")


# ---------------------------------------------------------------------------
# result bundles


@dataclass
class ResultBundle:
    network: Network
    scenario: MarketScenario
    solution: Solution
    report: dict  # MarketReport as plain data (None unless optimal)
    kkt: dict  # KktReport as plain data (None unless verified)


def _f(x):
    """JSON-safe float (inf/nan become strings)."""
    x = float(x)
    if math.isfinite(x):
        return x
    return str(x)


def report_to_dict(rep) -> dict:
    nodes = rep.nodes
    return {
        "objective": {"J_MR": rep.objective.j_mr, "J_CEM": rep.objective.j_cem,
                      "J_GC": rep.objective.j_gc, "J_EV": rep.objective.j_ev},
        "totals": {
            "ng_delivered_kg_s": rep.total_ng,
            "h2_delivered_kg_s": rep.total_h2,
            "energy_MJ_s": rep.total_energy,
            "average_ci_kgCO2_MJ": rep.average_carbon_intensity,
            "co2_kg_s": rep.total_co2,
            "d_ptc_usd_s": rep.d_ptc,
            "reconciled": rep.reconciled,
            "ng_supplied_kg_s": rep.supply_ng,
            "h2_supplied_kg_s": rep.supply_h2,
        },
        "nodes": [nodes.row(j) for j in nodes.node_ids],
        "consumers": [
            {
                "gnode": c.gnode_id, "node": c.node_id, "withdrawal_kg_s": c.withdrawal,
                "energy_MJ_s": c.energy, "gamma": c.gamma, "lambda_e": c.lambda_e,
                "lambda_c": c.revenue_component, "lambda_d": c.premium, "credit_usd_s": c.credit,
            }
            for c in rep.consumers
        ],
    }


def solution_to_dict(sol: Solution) -> dict:
    p = sol.problem
    eq_names = [f"{b}[{p._label(b, k)}]" for b, s in p.eq.items() for k in range(s.stop - s.start)]
    ineq_names = [f"{r.block}[{k}]" for k, r in enumerate(p.ineq_rows)]
    return {
        "status": sol.status.value,
        "iterations": sol.iterations,
        "kkt_residual": _f(sol.kkt_residual),
        "solve_time_s": sol.solve_time,
        "variables": p.variable_names(),
        "x": [float(v) for v in sol.x],
        "equality_rows": eq_names,
        "y": [float(v) for v in sol.y],
        "inequality_rows": ineq_names,
        "z": [float(v) for v in sol.z],
        "basis": None if sol.basis is None else {
            "P0": sol.basis.P0, "l0": sol.basis.l0, "A0": sol.basis.A0,
            "a0": sol.basis.a0, "c0": sol.basis.c0, "R0": sol.basis.R0,
        },
    }


def solution_from_dict(d: dict, net: Network, sc: MarketScenario) -> Solution:
    from .scaling import ScalingBasis

    p = assemble(net, sc)
    x, y, z = (np.array(d[k], dtype=float) for k in ("x", "y", "z"))
    if len(x) != p.n or len(y) != p.m_eq or len(z) != p.m_ineq:
        raise InputError("solution vectors do not match the network and scenario")
    kkt = d["kkt_residual"]
    return Solution(
        problem=p, x=x, y=y, z=z,
        status=SolveStatus(d["status"]),
        iterations=int(d["iterations"]),
        kkt_residual=float(kkt),
        basis=None if d.get("basis") is None else ScalingBasis(**d["basis"]),
        solve_time=float(d.get("solve_time_s", 0.0)),
    )


def bundle_to_dict(b: ResultBundle) -> dict:
    return {
        "units": {"pressure": "Pa (MPa in network block)", "flow": "kg/s", "energy": "MJ/s",
                  "price": "$/kg, $/MJ", "objective": "$/s"},
        "network": network_to_dict(b.network),
        "scenario": scenario_to_dict(b.scenario),
        "solution": solution_to_dict(b.solution),
        "report": b.report,
        "kkt": b.kkt,
    }


def bundle_from_dict(d: dict) -> ResultBundle:
    _obj(d, "bundle", required=("network", "scenario", "solution"),
         optional=("units", "report", "kkt"))
    net = network_from_dict(d["network"])
    sc = scenario_from_dict(d["scenario"], net)
    sol = solution_from_dict(d["solution"], net, sc)
    return ResultBundle(net, sc, sol, d.get("report"), d.get("kkt"))


def save_bundle(b: ResultBundle, path):
    Path(path).write_text(json.dumps(bundle_to_dict(b), indent=1) + "\n")


def load_bundle(path) -> ResultBundle:
    d = _read_json(path)
    try:
        return bundle_from_dict(d)
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed bundle: {exc}", path) from exc
    except InputError as exc:
        raise InputError(str(exc), path) from exc


# ---------------------------------------------------------------------------
# tables

NODE_COLUMNS = ("node", "P [MPa]", "gamma [-]", "CI [kgCO2/MJ]", "lambda_NG [$/kg]",
                "lambda_H2 [$/kg]", "lambda [$/kg]", "lambda_e [$/MJ]")
GNODE_COLUMNS = ("gnode", "node", "kind", "NG flow [kg/s]", "H2 flow [kg/s]", "total flow [kg/s]",
                 "energy [MJ/s]", "lambda_e [$/MJ]", "lambda_c [$/MJ]", "lambda_d [$/MJ]",
                 "credit [$/s]")
SUMMARY_COLUMNS = ("quantity", "value")


def report_tables(b: ResultBundle) -> dict:
    """Node, gNode and summary tables as lists of rows (first row is the header)."""
    sol, net, rep = b.solution, b.network, b.report
    if rep is None:
        raise InputError("bundle has no market report (solve was not optimal)")
    v = sol.primal()
    nodes = [NODE_COLUMNS]
    for k, n in enumerate(rep["nodes"]):
        nodes.append((
            n["node"], v["P"][k] / MPA, n["gamma"], n["carbon_intensity"], n["lambda_ng"],
            "-" if n["lambda_h2"] is None else n["lambda_h2"], n["lambda"], n["lambda_e"],
        ))
    cons = {c["gnode"]: c for c in rep["consumers"]}
    idx = net.node_index
    g_rows = [GNODE_COLUMNS]
    sup = {g.id: float(x) for g, x in zip(net.gnodes_of_kind(GNodeKind.NG_SUPPLIER), v["s_ng"])}
    sup.update({g.id: float(x) for g, x in zip(net.gnodes_of_kind(GNodeKind.H2_SUPPLIER), v["s_h2"])})
    for g in net.gnodes:
        j = idx[g.physical_node]
        lam_e = rep["nodes"][j]["lambda_e"]
        if g.id in cons:
            c = cons[g.id]
            d = c["withdrawal_kg_s"]
            g_rows.append((g.id, g.physical_node, g.kind.value, d * (1 - c["gamma"]),
                           d * c["gamma"], d, c["energy_MJ_s"], lam_e, c["lambda_c"],
                           c["lambda_d"], c["credit_usd_s"]))
        else:
            s = sup[g.id]
            h2 = g.kind is GNodeKind.H2_SUPPLIER
            R = b.scenario.constants.r_h2 if h2 else b.scenario.constants.r_ng
            g_rows.append((g.id, g.physical_node, g.kind.value, 0.0 if h2 else s,
                           s if h2 else 0.0, s, s * R, lam_e, "-", "-", "-"))
    t = rep["totals"]
    o = rep["objective"]
    summary = [SUMMARY_COLUMNS,
               ("status", sol.status.value),
               ("J_MR [$/s]", o["J_MR"]), ("J_CEM [$/s]", o["J_CEM"]), ("J_GC [$/s]", o["J_GC"]),
               ("J_EV [$/s]", o["J_EV"]),
               ("total NG delivered [kg/s]", t["ng_delivered_kg_s"]),
               ("total H2 delivered [kg/s]", t["h2_delivered_kg_s"]),
               ("total energy delivered [MJ/s]", t["energy_MJ_s"]),
               ("average carbon intensity [kgCO2/MJ]", t["average_ci_kgCO2_MJ"]),
               ("total CO2 [kgCO2/s]", t["co2_kg_s"]),
               ("pass-through credits D_PTC [$/s]", t["d_ptc_usd_s"])]
    return {"summary": summary, "nodes": nodes, "gnodes": g_rows}


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{v:.6g}"
    return str(v)


def format_table(rows) -> str:
    cells = [[_fmt(c) for c in r] for r in rows]
    widths = [max(len(r[k]) for r in cells) for k in range(len(cells[0]))]
    lines = []
    for i, r in enumerate(cells):
        lines.append("  ".join(c.rjust(w) if i else c.ljust(w) for c, w in zip(r, widths)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def format_csv(rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow([repr(float(c)) if isinstance(c, (float, np.floating)) else c for c in r])
    return buf.getvalue()


def make_bundle(net: Network, sc: MarketScenario, sol: Solution, tol: float = 1e-6) -> ResultBundle:
    """Bundle a solve with its market report and KKT audit (both None unless optimal)."""
    from .pricing import market_report
    from .verify import verify_solution

    if not sol.ok:
        return ResultBundle(net, sc, sol, None, None)
    return ResultBundle(net, sc, sol, report_to_dict(market_report(sol)),
                        verify_solution(sol, tol).as_dict())
