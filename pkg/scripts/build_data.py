"""Write the bundled network and scenario files into src/blendmarket/data.

The 8-node pipe lengths come from ``calibrate_8node.py``.  The 40-node
network is a synthetic meshed system with three supply points; its layout
and pipe lengths are listed below.
"""

import math
from pathlib import Path

from blendmarket.domain import (
    Bid, Compressor, GNode, GNodeKind, MarketScenario, Network, Node, Offer, Pipe,
)
from blendmarket.io import dump_network, dump_scenario

OUT = Path(__file__).resolve().parents[1] / "src" / "blendmarket" / "data"
MPA = 1e6
NG_PRICE, H2_PRICE = 0.2, 0.8
FRICTION = 0.01


def pipe(pid, a, b, length, diameter=0.6):
    return Pipe(pid, a, b, FRICTION, length, diameter, math.pi * diameter**2 / 4)


def node(nid, slack=None, pmin=3.0, pmax=6.0):
    return Node(nid, pmin * MPA, pmax * MPA, 0.0, 0.1, None if slack is None else slack * MPA)


# ---------------------------------------------------------------------------
# 8 nodes

LENGTHS_8 = {"J2-J7": 4609.701, "J7-J3": 9170.894, "J3-J4": 13113.654,
             "J6-J4": 3603.181, "J8-J5": 5830.706}
DIAMETERS_8 = {"J6-J4": 0.3}


def network_8():
    nodes = [node("J1", slack=4.0)] + [node(f"J{k}") for k in range(2, 9)]
    pipes = []
    for k, (e, L) in enumerate(LENGTHS_8.items(), 1):
        a, b = e.split("-")
        pipes.append(pipe(f"P{k}", a, b, L, DIAMETERS_8.get(e, 0.6)))
    comps = [Compressor("C1", "J1", "J2"), Compressor("C2", "J2", "J6"), Compressor("C3", "J4", "J8")]
    g = [GNode("S1", "J1", GNodeKind.NG_SUPPLIER), GNode("S2", "J7", GNodeKind.H2_SUPPLIER),
         GNode("D1", "J3", GNodeKind.FLEXIBLE_CONSUMER), GNode("D2", "J5", GNodeKind.FLEXIBLE_CONSUMER),
         GNode("D3", "J5", GNodeKind.FLEXIBLE_CONSUMER)]
    return Network(nodes, pipes, comps, g, name="8-node")


def scenario_8(co2, name):
    bids = {d: Bid(0.019, 2000.0) for d in ("D1", "D2", "D3")}
    return MarketScenario({"S1": Offer(NG_PRICE), "S2": Offer(H2_PRICE)}, bids, {},
                          {d: co2 for d in bids}, name=name)


# ---------------------------------------------------------------------------
# 40 nodes

SOURCES_40 = ("38", "39", "40")
H2_40 = ("10", "27", "30")
INNER_40 = ("28", "29", "31", "32", "33", "34", "35", "36")
COMPRESSORS_40 = [("38", "31"), ("39", "33"), ("40", "35"), ("34", "16"), ("29", "21"), ("28", "13")]
# (from, to, length in km, diameter in m)
PIPES_40 = [
    # region fed by the slack supply 38
    ("31", "8", 15, 0.6), ("31", "32", 10, 0.9), ("32", "10", 10, 0.6), ("10", "6", 10, 0.6),
    ("6", "26", 10, 0.6), ("8", "26", 10, 0.6), ("26", "7", 10, 0.6), ("7", "9", 10, 0.5),
    ("26", "5", 10, 0.6), ("5", "4", 10, 0.6), ("4", "12", 10, 0.5), ("8", "1", 10, 0.6),
    ("1", "2", 10, 0.6), ("2", "3", 10, 0.5), ("3", "4", 10, 0.5), ("32", "11", 10, 0.6),
    ("11", "14", 10, 0.6), ("14", "28", 10, 0.6), ("13", "12", 10, 0.5), ("13", "15", 10, 0.5),
    # region fed by 40
    ("35", "30", 10, 0.9), ("30", "18", 10, 0.6), ("35", "36", 10, 0.6), ("36", "19", 10, 0.6),
    ("19", "20", 10, 0.5), ("18", "20", 10, 0.5), ("20", "29", 10, 0.5), ("36", "29", 15, 0.5),
    ("21", "15", 10, 0.5),
    # region fed by 39, with the narrow corridor 16 -> 17 -> 22
    ("33", "27", 10, 0.9), ("27", "25", 10, 0.6), ("27", "24", 10, 0.6), ("24", "23", 10, 0.6),
    ("25", "23", 10, 0.5), ("33", "34", 10, 0.6), ("16", "17", 15, 0.4), ("17", "22", 30, 0.3),
    ("16", "37", 10, 0.5), ("14", "25", 10, 0.5),
]
BID_40 = 0.019  # $/MJ
LOW_BID_40 = ("12", "16", "17", "37")


def network_40(colocated_h2=False):
    ids = [str(k) for k in range(1, 41)]
    nodes = [node(i, slack=5.0 if i == "38" else None) for i in ids]
    pipes = [pipe(f"P{k}", a, b, L * 1000.0, D) for k, (a, b, L, D) in enumerate(PIPES_40, 1)]
    comps = [Compressor(f"C{k}", a, b) for k, (a, b) in enumerate(COMPRESSORS_40, 1)]
    g = [GNode(f"NG{s}", s, GNodeKind.NG_SUPPLIER) for s in SOURCES_40]
    h2_nodes = SOURCES_40 if colocated_h2 else H2_40
    g += [GNode(f"H2{s}", s, GNodeKind.H2_SUPPLIER) for s in h2_nodes]
    skip = set(SOURCES_40) | set(INNER_40) | (set() if colocated_h2 else set(H2_40))
    g += [GNode(f"D{i}", i, GNodeKind.FLEXIBLE_CONSUMER) for i in ids if i not in skip]
    name = "40-node, hydrogen at supply points" if colocated_h2 else "40-node"
    return Network(nodes, pipes, comps, g, name=name)


def scenario_40(net, co2, low_bid=None, name=""):
    offers = {g.id: Offer(NG_PRICE) for g in net.gnodes_of_kind(GNodeKind.NG_SUPPLIER)}
    offers.update({g.id: Offer(H2_PRICE) for g in net.gnodes_of_kind(GNodeKind.H2_SUPPLIER)})
    bids = {}
    for g in net.consumers:
        price = low_bid if low_bid is not None and g.physical_node in LOW_BID_40 else BID_40
        bids[g.id] = Bid(price, 1600.0)
    return MarketScenario(offers, bids, {}, {g: co2 for g in bids}, name=name)


def build():
    OUT.mkdir(parents=True, exist_ok=True)
    n8 = network_8()
    dump_network(n8, OUT / "8node.net")
    dump_scenario(scenario_8(0.0, "8-node, no incentive"), OUT / "scenario1.mkt")
    dump_scenario(scenario_8(0.055, "8-node, incentive 0.055 $/kgCO2"), OUT / "scenario2.mkt")
    base = network_40()
    ci = network_40(colocated_h2=True)
    dump_network(base, OUT / "40node.net")
    dump_network(ci, OUT / "40node_ci.net")
    dump_scenario(scenario_40(base, 0.055, name="40-node baseline"), OUT / "40node_baseline.mkt")
    dump_scenario(scenario_40(ci, 0.055, name="40-node, uniform bids"), OUT / "40node_ci_s1.mkt")
    dump_scenario(scenario_40(ci, 0.055, BID_40 / 2, name="40-node, four low bids"), OUT / "40node_ci_s2.mkt")
    dump_scenario(scenario_40(ci, 0.155, BID_40 / 2, name="40-node, four low bids, incentive 0.155"),
                  OUT / "40node_ci_s3.mkt")


if __name__ == "__main__":
    build()
