"""Command-line interface.

    blendmarket solve  --network 8node.net --scenario scenario2.mkt
    blendmarket verify result.json
    blendmarket report result.json --format csv
    blendmarket sweep  --network 40node_ci.net --scenario 40node_ci_s2.mkt \
                       --sweep-param co2_incentive --sweep-grid 0.055,0.155

Exit codes: 0 optimal and verified, 2 verification failure, 3 solver failure,
4 input error.  Bundles are written to ``--out`` or, failing that, to the
directory named by ``BLENDMARKET_OUT`` (default: current directory).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import io
from .domain import NetworkValidationError
from .nlp import assemble
from .pricing import market_report
from .solver import SolveOptions, SolverError, solve
from .verify import VerificationError, verify_solution

log = logging.getLogger("blendmarket")

EXIT_OK, EXIT_VERIFY, EXIT_SOLVER, EXIT_INPUT = 0, 2, 3, 4
OUT_ENV = "BLENDMARKET_OUT"
SWEEP_PARAMS = ("co2_incentive", "compressor_cost_rate")
SWEEP_COLUMNS = ("parameter", "value", "status", "J_EV [$/s]", "J_CEM [$/s]", "total CO2 [kgCO2/s]",
                 "total NG [kg/s]", "total H2 [kg/s]", "D_PTC [$/s]")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _options(args) -> SolveOptions:
    return SolveOptions(kkt_tolerance=args.tol, max_iterations=args.max_iter)


def _default_out(args) -> Path:
    if args.out:
        return Path(args.out)
    base = Path(os.environ.get(OUT_ENV, "."))
    return base / f"{Path(args.network).stem}_{Path(args.scenario).stem}.json"


def _load(args):
    net = io.load_network(args.network)
    sc = io.load_scenario(args.scenario, net)
    return net, sc


def _emit(text: str, out=None):
    if out:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
    else:
        print(text)


def _render(tables: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps({k: [dict(zip(t[0], r)) for r in t[1:]] for k, t in tables.items()}, indent=1)
    parts = []
    for name, rows in tables.items():
        if fmt == "csv":
            parts.append(f"# {name}\n" + io.format_csv(rows))
        else:
            parts.append(f"{name}\n" + io.format_table(rows) + "\n")
    return "\n".join(parts)


def _verify_code(kkt: dict, strict: bool) -> int:
    if kkt is None:
        return EXIT_SOLVER
    ok = kkt["ok"] if strict else kkt["first_order_ok"]
    return EXIT_OK if ok else EXIT_VERIFY


def _kkt_lines(kkt: dict) -> str:
    rows = [("check", "residual", "tolerance", "passed", "worst at")]
    for name, c in kkt["checks"].items():
        rows.append((name, c["residual"], c["tolerance"], "yes" if c["passed"] else "NO", c["location"]))
    return io.format_table(rows)


# ---------------------------------------------------------------------------
# commands


def cmd_solve(args) -> int:
    net, sc = _load(args)
    try:
        sol = solve(assemble(net, sc), _options(args))
    except SolverError as exc:
        raise CliError(f"solver failed: {exc}", EXIT_SOLVER) from exc
    bundle = io.make_bundle(net, sc, sol, args.verify_tol)
    out = _default_out(args)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.save_bundle(bundle, out)
    log.info("wrote %s", out)
    if not sol.ok:
        print(f"status {sol.status.value} after {sol.iterations} iterations, "
              f"KKT residual {sol.kkt_residual:.3g}", file=sys.stderr)
        return EXIT_SOLVER
    tables = io.report_tables(bundle)
    print(_render({"summary": tables["summary"]}, args.format))
    code = _verify_code(bundle.kkt, args.strict)
    if code:
        print(_kkt_lines(bundle.kkt), file=sys.stderr)
    return code


def cmd_verify(args) -> int:
    bundle = io.load_bundle(args.bundle)
    if not bundle.solution.ok:
        print(f"solution status is {bundle.solution.status.value}", file=sys.stderr)
        return EXIT_SOLVER
    try:
        rep = verify_solution(bundle.solution, args.tol)
    except VerificationError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    kkt = rep.as_dict()
    if args.format == "json":
        print(json.dumps(kkt, indent=1, default=float))
    else:
        print(_kkt_lines(kkt))
    return _verify_code(kkt, args.strict)


def cmd_report(args) -> int:
    bundle = io.load_bundle(args.bundle)
    if not bundle.solution.ok:
        print(f"solution status is {bundle.solution.status.value}", file=sys.stderr)
        return EXIT_SOLVER
    if bundle.report is None:
        bundle = replace(bundle, report=io.report_to_dict(market_report(bundle.solution)))
    _emit(_render(io.report_tables(bundle), args.format), args.out)
    return EXIT_OK


def sweep(net, sc, param: str, grid, opts: SolveOptions | None = None):
    """One solve per grid value, rows in grid order."""
    if param not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {param!r}; choose from {SWEEP_PARAMS}")
    rows = []
    for value in grid:
        if param == "co2_incentive":
            s = sc.with_incentive(value)
        else:
            s = replace(sc, compressor_cost_rate=float(value))
        try:
            sol = solve(assemble(net, s), opts)
        except SolverError:
            rows.append((param, float(value), "SolverError") + (float("nan"),) * 6)
            continue
        if not sol.ok:
            rows.append((param, float(value), sol.status.value) + (float("nan"),) * 6)
            continue
        r = market_report(sol)
        rows.append((param, float(value), sol.status.value, r.objective.j_ev, r.objective.j_cem,
                     r.total_co2, r.total_ng, r.total_h2, r.d_ptc))
    return rows


def _grid(text: str):
    try:
        vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise CliError(f"--sweep-grid: {exc}", EXIT_INPUT) from exc
    if not vals:
        raise CliError("--sweep-grid is empty", EXIT_INPUT)
    return vals


def cmd_sweep(args) -> int:
    net, sc = _load(args)
    rows = sweep(net, sc, args.sweep_param, _grid(args.sweep_grid), _options(args))
    _emit(_render({"sweep": [SWEEP_COLUMNS] + rows}, args.format), args.out)
    return EXIT_OK if all(r[2] == "Optimal" for r in rows) else EXIT_SOLVER


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="blendmarket", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def solver_flags(p):
        p.add_argument("--network", required=True, help="network file (.net) or bundled name")
        p.add_argument("--scenario", required=True, help="scenario file (.mkt) or bundled name")
        p.add_argument("--tol", type=float, default=1e-8, help="solver KKT tolerance (scaled)")
        p.add_argument("--max-iter", type=int, default=200)

    def fmt(p):
        p.add_argument("--format", choices=("table", "csv", "json"), default="table")

    p = sub.add_parser("solve", help="clear the market and write a result bundle")
    solver_flags(p)
    fmt(p)
    p.add_argument("--out", help=f"bundle path (default: ${OUT_ENV}/<network>_<scenario>.json)")
    p.add_argument("--verify-tol", type=float, default=1e-6)
    p.add_argument("--strict", action="store_true", help="also fail on pipe-sign/price-flow checks")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="audit the KKT conditions of a bundle")
    p.add_argument("bundle")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="node and gNode tables of a bundle")
    p.add_argument("bundle")
    fmt(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", help="re-solve over a parameter grid")
    solver_flags(p)
    fmt(p)
    p.add_argument("--sweep-param", choices=SWEEP_PARAMS, default="co2_incentive")
    p.add_argument("--sweep-grid", required=True, help="comma-separated values")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (io.InputError, NetworkValidationError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
