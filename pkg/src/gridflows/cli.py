"""Command-line front end: solve, compare solvers, run scenarios.

Exit codes: 0 success, 1 domain error (parse failure, divergence, missing
file), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cdf import CdfError, import_case, read_cdf, with_phase_shift
from .infonet import TRACE_COLUMNS
from .paynet import LOG_COLUMNS
from .powerflow import BRANCH_COLUMNS, BUS_COLUMNS, Diverged, PowerFlowError, SolverConfig, solve
from .simrunner import ScenarioError, load_scenario, run

SCHEMAS = {
    "pf.buses.csv": BUS_COLUMNS,
    "pf.branches.csv": BRANCH_COLUMNS,
    "pf.json": {"method": "str", "converged": "bool", "iterations": "int", "mismatch": "float",
                "mva_base": "float", "buses": BUS_COLUMNS, "branches": BRANCH_COLUMNS},
    "compare.json": {
        "summary": ["max_dv_mag_pu", "max_dv_ang_deg", "max_dp_pu", "max_dq_pu", "nr_iterations", "gs_iterations"],
        "buses": ["number", "dv_mag_pu", "dv_ang_deg"],
        "branches": ["from", "to", "dp_from_pu", "dq_from_pu"],
        "phase_shift_variant": ["branch", "degrees", "buses: number, dv_ang_deg", "max_abs_dv_ang_deg"],
    },
    "sim.trace.jsonl": ["type", "step", "time", "price", "inbox", "actions", "rejected", "deliveries",
                        "power_flow", "metering", "storage", "switches", "transactions", "violations", "utilities"],
    "sim.buses.csv": ["step", *BUS_COLUMNS],
    "sim.branches.csv": ["step", *BRANCH_COLUMNS],
    "sim.messages.csv": TRACE_COLUMNS,
    "sim.transactions.csv": LOG_COLUMNS,
    "sim.utilities.csv": ["agent", "utility"],
}


class CommandError(Exception):
    pass


def _load_case(path: str):
    p = Path(path)
    if not p.is_file():
        raise CommandError(f"file not found: {path}")
    if p.suffix.lower() == ".json":
        return import_case(p.read_text())
    return read_cdf(p)


def _shift(text: str | None):
    if not text:
        return None
    try:
        f, t, deg = text.split(",")
        return int(f), int(t), float(deg)
    except ValueError:
        raise CommandError(f"bad --phase-shift-override {text!r}; expected FROM,TO,DEGREES") from None


def _apply_shift(case, shift):
    if shift is None:
        return case
    try:
        return with_phase_shift(case, *shift)
    except KeyError:
        raise CommandError(f"no branch {shift[0]}-{shift[1]} in case") from None


def cmd_pf(args) -> int:
    case = _apply_shift(_load_case(args.case), _shift(args.phase_shift_override))
    sol = solve(case, SolverConfig(args.method, args.tol, args.max_iter))
    summary = f"converged in {sol.iterations} iterations, mismatch {sol.mismatch:.3e} pu (mva_base {case.mva_base})"
    if args.format == "json":
        text = sol.to_json() + "\n"
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
    else:
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / "buses.csv").write_text(sol.buses_csv())
            (out / "branches.csv").write_text(sol.branches_csv())
        else:
            sys.stdout.write(sol.buses_csv() + "\n" + sol.branches_csv())
    print(summary, file=sys.stdout if args.out else sys.stderr)
    return 0


def compare_solutions(case, tol=1e-8, gs_max_iter=None, shift=None) -> dict:
    nr = solve(case, SolverConfig("nr", tol))
    gs = solve(case, SolverConfig("gs", tol, gs_max_iter))
    dvm = gs.v_mag - nr.v_mag
    dva = gs.v_ang_deg - nr.v_ang_deg
    ds = gs.s_from - nr.s_from
    doc = {
        "summary": {
            "max_dv_mag_pu": float(np.max(np.abs(dvm))),
            "max_dv_ang_deg": float(np.max(np.abs(dva))),
            "max_dp_pu": float(np.max(np.abs(ds.real))) if ds.size else 0.0,
            "max_dq_pu": float(np.max(np.abs(ds.imag))) if ds.size else 0.0,
            "nr_iterations": nr.iterations,
            "gs_iterations": gs.iterations,
        },
        "buses": [
            {"number": n, "dv_mag_pu": float(a), "dv_ang_deg": float(b)} for n, a, b in zip(nr.bus_numbers, dvm, dva)
        ],
        "branches": [
            {"from": f, "to": t, "dp_from_pu": float(d.real), "dq_from_pu": float(d.imag)}
            for (f, t), d in zip(nr.branch_ends, ds)
        ],
    }
    if shift is not None:
        variant = solve(with_phase_shift(case, *shift), SolverConfig("nr", tol))
        dang = variant.v_ang_deg - nr.v_ang_deg
        doc["phase_shift_variant"] = {
            "branch": [shift[0], shift[1]],
            "degrees": shift[2],
            "buses": [{"number": n, "dv_ang_deg": float(d)} for n, d in zip(nr.bus_numbers, dang)],
            "max_abs_dv_ang_deg": float(np.max(np.abs(dang))),
        }
    return doc


def cmd_compare(args) -> int:
    case = _load_case(args.case)
    doc = compare_solutions(case, args.tol, args.max_iter, _shift(args.phase_shift_override))
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    s = doc["summary"]
    print(
        f"NR {s['nr_iterations']} it, GS {s['gs_iterations']} it; "
        f"max |dV| {s['max_dv_mag_pu']:.3e} pu, max |dangle| {s['max_dv_ang_deg']:.3e} deg, "
        f"max |dP| {s['max_dp_pu']:.3e} pu, max |dQ| {s['max_dq_pu']:.3e} pu"
    )
    if "phase_shift_variant" in doc:
        v = doc["phase_shift_variant"]
        print(f"phase shift {v['degrees']} deg on {v['branch'][0]}-{v['branch'][1]}: "
              f"max |dangle| vs baseline {v['max_abs_dv_ang_deg']:.3f} deg")
    if not args.out:
        sys.stdout.write(text)
    return 0


def cmd_sim(args) -> int:
    path = Path(args.scenario)
    if not path.is_file():
        raise CommandError(f"file not found: {args.scenario}")
    scenario = load_scenario(path)
    changes = {}
    if args.steps is not None:
        changes["steps"] = args.steps
    if args.seed is not None:
        changes["seed"] = args.seed
    if changes:
        scenario = scenario.replace(**changes)
    trace = run(scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.jsonl").write_text(trace.to_jsonl())
    (out / "buses.csv").write_text(trace.buses_csv())
    (out / "branches.csv").write_text(trace.branches_csv())
    (out / "messages.csv").write_text(trace.messages_csv())
    (out / "transactions.csv").write_text(trace.ledger.log_csv())
    (out / "utilities.csv").write_text(trace.utilities_csv())
    for agent, u in trace.utilities.items():
        print(f"{agent}: utility {u:.6g}")
    if trace.status != "completed":
        print(f"error: {trace.error}", file=sys.stderr)
        return 1
    print(f"{len(trace.records)} steps written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridflows", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--schema", action="store_true", help="print the output schemas as JSON and exit")
    sub = parser.add_subparsers(dest="command")

    pf = sub.add_parser("pf", help="solve a power-flow case")
    pf.add_argument("case")
    pf.add_argument("--method", choices=["nr", "gs"], default="nr")
    pf.add_argument("--tol", type=float, default=1e-8)
    pf.add_argument("--max-iter", type=int, default=None, help="default 50 for nr, 10000 for gs")
    pf.add_argument("--phase-shift-override", metavar="FROM,TO,DEG")
    pf.add_argument("--out")
    pf.add_argument("--format", choices=["json", "csv"], default="json")
    pf.set_defaults(func=cmd_pf)

    cmp_ = sub.add_parser("compare", help="compare Newton-Raphson and Gauss-Seidel solutions")
    cmp_.add_argument("case")
    cmp_.add_argument("--out")
    cmp_.add_argument("--tol", type=float, default=1e-8)
    cmp_.add_argument("--max-iter", type=int, default=None, help="Gauss-Seidel iteration limit")
    cmp_.add_argument("--phase-shift-override", metavar="FROM,TO,DEG")
    cmp_.set_defaults(func=cmd_compare)

    sim = sub.add_parser("sim", help="run a multi-network scenario")
    sim.add_argument("scenario")
    sim.add_argument("--steps", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out", default="sim-out")
    sim.set_defaults(func=cmd_sim)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.schema:
        print(json.dumps(SCHEMAS, indent=2))
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except Diverged as exc:
        print(f"error: Diverged: {exc}", file=sys.stderr)
    except (CommandError, CdfError, PowerFlowError, ScenarioError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
