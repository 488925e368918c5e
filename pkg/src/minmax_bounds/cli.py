"""Command-line interface tying the bound pipeline together.

Subcommands
-----------
validate        check an instance file (symmetry, definiteness, ranks, ranges)
hinf-gamma      smallest feasible disturbance weight of the discounted game
bound           basic certified lower bound (R = R0, s = 0)
optimize        alternating optimization of the certified bound
verify          certify an initial state (prefix check + region program)
simulate        closed-loop rollouts against selectable adversaries
gen-random      draw a random instance to a file (deterministic per seed)
paper-example   run the built-in benchmark example end to end

Exit codes: 0 success, 1 user error, 2 numerical failure.  With
``--format json`` errors are emitted as one-line JSON objects on stderr.
The environment variable MINMAX_BOUNDS_RICCATI_RTOL overrides the default
Riccati fixed-point tolerance (see Tolerances.riccati_rtol).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import bounds as bounds_mod
from . import sim as sim_mod
from .config import DEFAULT_TOLERANCES
from .hinf import RiccatiError, hinf_optimal_gamma, solve_discounted
from .model import (
    BoxInput,
    DisturbanceEllipsoid,
    ModelError,
    ProblemInstance,
    load,
    random_instance,
    save,
    validate,
    with_gamma,
)

REPORT_SCHEMA_VERSION = 1

# system and cost matrices of the built-in benchmark example; symmetric
# entries of the cost blocks are filled by symmetry
DEMO_A = np.array([
    [0.434, 0.050, 0.212, 0.007],
    [0.264, 0.001, 0.092, 0.419],
    [0.307, 0.255, 0.371, 0.359],
    [0.364, 0.003, 0.291, 0.427],
])
DEMO_B = np.array([
    [0.739, 0.550],
    [0.371, 0.748],
    [0.323, 0.760],
    [0.491, 0.472],
])
DEMO_G = np.array([
    [0.802, 0.666, 0.737, 0.629],
    [0.471, 0.677, 0.866, 0.793],
    [0.203, 0.9425, 0.991, 0.449],
    [0.576, 0.7701, 0.504, 0.524],
])
DEMO_R0 = np.array([
    [0.262, 0.560],
    [0.560, 1.33],
])
DEMO_Q0 = np.array([
    [0.105, 0.286, 0.221, 0.271],
    [0.286, 0.929, 0.618, 0.687],
    [0.221, 0.618, 1.22, 0.854],
    [0.271, 0.687, 0.854, 0.873],
])
DEMO_ALPHA = 0.95


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; user errors are 1
        raise UserError(message)


def _tolerances():
    cfg = DEFAULT_TOLERANCES
    env = os.environ.get("MINMAX_BOUNDS_RICCATI_RTOL")
    if env:
        try:
            cfg = cfg.with_overrides(riccati_rtol=float(env))
        except ValueError as exc:
            raise UserError(f"bad MINMAX_BOUNDS_RICCATI_RTOL: {env!r}") from exc
    return cfg


def _emit(report, fmt, stream=None):
    stream = sys.stdout if stream is None else stream
    if fmt == "json":
        json.dump(report, stream, indent=1, default=_jsonify)
        stream.write("\n")
        return
    _emit_text(report, stream)


def _jsonify(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def _emit_text(report, stream, indent=0):
    pad = "  " * indent
    for key, val in report.items():
        if isinstance(val, dict):
            stream.write(f"{pad}{key}:\n")
            _emit_text(val, stream, indent + 1)
        elif isinstance(val, list) and val and isinstance(val[0], dict):
            stream.write(f"{pad}{key}:\n")
            for item in val:
                stream.write(pad + "  - " + ", ".join(f"{k}={_fmt(v)}" for k, v in item.items()) + "\n")
        else:
            stream.write(f"{pad}{key}: {_fmt(val)}\n")


def _fmt(val):
    if isinstance(val, float):
        return f"{val:.6g}"
    if isinstance(val, np.ndarray):
        return np.array2string(val, precision=5, suppress_small=True)
    return str(val)


def _parse_x0(text, n):
    try:
        x0 = np.array([float(v) for v in text.split(",")], dtype=float)
    except ValueError as exc:
        raise UserError(f"bad --x0 value {text!r}: expected comma-separated reals") from exc
    if x0.size != n:
        raise UserError(f"--x0 has {x0.size} entries, the instance has {n} states")
    return x0


def _load_instance(path) -> ProblemInstance:
    try:
        return load(path)
    except FileNotFoundError as exc:
        raise UserError(f"cannot read {path}: {exc}") from exc
    except ModelError as exc:
        raise UserError(f"bad instance file {path}: {exc}") from exc


def demo_instance(u_max=1.0, gamma0=None, cfg=None) -> tuple:
    """Benchmark instance; gamma0 defaults to 1.1 x the optimal gain."""
    base = ProblemInstance(
        A=DEMO_A, B=DEMO_B, G=DEMO_G, Q0=DEMO_Q0, R0=DEMO_R0,
        gamma0=1.0, alpha=DEMO_ALPHA,
        U=BoxInput(u_max=np.full(2, float(u_max))),
        W=DisturbanceEllipsoid.unit_ball(4),
    )
    gamma_star = hinf_optimal_gamma(base, cfg=cfg)
    if gamma0 is None:
        gamma0 = 1.1 * gamma_star
    return with_gamma(base, gamma0), gamma_star


def cmd_validate(args, cfg):
    p = _load_instance(args.file)
    report = validate(p, tol=args.rank_tol)
    doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "command": "validate",
        "passed": report.passed,
        "findings": [
            {"check": name, "status": "pass" if ok else "fail", "measured": meas}
            for name, ok, meas in report.findings
        ],
    }
    _emit(doc, args.format)
    return 0 if report.passed else 2


def cmd_hinf_gamma(args, cfg):
    p = _load_instance(args.file)
    gs = hinf_optimal_gamma(p, rel_tol=args.rel_tol, cfg=cfg)
    _emit({
        "schema_version": REPORT_SCHEMA_VERSION,
        "command": "hinf-gamma",
        "gamma_star": gs,
        "suggested_gamma0": 1.1 * gs,
    }, args.format)
    return 0


def _cert_doc(cert):
    return {
        "provenance": cert.provenance,
        "trace_value": cert.trace_value,
        "s": cert.s,
        "offset": cert.offset,
        "value": cert.value,
        "gamma": cert.gamma,
        "R": cert.R,
        "P": cert.P,
    }


def cmd_bound(args, cfg):
    p = _load_instance(args.file)
    cert = bounds_mod.basic_bound(p, cfg=cfg)
    doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "command": "bound",
        "certificate": _cert_doc(cert),
    }
    _emit(doc, args.format)
    if args.output:
        bounds_mod.export_certificate(cert, args.output)
    return 0


def cmd_optimize(args, cfg):
    p = _load_instance(args.file)
    cert, log = bounds_mod.optimize_bound(p, rounds=args.rounds, cfg=cfg)
    doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "command": "optimize",
        "certificate": _cert_doc(cert),
        "rounds": log.rounds,
        "warnings": log.warnings,
    }
    _emit(doc, args.format)
    if args.output:
        bounds_mod.export_certificate(cert, args.output)
    return 0


def cmd_verify(args, cfg):
    p = _load_instance(args.file)
    x0 = _parse_x0(args.x0, p.n)
    cert = bounds_mod.basic_bound(p, cfg=cfg)
    doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "command": "verify",
        "x0": x0,
        "bound_at_x0": bounds_mod.evaluate_bound(cert, x0),
    }
    try:
        region = bounds_mod.verify_initial_state(p, cert, x0, prefix_T=args.prefix, cfg=cfg)
        doc["verified"] = True
        doc["region"] = {"level": region.level, "prefix_T": region.prefix_T}
        code = 0
    except bounds_mod.PrefixViolation as exc:
        doc["verified"] = False
        doc["reason"] = f"prefix violation at step {exc.step}"
        code = 2
    except bounds_mod.LmiInfeasible as exc:
        doc["verified"] = False
        doc["reason"] = f"inconclusive: {exc}"
        code = 2
    _emit(doc, args.format)
    return code


def cmd_simulate(args, cfg):
    p = _load_instance(args.file)
    x0 = _parse_x0(args.x0, p.n)
    cert = bounds_mod.basic_bound(p, cfg=cfg)
    if args.policy != "clipped":
        raise UserError(f"unknown policy {args.policy!r}")
    policy = sim_mod.clipped_policy(cert.K, p.U)
    adversaries = {}
    for name in args.adversary:
        if name == "greedy":
            adversaries[name] = sim_mod.greedy_adversary(cert.P, p, policy)
        elif name == "clipped-kw":
            adversaries[name] = sim_mod.clipped_gain_adversary(p, cert.Kw)
        elif name == "random":
            adversaries[name] = sim_mod.random_boundary_adversary(p, seed=args.seed)
        elif name == "zero":
            adversaries[name] = sim_mod.zero_adversary(p)
        else:
            raise UserError(f"unknown adversary {name!r}")
    T = args.horizon or sim_mod.default_horizon(p.alpha)
    verified = True
    reason = ""
    try:
        bounds_mod.verify_initial_state(p, cert, x0, cfg=cfg)
    except bounds_mod.BoundError as exc:
        verified = False
        reason = str(exc)
    report = sim_mod.gap_report(cert, p, x0, {"clipped": policy}, adversaries,
                                T=T, verified=verified)
    doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "command": "simulate",
        "x0": x0,
        "horizon": T,
        "lower_bound": report.lower_bound,
        "verified": report.verified,
        "caveat": report.caveat or reason,
        "runs": report.to_rows(),
        "best_per_policy": report.best_per_policy,
        "note": "simulated costs are lower estimates of each policy's worst case",
    }
    _emit(doc, args.format)
    if args.trace_csv:
        tr = sim_mod.rollout(p, policy, list(adversaries.values())[0], x0, T)
        with open(args.trace_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["t"] + [f"x{i}" for i in range(p.n)] + [f"u{i}" for i in range(p.m)]
                + [f"w{i}" for i in range(p.l)] + ["stage_cost"]
            )
            for t in range(tr.horizon):
                writer.writerow([t, *tr.states[t], *tr.inputs[t], *tr.disturbances[t],
                                 tr.stage_costs[t]])
    return 0


def cmd_gen_random(args, cfg):
    p = random_instance(args.n, args.m, args.l, args.p, seed=args.seed,
                        alpha=args.alpha, u_max=args.u_max)
    if args.calibrate_gamma:
        gs = hinf_optimal_gamma(p, cfg=cfg)
        p = with_gamma(p, 1.1 * gs)
    save(p, args.output)
    _emit({
        "schema_version": REPORT_SCHEMA_VERSION,
        "command": "gen-random",
        "output": args.output,
        "seed": args.seed,
        "gamma0": p.gamma0,
    }, args.format)
    return 0


def cmd_paper_example(args, cfg):
    p, gamma_star = demo_instance(u_max=args.u_max, cfg=cfg)
    basic = bounds_mod.basic_bound(p, cfg=cfg)
    cert, log = bounds_mod.optimize_bound(p, rounds=args.rounds, cfg=cfg)
    improvement = (cert.value - basic.value) / abs(basic.value) if basic.value else 0.0
    doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "command": "paper-example",
        "u_max": args.u_max,
        "alpha": DEMO_ALPHA,
        "gamma_star": gamma_star,
        "gamma0": p.gamma0,
        "basic": _cert_doc(basic) if args.full else {"value": basic.value},
        "optimized": _cert_doc(cert) if args.full else {"value": cert.value, "s": cert.s},
        "basic_value": basic.value,
        "optimized_value": cert.value,
        "improvement_pct": 100.0 * improvement,
        "rounds": log.rounds,
        "warnings": log.warnings,
    }
    _emit(doc, args.format)
    if args.output:
        bounds_mod.export_certificate(cert, args.output)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="minmax-bounds",
                     description="certified lower bounds for constrained min-max control")
    parser.add_argument("--format", choices=("text", "json"), default="text")
    # the format flag is also accepted after the subcommand
    common = _Parser(add_help=False)
    common.add_argument("--format", choices=("text", "json"), default="text")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("validate", parents=[common], help="check an instance file")
    s.add_argument("file")
    s.add_argument("--rank-tol", type=float, default=None)
    s.set_defaults(fn=cmd_validate)

    s = sub.add_parser("hinf-gamma", parents=[common],
                       help="optimal disturbance weight by bisection")
    s.add_argument("file")
    s.add_argument("--rel-tol", type=float, default=None)
    s.set_defaults(fn=cmd_hinf_gamma)

    s = sub.add_parser("bound", parents=[common], help="basic certified lower bound")
    s.add_argument("file")
    s.add_argument("--output", help="write the certificate JSON here")
    s.set_defaults(fn=cmd_bound)

    s = sub.add_parser("optimize", parents=[common], help="alternating bound optimization")
    s.add_argument("file")
    s.add_argument("--rounds", type=int, default=DEFAULT_TOLERANCES.alternation_rounds)
    s.add_argument("--output", help="write the certificate JSON here")
    s.set_defaults(fn=cmd_optimize)

    s = sub.add_parser("verify", parents=[common], help="certify an initial state")
    s.add_argument("file")
    s.add_argument("--x0", required=True, help="comma-separated state")
    s.add_argument("--prefix", type=int, default=DEFAULT_TOLERANCES.verify_prefix_steps)
    s.set_defaults(fn=cmd_verify)

    s = sub.add_parser("simulate", parents=[common], help="closed-loop rollouts")
    s.add_argument("file")
    s.add_argument("--x0", required=True)
    s.add_argument("--policy", default="clipped", choices=("clipped",))
    s.add_argument("--adversary", nargs="+", default=["greedy"],
                   choices=("greedy", "clipped-kw", "random", "zero"))
    s.add_argument("--horizon", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trace-csv", help="write the first adversary's trace here")
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("gen-random", parents=[common], help="draw a random instance")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--l", type=int, required=True)
    s.add_argument("--p", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--alpha", type=float, default=0.95)
    s.add_argument("--u-max", type=float, default=1.0)
    s.add_argument("--calibrate-gamma", action="store_true",
                   help="set gamma0 to 1.1x the optimal gain")
    s.add_argument("--output", required=True)
    s.set_defaults(fn=cmd_gen_random)

    s = sub.add_parser("paper-example", parents=[common],
                       help="run the built-in benchmark example")
    s.add_argument("--u-max", type=float, default=1.0,
                   help="box half-width of the benchmark input constraint "
                        "(the published example leaves it unstated; default 1)")
    s.add_argument("--rounds", type=int, default=DEFAULT_TOLERANCES.alternation_rounds)
    s.add_argument("--full", action="store_true", help="include matrices in the report")
    s.add_argument("--output", help="write the optimized certificate JSON here")
    s.set_defaults(fn=cmd_paper_example)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UserError as exc:
        _error(str(exc), "text" if argv is None else _sniff_format(argv), code=1)
        return 1
    cfg = None
    try:
        cfg = _tolerances()
        return args.fn(args, cfg)
    except UserError as exc:
        _error(str(exc), args.format, code=1)
        return 1
    except (RiccatiError, bounds_mod.BoundError, np.linalg.LinAlgError) as exc:
        _error(f"numerical failure: {exc}", args.format, code=2)
        return 2


def _sniff_format(argv):
    argv = argv or []
    for i, a in enumerate(argv):
        if a == "--format" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--format="):
            return a.split("=", 1)[1]
    return "text"


def _error(message, fmt, code):
    if fmt == "json":
        sys.stderr.write(json.dumps({"error": {"message": message, "exit_code": code}}) + "\n")
    else:
        sys.stderr.write(f"error: {message}\n")


def main():  # console entry point
    sys.exit(run())


if __name__ == "__main__":
    main()
