"""Command-line interface.

Exit codes: 0 success, 2 parse/validation error, 3 solver did not converge,
4 identification precondition failed, 5 internal error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .documents import (
    digest,
    dumps,
    loads,
    parse_allocation,
    parse_prices,
    parse_shares,
    read_market,
    serialize_market,
    to_csv,
)
from .entropy import HeterogeneitySpec, solve_price_equilibrium
from .errors import HedonicError, MaxIterations, ParseError
from .flow import solve_equilibrium
from .identification import ObservedMarket, identify_primitives
from .market import Allocation, verify_equilibrium, worked_example
from .simulator import draw_population, round_trip, simulate_choices


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _seed(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def _header(command, *inputs):
    doc = {"command": command, "tool_version": __version__}
    if len(inputs) == 1:
        doc["input_digest"] = digest(inputs[0])
    else:
        doc["input_digest"] = [digest(d) for d in inputs]
    return doc


def _labels(spec):
    return {"producers": list(spec.producer_types), "consumers": list(spec.consumer_types), "qualities": list(spec.qualities)}


def _read_json(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return loads(data.decode("utf-8"), str(path)), data


# ---------------------------------------------------------------- commands

def cmd_example(args):
    return None, serialize_market(worked_example(), {"kind": "logit"})


def cmd_solve_flow(args):
    spec, _, raw = read_market(args.market)
    if args.free_disposal:
        spec = spec.replace(free_disposal=True)
    out = solve_equilibrium(spec)
    report = verify_equilibrium(spec, out.p, out.allocation, args.tol)
    doc = _header("solve-flow", raw)
    doc.update(_labels(spec))
    doc.update(
        p=out.p,
        mu_xz=out.allocation.mu_xz,
        mu_zy=out.allocation.mu_zy,
        u=out.u,
        v=out.v,
        welfare=out.welfare,
    )
    if args.bounds:
        ext = out.extremes
        doc["bounds"] = {"p_min": out.bounds.p_min, "p_max": out.bounds.p_max}
        doc["extremal_duals"] = {"u_min": ext.u_min, "u_max": ext.u_max, "v_min": ext.v_min, "v_max": ext.v_max}
    doc["diagnostics"] = dict(out.diagnostics, verification=_report_dict(report))
    return doc, None


def _smooth_doc(command, spec, eq, raw):
    doc = _header(command, raw)
    doc.update(_labels(spec))
    doc.update(
        p=eq.p,
        supply_shares=eq.shares_x,
        demand_shares=eq.shares_y,
        n=spec.n,
        m=spec.m,
        mu_xz=eq.allocation.mu_xz,
        mu_zy=eq.allocation.mu_zy,
        welfare=eq.welfare,
        clearing_residual=eq.clearing_residual,
        iterations=eq.iterations,
        converged=eq.converged,
    )
    diag = {}
    for key, value in eq.diagnostics.items():
        if key == "price_interval":
            diag["p_min"], diag["p_max"] = value
        else:
            diag[key] = value
    doc["diagnostics"] = diag
    return doc


def cmd_solve_logit(args):
    spec, het, raw = read_market(args.market)
    try:
        eq = solve_price_equilibrium(spec, het, tol=args.tol, max_iter=args.max_iter)
    except MaxIterations as exc:
        exc.document = _smooth_doc("solve-logit", spec, exc.partial, raw)
        raise
    return _smooth_doc("solve-logit", spec, eq, raw), None


def cmd_identify(args):
    shares_doc, shares_raw = _read_json(args.shares)
    prices_doc, prices_raw = _read_json(args.prices)
    sx, sy, n, m = parse_shares(shares_doc, str(args.shares))
    p = parse_prices(prices_doc, str(args.prices))
    if p.size + 1 != sx.shape[1]:
        raise ParseError(f"{args.prices}: {p.size} prices for {sx.shape[1] - 1} qualities")
    het = HeterogeneitySpec.logit()
    inputs = [shares_raw, prices_raw]
    labels = {k: shares_doc[k] for k in ("producers", "consumers", "qualities") if k in shares_doc}
    if args.market:
        spec, market_het, market_raw = read_market(args.market)
        het = market_het or het
        inputs.append(market_raw)
        labels = _labels(spec)
    method = {"auto": "auto", "logit": "closed", "generic": "numeric"}[args.method]
    ident = identify_primitives(ObservedMarket(sx, sy, n, m, p, het), method=method)
    doc = _header("identify", *inputs)
    doc.update(labels)
    doc.update(
        p=p,
        alpha_hat=ident.alpha_hat,
        gamma_hat=ident.gamma_hat,
        U=ident.utilities.U,
        V=ident.utilities.V,
    )
    doc["diagnostics"] = {"method": args.method, "share_residual": ident.residual}
    return doc, None


def cmd_simulate(args):
    spec, het, raw = read_market(args.market)
    het = het or HeterogeneitySpec.logit()
    doc = _header("simulate", raw)
    doc["seed"] = args.seed
    doc["agents_per_type"] = args.agents
    doc.update(_labels(spec))
    eq = solve_price_equilibrium(spec, het)
    pop = draw_population(spec, het, args.agents, args.seed)
    sim = simulate_choices(pop, spec, eq.p)
    doc.update(
        p=eq.p,
        n=spec.n,
        m=spec.m,
        supply_counts=sim.counts_x,
        demand_counts=sim.counts_y,
        supply_shares=sim.shares_x,
        demand_shares=sim.shares_y,
    )
    diag = {"generator": pop.generator_id}
    if args.round_trip:
        report = round_trip(spec, het, args.agents, args.seed, equilibrium=eq)
        doc["alpha_hat"] = report.alpha_hat
        doc["gamma_hat"] = report.gamma_hat
        diag["round_trip"] = report.as_dict()
    doc["diagnostics"] = diag
    return doc, None


def _report_dict(report):
    return {
        "all_clear": report.ok,
        "people_counting_ok": report.people_counting_ok,
        "market_clearing_ok": report.market_clearing_ok,
        "max_residual": report.max_residual,
        "tol": report.tol,
        "rationality_violations": [
            {"side": v.side, "agent": v.agent, "chosen": v.chosen, "better": v.better, "slack": v.slack}
            for v in report.rationality_violations
        ],
    }


def cmd_verify(args):
    spec, _, raw = read_market(args.market)
    result, result_raw = _read_json(args.result)
    p, mu_xz, mu_zy = parse_allocation(result, spec, str(args.result))
    report = verify_equilibrium(spec, p, Allocation(mu_xz, mu_zy), args.tol)
    doc = _header("verify", raw, result_raw)
    doc.update(_report_dict(report))
    return doc, None


# ---------------------------------------------------------------- rendering

def _fmt(v):
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def render_text(doc, indent=""):
    lines = []
    for key, value in doc.items():
        if isinstance(value, np.ndarray):
            value = value.tolist()
        if isinstance(value, dict):
            lines.append(f"{indent}{key}:")
            lines.append(render_text(value, indent + "  "))
        elif isinstance(value, list) and value and isinstance(value[0], list):
            lines.append(f"{indent}{key}:")
            lines += [f"{indent}  " + "  ".join(f"{_fmt(c):>12}" for c in row) for row in value]
        elif isinstance(value, list) and value and isinstance(value[0], dict):
            lines.append(f"{indent}{key}:")
            lines += [f"{indent}  - " + ", ".join(f"{k}={_fmt(c)}" for k, c in row.items()) for row in value]
        elif isinstance(value, list):
            lines.append(f"{indent}{key}: " + "  ".join(_fmt(c) for c in value))
        else:
            lines.append(f"{indent}{key}: {_fmt(value)}")
    return "\n".join(lines)


def _render(doc, fmt):
    if fmt == "json":
        return dumps(doc) + "\n"
    if fmt == "csv":
        return to_csv({k: v for k, v in doc.items() if k not in ("tool_version", "input_digest")})
    return render_text(doc) + "\n"


def _emit(text, output):
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(prog="hedonic", description="Discrete hedonic market solver.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--format", choices=("text", "json", "csv"), default="text")
        p.add_argument("-o", "--output", help="write to this file instead of stdout")

    p = sub.add_parser("example", help="write the built-in four-seller, three-buyer market")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_example)

    p = sub.add_parser("solve-flow", help="exact equilibrium via maximum surplus flow")
    p.add_argument("market")
    p.add_argument("--free-disposal", action="store_true", help="allow supply to exceed demand")
    p.add_argument("--tol", type=float, default=1e-9, help="verification tolerance")
    p.add_argument("--bounds", action="store_true", help="report equilibrium price intervals and extremal duals")
    common(p)
    p.set_defaults(func=cmd_solve_flow)

    p = sub.add_parser("solve-logit", help="equilibrium under unobserved heterogeneity")
    p.add_argument("market")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=200)
    common(p)
    p.set_defaults(func=cmd_solve_logit)

    p = sub.add_parser("identify", help="recover alpha and gamma from shares and prices")
    p.add_argument("shares")
    p.add_argument("prices")
    p.add_argument("--method", choices=("auto", "logit", "generic"), default="auto",
                   help="logit: closed-form log-odds; generic: numerical conjugate gradient")
    p.add_argument("--market", help="market file supplying labels and heterogeneity")
    common(p)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("simulate", help="simulate individual choices at equilibrium prices")
    p.add_argument("market")
    p.add_argument("--agents", type=_positive_int, required=True, help="agents per observable type")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--round-trip", action="store_true", help="identify from the simulated shares and report errors")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="check a result document against the equilibrium conditions")
    p.add_argument("market")
    p.add_argument("result")
    p.add_argument("--tol", type=float, default=1e-9)
    common(p)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        doc, text = args.func(args)
    except MaxIterations as exc:
        print(f"error: {exc}", file=sys.stderr)
        partial = getattr(exc, "document", None)
        if partial is not None:
            _emit(_render(partial, getattr(args, "format", "json")), getattr(args, "output", None))
        return exc.exit_code
    except HedonicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - anything else is a bug
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 5
    _emit(text if doc is None else _render(doc, args.format), getattr(args, "output", None))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
