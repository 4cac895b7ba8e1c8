"""Command-line front end.

Exit codes: 0 success, 2 invalid input (spec, law, moments), 3 numeric
failure in a solver.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import alternating, repair
from .distributions import Exponential, MixedErlang, Moments, fit_moments, law_to_json
from .exceptions import NumericFailure
from .experiments import (
    FIG2_HEADER,
    HEADER,
    SimSettings,
    fig2_curves,
    format_csv,
    load_preset,
    parse_spec,
    resolve_point,
    run,
)
from .simulator import coupled_run, simulate, worker_count

EXIT_INVALID = 2
EXIT_NUMERIC = 3


class _Invalid(Exception):
    pass


def _load_spec(args, preset=None):
    if args.spec:
        try:
            with open(args.spec) as fh:
                obj = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise _Invalid(f"cannot read spec {args.spec}: {exc}") from None
    elif preset:
        obj = load_preset(preset)
    else:
        raise _Invalid("--spec is required")
    spec = parse_spec(obj)
    if args.customers is not None:
        base = spec.sim or SimSettings(customers=1)
        spec.sim = SimSettings(args.customers, base.replications, base.seed)
    if spec.sim is not None:
        if args.seed is not None:
            spec.sim.seed = args.seed
        if args.replications is not None:
            spec.sim.replications = args.replications
    return spec


def _emit(text, path):
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_json(obj, path):
    _emit(json.dumps(obj, indent=2) + "\n", path)


def cmd_solve_alt(args):
    spec = _load_spec(args)
    A, _, B = resolve_point(spec, {})
    w, ts = alternating.solve_phase_type(B, A, with_transform=True)
    alternating.check_wait_law(w, ts)
    out = {
        "A": law_to_json(A),
        "B": law_to_json(B),
        "wait_law": w.to_json(),
        "mean_wait": w.mean(),
        "throughput": (alternating.throughput_from_transform(ts, B.phases, A) if B.is_erlang
                       else alternating.throughput(w, A)),
        "condition": ts.condition,
        "rewritten_residual": alternating.verify_rewritten_system(w, ts),
        "omega": ts.omega.tolist(),
        "phi": ts.phi.tolist(),
    }
    _emit_json(out, args.out)


def cmd_solve_na(args):
    spec = _load_spec(args)
    A, _, B = resolve_point(spec, {})
    if not B.is_erlang:
        raise _Invalid("solve-na needs a pure Erlang preparation law")
    chain = repair.build_chain(B.phases, B.mu, A)
    r = repair.residual_law(chain)
    ew = repair.na_wait_mean(r, B)
    out = {
        "A": law_to_json(A),
        "B": law_to_json(B),
        "chain": chain.to_json(),
        "residual": r.to_json(),
        "mean_wait": ew,
        "p0": float(r.pi[0]),
        "throughput": 1.0 / (ew + A.mean()),
        "equilibrium_residual": chain.residual(),
    }
    _emit_json(out, args.out)


def cmd_simulate(args):
    spec = _load_spec(args)
    if spec.sim is None:
        raise _Invalid("simulate needs --customers or a 'sim' block in the spec")
    A, _, B = resolve_point(spec, {})
    s = spec.sim
    policies = ["alternating", "nonalternating"] if spec.policy == "both" else [spec.policy]
    out = {p: simulate(p, A, B, s.customers, s.seed, s.replications, worker_count()).to_json()
           for p in policies}
    if args.trace:
        coupled_run(A, B, s.customers, s.seed).to_csv(args.trace)
    _emit_json(out, args.out)


def cmd_compare(args, preset=None):
    spec = _load_spec(args, preset)
    rows = run(spec, worker_count())
    _emit(format_csv(rows, HEADER), args.out or spec.output)


def cmd_fig2(args):
    spec = _load_spec(args, "fig2")
    opts = spec.extra.get("fig2", {})
    xs = np.linspace(0.0, float(opts.get("x_max", 2.0)), int(opts.get("points", 201)))
    sim = spec.sim
    rows, summary = fig2_curves(spec, xs, seed=sim.seed if sim else None,
                                customers=sim.customers if sim else None)
    _emit(format_csv(rows, FIG2_HEADER), args.out or spec.output)
    print(json.dumps(summary), file=sys.stderr)


def _canonical_fit(law):
    # Erlang-1 branch with probability one is just an exponential
    if isinstance(law, MixedErlang) and law.n == 2 and law.p == 1.0:
        return Exponential(law.rate)
    return law


def cmd_fit(args):
    law = _canonical_fit(fit_moments(Moments(args.mean, args.scv)))
    out = {"law": law_to_json(law), "mean": law.mean(), "scv": law.scv()}
    _emit_json(out, args.out)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="altserve",
        description="Waiting time of a server attending two service points.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, spec_required=False):
        p.add_argument("--spec", required=spec_required, help="JSON experiment spec")
        p.add_argument("--out", help="output path (default: standard output)")
        p.add_argument("--seed", type=int, help="master seed for simulations")
        p.add_argument("--customers", type=int, help="customers per simulated path")
        p.add_argument("--replications", type=int, help="independent paths per point")
        return p

    common(sub.add_parser("solve-alt", help="exact waiting-time law, alternating policy"),
           True).set_defaults(func=cmd_solve_alt)
    common(sub.add_parser("solve-na", help="exact waiting-time law, non-alternating policy"),
           True).set_defaults(func=cmd_solve_na)
    p = common(sub.add_parser("simulate", help="Monte-Carlo estimates"), True)
    p.add_argument("--trace", help="write a coupled per-customer trace CSV here")
    p.set_defaults(func=cmd_simulate)
    common(sub.add_parser("compare", help="sweep an experiment spec to CSV"),
           True).set_defaults(func=cmd_compare)
    common(sub.add_parser("fig2", help="cdfs of both waits (instant service, Erlang-5)")
           ).set_defaults(func=cmd_fig2)
    common(sub.add_parser("fig3", help="normalised wait against preparation scv")
           ).set_defaults(func=lambda a: cmd_compare(a, "fig3"))
    common(sub.add_parser("fig4", help="normalised wait against mean preparation time")
           ).set_defaults(func=lambda a: cmd_compare(a, "fig4"))
    p = sub.add_parser("fit", help="two-moment fit of a service law")
    p.add_argument("mean", type=float)
    p.add_argument("scv", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except NumericFailure as exc:
        print(f"altserve: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (_Invalid, ValueError, KeyError, TypeError) as exc:
        print(f"altserve: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return 0


if __name__ == "__main__":
    sys.exit(main())
