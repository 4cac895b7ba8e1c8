"""Experiment specs, parameter sweeps and CSV output.

An experiment spec is a JSON object::

    {
      "policy": "both",                       # alternating | nonalternating | both
      "A": {"mean": 1.0, "scv": 0.2},         # or an explicit law, e.g. {"type": "exp", "lambda": 1}
      "B": {"n": 5, "mean": 2.5},             # or {"n": 5, "mu": 2} or {"type": "prep", ...}
      "sweep": [{"param": "r", "values": [0.4, 0.8]},
                {"param": "B.n", "values": [1, 2, 5]}],
      "sim": {"customers": 1000000, "replications": 1, "seed": 1},   # optional
      "output": "results.csv"                 # optional
    }

Sweep axes combine as a Cartesian product, first axis outermost.  Sweepable
parameters are listed in :data:`SWEEP_PARAMS`.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import alternating, repair
from .distributions import Moments, PrepLaw, fit_moments, law_from_json
from .exceptions import SpecError
from .simulator import (
    alternating_waits,
    draw_sequences,
    kolmogorov_distance,
    nonalternating_waits,
    simulate,
)

__all__ = [
    "SWEEP_PARAMS",
    "HEADER",
    "FIG2_HEADER",
    "ExperimentSpec",
    "parse_spec",
    "grid_points",
    "resolve_point",
    "evaluate_point",
    "run",
    "format_csv",
    "load_preset",
    "fig2_curves",
]

POLICIES = ("alternating", "nonalternating", "both")
SWEEP_PARAMS = ("A.mean", "A.scv", "B.n", "B.mu", "B.mean", "B.scv", "r")

HEADER = [
    "point", "A_mean", "A_scv", "B_n", "B_mu", "B_mean", "B_scv", "r",
    "EW_A", "EW_A_norm", "p0_A", "theta_A",
    "EW_NA", "EW_NA_norm", "p0_NA", "theta_NA",
    "sim_EW_A", "sim_EW_A_hw", "sim_p0_A", "sim_p0_A_hw",
    "sim_EW_NA", "sim_EW_NA_hw", "sim_p0_NA", "sim_p0_NA_hw",
]

# cdf differences below this are rounding noise, not a crossing
CROSSING_TOL = 1e-12

FIG2_HEADER = ["x", "cdf_A", "cdf_NA", "sim_cdf_A", "sim_cdf_NA"]


@dataclass
class SimSettings:
    customers: int
    replications: int = 1
    seed: int = 1


@dataclass
class ExperimentSpec:
    policy: str
    A: dict
    B: dict
    sweep: list = field(default_factory=list)
    sim: SimSettings | None = None
    output: str | None = None
    extra: dict = field(default_factory=dict)


def _is_moments(obj):
    return isinstance(obj, dict) and "type" not in obj


def _validate_A(obj):
    if not isinstance(obj, dict):
        raise SpecError("A must be a JSON object")
    if _is_moments(obj):
        if set(obj) != {"mean", "scv"}:
            raise SpecError("A must be either an explicit law or exactly {mean, scv}")
        fit_moments(Moments(float(obj["mean"]), float(obj["scv"])))
    else:
        law = law_from_json(obj)
        if isinstance(law, PrepLaw):
            raise SpecError("A must be a service law, not a preparation law")


def _validate_B(obj):
    if not isinstance(obj, dict):
        raise SpecError("B must be a JSON object")
    if _is_moments(obj):
        keys = set(obj)
        if keys not in ({"n", "mu"}, {"n", "mean"}):
            raise SpecError("B must be an explicit prep law or {n, mu} or {n, mean}")
    elif not isinstance(law_from_json(obj), PrepLaw):
        raise SpecError("B must have type 'prep'")


def parse_spec(obj: dict) -> ExperimentSpec:
    """Validate a decoded JSON spec; raises :class:`SpecError` on any problem."""
    if not isinstance(obj, dict):
        raise SpecError("experiment spec must be a JSON object")
    known = {"policy", "A", "B", "sweep", "sim", "output", "note", "fig2"}
    unknown = set(obj) - known
    if unknown:
        raise SpecError(f"unknown spec fields: {sorted(unknown)}")
    policy = obj.get("policy", "both")
    if policy not in POLICIES:
        raise SpecError(f"policy must be one of {POLICIES}, got {policy!r}")
    for key in ("A", "B"):
        if key not in obj:
            raise SpecError(f"spec is missing {key!r}")
    _validate_A(obj["A"])
    _validate_B(obj["B"])

    sweep = obj.get("sweep", [])
    if isinstance(sweep, dict):
        sweep = [sweep]
    axes = []
    for axis in sweep:
        if not isinstance(axis, dict) or set(axis) != {"param", "values"}:
            raise SpecError("each sweep axis must be {param, values}")
        if axis["param"] not in SWEEP_PARAMS:
            raise SpecError(f"cannot sweep {axis['param']!r}; choose from {SWEEP_PARAMS}")
        values = axis["values"]
        if not isinstance(values, list) or not values:
            raise SpecError(f"sweep grid for {axis['param']!r} must be a nonempty list")
        if any(not isinstance(v, (int, float)) or not math.isfinite(v) for v in values):
            raise SpecError(f"sweep grid for {axis['param']!r} must hold finite numbers")
        axes.append((axis["param"], list(values)))

    sim = None
    if obj.get("sim") is not None:
        s = obj["sim"]
        if not isinstance(s, dict) or "customers" not in s:
            raise SpecError("sim must be an object with at least 'customers'")
        sim = SimSettings(int(s["customers"]), int(s.get("replications", s.get("seeds", 1))),
                          int(s.get("seed", 1)))
        if sim.customers < 1 or sim.replications < 1:
            raise SpecError("sim customers and replications must be positive")

    spec = ExperimentSpec(policy, obj["A"], obj["B"], axes, sim, obj.get("output"),
                          {k: obj[k] for k in ("note", "fig2") if k in obj})
    if spec.policy != "alternating":
        for point in grid_points(spec):
            _, _, B = resolve_point(spec, point)
            if not B.is_erlang:
                raise SpecError("the non-alternating policy needs a pure Erlang preparation law")
    return spec


def grid_points(spec: ExperimentSpec) -> list[dict]:
    if not spec.sweep:
        return [{}]
    names = [p for p, _ in spec.sweep]
    return [dict(zip(names, combo)) for combo in itertools.product(*(v for _, v in spec.sweep))]


def resolve_point(spec: ExperimentSpec, point: dict):
    """Concrete laws at one grid point: ``(A law, A moments or None, B law)``."""
    a = dict(spec.A)
    for key in ("A.mean", "A.scv"):
        if key in point:
            if not _is_moments(a):
                raise SpecError(f"cannot sweep {key} when A is an explicit law")
            a[key[2:]] = point[key]
    if _is_moments(a):
        moments = Moments(float(a["mean"]), float(a["scv"]))
        A = fit_moments(moments)
    else:
        A = law_from_json(a)
        moments = None

    b = dict(spec.B)
    touched = [k for k in ("B.n", "B.mu", "B.mean", "B.scv", "r") if k in point]
    if touched and not _is_moments(b):
        raise SpecError("cannot sweep B parameters when B is an explicit prep law")
    if "B.n" in point:
        b["n"] = point["B.n"]
    if "B.scv" in point:
        n = 1.0 / point["B.scv"]
        if abs(n - round(n)) > 1e-9:
            raise SpecError(f"B.scv {point['B.scv']} is not 1/n for an integer n")
        b["n"] = round(n)
    if "B.mu" in point:
        b.pop("mean", None)
        b["mu"] = point["B.mu"]
    if "B.mean" in point:
        b.pop("mu", None)
        b["mean"] = point["B.mean"]
    if "r" in point:
        if point["r"] <= 0:
            raise SpecError("r must be positive")
        b.pop("mu", None)
        b["mean"] = A.mean() / point["r"]
    if _is_moments(b):
        n = b["n"]
        if int(n) != n:
            raise SpecError(f"B.n must be an integer, got {n!r}")
        n = int(n)
        if "mu" in b:
            mu = float(b["mu"])
        else:
            if not b["mean"] > 0:
                raise SpecError("B mean must be positive")
            mu = n / float(b["mean"])
        B = PrepLaw.erlang(n, mu)
    else:
        B = law_from_json(b)
    return A, moments, B


def _scv_or_none(law):
    try:
        return law.scv()
    except ArithmeticError:
        return None
    except ValueError:
        return None


def _norm(x, mean_a):
    return x / mean_a if mean_a > 0 else None


def evaluate_point(spec: ExperimentSpec, index: int, point: dict) -> dict:
    """Analytic (and optionally simulated) results for one grid point.

    Every analytic result passes the solver invariant checks first; failures
    propagate as :class:`~altserve.exceptions.NumericFailure`.
    """
    A, _, B = resolve_point(spec, point)
    ea = A.mean()
    row = {k: None for k in HEADER}
    row.update(point=index, A_mean=ea, A_scv=_scv_or_none(A), B_n=B.phases, B_mu=B.mu,
               B_mean=B.mean(), B_scv=B.scv(), r=ea / B.mean())
    if spec.policy in ("alternating", "both"):
        w, ts = alternating.solve_phase_type(B, A, with_transform=True)
        alternating.check_wait_law(w, ts)
        ew = w.mean()
        theta = (alternating.throughput_from_transform(ts, B.phases, A) if B.is_erlang
                 else alternating.throughput(w, A))
        row.update(EW_A=ew, EW_A_norm=_norm(ew, ea), p0_A=w.p0, theta_A=theta)
    if spec.policy in ("nonalternating", "both"):
        chain = repair.build_chain(B.phases, B.mu, A)
        repair.check_chain(chain)
        r = repair.residual_law(chain)
        ew = repair.na_wait_mean(r, B)
        row.update(EW_NA=ew, EW_NA_norm=_norm(ew, ea), p0_NA=float(r.pi[0]), theta_NA=1.0 / (ew + ea))
    if spec.sim is not None:
        s = spec.sim
        offset = index * s.replications
        if spec.policy in ("alternating", "both"):
            rep = simulate("alternating", A, B, s.customers, s.seed, s.replications, workers=1,
                           stream_offset=offset)
            row.update(sim_EW_A=rep.mean_wait, sim_EW_A_hw=rep.half_width_95,
                       sim_p0_A=rep.zero_wait_freq, sim_p0_A_hw=rep.zero_wait_half_width_95)
        if spec.policy in ("nonalternating", "both"):
            rep = simulate("nonalternating", A, B, s.customers, s.seed, s.replications, workers=1,
                           stream_offset=offset)
            row.update(sim_EW_NA=rep.mean_wait, sim_EW_NA_hw=rep.half_width_95,
                       sim_p0_NA=rep.zero_wait_freq, sim_p0_NA_hw=rep.zero_wait_half_width_95)
    return row


def _evaluate(args):
    return evaluate_point(*args)


def run(spec: ExperimentSpec, workers: int = 1) -> list[dict]:
    """Rows in grid order; points are farmed out to ``workers`` processes."""
    jobs = [(spec, i, p) for i, p in enumerate(grid_points(spec))]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            return list(pool.map(_evaluate, jobs))
    return [_evaluate(j) for j in jobs]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return f"{float(v):.12g}"


def format_csv(rows, header=HEADER) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(header)
    for row in rows:
        out.writerow([_fmt(row.get(k)) for k in header])
    return buf.getvalue()


def load_preset(name: str) -> dict:
    """Decoded JSON of a bundled preset (``fig2``, ``fig3`` or ``fig4``)."""
    try:
        text = resources.files("altserve.presets").joinpath(f"{name}.json").read_text()
    except FileNotFoundError:
        raise SpecError(f"no preset named {name!r}") from None
    return json.loads(text)


def fig2_curves(spec: ExperimentSpec, xs, *, seed=None, customers=None):
    """cdf curves of both policies' waits on ``xs``, plus a summary dict.

    With ``customers`` set, empirical cdfs from one simulated path per policy
    are added, along with their Kolmogorov distances to the analytic cdfs.
    """
    A, _, B = resolve_point(spec, {})
    if not B.is_erlang:
        raise SpecError("fig2 needs a pure Erlang preparation law")
    w = alternating.solve_phase_type(B, A)
    chain = repair.build_chain(B.phases, B.mu, A)
    r = repair.residual_law(chain)
    xs = np.asarray(xs, dtype=float)
    fa = w.cdf(xs)
    fna = repair.na_wait_cdf(r, B, xs)
    rows = [{"x": x, "cdf_A": u, "cdf_NA": v} for x, u, v in zip(xs, fa, fna)]
    diff = fa - fna
    keep = (xs > 0) & (np.abs(diff) > CROSSING_TOL)
    xk, sign = xs[keep], np.sign(diff[keep])
    crossings = [float(xk[k]) for k in range(1, len(sign)) if sign[k] != sign[k - 1]]
    summary = {"cdf_A_at_0": float(fa[0]) if xs[0] == 0 else float(w.cdf(0.0)),
               "cdf_NA_at_0": float(repair.na_wait_cdf(r, B, 0.0)),
               "crossings": crossings,
               "mean_A": w.mean(), "mean_NA": repair.na_wait_mean(r, B)}
    if customers:
        a, b = draw_sequences(A, B, customers, seed if seed is not None else 1)
        wa = np.sort(alternating_waits(a, b))
        wn = np.sort(nonalternating_waits(a, b))
        ea = np.searchsorted(wa, xs, side="right") / len(wa)
        en = np.searchsorted(wn, xs, side="right") / len(wn)
        for row, u, v in zip(rows, ea, en):
            row.update(sim_cdf_A=u, sim_cdf_NA=v)
        summary["ks_A"] = kolmogorov_distance(wa, w.cdf)
        summary["ks_NA"] = kolmogorov_distance(wn, lambda x: repair.na_wait_cdf(r, B, x))
    return rows, summary
