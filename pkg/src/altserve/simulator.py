"""Monte-Carlo oracle for both service policies.

Conventions shared by every routine here (customer indexing, 1-based in the
prose, 0-based in arrays):

* customer 1 is served at time 0, so ``W_1 = 0``;
* the other point starts preparation ``B_1`` at time 0;
* preparation ``B_i`` starts at departure ``D_{i-1}`` at the point just freed.

Both policies consume the same ``A_i`` and ``B_i`` positionally, which is the
coupling used for the path-wise comparisons.  A zero wait is a regeneration
point for both policies, and customer 1 starts a cycle.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .distributions import PrepLaw, ServiceLaw, make_rng
from .exceptions import InsufficientRunError, SpecError

__all__ = [
    "SimReport",
    "CoupledTrace",
    "draw_sequences",
    "alternating_waits",
    "nonalternating_waits",
    "coupled_paths",
    "simulate_alternating",
    "simulate_nonalternating",
    "simulate",
    "coupled_run",
    "coupling_violations",
    "cycle_stats",
    "first_regeneration",
    "kolmogorov_distance",
    "worker_count",
]

log = logging.getLogger(__name__)

MIN_CYCLES = 30
MAX_BATCHES = 100
ORDER_RTOL = 1e-12


def worker_count() -> int:
    """Worker processes for parallel drivers; ``ALTSERVE_THREADS`` overrides."""
    env = os.environ.get("ALTSERVE_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise SpecError(f"ALTSERVE_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise SpecError(f"ALTSERVE_THREADS must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


@dataclass(frozen=True)
class SimReport:
    """Long-run estimates from one or more simulated paths.

    ``method`` is ``"regenerative"`` when the estimates come from completed
    zero-wait cycles, or ``"batch-means"`` when too few zero waits occurred
    (for instance instant service with continuous preparation).
    """

    mean_wait: float
    zero_wait_freq: float
    mean_cycle_length: float
    half_width_95: float
    zero_wait_half_width_95: float
    mean_wait_se: float
    zero_wait_se: float
    cycles: int
    customers: int
    seed: int
    method: str

    def to_json(self):
        d = asdict(self)
        if math.isinf(self.mean_cycle_length):
            d["mean_cycle_length"] = None
        return d


@dataclass(frozen=True)
class CoupledTrace:
    """Per-customer waits, departure times and next-ready times for both
    policies driven by the same service and preparation sequences."""

    W_A: np.ndarray
    W_NA: np.ndarray
    D_A: np.ndarray
    D_NA: np.ndarray
    H_A: np.ndarray
    H_NA: np.ndarray

    def __len__(self):
        return len(self.W_A)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["i", "W_A", "W_NA", "D_A", "D_NA", "H_A", "H_NA"])
            cols = (self.W_A, self.W_NA, self.D_A, self.D_NA, self.H_A, self.H_NA)
            for i, row in enumerate(zip(*cols), start=1):
                out.writerow([i] + [f"{v:.17g}" for v in row])


# -- paths ---------------------------------------------------------------------------

def draw_sequences(A: ServiceLaw, B: PrepLaw, customers: int, seed: int, stream: int = 0):
    """Service times ``A_1..A_M`` and preparation times ``B_1..B_M``."""
    if customers < 1:
        raise ValueError(f"need at least one customer, got {customers}")
    rng = make_rng(seed, stream)
    a = np.asarray(A.sample(rng, customers), dtype=float)
    b = np.asarray(B.sample(rng, customers), dtype=float)
    return a, b


def alternating_waits(a, b) -> np.ndarray:
    """Iterate ``W_{i+1} = max(0, B_i - A_i - W_i)`` from ``W_1 = 0``."""
    x = (np.asarray(b) - np.asarray(a)).tolist()
    m = len(x)
    w = [0.0] * m
    prev = 0.0
    for i in range(m - 1):
        v = x[i] - prev
        prev = v if v > 0.0 else 0.0
        w[i + 1] = prev
    return np.array(w)


def nonalternating_waits(a, b) -> np.ndarray:
    """Two stations; after each departure serve whichever is ready first."""
    a = np.asarray(a).tolist()
    b = np.asarray(b).tolist()
    m = len(a)
    w = [0.0] * m
    ready0, ready1 = 0.0, b[0]
    t = 0.0
    for i in range(m):
        nxt = b[i + 1] if i + 1 < m else 0.0
        if ready0 <= ready1:
            start = ready0 if ready0 > t else t
            w[i] = start - t
            t = start + a[i]
            ready0 = t + nxt
        else:
            start = ready1 if ready1 > t else t
            w[i] = start - t
            t = start + a[i]
            ready1 = t + nxt
    return np.array(w)


def coupled_paths(a, b) -> CoupledTrace:
    """Departure-time recursions for both policies on shared sequences.

    Alternating:     D_i = H_{i-1} + A_i,  H_i = max(D_i, D_{i-1} + B_i)
    Non-alternating: D_i = min(H_{i-1}, D_{i-1} + B_i) + A_i,
                     H_i = max(D_i, H_{i-1}, D_{i-1} + B_i)
    with D_0 = H_0 = 0.
    """
    a = np.asarray(a).tolist()
    b = np.asarray(b).tolist()
    m = len(a)
    wa, wn = [0.0] * m, [0.0] * m
    da, dn = [0.0] * m, [0.0] * m
    ha, hn = [0.0] * m, [0.0] * m
    d_a = h_a = d_n = h_n = 0.0
    for i in range(m):
        ai, bi = a[i], b[i]
        # alternating
        wa[i] = h_a - d_a
        nd = h_a + ai
        ready = d_a + bi
        h_a = nd if nd > ready else ready
        d_a = nd
        # non-alternating
        ready = d_n + bi
        start = h_n if h_n < ready else ready
        later = ready if h_n < ready else h_n
        wn[i] = start - d_n
        nd = start + ai
        h_n = nd if nd > later else later
        d_n = nd
        da[i], ha[i], dn[i], hn[i] = d_a, h_a, d_n, h_n
    return CoupledTrace(np.array(wa), np.array(wn), np.array(da), np.array(dn),
                        np.array(ha), np.array(hn))


def coupled_run(A: ServiceLaw, B: PrepLaw, customers: int, seed: int, stream: int = 0) -> CoupledTrace:
    a, b = draw_sequences(A, B, customers, seed, stream)
    return coupled_paths(a, b)


def _below(x, y):
    # x < y beyond rounding: the two sides accumulate sums in different orders
    return x < y - ORDER_RTOL * np.maximum(1.0, np.abs(y))


def coupling_violations(trace: CoupledTrace) -> dict:
    """Count indices where the path-wise orderings between policies fail.

    Comparisons allow a relative slack of ``ORDER_RTOL`` so that exact ties
    computed along different summation orders are not counted.
    ``per_index_reversals`` counts ``W_A[i] < W_NA[i]``; those are allowed and
    only reported.
    """
    sa = np.cumsum(trace.W_A)
    sn = np.cumsum(trace.W_NA)
    return {
        "departure": int(np.sum(_below(trace.D_A, trace.D_NA))),
        "ready": int(np.sum(_below(trace.H_A, trace.H_NA))),
        "partial_sum": int(np.sum(_below(sa, sn))),
        "per_index_reversals": int(np.sum(_below(trace.W_A, trace.W_NA))),
    }


def first_regeneration(w) -> int | None:
    """Index (0-based) of the first zero wait after customer 1, or None."""
    z = np.flatnonzero(np.asarray(w)[1:] == 0.0)
    return int(z[0]) + 1 if len(z) else None


# -- estimators ------------------------------------------------------------------------

def _cycles(w):
    w = np.asarray(w, dtype=float)
    z = np.flatnonzero(w == 0.0)
    if len(z) < 2:
        return np.empty(0), np.empty(0, dtype=np.int64)
    lengths = np.diff(z)
    sums = np.add.reduceat(w[z[0]:z[-1]], z[:-1] - z[0])
    return sums, lengths


def cycle_stats(w):
    """Mean cycle length and zero-wait frequency over completed cycles.

    A cycle runs from one zero wait up to (not including) the next; the
    customers after the last zero wait are discarded.

    Raises
    ------
    InsufficientRunError
        If the path contains no completed cycle.
    """
    _, lengths = _cycles(w)
    if len(lengths) == 0:
        raise InsufficientRunError("no completed regeneration cycle in the path")
    total = int(lengths.sum())
    k = len(lengths)
    return total / k, k / total


def _group(values, groups):
    bounds = np.array([g[0] for g in groups])
    return np.add.reduceat(values, bounds)


def _batches(waits, zeros, counts):
    k = len(counts)
    groups = np.array_split(np.arange(k), min(k, MAX_BATCHES))
    return np.column_stack([_group(waits, groups), _group(zeros, groups), _group(counts, groups)])


@dataclass(frozen=True)
class _PathSummary:
    regenerative: np.ndarray | None  # rows: (wait sum, cycles, customers) per batch of cycles
    fallback: np.ndarray  # rows: (wait sum, zero waits, customers) per batch of customers
    cycles: int
    in_cycles: int


def _summarize(w) -> _PathSummary:
    w = np.asarray(w, dtype=float)
    sums, lengths = _cycles(w)
    k = len(lengths)
    reg = None
    if k >= MIN_CYCLES:
        reg = _batches(sums, np.ones(k), lengths.astype(float))
    body = w[1:]  # customer 1 waits 0 by convention
    if len(body) < 2:
        raise InsufficientRunError("path too short for batch means")
    fb = _batches(body, (body == 0.0).astype(float), np.ones(len(body)))
    return _PathSummary(reg, fb, k, int(lengths.sum()))


def _ratio_ci(y, n):
    b = len(y)
    r = y.sum() / n.sum()
    if b < 2:
        return float(r), math.inf
    s = math.sqrt(float(np.sum((y - r * n) ** 2)) / (b - 1))
    return float(r), s / (n.mean() * math.sqrt(b))


def _report(parts, customers, seed):
    if all(p.regenerative is not None for p in parts):
        method = "regenerative"
        batches = np.vstack([p.regenerative for p in parts])
    else:
        log.warning("fewer than %d zero-wait cycles; falling back to batch means", MIN_CYCLES)
        method = "batch-means"
        batches = np.vstack([p.fallback for p in parts])
    cycles = sum(p.cycles for p in parts)
    in_cycles = sum(p.in_cycles for p in parts)
    y_w, y_z, n = batches[:, 0], batches[:, 1], batches[:, 2]
    mean_wait, se_w = _ratio_ci(y_w, n)
    zero, se_z = _ratio_ci(y_z, n)
    t = stats.t.ppf(0.975, len(n) - 1) if len(n) > 1 else math.inf
    mean_cycle = in_cycles / cycles if cycles else math.inf
    return SimReport(mean_wait, zero, mean_cycle, float(t * se_w), float(t * se_z),
                     float(se_w), float(se_z), int(cycles), int(customers), int(seed), method)


def _one_path(policy, A, B, customers, seed, stream):
    a, b = draw_sequences(A, B, customers, seed, stream)
    if policy == "alternating":
        w = alternating_waits(a, b)
    else:
        w = nonalternating_waits(a, b)
    return _summarize(w)


def _check_policy(policy, B):
    if policy not in ("alternating", "nonalternating"):
        raise SpecError(f"unknown policy {policy!r}")
    if policy == "nonalternating" and not B.is_erlang:
        raise SpecError("non-alternating simulation supports pure Erlang preparation only")


def simulate(policy: str, A: ServiceLaw, B: PrepLaw, customers: int, seed: int,
             replications: int = 1, workers: int | None = None,
             stream_offset: int = 0) -> SimReport:
    """Pooled estimates over ``replications`` independent paths.

    Replication ``r`` uses generator stream ``(seed, stream_offset + r)``;
    batches are pooled in replication order, so the report does not depend on
    ``workers``.
    """
    _check_policy(policy, B)
    if customers < 1:
        raise ValueError(f"need at least one customer, got {customers}")
    if replications < 1:
        raise ValueError(f"need at least one replication, got {replications}")
    workers = worker_count() if workers is None else workers
    args = [(policy, A, B, customers, seed, stream_offset + r) for r in range(replications)]
    if workers > 1 and replications > 1:
        with ProcessPoolExecutor(max_workers=min(workers, replications)) as pool:
            parts = list(pool.map(_one_path, *zip(*args)))
    else:
        parts = [_one_path(*x) for x in args]
    return _report(parts, customers * replications, seed)


def simulate_alternating(A: ServiceLaw, B: PrepLaw, customers: int, seed: int,
                         replications: int = 1, workers: int | None = None) -> SimReport:
    return simulate("alternating", A, B, customers, seed, replications, workers)


def simulate_nonalternating(A: ServiceLaw, B: PrepLaw, customers: int, seed: int,
                            replications: int = 1, workers: int | None = None) -> SimReport:
    """Requires a pure Erlang preparation law (raises :class:`SpecError`)."""
    return simulate("nonalternating", A, B, customers, seed, replications, workers)


def kolmogorov_distance(sample, cdf) -> float:
    """Sup distance between the empirical cdf of ``sample`` and ``cdf``.

    ``cdf`` may have an atom at zero; zero-valued observations are compared
    against ``cdf(0)`` directly, positive ones with the usual two-sided
    step comparison.
    """
    x = np.sort(np.asarray(sample, dtype=float))
    n = len(x)
    k0 = int(np.searchsorted(x, 0.0, side="right"))
    d = abs(float(cdf(0.0)) - k0 / n)
    pos = x[k0:]
    if len(pos):
        f = np.asarray(cdf(pos), dtype=float)
        i = np.arange(k0 + 1, n + 1)
        d = max(d, float(np.max(i / n - f)), float(np.max(f - (i - 1) / n)))
    return d
