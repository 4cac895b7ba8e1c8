"""Stationary waiting time of a server alternating between two points.

The waiting time obeys ``W = max(0, B - A - W)`` in distribution.  With ``B``
a mixture of Erlang laws at phase rate ``mu`` the stationary law is an atom at
zero plus a mixture of Erlang-1 .. Erlang-N laws at the same rate.  The
mixture weights follow from a small dense linear system in the derivatives
of the transform of ``W`` evaluated at ``mu``.

Internally the unknowns are the scaled derivatives

    u_k = (-mu)**k * omega^(k)(mu) / k!,

which are probabilities (exactly ``k`` phases expire during ``W``) and keep
every coefficient in [0, 1].  With ``a_j`` the same scaling of the service
transform, ``f_i = sum_k u_k a_{i-k}`` is the probability that exactly ``i``
phases expire during ``W + A``, and the Erlang-j weight of ``W`` under an
Erlang-n preparation is ``f_{n-j}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .distributions import (
    MAX_PHASES,
    PrepLaw,
    ServiceLaw,
    mixture_cdf,
    mixture_pdf,
    phase_count_pmfs,
)
from .exceptions import InconsistentSolution, NumericFailure

__all__ = [
    "WaitLaw",
    "TransformSolution",
    "build_system",
    "solve_erlang",
    "solve_phase_type",
    "wait_mean",
    "wait_cdf",
    "wait_pdf",
    "verify_rewritten_system",
    "atom_from_transform",
    "throughput_from_transform",
    "throughput",
    "check_wait_law",
]

COND_LIMIT = 1e12
NEG_CLAMP = 1e-12
PROB_SLACK = 1e-9


@dataclass(frozen=True)
class WaitLaw:
    """Atom ``p0`` at zero plus weight ``p[j-1]`` on Erlang-j(``mu``)."""

    mu: float
    p0: float
    p: np.ndarray

    @property
    def phases(self):
        return len(self.p)

    def mean(self):
        return wait_mean(self)

    def cdf(self, x):
        return wait_cdf(self, x)

    def pdf(self, x):
        return wait_pdf(self, x)

    def to_json(self):
        return {"mu": self.mu, "p0": self.p0, "p": [float(v) for v in self.p]}

    @classmethod
    def from_json(cls, obj):
        return cls(float(obj["mu"]), float(obj["p0"]), np.asarray(obj["p"], dtype=float))


@dataclass(frozen=True)
class TransformSolution:
    """Transform derivatives of ``W`` and of ``phi = omega * alpha`` at ``mu``.

    ``omega[k]`` is the k-th derivative of the transform of ``W``; ``phi[i]``
    the i-th derivative of ``omega(s) alpha(s)``.  ``scaled_omega`` and
    ``scaled_phi`` hold the same values multiplied by ``(-mu)**k / k!``.
    ``condition`` is the 1-norm condition number of the solved system.
    """

    mu: float
    omega: np.ndarray
    phi: np.ndarray
    scaled_omega: np.ndarray
    scaled_phi: np.ndarray
    condition: float


def _tail_weight(m: int, l: int) -> float:
    # C(m + l - 1, l) / 2**(m + l): the l-th scaled derivative of (mu/(mu+s))**m at s = mu
    return math.ldexp(float(math.comb(m + l - 1, l)), -(m + l))


def _raw_scale(mu: float, size: int) -> np.ndarray:
    # k! / (-mu)**k, by recurrence
    out = np.empty(size)
    v = 1.0
    for k in range(size):
        out[k] = v
        v *= (k + 1) / -mu
    return out


def _toeplitz_lower(a: np.ndarray) -> np.ndarray:
    n = len(a)
    return scipy.linalg.toeplitz(a, np.zeros(n))


def _mixture_system(kappa, mu: float, A: ServiceLaw):
    size = len(kappa)
    a = phase_count_pmfs(A, mu, size)
    G = np.zeros((size, size))
    for i in range(size):
        for n in range(i + 1, size + 1):
            k = kappa[n - 1]
            if k == 0.0:
                continue
            m = n - i
            G[0, i] += k * (_tail_weight(m, 0) - 1.0)
            for l in range(1, size):
                G[l, i] += k * _tail_weight(m, l)
    M = np.eye(size) - G @ _toeplitz_lower(a)
    rhs = np.zeros(size)
    rhs[0] = 1.0
    return M, rhs, a


def build_system(n: int, mu: float, A: ServiceLaw):
    """Linear system ``M u = rhs`` for an Erlang-``n``(``mu``) preparation.

    Row 0 is the equation for ``omega(mu)``, row ``l`` the one for the l-th
    derivative.  Unknowns are the scaled derivatives ``u_k`` (see the module
    docstring); for ``n = 1`` these coincide with ``omega(mu)`` itself.
    """
    if int(n) != n or not 1 <= n <= MAX_PHASES:
        raise ValueError(f"n must be an integer in [1, {MAX_PHASES}], got {n!r}")
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu!r}")
    kappa = [0.0] * int(n)
    kappa[-1] = 1.0
    M, rhs, _ = _mixture_system(kappa, float(mu), A)
    return M, rhs


def _solve(M, rhs):
    cond = np.linalg.cond(M, 1)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise NumericFailure(f"system is singular or ill-conditioned (cond={cond:.3g})")
    lu = scipy.linalg.lu_factor(M, check_finite=True)
    x = scipy.linalg.lu_solve(lu, rhs)
    # one step of iterative refinement
    x = x + scipy.linalg.lu_solve(lu, rhs - M @ x)
    return x, float(cond)


def _finish_weights(weights: np.ndarray) -> tuple[float, np.ndarray]:
    if np.any(weights < -NEG_CLAMP) or np.any(weights > 1.0 + PROB_SLACK):
        raise InconsistentSolution(f"mixture weights out of range: {weights}")
    p0 = 1.0 - math.fsum(weights)
    if p0 < -NEG_CLAMP or p0 > 1.0 + PROB_SLACK:
        raise InconsistentSolution(f"atom at zero out of range: {p0}")
    if np.any(weights < 0) or p0 < 0:
        weights = np.clip(weights, 0.0, None)
        p0 = max(p0, 0.0)
        total = p0 + math.fsum(weights)
        weights = weights / total
        p0 = p0 / total
    return p0, weights


def _solve_mixture(kappa, mu, A):
    M, rhs, a = _mixture_system(kappa, mu, A)
    u, cond = _solve(M, rhs)
    f = _toeplitz_lower(a) @ u
    size = len(kappa)
    # Erlang-j weight: sum over n >= j of kappa_n f_{n-j}
    weights = np.zeros(size)
    for n in range(1, size + 1):
        k = kappa[n - 1]
        if k:
            weights[:n] += k * f[n - 1::-1]
    p0, weights = _finish_weights(weights)
    scale = _raw_scale(mu, size)
    ts = TransformSolution(mu, u * scale, f * scale, u, f, cond)
    return WaitLaw(mu, p0, weights), ts


def solve_erlang(n: int, mu: float, A: ServiceLaw):
    """Waiting-time law and transform solution for Erlang-``n``(``mu``) ``B``.

    Returns
    -------
    (WaitLaw, TransformSolution)

    Raises
    ------
    NumericFailure
        If the system's condition number exceeds 1e12.
    InconsistentSolution
        If a weight falls outside [-1e-12, 1 + 1e-9].
    """
    if int(n) != n or not 1 <= n <= MAX_PHASES:
        raise ValueError(f"n must be an integer in [1, {MAX_PHASES}], got {n!r}")
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu!r}")
    kappa = [0.0] * int(n)
    kappa[-1] = 1.0
    return _solve_mixture(kappa, float(mu), A)


def solve_phase_type(B: PrepLaw, A: ServiceLaw, *, with_transform=False):
    """Waiting-time law for a mixed-Erlang preparation law ``B``.

    The transform solution is returned as well when ``with_transform`` is set.
    """
    w, ts = _solve_mixture(B.kappa, B.mu, A)
    return (w, ts) if with_transform else w


def wait_mean(w: WaitLaw) -> float:
    j = np.arange(1, w.phases + 1)
    return float(np.dot(w.p, j)) / w.mu


def wait_cdf(w: WaitLaw, x):
    """``P[W <= x]``; ``x`` may be a scalar or an array, and must be >= 0."""
    out = mixture_cdf(w.mu, w.p0, w.p, x)
    return float(out) if np.ndim(out) == 0 else out


def wait_pdf(w: WaitLaw, x):
    """Density of the continuous part of ``W`` (excludes the atom)."""
    out = mixture_pdf(w.mu, w.p, x)
    return float(out) if np.ndim(out) == 0 else out


def verify_rewritten_system(w: WaitLaw, ts: TransformSolution) -> float:
    """Max residual of the transform derivatives re-expressed through the
    mixture weights ``p0, p_1..p_n``.

    Checks ``omega(mu) = p0 + sum_i p_i / 2**i`` and, for l = 1..n-1,
    ``omega^(l)(mu) = sum_i p_i (-mu)**-l 2**-(i+l) (i+l-1)!/(i-1)!``.
    Row ``l`` is multiplied by ``(-mu)**l / l!`` so the residual is
    dimensionless; raw derivatives grow like ``l! / mu**l``.
    """
    mu = w.mu
    n = w.phases
    res = abs(ts.omega[0] - w.p0 - sum(w.p[i - 1] * math.ldexp(1.0, -i) for i in range(1, n + 1)))
    scale = 1.0
    for l in range(1, n):
        scale *= -mu / l
        rhs = math.fsum(w.p[i - 1] * _tail_weight(i, l) for i in range(1, n + 1))
        res = max(res, abs(scale * ts.omega[l] - rhs))
    return float(res)


def atom_from_transform(ts: TransformSolution, B: PrepLaw) -> float:
    """``p0`` computed from the raw ``phi`` derivatives instead of the weights."""
    mu = ts.mu
    total = 0.0
    for n, k in enumerate(B.kappa, start=1):
        if k:
            coef = 1.0
            s = 0.0
            for i in range(n):
                s += coef * ts.phi[i]
                coef *= -mu / (i + 1)
            total += k * s
    return 1.0 - total


def throughput_from_transform(ts: TransformSolution, n: int, A: ServiceLaw) -> float:
    """Service completions per unit time from the raw ``phi`` derivatives.

    Only defined for a pure Erlang-``n`` preparation law.
    """
    mu = ts.mu
    if len(ts.phi) != n:
        raise ValueError("transform solution does not belong to an Erlang-n solve")
    total = 0.0
    coef = 1.0 / mu  # (-1)**i mu**(i-1) / i!
    for i in range(n):
        total += coef * ts.phi[i] * (n - i)
        coef *= -mu / (i + 1)
    return 1.0 / (total - A.lt_deriv(1, 0.0))


def throughput(w: WaitLaw, A: ServiceLaw) -> float:
    return 1.0 / (wait_mean(w) + A.mean())


def check_wait_law(w: WaitLaw, ts: TransformSolution | None = None, *, mass_tol=1e-10,
                   rewrite_tol=1e-9) -> None:
    """Raise :class:`InconsistentSolution` if ``w`` violates its invariants."""
    mass = w.p0 + math.fsum(w.p)
    if abs(mass - 1.0) > mass_tol:
        raise InconsistentSolution(f"masses sum to {mass!r}")
    if w.p0 < 0 or np.any(w.p < 0):
        raise InconsistentSolution("negative mass")
    if ts is not None:
        r = verify_rewritten_system(w, ts)
        if r > rewrite_tol:
            raise InconsistentSolution(f"rewritten-system residual {r:.3g}")
