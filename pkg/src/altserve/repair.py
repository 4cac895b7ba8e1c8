"""Server waiting time when it serves whichever point finishes preparation first.

This is the two-machine repair model seen from the repairman.  Just after a
service completion the state is the number of preparation phases the *other*
customer still has to complete (0 .. n).  The freshly freed point starts an
Erlang-n(mu) preparation, the two preparations race phase by phase, and the
server's wait is ``W = min(B, R)`` with ``R`` the residual preparation of the
other customer.
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
    mixture_survival_coeffs,
    phase_count_pmfs,
    phase_count_tails,
)
from .exceptions import NumericFailure, SpecError

__all__ = [
    "PhaseChain",
    "ResidualLaw",
    "transition_prob",
    "build_chain",
    "residual_law",
    "na_wait_cdf",
    "na_wait_mean",
    "solve_na",
    "check_chain",
]

ROW_TOL = 1e-12
EQUILIBRIUM_TOL = 1e-10
COND_LIMIT = 1e12


@dataclass(frozen=True)
class PhaseChain:
    n: int
    mu: float
    P: np.ndarray
    pi: np.ndarray

    def residual(self) -> float:
        """``max |pi P - pi|``."""
        return float(np.max(np.abs(self.pi @ self.P - self.pi)))

    def to_json(self):
        return {"n": self.n, "mu": self.mu, "P": self.P.tolist(), "pi": self.pi.tolist()}


@dataclass(frozen=True)
class ResidualLaw:
    """Atom ``pi[0]`` at zero plus weight ``pi[j]`` on Erlang-j(``mu``)."""

    mu: float
    pi: np.ndarray

    @property
    def phases(self):
        return len(self.pi) - 1

    def cdf(self, x):
        out = mixture_cdf(self.mu, self.pi[0], self.pi[1:], x)
        return float(out) if np.ndim(out) == 0 else out

    def to_json(self):
        return {"mu": self.mu, "pi": self.pi.tolist()}


def _race(t: int, b: int) -> float:
    # (1/2)**t * C(t - 1, b), with C(a, b) = 0 for a < b
    if b < 0 or b > t - 1:
        return 0.0
    return math.ldexp(float(math.comb(t - 1, b)), -t)


def _race_weight(i: int, k: int, n: int) -> float:
    """Probability that, from state i, the first preparation to finish leaves
    the other one with k phases to go."""
    t = n + i - k
    return _race(t, n - 1) + _race(t, n - k)


def _entry(i, j, n, q, tails):
    if i == 0:
        return tails[n] if j == 0 else q[n - j]
    if j == 0:
        return math.fsum(_race_weight(i, k, n) * tails[k] for k in range(1, n + 1))
    return math.fsum(_race_weight(i, k, n) * q[k - j] for k in range(j, n + 1))


def _check_args(n, mu):
    if int(n) != n or not 1 <= n <= MAX_PHASES:
        raise ValueError(f"n must be an integer in [1, {MAX_PHASES}], got {n!r}")
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu!r}")


def transition_prob(i: int, j: int, n: int, mu: float, A: ServiceLaw) -> float:
    """One-step probability of moving from ``i`` to ``j`` remaining phases."""
    _check_args(n, mu)
    if not (0 <= i <= n and 0 <= j <= n):
        raise ValueError(f"states must lie in 0..{n}, got ({i}, {j})")
    q = phase_count_pmfs(A, mu, n + 1)
    tails = phase_count_tails(A, mu, n + 1)
    return _entry(i, j, n, q, tails)


def check_chain(chain: PhaseChain) -> None:
    rows = chain.P.sum(axis=1)
    if np.any(np.abs(rows - 1.0) > ROW_TOL) or np.any(chain.P < 0):
        raise NumericFailure(f"transition matrix is not stochastic (row sums {rows})")
    r = chain.residual()
    if r > EQUILIBRIUM_TOL:
        raise NumericFailure(f"equilibrium residual {r:.3g}")


def build_chain(n: int, mu: float, A: ServiceLaw) -> PhaseChain:
    """Transition matrix over remaining phases and its equilibrium vector.

    The equilibrium solves ``(P^T - I) pi = 0`` with the last equation
    replaced by ``sum(pi) = 1``.
    """
    _check_args(n, mu)
    q = phase_count_pmfs(A, mu, n + 1)
    tails = phase_count_tails(A, mu, n + 1)
    P = np.array([[_entry(i, j, n, q, tails) for j in range(n + 1)] for i in range(n + 1)])
    rows = P.sum(axis=1)
    if np.any(np.abs(rows - 1.0) > ROW_TOL):
        raise NumericFailure(f"transition matrix rows do not sum to 1: {rows}")

    M = P.T - np.eye(n + 1)
    M[-1, :] = 1.0
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    cond = np.linalg.cond(M, 1)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise NumericFailure(f"equilibrium system is rank deficient (cond={cond:.3g})")
    lu = scipy.linalg.lu_factor(M)
    pi = scipy.linalg.lu_solve(lu, rhs)
    pi = pi + scipy.linalg.lu_solve(lu, rhs - M @ pi)
    pi = np.where(np.abs(pi) < 1e-15, 0.0, pi)
    if np.any(pi < -1e-12):
        raise NumericFailure(f"negative equilibrium probability: {pi}")
    pi = np.clip(pi, 0.0, None)
    pi = pi / pi.sum()
    chain = PhaseChain(int(n), float(mu), P, pi)
    check_chain(chain)
    return chain


def residual_law(chain: PhaseChain) -> ResidualLaw:
    return ResidualLaw(chain.mu, chain.pi.copy())


def _erlang_n(r: ResidualLaw, B) -> int:
    if isinstance(B, PrepLaw):
        if not B.is_erlang:
            raise SpecError("the repair model needs a pure Erlang preparation law")
        if B.mu != r.mu:
            raise SpecError(f"preparation rate {B.mu} differs from residual rate {r.mu}")
        return B.phases
    return int(B)


def na_wait_cdf(r: ResidualLaw, B, x):
    """``P[min(B, R) <= x]`` for independent ``B`` and ``R``.

    ``B`` is an Erlang :class:`PrepLaw` at the residual's rate, or just its
    number of phases.
    """
    n = _erlang_n(r, B)
    fb = mixture_cdf(r.mu, 0.0, np.eye(n)[-1], x)
    fr = mixture_cdf(r.mu, r.pi[0], r.pi[1:], x)
    out = fr + fb - fr * fb
    return float(out) if np.ndim(out) == 0 else out


def na_wait_mean(r: ResidualLaw, B) -> float:
    """``E[min(B, R)]`` as the integral of the product of survival functions.

    Both survivals are ``exp(-mu x)`` times a polynomial in ``mu x``, so the
    integral is a finite double sum of ``C(a+b, a) / 2**(a+b+1) / mu``.
    """
    n = _erlang_n(r, B)
    c_r = mixture_survival_coeffs(r.pi[1:])
    total = 0.0
    for a in range(n):  # B survival coefficients are all 1
        for b, cb in enumerate(c_r):
            if cb:
                total += cb * math.ldexp(float(math.comb(a + b, a)), -(a + b + 1))
    return float(total / r.mu)


def solve_na(n: int, mu: float, A: ServiceLaw):
    """Convenience wrapper: chain, residual law and mean wait."""
    chain = build_chain(n, mu, A)
    r = residual_law(chain)
    return chain, r, na_wait_mean(r, n)
