"""Service and preparation laws.

Service times ``A`` come from one of four closed-form families
(deterministic, exponential, two-point mixed Erlang, two-branch
hyperexponential).  Preparation times ``B`` are mixtures of Erlang-1 ..
Erlang-N laws sharing one phase rate ``mu``.

Every family exposes closed-form Laplace-transform derivatives, so the
solvers never differentiate numerically.  The quantity the solvers actually
consume is the probability that exactly ``k`` rate-``mu`` exponential phases
expire during one service time,

    q_k = (-mu)**k / k! * alpha^(k)(mu),

which for each family reduces to a familiar pmf (Poisson, geometric,
negative binomial) and is evaluated with multiplicative recurrences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import special, stats

from .exceptions import OutOfFamilyError, SpecError, UndefinedSCVError

__all__ = [
    "MAX_PHASES",
    "ServiceLaw",
    "Deterministic",
    "Exponential",
    "MixedErlang",
    "HyperExponential",
    "PrepLaw",
    "Moments",
    "mean",
    "scv",
    "lt_deriv",
    "phase_count_pmf",
    "phase_count_pmfs",
    "phase_count_tails",
    "sample",
    "make_rng",
    "fit_mixed_erlang",
    "fit_hyperexponential",
    "fit_moments",
    "law_from_json",
    "law_to_json",
    "mixture_cdf",
    "mixture_pdf",
    "mixture_survival_coeffs",
]

#: Upper bound on the number of Erlang phases anywhere in the package.
#: Desk-scale use stays at or below 50.
MAX_PHASES = 170


def _check_prob(name, value):
    if not 0.0 <= value <= 1.0 or math.isnan(value):
        raise SpecError(f"{name} must lie in [0, 1], got {value!r}")


def _check_rate(name, value):
    if not value > 0.0 or math.isinf(value):
        raise SpecError(f"{name} must be a finite positive rate, got {value!r}")


# -- Erlang / Poisson building blocks ---------------------------------------

def _erlang_lt_deriv(m: int, rate: float, i: int, s: float) -> float:
    # i-th derivative of (rate / (rate + s))**m
    if m == 0:
        return 1.0 if i == 0 else 0.0
    val = (rate / (rate + s)) ** m
    for j in range(i):
        val *= -(m + j) / (rate + s)
    return val


def _erlang_count_pmfs(m: int, rate: float, mu: float, size: int) -> np.ndarray:
    # negative binomial: Poisson(mu) events during an Erlang-m(rate) interval
    out = np.zeros(size)
    if size == 0:
        return out
    if m == 0:
        out[0] = 1.0
        return out
    ratio = mu / (rate + mu)
    q = (rate / (rate + mu)) ** m
    for k in range(size):
        out[k] = q
        q *= (m + k) / (k + 1) * ratio
    return out


def _poisson_pmfs(lam: float, size: int) -> np.ndarray:
    out = np.zeros(size)
    q = math.exp(-lam)
    for k in range(size):
        out[k] = q
        q *= lam / (k + 1)
    return out


# -- service laws -------------------------------------------------------------

class ServiceLaw:
    """Base class of the service-time families.

    Subclasses are frozen dataclasses and implement ``mean``, ``variance``,
    ``lt_deriv``, ``count_pmfs`` and ``sample``.
    """

    def scv(self) -> float:
        m = self.mean()
        if m == 0.0:
            raise UndefinedSCVError(f"scv is undefined for zero-mean law {self!r}")
        return self.variance() / (m * m)


@dataclass(frozen=True)
class Deterministic(ServiceLaw):
    """Point mass at ``d`` (``d = 0`` is allowed and means instant service)."""

    d: float

    def __post_init__(self):
        if not self.d >= 0.0 or math.isinf(self.d):
            raise SpecError(f"deterministic time must be finite and >= 0, got {self.d!r}")

    def mean(self):
        return float(self.d)

    def variance(self):
        return 0.0

    def lt_deriv(self, i, s):
        return (-self.d) ** i * math.exp(-s * self.d)

    def count_pmfs(self, mu, size):
        return _poisson_pmfs(mu * self.d, size)

    def sample(self, rng, size):
        return np.full(size, float(self.d))


@dataclass(frozen=True)
class Exponential(ServiceLaw):
    lam: float

    def __post_init__(self):
        _check_rate("lambda", self.lam)

    def mean(self):
        return 1.0 / self.lam

    def variance(self):
        return 1.0 / self.lam**2

    def lt_deriv(self, i, s):
        return _erlang_lt_deriv(1, self.lam, i, s)

    def count_pmfs(self, mu, size):
        return _erlang_count_pmfs(1, self.lam, mu, size)

    def sample(self, rng, size):
        return rng.exponential(1.0 / self.lam, size)


@dataclass(frozen=True)
class MixedErlang(ServiceLaw):
    """Erlang-(n-1) with probability ``p``, Erlang-n otherwise, common rate."""

    p: float
    n: int
    rate: float

    def __post_init__(self):
        _check_prob("p", self.p)
        _check_rate("mu", self.rate)
        if int(self.n) != self.n or not 2 <= self.n <= MAX_PHASES:
            raise SpecError(f"n must be an integer in [2, {MAX_PHASES}], got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))

    def mean(self):
        return (self.n - self.p) / self.rate

    def variance(self):
        # E[Var | branch] + Var[E | branch]; branch means differ by 1/rate
        return (self.n - self.p + self.p * (1.0 - self.p)) / self.rate**2

    def scv(self):
        k = self.n - self.p
        return (k + self.p * (1.0 - self.p)) / (k * k)

    def lt_deriv(self, i, s):
        return (self.p * _erlang_lt_deriv(self.n - 1, self.rate, i, s)
                + (1.0 - self.p) * _erlang_lt_deriv(self.n, self.rate, i, s))

    def count_pmfs(self, mu, size):
        return (self.p * _erlang_count_pmfs(self.n - 1, self.rate, mu, size)
                + (1.0 - self.p) * _erlang_count_pmfs(self.n, self.rate, mu, size))

    def sample(self, rng, size):
        shape = np.where(rng.random(size) < self.p, self.n - 1, self.n)
        return rng.gamma(shape, 1.0 / self.rate, size)


@dataclass(frozen=True)
class HyperExponential(ServiceLaw):
    p1: float
    p2: float
    mu1: float
    mu2: float

    def __post_init__(self):
        _check_prob("p1", self.p1)
        _check_prob("p2", self.p2)
        _check_rate("mu1", self.mu1)
        _check_rate("mu2", self.mu2)
        if abs(self.p1 + self.p2 - 1.0) > 1e-12:
            raise SpecError(f"p1 + p2 must equal 1, got {self.p1 + self.p2!r}")

    def mean(self):
        return self.p1 / self.mu1 + self.p2 / self.mu2

    def variance(self):
        second = 2.0 * (self.p1 / self.mu1**2 + self.p2 / self.mu2**2)
        return second - self.mean() ** 2

    def lt_deriv(self, i, s):
        return (self.p1 * _erlang_lt_deriv(1, self.mu1, i, s)
                + self.p2 * _erlang_lt_deriv(1, self.mu2, i, s))

    def count_pmfs(self, mu, size):
        return (self.p1 * _erlang_count_pmfs(1, self.mu1, mu, size)
                + self.p2 * _erlang_count_pmfs(1, self.mu2, mu, size))

    def sample(self, rng, size):
        rates = np.where(rng.random(size) < self.p1, self.mu1, self.mu2)
        return rng.exponential(1.0, size) / rates


# -- preparation law -----------------------------------------------------------

@dataclass(frozen=True)
class PrepLaw:
    """Mixture of Erlang-1 .. Erlang-N at common phase rate ``mu``.

    ``kappa[n - 1]`` is the probability of Erlang-n.  A pure Erlang-n law is
    the unit vector at position ``n - 1``; see :meth:`erlang`.
    """

    mu: float
    kappa: tuple

    def __post_init__(self):
        _check_rate("mu", self.mu)
        kappa = tuple(float(k) for k in self.kappa)
        if not 1 <= len(kappa) <= MAX_PHASES:
            raise SpecError(f"kappa must have 1..{MAX_PHASES} entries, got {len(kappa)}")
        if any(not k >= 0.0 for k in kappa):
            raise SpecError("kappa entries must be nonnegative")
        if abs(math.fsum(kappa) - 1.0) > 1e-12:
            raise SpecError(f"kappa must sum to 1, got {math.fsum(kappa)!r}")
        object.__setattr__(self, "kappa", kappa)

    @classmethod
    def erlang(cls, n: int, mu: float) -> "PrepLaw":
        if int(n) != n or not 1 <= n <= MAX_PHASES:
            raise SpecError(f"n must be an integer in [1, {MAX_PHASES}], got {n!r}")
        kappa = [0.0] * int(n)
        kappa[-1] = 1.0
        return cls(mu, tuple(kappa))

    @property
    def phases(self) -> int:
        """Largest number of phases N."""
        return len(self.kappa)

    @property
    def is_erlang(self) -> bool:
        return self.kappa[-1] == 1.0

    def mean(self):
        return math.fsum(k * (n + 1) for n, k in enumerate(self.kappa)) / self.mu

    def variance(self):
        second = math.fsum(k * (n + 1) * (n + 2) for n, k in enumerate(self.kappa)) / self.mu**2
        return second - self.mean() ** 2

    def scv(self):
        return self.variance() / self.mean() ** 2

    def sample(self, rng, size):
        if self.is_erlang:
            return rng.gamma(self.phases, 1.0 / self.mu, size)
        shape = rng.choice(np.arange(1, self.phases + 1), size=size, p=self.kappa)
        return rng.gamma(shape, 1.0 / self.mu, size)


Law = Union[ServiceLaw, PrepLaw]


@dataclass(frozen=True)
class Moments:
    mean: float
    scv: float


# -- functional interface -------------------------------------------------------

def mean(law: Law) -> float:
    return law.mean()


def scv(law: Law) -> float:
    """Squared coefficient of variation ``Var / mean**2``.

    Raises
    ------
    UndefinedSCVError
        If the law has zero mean (``Deterministic(0)``).
    """
    return law.scv()


def lt_deriv(law: ServiceLaw, i: int, s: float) -> float:
    """``i``-th derivative of the Laplace-Stieltjes transform at ``s``.

    Equals ``E[(-A)**i exp(-s A)]``.  ``s = 0`` is accepted so that
    ``-lt_deriv(law, 1, 0)`` gives the mean.
    """
    if i < 0 or int(i) != i:
        raise ValueError(f"derivative order must be a nonnegative integer, got {i!r}")
    if s < 0:
        raise ValueError(f"s must be >= 0, got {s!r}")
    return float(law.lt_deriv(int(i), float(s)))


def phase_count_pmfs(law: ServiceLaw, mu: float, size: int) -> np.ndarray:
    """Probabilities that exactly 0 .. ``size - 1`` rate-``mu`` phases expire
    during one service time."""
    _check_rate("mu", mu)
    return law.count_pmfs(float(mu), int(size))


def phase_count_pmf(law: ServiceLaw, mu: float, k: int) -> float:
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k!r}")
    return float(phase_count_pmfs(law, mu, k + 1)[k])


def phase_count_tails(law: ServiceLaw, mu: float, size: int) -> np.ndarray:
    """``P[at least k phases expire]`` for k = 0 .. ``size - 1``.

    Computed as ``1 - sum_{j<k} q_j``; clipped at zero to absorb rounding.
    """
    q = phase_count_pmfs(law, mu, size)
    head = np.concatenate(([0.0], np.cumsum(q)[:-1])) if size else q
    return np.clip(1.0 - head, 0.0, 1.0)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox4x64 counter-based generator keyed by ``(seed, stream)``.

    Every replication derives its own stream index, so results do not depend
    on how replications are scheduled across workers.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def sample(law: Law, rng: np.random.Generator, size=None):
    """Draw variates from ``law``; a scalar when ``size`` is None."""
    if size is None:
        return float(law.sample(rng, 1)[0])
    return law.sample(rng, size)


# -- two-moment fits ----------------------------------------------------------------

def fit_mixed_erlang(m: Moments) -> MixedErlang:
    """Mixed Erlang-(n-1)/Erlang-n law with the given mean and scv <= 1.

    ``n`` is the smallest integer >= 2 with ``1/n <= scv``.
    """
    if not m.mean > 0.0:
        raise OutOfFamilyError(f"mean must be positive, got {m.mean!r}")
    c = m.scv
    if not 0.0 < c <= 1.0:
        raise OutOfFamilyError(f"mixed Erlang fit needs 0 < scv <= 1, got {c!r}")
    n = max(2, math.ceil(1.0 / c))
    if n > MAX_PHASES:
        raise OutOfFamilyError(f"scv {c!r} needs {n} phases, more than {MAX_PHASES}")
    disc = max(0.0, n * (1.0 + c) - n * n * c)
    p = (n * c - math.sqrt(disc)) / (1.0 + c)
    p = min(1.0, max(0.0, p))
    return MixedErlang(p, n, (n - p) / m.mean)


def fit_hyperexponential(m: Moments) -> HyperExponential:
    """Balanced-means two-branch hyperexponential law for scv > 1."""
    if not m.mean > 0.0:
        raise OutOfFamilyError(f"mean must be positive, got {m.mean!r}")
    c = m.scv
    if not c > 1.0 or math.isinf(c):
        raise OutOfFamilyError(f"hyperexponential fit needs scv > 1, got {c!r}")
    p1 = 0.5 * (1.0 + math.sqrt((c - 1.0) / (c + 1.0)))
    p2 = 1.0 - p1
    return HyperExponential(p1, p2, 2.0 * p1 / m.mean, 2.0 * p2 / m.mean)


def fit_moments(m: Moments) -> ServiceLaw:
    if m.scv <= 1.0:
        return fit_mixed_erlang(m)
    return fit_hyperexponential(m)


# -- JSON ---------------------------------------------------------------------------

def law_to_json(law: Law) -> dict:
    if isinstance(law, Deterministic):
        return {"type": "det", "d": law.d}
    if isinstance(law, Exponential):
        return {"type": "exp", "lambda": law.lam}
    if isinstance(law, MixedErlang):
        return {"type": "mixed_erlang", "p": law.p, "n": law.n, "mu": law.rate}
    if isinstance(law, HyperExponential):
        return {"type": "hyperexp", "p1": law.p1, "p2": law.p2, "mu1": law.mu1, "mu2": law.mu2}
    if isinstance(law, PrepLaw):
        return {"type": "prep", "mu": law.mu, "kappa": list(law.kappa)}
    raise TypeError(f"not a law: {law!r}")


_FIELDS = {
    "det": (Deterministic, ("d",)),
    "exp": (Exponential, ("lambda",)),
    "mixed_erlang": (MixedErlang, ("p", "n", "mu")),
    "hyperexp": (HyperExponential, ("p1", "p2", "mu1", "mu2")),
    "prep": (PrepLaw, ("mu", "kappa")),
}


def law_from_json(obj: dict) -> Law:
    try:
        cls, fields = _FIELDS[obj["type"]]
    except (KeyError, TypeError):
        raise SpecError(f"unknown or missing law type in {obj!r}") from None
    extra = set(obj) - set(fields) - {"type"}
    if extra:
        raise SpecError(f"unexpected fields {sorted(extra)} for law type {obj['type']!r}")
    try:
        args = [obj[f] for f in fields]
    except KeyError as exc:
        raise SpecError(f"law {obj['type']!r} is missing field {exc.args[0]!r}") from None
    if cls is PrepLaw:
        args[1] = tuple(args[1])
    return cls(*args)


# -- atom-plus-Erlang-mixture laws ---------------------------------------------------
# Shared by the waiting-time law and the residual preparation law: an atom at
# zero plus weights w_1..w_N on Erlang-1..Erlang-N at one rate.

def _as_points(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise ValueError("x must be >= 0")
    return x


def mixture_cdf(mu, atom, weights, x):
    x = _as_points(x)
    i = np.arange(1, len(weights) + 1)
    e = special.gammainc(i, mu * x[..., None])
    return atom + e @ np.asarray(weights)


def mixture_pdf(mu, weights, x):
    x = _as_points(x)
    i = np.arange(1, len(weights) + 1)
    dens = mu * stats.poisson.pmf(i - 1, mu * x[..., None])
    return dens @ np.asarray(weights)


def mixture_survival_coeffs(weights) -> np.ndarray:
    """Coefficients ``c_j`` with ``S(x) = exp(-mu x) sum_j c_j (mu x)**j / j!``.

    ``c_j`` is the total weight on Erlang components with more than ``j``
    phases.
    """
    w = np.asarray(weights, dtype=float)
    return np.cumsum(w[::-1])[::-1]
