import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from altserve import alternating
from altserve.alternating import (
    WaitLaw,
    atom_from_transform,
    build_system,
    check_wait_law,
    solve_erlang,
    solve_phase_type,
    throughput,
    throughput_from_transform,
    verify_rewritten_system,
    wait_cdf,
    wait_mean,
    wait_pdf,
)
from altserve.distributions import (
    Deterministic,
    Exponential,
    MixedErlang,
    Moments,
    PrepLaw,
    fit_moments,
    lt_deriv,
)
from altserve.exceptions import InconsistentSolution, NumericFailure
from altserve.simulator import simulate_alternating

from conftest import SERVICE_LAWS


def erlang_survival(n, mu, x):
    return special.gammaincc(n, mu * np.maximum(x, 0.0))


def fixed_point_survival(w, B, A, x):
    """P[B - A - W > x] by quadrature, for A deterministic or exponential."""
    def sb(t):
        return sum(k * erlang_survival(n, B.mu, t) for n, k in enumerate(B.kappa, 1) if k)

    def given_a(a):
        atom = w.p0 * sb(x + a)
        cont = integrate.quad(lambda y: wait_pdf(w, y) * sb(x + a + y), 0, np.inf,
                              epsabs=1e-13, limit=200)[0]
        return atom + cont

    if isinstance(A, Deterministic):
        return given_a(A.d)
    lam = A.lam
    return integrate.quad(lambda a: lam * math.exp(-lam * a) * given_a(a), 0, np.inf,
                          epsabs=1e-12, limit=200)[0]


class TestBuildSystem:
    def test_n1_instant_service(self):
        M, rhs = build_system(1, 3.0, Deterministic(0.0))
        assert M.shape == (1, 1)
        assert M[0, 0] == pytest.approx(1.5, abs=1e-15)
        assert rhs.tolist() == [1.0]

    @pytest.mark.parametrize("lam, mu", [(1.0, 1.0), (2.0, 0.5), (0.3, 4.0)])
    def test_n1_exponential(self, lam, mu):
        M, _ = build_system(1, mu, Exponential(lam))
        assert M[0, 0] == pytest.approx(1 + lam / (lam + mu) / 2, abs=1e-15)

    @pytest.mark.parametrize("A", SERVICE_LAWS, ids=repr)
    def test_n2_solution_satisfies_balance(self, A):
        M, rhs = build_system(2, 2.0, A)
        u = np.linalg.solve(M, rhs)
        assert np.max(np.abs(M @ u - rhs)) <= 1e-10
        _, ts = solve_erlang(2, 2.0, A)
        assert np.allclose(ts.scaled_omega, u, atol=1e-12)

    @pytest.mark.parametrize("n, mu", [(0, 1.0), (171, 1.0), (2.5, 1.0), (2, 0.0), (2, -1.0)])
    def test_rejects_bad_arguments(self, n, mu):
        with pytest.raises(ValueError):
            build_system(n, mu, Exponential(1.0))
        with pytest.raises(ValueError):
            solve_erlang(n, mu, Exponential(1.0))


class TestClosedForms:
    @pytest.mark.parametrize("mu", [0.3, 1.0, 7.0])
    def test_n1_instant_service(self, mu):
        w, ts = solve_erlang(1, mu, Deterministic(0.0))
        assert w.p0 == pytest.approx(1 / 3, abs=1e-12)
        assert w.p[0] == pytest.approx(2 / 3, abs=1e-12)
        assert ts.omega[0] == pytest.approx(2 / 3, abs=1e-12)
        assert wait_mean(w) == pytest.approx(2 / (3 * mu), abs=1e-12)

    def test_n1_exponential(self):
        w, ts = solve_erlang(1, 1.0, Exponential(1.0))
        assert ts.omega[0] == pytest.approx(0.8, abs=1e-12)
        assert w.p[0] == pytest.approx(0.4, abs=1e-12)
        assert w.p0 == pytest.approx(0.6, abs=1e-12)
        assert wait_mean(w) == pytest.approx(0.4, abs=1e-12)

    def test_instant_service_erlang5_atom(self):
        w, _ = solve_erlang(5, 5.0, Deterministic(0.0))
        assert w.p0 > 0

    def test_wait_mean_examples(self):
        assert wait_mean(WaitLaw(1.0, 1 / 3, np.array([2 / 3]))) == pytest.approx(2 / 3)
        assert wait_mean(WaitLaw(2.0, 1.0, np.zeros(3))) == 0.0

    def test_cdf_examples(self):
        w = WaitLaw(1.0, 1 / 3, np.array([2 / 3]))
        assert wait_cdf(w, 0.0) == pytest.approx(1 / 3)
        assert wait_cdf(w, math.log(2)) == pytest.approx(2 / 3, abs=1e-15)

    def test_cdf_rejects_negative(self):
        with pytest.raises(ValueError):
            wait_cdf(WaitLaw(1.0, 1.0, np.zeros(1)), -1.0)


CASES = [
    (1, 1.0, Exponential(1.0)),
    (2, 2.0, Deterministic(0.0)),
    (3, 2.0, MixedErlang(0.0, 2, 2.0)),
    (4, 1.5, Deterministic(0.8)),
    (5, 5.0, Deterministic(0.0)),
    (5, 5.0, fit_moments(Moments(1.0, 0.8))),
    (6, 3.0, fit_moments(Moments(1.0, 3.0))),
    (10, 12.0, Exponential(0.7)),
    (40, 40.0, fit_moments(Moments(1.0, 0.2))),
]
CASE_IDS = [f"n{n}-mu{mu}-{type(A).__name__}" for n, mu, A in CASES]


@pytest.mark.parametrize("n, mu, A", CASES, ids=CASE_IDS)
class TestSolveErlang:
    def test_masses(self, n, mu, A):
        w, ts = solve_erlang(n, mu, A)
        assert abs(w.p0 + math.fsum(w.p) - 1) <= 1e-10
        assert w.p0 >= 0 and np.all(w.p >= 0)
        check_wait_law(w, ts)

    def test_transform_invariants(self, n, mu, A):
        _, ts = solve_erlang(n, mu, A)
        assert 0 < ts.omega[0] <= 1
        for k in range(1, n):
            assert ts.omega[k] == 0 or math.copysign(1, ts.omega[k]) == (-1) ** k
        alpha = [lt_deriv(A, j, mu) for j in range(n)]
        for i in range(n):
            conv = math.fsum(math.comb(i, k) * ts.omega[k] * alpha[i - k] for k in range(i + 1))
            assert ts.phi[i] == pytest.approx(conv, rel=1e-10, abs=1e-300)

    def test_rewritten_system(self, n, mu, A):
        w, ts = solve_erlang(n, mu, A)
        assert verify_rewritten_system(w, ts) <= 1e-9

    def test_two_routes_to_atom(self, n, mu, A):
        w, ts = solve_erlang(n, mu, A)
        assert atom_from_transform(ts, PrepLaw.erlang(n, mu)) == pytest.approx(w.p0, abs=1e-10)

    def test_throughput_routes(self, n, mu, A):
        w, ts = solve_erlang(n, mu, A)
        assert throughput_from_transform(ts, n, A) == pytest.approx(throughput(w, A), abs=1e-10)

    def test_permutation_invariance(self, n, mu, A):
        M, rhs = build_system(n, mu, A)
        rng = np.random.default_rng(n)
        rp, cp = rng.permutation(n), rng.permutation(n)
        y = np.linalg.solve(M[rp][:, cp], rhs[rp])
        u = np.empty(n)
        u[cp] = y
        _, ts = solve_erlang(n, mu, A)
        assert np.max(np.abs(u - ts.scaled_omega)) <= 1e-10

    def test_cdf_monotone_pdf_nonnegative(self, n, mu, A):
        w, _ = solve_erlang(n, mu, A)
        xs = np.linspace(0, 20 * n / mu, 10**4)
        F = wait_cdf(w, xs)
        assert F[0] == pytest.approx(w.p0)
        assert np.all(np.diff(F) >= -1e-15)
        assert np.all(wait_pdf(w, xs) >= 0)
        assert F[-1] == pytest.approx(1.0, abs=1e-9)

    def test_density_integrates(self, n, mu, A):
        w, _ = solve_erlang(n, mu, A)
        total = integrate.quad(lambda x: wait_pdf(w, x), 0, np.inf, epsabs=1e-13, limit=200)[0]
        assert total == pytest.approx(1 - w.p0, abs=1e-8)


@pytest.mark.parametrize("n, mu, A", [
    (1, 1.0, Exponential(1.0)),
    (2, 2.0, Deterministic(0.0)),
    (3, 2.0, Deterministic(0.5)),
    (4, 3.0, Exponential(2.0)),
])
def test_distributional_fixed_point(n, mu, A):
    # W = max(0, B - A - W): the survival of the solved law must reproduce itself
    w, _ = solve_erlang(n, mu, A)
    B = PrepLaw.erlang(n, mu)
    for x in (0.0, 0.3, 1.0, 2.5):
        assert 1 - wait_cdf(w, x) == pytest.approx(fixed_point_survival(w, B, A, x), abs=1e-8)


class TestRewrittenSystem:
    def test_n1_closed_form(self):
        w, ts = solve_erlang(1, 1.0, Deterministic(0.0))
        assert ts.omega[0] == pytest.approx(w.p0 + w.p[0] / 2, abs=1e-15)
        assert verify_rewritten_system(w, ts) <= 1e-15

    @pytest.mark.parametrize("n", [1, 3, 5])
    def test_detects_corruption(self, n):
        w, ts = solve_erlang(n, float(n), Exponential(1.0))
        p = w.p.copy()
        p[0] += 1e-3
        bad = WaitLaw(w.mu, w.p0, p)
        assert verify_rewritten_system(bad, ts) >= 1e-4
        with pytest.raises(InconsistentSolution):
            check_wait_law(bad, ts)


class TestPhaseType:
    @pytest.mark.parametrize("n, mu, A", CASES[:6], ids=CASE_IDS[:6])
    def test_unit_kappa_matches_erlang(self, n, mu, A):
        w1, ts1 = solve_erlang(n, mu, A)
        w2, ts2 = solve_phase_type(PrepLaw.erlang(n, mu), A, with_transform=True)
        assert abs(w1.p0 - w2.p0) <= 1e-12
        assert np.max(np.abs(w1.p - w2.p)) <= 1e-12
        assert np.max(np.abs(ts1.omega - ts2.omega)) <= 1e-12

    def test_returns_law_only_by_default(self):
        assert isinstance(solve_phase_type(PrepLaw.erlang(2, 1.0), Exponential(1.0)), WaitLaw)

    def test_mixture_fixed_point(self):
        B = PrepLaw(1.5, (0.3, 0.0, 0.7))
        A = Exponential(1.2)
        w = solve_phase_type(B, A)
        for x in (0.0, 0.5, 2.0):
            assert 1 - wait_cdf(w, x) == pytest.approx(fixed_point_survival(w, B, A, x), abs=1e-8)

    @pytest.mark.slow
    def test_half_half_mixture_against_simulation(self):
        B = PrepLaw(1.0, (0.5, 0.5))
        A = Deterministic(0.0)
        w = solve_phase_type(B, A)
        rep = simulate_alternating(A, B, 10**6, seed=20240601)
        assert abs(rep.mean_wait - wait_mean(w)) <= 3 * rep.mean_wait_se
        assert abs(rep.zero_wait_freq - w.p0) <= 3 * rep.zero_wait_se

    @pytest.mark.parametrize("c2", [0.2, 0.5, 0.8, 1.0])
    def test_fitted_preparation_laws(self, c2):
        # a two-moment fit used as B: a mixed Erlang preparation law
        f = fit_moments(Moments(1.0, c2))
        kappa = [0.0] * f.n
        kappa[f.n - 2] = f.p
        kappa[f.n - 1] = 1 - f.p
        B = PrepLaw(f.rate, tuple(kappa))
        assert B.mean() == pytest.approx(1.0) and B.scv() == pytest.approx(c2)
        for A in (Deterministic(0.0), Exponential(1.0), fit_moments(Moments(0.6, 3.0))):
            w, ts = solve_phase_type(B, A, with_transform=True)
            check_wait_law(w, ts)
            assert atom_from_transform(ts, B) == pytest.approx(w.p0, abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 30), r=st.floats(0.1, 3.0), ma=st.floats(0.05, 5.0),
       c2=st.floats(0.05, 6.0), kind=st.sampled_from(["fit", "det", "exp"]))
def test_invariants_random_points(n, r, ma, c2, kind):
    A = {"fit": fit_moments(Moments(ma, c2)), "det": Deterministic(ma), "exp": Exponential(1 / ma)}[kind]
    mu = n * r / ma  # E[A] / E[B] = r
    w, ts = solve_erlang(n, mu, A)
    check_wait_law(w, ts)
    assert ts.condition < 1e12
    assert atom_from_transform(ts, PrepLaw.erlang(n, mu)) == pytest.approx(w.p0, abs=1e-10)
    assert throughput_from_transform(ts, n, A) == pytest.approx(throughput(w, A), rel=1e-10)
    # the wait never exceeds the preparation time
    assert wait_mean(w) <= n / mu + 1e-12


def test_solver_rejects_singular_system(monkeypatch):
    def singular(kappa, mu, A):
        return np.zeros((2, 2)), np.array([1.0, 0.0]), np.ones(2)
    monkeypatch.setattr(alternating, "_mixture_system", singular)
    with pytest.raises(NumericFailure):
        solve_erlang(2, 1.0, Exponential(1.0))


def test_inconsistent_weights_raise(monkeypatch):
    def broken(kappa, mu, A):
        return np.eye(1), np.array([-1.0]), np.ones(1)
    monkeypatch.setattr(alternating, "_mixture_system", broken)
    with pytest.raises(InconsistentSolution):
        solve_erlang(1, 1.0, Exponential(1.0))


def test_wait_law_json_roundtrip():
    w, _ = solve_erlang(3, 2.0, Exponential(1.0))
    obj = json.loads(json.dumps(w.to_json()))
    assert set(obj) == {"mu", "p0", "p"}
    back = WaitLaw.from_json(obj)
    assert back.mu == w.mu and back.p0 == w.p0 and np.array_equal(back.p, w.p)
