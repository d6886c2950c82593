import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deltabose import specfun as sf
from deltabose.errors import DomainError

# high-precision reference values (30-digit adaptive quadrature, frozen)
J_REF = {(1.0, 0.0): 2.80777024202851936522, (0.5, 0.3): 2.83185931055216485073,
         (0.001, 0.0): 22.8071475898200652504, (5.0, -1.0): 2.33188107085048188150}
D_REF = {0.0: 0.809078696218357758228, 1.0: 1.52410938577390953002, 0.01: 0.836258021749007728641}
DB_REF = {1.0: (0.560688509122656041752, 1.11515458664043793332),
          0.3: (0.543288249262206062953, 0.422367430142083255610)}


def test_ln_gamma_values():
    assert sf.ln_gamma(1.0) == 0.0
    assert sf.ln_gamma(0.5) == pytest.approx(0.5723649429, abs=1e-10)
    assert sf.ln_gamma(5.0) == pytest.approx(math.log(24), abs=1e-12)
    with pytest.raises(DomainError):
        sf.ln_gamma(0.0)


@pytest.mark.parametrize("u", np.linspace(0.1, 10, 34))
def test_ln_gamma_recurrence(u):
    assert abs(sf.ln_gamma(u + 1) - sf.ln_gamma(u) - math.log(u)) < 1e-12


@pytest.mark.parametrize("key", list(J_REF))
def test_volterra_j_reference(key):
    r = sf.volterra_j(*key)
    assert r.value == pytest.approx(J_REF[key], rel=1e-8)
    assert r.error <= 1e-8 * r.value


def test_volterra_j_monotone_in_theta():
    vals = [sf.volterra_j(1.0, th).value for th in np.linspace(-2, 2, 9)]
    assert np.all(np.diff(vals) > 0)


def test_volterra_j_domain():
    with pytest.raises(DomainError):
        sf.volterra_j(0.0, 0.0)


def _j_laplace_numeric(lam, theta):
    """int_0^inf e^{-lam t} j(t) dt by quadrature in s = -log t.

    Below t = e^-40 the factor e^{-lam t} is 1 to double precision, and the
    remaining piece int_0^{e^-40} j is evaluated by its own 1-d formula.
    """
    from scipy.integrate import quad

    def g(s):
        t = math.exp(-s)
        return math.exp(-lam * t) * sf.volterra_j(t, theta).value * t

    s_lo = -math.log(40.0 / lam)
    body = quad(g, s_lo, 40.0, epsabs=1e-12, epsrel=1e-11, limit=400)[0]
    return body + sf.volterra_j_integral(math.exp(-40.0), theta)


def test_volterra_j_laplace_identity():
    theta = 0.0
    lam = math.exp(theta + 1.0)
    assert _j_laplace_numeric(lam, theta) == pytest.approx(1.0, abs=1e-6)


def test_volterra_j_integral_matches_quadrature():
    from scipy.integrate import quad
    t1, t2, theta = 0.05, 0.7, 0.2
    direct = quad(lambda s: sf.volterra_j(s, theta).value, t1, t2, epsabs=1e-12, limit=200)[0]
    diff = sf.volterra_j_integral(t2, theta) - sf.volterra_j_integral(t1, theta)
    assert diff == pytest.approx(direct, rel=1e-7)


@pytest.mark.parametrize("lam", list(D_REF))
def test_d_lambda_reference(lam):
    assert sf.d_lambda(lam) == pytest.approx(D_REF[lam], rel=1e-9)


def test_d_lambda_analytic_zero_and_growth():
    assert sf.d_lambda(0.0) == pytest.approx(2 * math.log(2) - np.euler_gamma, rel=1e-12)
    vals = [sf.d_lambda(x) for x in np.geomspace(1e-6, 1e6, 25)]
    assert np.all(np.diff(vals) > 0)
    assert abs(sf.d_lambda(1e8) - math.log(1e8)) < 1e-3


def test_d_lambda_prime_matches_difference():
    for lam in (0.1, 1.0, 7.0):
        fd = (sf.d_lambda(lam + 1e-5) - sf.d_lambda(lam - 1e-5)) / 2e-5
        assert sf.d_lambda_prime(lam) == pytest.approx(fd, rel=1e-6)


@pytest.mark.parametrize("x", list(DB_REF))
def test_d_boundary_reference(x):
    re, im = sf.d_boundary(x)
    assert re == pytest.approx(DB_REF[x][0], rel=1e-9)
    assert im == pytest.approx(DB_REF[x][1], rel=1e-9)


def test_d_boundary_continuity_at_branch_point():
    re, im = sf.d_boundary(1e-6)
    assert abs(re - sf.d_lambda(0.0)) + abs(im) < 1e-4


def test_d_boundary_scan_bounds():
    xs = np.geomspace(1e-6, 1e6, 60)
    vals = np.array([sf.d_boundary(x) for x in xs])
    assert np.max(np.abs(math.pi - vals[:, 1])) <= math.pi + 1e-12
    big = xs >= 1
    assert np.max(vals[big, 0] - np.log(xs[big])) < 1.0


def test_d_boundary_domain():
    with pytest.raises(DomainError):
        sf.d_boundary(0.0)
    with pytest.raises(DomainError):
        sf.d_lambda(-1.0)


def test_c1_self_consistency(params):
    assert abs(params.c1 - 4 * math.e) < 1e-6


def test_c_eps_modes_agree(bump, c0):
    for eps in (0.2, 0.05, 0.01):
        p = sf.scalar_params(bump, eps, 0.3, c0=c0)
        for lam in (0.05, 1.0, 30.0, 2e3):
            a = sf.c_eps(lam, p, "integral")
            b = sf.c_eps(lam, p, "closed")
            assert abs(a - b) / a < 1e-8


def test_c_eps_sign_properties(params):
    for lam in np.geomspace(1e-3, 1e4, 15):
        assert sf.c_eps(lam, params) > 0
    for lam in np.geomspace(params.c1 * 1.0001, 1e4, 10):
        assert sf.c_eps(lam, params) < 1


def test_c_eps_domain(params):
    with pytest.raises(DomainError):
        sf.c_eps(0.0, params)
    with pytest.raises(ValueError):
        sf.c_eps(1.0, params, "fourier")


def test_b_overlap_properties(bump):
    assert sf.b_overlap(0.0, bump) == pytest.approx(1.0, abs=1e-7)
    us = np.arange(0.0, 50.5, 0.5)
    b = np.array([sf.b_overlap(u, bump) for u in us])
    assert np.all(np.diff(b) < 0)
    ub = [u * sf.b_overlap(u, bump) for u in np.geomspace(1, 1e4, 30)]
    assert max(ub) < 10.0


def test_b_overlap_matches_direct_grid(bump):
    # independent 4-d tensor-grid evaluation with a separable Gaussian
    x = np.linspace(-1, 1, 201)
    h = x[1] - x[0]
    X, Y = np.meshgrid(x, x, indexing="ij")
    P = bump(np.stack([X, Y], -1))
    for u in (0.5, 5.0, 50.0):
        K = np.exp(-u * (x[:, None] - x[None, :]) ** 2 / 4)
        direct = h**4 * np.sum(P * (K @ P @ K.T))
        assert sf.b_overlap(u, bump) == pytest.approx(direct, rel=1e-7)


def test_fit_c0_audit_and_slope(bump, c0):
    us = np.concatenate([[0.0], np.geomspace(1e-4, 1e4, 400)])
    worst = max(sf.b_overlap(u, bump) * (1 + c0 * u) for u in us)
    assert worst <= 1 + 1e-10
    slope = (1 - sf.b_overlap(1e-5, bump)) / 1e-5
    assert c0 <= slope * (1 + 1e-4)


def test_fit_c0_grid_stability(bump, c0):
    fit = sf.fit_c0.__wrapped__(bump, n_grid=240)
    assert abs(fit - c0) < 0.01 * c0


def test_b_eps_series_first_term(params):
    s = sf.b_eps_series(0.3, params, lmax=1, nsamples=10)
    exact = params.beta_eps**2 / (4 * math.pi * math.sqrt(0.09 + params.a * 0.3))
    assert s.terms[0] == pytest.approx(exact, rel=1e-15)
    assert s.mean == s.terms[0] and s.tail == 0.0


def test_b_eps_series_ratio_test(bump, c0):
    for eps in (0.2, 0.1):
        p = sf.scalar_params(bump, eps, 0.0, c0=c0)
        s = sf.b_eps_series(0.25, p, lmax=40, nsamples=2000, seed=3)
        r = np.array(s.terms[1:]) / np.array(s.terms[:-1])
        # terms grow for small l, then decay
        assert np.all(r[10:] < 1)
        assert np.mean(r[-10:]) < 0.8


def test_b_eps_contour_laplace_consistency(params):
    lam = 2 * params.c1
    c = sf.c_eps(lam, params)
    assert sf.b_eps_contour_laplace(lam, params) == pytest.approx(
        params.beta_eps * c / (1 - c), abs=1e-4)


def test_b_eps_contour_vs_numeric_laplace(params):
    """Coarse t-quadrature of the contour form against the geometric series."""
    from scipy.integrate import quad
    lam = 2 * params.c1
    c = sf.c_eps(lam, params)
    exact = params.beta_eps * c / (1 - c)
    g = lambda s: math.exp(-lam * math.exp(-s)) * sf.b_eps_contour(math.exp(-s), params) * math.exp(-s)
    body = quad(g, -math.log(6.0), 12.0, epsrel=1e-6, limit=100)[0]
    assert body == pytest.approx(exact, rel=0.02)


def test_b_eps_series_vs_contour(params):
    s = sf.b_eps_series(0.5, params, nsamples=40000, seed=11)
    c = sf.b_eps_contour(0.5, params)
    assert abs(s.mean - c) <= max(4 * s.stderr, 0.02 * c)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.01, 2.0))
def test_b_eps_contour_positive(t):
    p = sf.ScalarParams(theta=0.0, eps=0.1, beta_eps=1.904169646923598, c0=0.1306556017111176)
    assert sf.b_eps_contour(t, p) > 0
