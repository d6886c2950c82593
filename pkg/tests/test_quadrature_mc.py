import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deltabose import _native
from deltabose import quadrature_mc as qmc
from deltabose.errors import DegenerateEstimateError, DomainError, ResolutionError


@pytest.mark.parametrize("l,t", [(1, 0.7), (2, 1.0), (3, 0.4), (6, 2.0)])
def test_halfpow_weight_integrand_matches_closed_form(l, t):
    rng = qmc.stream(0, l)
    est = qmc.simplex_integrate(lambda tau: np.prod(tau ** -0.5, axis=1), l, t,
                                "halfpow", 1000, rng)
    # the importance weight cancels the integrand exactly
    assert est.mean == pytest.approx(qmc.dirichlet_closed_form(l, t), rel=1e-12)
    assert est.stderr < 1e-10 * est.mean


def test_dirichlet_closed_form_two_dim():
    # int_0^t (s (t-s))^(-1/2) ds = pi
    assert qmc.dirichlet_closed_form(2, 3.0) == pytest.approx(math.pi, rel=1e-14)


@pytest.mark.parametrize("l", [2, 3, 5])
def test_uniform_volume_and_moment(l):
    t = 1.3
    rng = qmc.stream(1, l)
    vol = qmc.simplex_integrate(lambda tau: np.ones(len(tau)), l, t, "uniform", 100, rng)
    assert vol.mean == pytest.approx(t ** (l - 1) / math.factorial(l - 1), rel=1e-14)
    rng = qmc.stream(2, l)
    mom = qmc.simplex_integrate(lambda tau: tau[:, 0], l, t, "uniform", 200000, rng)
    exact = t ** l / math.factorial(l)
    assert abs(mom.mean - exact) < 4 * mom.stderr + 1e-12


def test_simplex_points_on_simplex():
    taus, w = qmc.simplex_sample(4, 2.5, "halfpow", qmc.stream(3), size=500)
    assert np.all(taus >= 0) and np.allclose(taus.sum(axis=1), 2.5)
    assert np.all(w > 0)


def test_simplex_errors():
    rng = qmc.stream(0)
    with pytest.raises(DomainError):
        qmc.simplex_sample(0, 1.0, "uniform", rng)
    with pytest.raises(DomainError):
        qmc.simplex_sample(2, 0.0, "uniform", rng)
    with pytest.raises(ValueError):
        qmc.simplex_sample(2, 1.0, "cauchy", rng)
    with pytest.raises(DegenerateEstimateError):
        qmc.simplex_integrate(lambda tau: np.zeros(len(tau)), 3, 1.0, "uniform", 10, rng)
    with pytest.raises(DegenerateEstimateError):
        qmc.simplex_integrate(lambda tau: np.full(len(tau), np.nan), 3, 1.0, "uniform", 10, rng)


def test_brownian_variance():
    b = qmc.brownian_sample([[0.0, 0.0], [1.0, 1.0]], 1.0, 0.25, qmc.stream(4), npaths=40000)
    assert b.paths.shape == (40000, 5, 2, 2)
    assert np.allclose(b.paths[:, 0], [[0, 0], [1, 1]])
    end = b.paths[:, -1, 1] - 1.0
    assert np.var(end) == pytest.approx(1.0, abs=0.03)
    assert b.dt == pytest.approx(0.25)


def _gauss_f(end):
    return np.exp(-np.sum(end ** 2, axis=(1, 2)))


def test_fk_beta_zero_is_heat(bump):
    x = [[0.0, 0.0], [0.3, 0.0]]
    t = 0.5
    est = qmc.feynman_kac_estimate(_gauss_f, x, t, 0.1, 0.0025, 20000, 0.0, bump, seed=5)
    # each coordinate: E exp(-(x+B_t)^2) = exp(-x^2/(1+2t))/sqrt(1+2t)
    exact = (1 + 2 * t) ** -2 * math.exp(-0.09 / (1 + 2 * t))
    assert abs(est.mean - exact) < 4 * est.stderr
    assert est.valid


def test_fk_constant_f_bounded_below(bump):
    est = qmc.feynman_kac_estimate(lambda e: np.ones(len(e)), [[0, 0], [0.05, 0]],
                                   0.1, 0.2, 0.01, 2000, 1.5, bump, seed=1)
    assert est.mean > 1.0


def test_fk_monotone_in_beta(bump):
    args = (lambda e: np.ones(len(e)), [[0, 0], [0.02, 0]], 0.1, 0.2, 0.01, 2000)
    vals = [qmc.feynman_kac_estimate(*args, beta, bump, seed=2).mean for beta in (0.5, 1.0, 2.0)]
    assert vals[0] < vals[1] < vals[2]


def test_fk_deterministic(bump):
    args = (_gauss_f, [[0, 0], [0.1, 0]], 0.1, 0.2, 0.01, 700, 1.0, bump)
    a = qmc.feynman_kac_estimate(*args, seed=9, block=128)
    b = qmc.feynman_kac_estimate(*args, seed=9, block=128)
    assert a == b


def test_fk_thread_count_invariant(bump, monkeypatch):
    args = (_gauss_f, [[0, 0], [0.1, 0]], 0.1, 0.2, 0.01, 700, 1.0, bump)
    a = qmc.feynman_kac_estimate(*args, seed=9, block=64)
    monkeypatch.setenv("DELTABOSE_WORKERS", "3")
    b = qmc.feynman_kac_estimate(*args, seed=9, block=64)
    assert a == b


@pytest.mark.skipif(not _native.HAVE_NATIVE, reason="compiled core not built")
def test_backends_agree(bump):
    args = (_gauss_f, [[0, 0], [0.05, 0], [0.0, 0.08]], 0.2, 0.2, 0.005, 500, 2.0, bump)
    a = qmc.feynman_kac_estimate(*args, seed=4, backend="native")
    b = qmc.feynman_kac_estimate(*args, seed=4, backend="python")
    assert a.mean == pytest.approx(b.mean, rel=1e-12)
    assert a.stderr == pytest.approx(b.stderr, rel=1e-9)


def test_fk_resolution_guard(bump):
    with pytest.raises(ResolutionError):
        qmc.feynman_kac_estimate(_gauss_f, [[0, 0], [1, 0]], 0.1, 0.1, 0.01, 10, 1.0, bump)
    with pytest.raises(DomainError):
        qmc.feynman_kac_estimate(_gauss_f, [[0, 0], [1, 0]], 0.1, 0.1, 0.003, 10, 1.0, bump)


def test_fk_clamp_flags_invalid(bump):
    est = qmc.feynman_kac_estimate(lambda e: np.ones(len(e)), [[0, 0], [0, 0]], 0.1, 0.2,
                                   0.01, 50, 1e6, bump, seed=0)
    assert est.n_clamped > 0 and not est.valid


def test_fk_generic_profile_matches_bump(bump):
    class Wrapped:
        profile = "custom"
        normalization = bump.normalization

        def __call__(self, z):
            return bump(z)

    args = (_gauss_f, [[0, 0], [0.05, 0]], 0.1, 0.2, 0.01, 300, 1.0)
    a = qmc.feynman_kac_estimate(*args, bump, seed=3, backend="python")
    b = qmc.feynman_kac_estimate(*args, Wrapped(), seed=3)
    assert a.mean == pytest.approx(b.mean, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 2**31), st.integers(0, 50))
def test_streams_reproducible(seed, key):
    a = qmc.stream(seed, key).standard_normal(4)
    b = qmc.stream(seed, key).standard_normal(4)
    c = qmc.stream(seed, key + 1).standard_normal(4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
