"""Special functions and scalar bounds.

Everything here is a pure function of its arguments.  Quadratures carry error
estimates; routines raise :class:`~deltabose.errors.AccuracyError` when the
estimate exceeds the documented tolerance instead of returning silently.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize

from . import quadrature_mc as qmc
from .errors import AccuracyError, DomainError, FittingError, PoleError, TruncationError
from .mollifier import EULER_GAMMA, MollifierHandle, beta_eps
from .quad import QuadResult, quad, tanh_sinh

__all__ = [
    "ScalarParams",
    "SeriesEstimate",
    "b_eps_contour",
    "b_eps_contour_laplace",
    "b_eps_series",
    "b_overlap",
    "c_eps",
    "d_boundary",
    "d_lambda",
    "d_lambda_prime",
    "fit_c0",
    "fit_c2",
    "ln_gamma",
    "pole_location",
    "scalar_params",
    "volterra_j",
    "volterra_j_integral",
    "volterra_j_laplace",
]


@dataclass(frozen=True)
class ScalarParams:
    theta: float
    eps: float
    beta_eps: float
    c0: float
    c1: float = 4.0 * math.e

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise DomainError(f"eps must lie in (0, 1), got {self.eps}")
        if not (self.beta_eps > 0 and self.c0 > 0 and self.c1 > 0):
            raise DomainError("beta_eps, c0 and c1 must be positive")

    @property
    def a(self) -> float:
        """Short-time scale ``c0 eps^2``."""
        return self.c0 * self.eps ** 2

    @property
    def eta(self) -> float:
        """The constant making the closed form of ``C_eps`` exact."""
        return 2.0 * abs(math.log(self.eps)) - math.log(self.c0) - 4.0 * math.pi / self.beta_eps


def scalar_params(h: MollifierHandle, eps: float, theta: float = 0.0,
                  c0: float | None = None) -> ScalarParams:
    """Assemble :class:`ScalarParams` from a mollifier (``c0`` fitted if omitted)."""
    if c0 is None:
        c0 = fit_c0(h)
    c1 = math.exp(EULER_GAMMA + d_lambda(0.0) + 1.0)
    return ScalarParams(theta=theta, eps=eps, beta_eps=beta_eps(eps, theta, h), c0=c0, c1=c1)


# ---------------------------------------------------------------------------
# Gamma and the Volterra-type function j


def ln_gamma(u: float) -> float:
    if not u > 0:
        raise DomainError(f"ln_gamma requires u > 0, got {u}")
    return math.lgamma(u)


_lgamma = np.vectorize(math.lgamma, otypes=[float])


def _exp_over_gamma(slope: float, shift: float, rtol: float) -> QuadResult:
    """``int_0^inf exp(slope*u - lgamma(u + shift)) du`` for shift in {0, 1}."""
    def g(u):
        return np.exp(slope * u - _lgamma(u + shift))

    # locate the peak of the log-integrand: digamma(u + shift) = slope
    if slope > 1.0:
        from scipy.special import digamma
        lo, hi = 1.0, max(4.0, 2.0 * math.exp(slope) + 2.0)
        peak = optimize.brentq(lambda u: digamma(u + shift) - slope, lo, hi)
    else:
        peak = 1.0
    logmax = slope * peak - math.lgamma(peak + shift)
    head = tanh_sinh(g, 0.0, 1.0, rtol=rtol * 0.1, atol=0.0)
    # upper cutoff where the integrand has fallen by e^-60 relative to its peak
    upper = peak + 8.0
    while slope * upper - math.lgamma(upper + shift) > logmax - 60.0:
        upper = peak + 2.0 * (upper - peak)
    pts = [p for p in (peak,) if 1.0 < p < upper]
    tail = quad(lambda u: float(g(np.array([u]))[0]), 1.0, upper, rtol=rtol * 0.1,
                points=pts or None)
    return QuadResult(head.value + tail.value, head.error + tail.error)


def volterra_j(t: float, theta: float, rtol: float = 1e-8) -> QuadResult:
    """``j(t) = int_0^inf t^(u-1) e^(theta u) / Gamma(u) du``.

    Split at ``u = 1``: tanh-sinh on ``(0, 1]`` (infinite derivative at 0 when
    ``t < 1``), adaptive Gauss-Kronrod around the peak on ``[1, inf)``.
    """
    if not t > 0:
        raise DomainError(f"volterra_j requires t > 0, got {t}")
    r = _exp_over_gamma(math.log(t) + theta, 0.0, rtol)
    val, err = r.value / t, r.error / t
    if err > rtol * abs(val):
        raise AccuracyError("volterra_j quadrature inaccurate", achieved=err / abs(val), value=val)
    return QuadResult(val, err)


def volterra_j_integral(t: float, theta: float, rtol: float = 1e-10) -> float:
    """``int_0^t j(s) ds = int_0^inf t^u e^(theta u) / Gamma(u + 1) du``."""
    if t == 0:
        return 0.0
    if not t > 0:
        raise DomainError("t must be nonnegative")
    return _exp_over_gamma(math.log(t) + theta, 1.0, rtol).value


def volterra_j_laplace(lam: float, theta: float, rtol: float = 1e-10) -> float:
    """``int_0^inf e^(-lam t) j(t) dt`` by quadrature in ``s = -log t``.

    Below ``t = e^-40`` the factor ``e^(-lam t)`` is 1 in double precision and
    that piece is :func:`volterra_j_integral`.  Closed form: ``1/(log lam - theta)``
    for ``lam > e^theta``.
    """
    if not lam > 0:
        raise DomainError("lam must be positive")

    def g(s):
        t = math.exp(-s)
        return math.exp(-lam * t) * volterra_j(t, theta).value * t

    s_lo = -math.log(40.0 / lam)
    body = quad(g, s_lo, 40.0, rtol=rtol, atol=1e-14).value
    return body + volterra_j_integral(math.exp(-40.0), theta)


# ---------------------------------------------------------------------------
# D(lambda) and its boundary values


def d_lambda(lam: float) -> float:
    """``D(lam) = 2 int_0^inf e^-s log(sqrt(s) + sqrt(s + lam)) ds``.

    Evaluated after ``s = w^2``, which removes the ``log s`` endpoint singularity
    at ``lam = 0``.
    """
    if lam < 0:
        raise DomainError("d_lambda requires lam >= 0; use d_boundary for negative arguments")

    def f(w):
        return 4.0 * w * math.exp(-w * w) * math.log(w + math.sqrt(w * w + lam)) if w > 0 else 0.0

    res = quad(f, 0.0, 12.0, rtol=1e-13, atol=1e-15, points=[1.0])
    if res.error > 1e-9 * max(1.0, abs(res.value)):
        raise AccuracyError("d_lambda quadrature inaccurate", achieved=res.error, value=res.value)
    return res.value


def d_lambda_prime(lam: float) -> float:
    """Derivative ``D'(lam) = int_0^inf e^-s / (sqrt(s+lam) (sqrt(s) + sqrt(s+lam))) ds``."""
    if lam < 0:
        raise DomainError("lam must be nonnegative")

    def f(w):
        q = math.sqrt(w * w + lam)
        return 2.0 * w * math.exp(-w * w) / (q * (w + q)) if q > 0 else 1.0

    return quad(f, 0.0, 12.0, rtol=1e-12, atol=1e-15, points=[1.0]).value


def d_boundary(x: float) -> tuple[float, float]:
    """Boundary value ``D(-x + i0)`` for ``x > 0`` as ``(re, im)``.

    For ``s < x`` the upper-boundary square root is ``i sqrt(x - s)``, so the
    logarithm is ``0.5 log x + i arccos(sqrt(s/x))``; for ``s > x`` everything
    is real.
    """
    if not x > 0:
        raise DomainError(f"d_boundary requires x > 0, got {x}")

    def tail(w):
        return 4.0 * w * math.exp(-w * w) * math.log(w + math.sqrt(w * w + x)) if w > 0 else 0.0

    ex = math.exp(-x)
    re = -math.expm1(-x) * math.log(x)
    if ex > 0:
        re += ex * quad(tail, 0.0, 12.0, rtol=1e-13, atol=1e-16, points=[1.0]).value

    def arg(s):
        return 2.0 * np.exp(-s) * np.arccos(np.sqrt(np.clip(s / x, 0.0, 1.0)))

    im = tanh_sinh(arg, 0.0, min(x, 60.0), rtol=1e-12, atol=1e-300).value
    return re, im


# ---------------------------------------------------------------------------
# C_eps(lambda)


def c_eps(lam: float, p: ScalarParams, mode: str = "integral") -> float:
    """Laplace transform ``C_eps(lam)`` of ``beta/(4pi sqrt(s^2 + c0 eps^2 s))``."""
    if not lam > 0:
        raise DomainError(f"c_eps requires lam > 0, got {lam}")
    if mode == "closed":
        return 1.0 - p.beta_eps / (4.0 * math.pi) * (math.log(lam) - p.eta - d_lambda(p.a * lam))
    if mode != "integral":
        raise ValueError(f"unknown mode {mode!r}")
    a = p.a

    def f(w):
        return 2.0 * math.exp(-lam * w * w) / math.sqrt(w * w + a)

    w_end = math.sqrt(40.0 / lam)
    pts = sorted({min(math.sqrt(a), w_end * 0.5), w_end * 0.1})
    res = quad(f, 0.0, w_end, rtol=1e-13, atol=1e-300, points=pts)
    return p.beta_eps / (4.0 * math.pi) * res.value


def _c_eps_prime_abs(lam: float, p: ScalarParams) -> float:
    """``-C_eps'(lam) * 4pi/beta = int s e^{-lam s} / sqrt(s^2 + a s) ds``."""
    a = p.a

    def f(w):
        return 2.0 * w * w * math.exp(-lam * w * w) / math.sqrt(w * w + a)

    w_end = math.sqrt(40.0 / lam)
    return quad(f, 0.0, w_end, rtol=1e-12, atol=1e-300,
                points=[min(math.sqrt(a), 0.5 * w_end)]).value


# ---------------------------------------------------------------------------
# b(u) and c0


def b_overlap(u: float, h: MollifierHandle) -> float:
    """``b(u) = int int Phi(y) exp(-u |y - y'|^2 / 4) Phi(y') dy dy'``."""
    if u < 0:
        raise DomainError("b_overlap requires u >= 0")
    two_r = 2.0 * h.support_radius

    def f(r):
        return r * float(h.autocorr_eval(r)) * math.exp(-0.25 * u * r * r)

    pts = [p for p in (2.0 / math.sqrt(u) if u > 0 else None,
                       6.0 / math.sqrt(u) if u > 0 else None) if p and p < two_r]
    res = quad(f, 0.0, two_r, rtol=1e-12, atol=1e-300, points=pts or None)
    return res.value


def _b_slope0(h: MollifierHandle) -> float:
    """``-b'(0) = (1/4) int r^3 A(r) dr``."""
    two_r = 2.0 * h.support_radius
    return 0.25 * quad(lambda r: r ** 3 * float(h.autocorr_eval(r)), 0.0, two_r, rtol=1e-12).value


def _c0_profile(h, u):
    b = b_overlap(u, h)
    return (1.0 / b - 1.0) / u


@lru_cache(maxsize=16)
def fit_c0(h: MollifierHandle, n_grid: int = 120, u_min: float = 1e-4,
           u_max: float = 1e4) -> float:
    """Largest ``c0`` with ``b(u) <= 1/(1 + c0 u)`` on a log-spaced audit grid.

    The grid minimum of ``(1/b(u) - 1)/u`` is refined locally and then audited
    on a grid ten times denser; a violation raises :class:`FittingError`.
    """
    us = np.geomspace(u_min, u_max, n_grid)
    prof = np.array([_c0_profile(h, u) for u in us])
    slope0 = _b_slope0(h)
    k = int(np.argmin(prof))
    c0 = min(float(prof[k]), slope0)
    if 0 < k < n_grid - 1 and prof[k] < slope0:
        res = optimize.minimize_scalar(
            lambda lu: _c0_profile(h, math.exp(lu)),
            bounds=(math.log(us[k - 1]), math.log(us[k + 1])), method="bounded",
            options={"xatol": 1e-10},
        )
        c0 = min(c0, float(res.fun))
    audit = np.geomspace(u_min, u_max, 10 * n_grid)
    worst = max(b_overlap(u, h) * (1.0 + c0 * u) for u in audit)
    if worst > 1.0 + 1e-10:
        raise FittingError(f"c0 audit failed: max b(u)(1+c0 u) = {worst!r}")
    return c0


# ---------------------------------------------------------------------------
# B_eps(t): series and contour forms


@dataclass(frozen=True)
class SeriesEstimate:
    """Truncated series with Monte Carlo error and truncation-tail estimate."""

    mean: float
    stderr: float
    tail: float
    terms: tuple
    term_stderrs: tuple
    nsamples: int
    seed: int


_SERIES_ALPHAS = (0.5, 0.4, 0.3, 0.2)


def _series_term(ell: int, t: float, a: float, beta: float, k4: float, nsamples: int,
                 seed: int) -> tuple[float, float]:
    """One series term with its standard error.

    Points of ``Sigma(t)`` come from an equal mixture of Dirichlet(alpha)
    laws, alpha in ``_SERIES_ALPHAS``.  Each component's weight
    ``prod tau^(1/2 - alpha) (tau + a)^(-1/2)`` is bounded, and the mixture
    is never worse than four times its best component.  Everything is formed in
    log space, since at large ``l`` integrand and density overflow separately.
    """
    rng = qmc.stream(seed, ell)
    k = len(_SERIES_ALPHAS)
    comp = rng.integers(0, k, nsamples)
    alphas = np.asarray(_SERIES_ALPHAS)[comp]
    g = rng.standard_gamma(np.repeat(alphas[:, None], ell, axis=1))
    taus = t * g / g.sum(axis=1, keepdims=True)
    s_log = np.sum(np.log(taus), axis=1)
    log_dens = np.stack([math.lgamma(ell * al) - ell * math.lgamma(al)
                         - (ell * al - 1.0) * math.log(t) + (al - 1.0) * s_log
                         for al in _SERIES_ALPHAS])
    top = log_dens.max(axis=0)
    log_mix = top + np.log(np.mean(np.exp(log_dens - top), axis=0))
    log_f = -0.5 * (s_log + np.sum(np.log(taus + a), axis=1))
    vals = np.exp(math.log(beta) + ell * math.log(k4) + log_f - log_mix)
    if not np.all(np.isfinite(vals)):
        raise AccuracyError("non-finite series samples", value=float("nan"))
    se = float(vals.std(ddof=1) / math.sqrt(nsamples)) if nsamples > 1 else 0.0
    return float(vals.mean()), se


def b_eps_series(t: float, p: ScalarParams, lmax: int = 200, nsamples: int = 20000,
                 seed: int = 0, rtol_stop: float = 1e-13) -> SeriesEstimate:
    """``B_eps(t) = beta sum_l int_Sigma(t) prod_k beta/(4pi sqrt(tau_k^2 + c0 eps^2 tau_k))``.

    Each simplex integral is importance sampled from a mixture of Dirichlet
    laws (see :func:`_series_term`).  Terms stop once they fall below ``rtol_stop`` of
    the running sum; otherwise the tail is extrapolated geometrically.
    """
    if not t > 0:
        raise DomainError("t must be positive")
    if lmax < 1:
        raise DomainError("lmax must be >= 1")
    a, beta = p.a, p.beta_eps
    k4 = beta / (4.0 * math.pi)
    terms, errs = [], []
    for ell in range(1, lmax + 1):
        if ell == 1:
            val, se = beta * k4 / math.sqrt(t * t + a * t), 0.0
        else:
            val, se = _series_term(ell, t, a, beta, k4, nsamples, seed)
        terms.append(val)
        errs.append(se)
        total = sum(terms)
        if ell >= 3 and val < rtol_stop * total and terms[-2] < terms[-3]:
            tail = 0.0
            break
    else:
        if len(terms) < 2:
            tail = 0.0  # single term requested; no ratio to extrapolate from
            stderr = errs[0]
            return SeriesEstimate(terms[0], stderr, tail, tuple(terms), tuple(errs), nsamples, seed)
        r = terms[-1] / terms[-2] if terms[-2] > 0 else 0.0
        if r >= 1.0:
            raise TruncationError(f"B_eps series terms not decaying at lmax={lmax} (ratio {r:.3g})",
                                  achieved=r, value=sum(terms))
        tail = terms[-1] * r / (1.0 - r)
    stderr = math.sqrt(sum(e * e for e in errs))
    return SeriesEstimate(sum(terms) + tail, stderr, tail, tuple(terms), tuple(errs),
                          nsamples, seed)


def _k_real(z: float, p: ScalarParams) -> float:
    """``log z - eta - D(a z)``; vanishes where ``C_eps(z) = 1``."""
    return math.log(z) - p.eta - d_lambda(p.a * z)


def pole_location(p: ScalarParams) -> float:
    """The unique ``z* > 0`` with ``C_eps(z*) = 1``."""
    hi = 1.0
    while _k_real(hi, p) <= 0:
        hi *= 2.0
        if hi > 1e300:
            raise PoleError("C_eps stays above 1; eps not small enough")
    lz = optimize.brentq(lambda lz: _k_real(math.exp(lz), p), -690.0, math.log(hi), xtol=1e-14)
    return math.exp(lz)


def _cut_parts(x: float, p: ScalarParams) -> tuple[float, float]:
    re, im = d_boundary(p.a * x)
    F = math.log(x) - p.eta - re
    G = math.pi - im
    return F, G


def _cut_density(x: float, p: ScalarParams) -> float:
    F, G = _cut_parts(x, p)
    den = F * F + G * G
    if den == 0.0:
        raise PoleError(f"F^2 + G^2 = 0 at x = {x}")
    return 4.0 * G / den


def fit_c2(p: ScalarParams, n_grid: int = 200) -> float:
    """Smallest ``c2 >= 1`` with ``log(x/c2) - log_+(a x) <= F_eps(x)`` on a grid.

    Used only to place quadrature breakpoints.
    """
    xs = np.geomspace(1e-3, 1e3 / p.a, n_grid)
    need = 1.0
    for x in xs:
        F, _ = _cut_parts(x, p)
        lp = max(math.log(p.a * x), 0.0)
        need = max(need, math.exp(math.log(x) - lp - F))
    if not math.isfinite(need):
        return math.exp(abs(p.eta) + 1.0)
    return need


def _cut_breakpoints(t: float, p: ScalarParams) -> list[float]:
    c2 = fit_c2(p, n_grid=40)
    pts = {c2 * math.e ** 3, 1.0 / t, 1.0 / p.a, 1.0}
    return sorted(x for x in pts if x > 0)


def b_eps_contour(t: float, p: ScalarParams, rtol: float = 1e-9) -> float:
    """``B_eps(t)`` from its contour-integral representation.

    The contour wraps ``(-inf, c1]``.  Off the negative axis the integrand is
    analytic except for the simple pole at ``z*`` where ``C_eps(z*) = 1``; its
    residue ``4 pi e^(z* t) / k'(z*)`` is added to the branch-cut integral
    ``int_0^inf e^(-t x) 4 G/(F^2 + G^2) dx``.
    """
    if not t > 0:
        raise DomainError("t must be positive")
    zs = pole_location(p)
    if zs > p.c1:
        raise PoleError(f"pole {zs} lies beyond c1 = {p.c1}; eps not small enough")
    kprime = _c_eps_prime_abs(zs, p)
    residue = 4.0 * math.pi * math.exp(zs * t) / kprime
    cut = _cut_integral(lambda x: math.exp(-t * x), _cut_breakpoints(t, p), p,
                        upper=max(60.0 / t, 10.0), rtol=rtol)
    return residue + cut


def _cut_integral(weight, breakpoints, p, upper, rtol):
    edges = [0.0] + [b for b in breakpoints if b < upper] + [upper]
    total = 0.0
    for lo, hi in itertools.pairwise(edges):
        if hi <= lo:
            continue
        total += quad(lambda x: weight(x) * _cut_density(x, p) if x > 0 else 0.0,
                      lo, hi, rtol=rtol, atol=1e-14, limit=200).value
    return total


def b_eps_contour_laplace(lam: float, p: ScalarParams) -> float:
    """Laplace transform of the contour form, integrated in ``t`` analytically.

    Equals ``4 pi / (k'(z*) (lam - z*)) + int_0^inf 4G/((F^2+G^2)(lam + x)) dx``
    for ``lam > z*``; compare with ``beta C/(1 - C)``.
    """
    zs = pole_location(p)
    if not lam > zs:
        raise DomainError("lam must exceed the pole location")
    kprime = _c_eps_prime_abs(zs, p)
    pole = 4.0 * math.pi / (kprime * (lam - zs))
    bps = sorted({1.0, lam, 1.0 / p.a, 1e3 / p.a})
    edges = [0.0] + bps
    cut = 0.0
    for lo, hi in itertools.pairwise(edges):
        cut += quad(lambda x: _cut_density(x, p) / (lam + x) if x > 0 else 0.0,
                    lo, hi, rtol=1e-11, atol=1e-15, limit=300).value
    # beyond 1e3/a the density is 4 pi/(k_inf^2 + pi^2)-ish over (lam + x): integrate in log x
    hi = edges[-1]
    cut += quad(lambda s: _cut_density(hi * math.exp(s), p) * hi * math.exp(s)
                / (lam + hi * math.exp(s)), 0.0, 80.0, rtol=1e-11, atol=1e-15, limit=300).value
    return pole + cut
