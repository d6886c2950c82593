"""Pointwise integral kernels, the cached j(t), and the collision operator j^eps.

Kernels use ``g(t, z) = exp(-|z|^2/2t)/(2 pi t)`` on each 2-d block.  Points
of the collision spaces are :class:`~deltabose.spaces.YPoint` /
:class:`~deltabose.spaces.YEpsPoint`; particle configurations are arrays of
shape ``(n, 2)``.

The eps-collision operator ``j^eps(t)`` is evaluated through its Laplace
transform.  With ``K(lam) = phi G_eps(lam) phi`` and
``G_eps(lam; z) = K_0(sqrt(lam) eps |z|)/(2 pi)``, the series in ``l`` sums to
``beta (1 - beta K)^{-1} - beta``; truncated sums use the same matrices.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy import optimize
from scipy.interpolate import CubicSpline
from scipy.special import kv

from . import mollifier as _moll
from . import specfun
from .errors import DomainError, PoleError, ShapeError, TruncationError
from .quad import talbot_nodes
from .spaces import PairIdx, YEpsPoint, YPoint, s_alpha, s_eps_alpha

__all__ = [
    "CollisionGrid",
    "JCache",
    "JepsResult",
    "KernelContext",
    "KernelDescriptor",
    "collision_matrix",
    "collision_pole",
    "gauss_green_laplace",
    "green_hat",
    "heat1",
    "heat_kernel",
    "j_value",
    "jeps_kernel",
    "jeps_matrix",
    "jeps_norm",
    "kernel_eval",
]

TWO_PI = 2.0 * math.pi


def heat_kernel(t: float, x) -> np.ndarray:
    """Product of planar heat kernels over consecutive coordinate pairs of ``x``."""
    if not t > 0:
        raise DomainError("t must be positive")
    x = np.asarray(x, dtype=float)
    if x.shape[-1] % 2:
        raise ShapeError("last axis must hold 2-d blocks")
    k = x.shape[-1] // 2
    return np.exp(-np.sum(x * x, axis=-1) / (2.0 * t)) / (TWO_PI * t) ** k


def heat1(t, z):
    """One-dimensional factor ``exp(-z^2/2t)/sqrt(2 pi t)`` (broadcasting)."""
    return np.exp(-np.square(z) / (2.0 * t)) / np.sqrt(TWO_PI * t)


# ---------------------------------------------------------------------------
# j(t) cache


class JCache:
    """``j(t)`` on a log-spaced grid with cubic-spline interpolation of ``log j``.

    ``log j`` is smooth in ``log t`` both near zero (``j ~ 1/(t log^2 t)``) and
    for large ``t`` (exponential growth).  A not-a-knot spline is fourth
    order and stays within about 2e-7 of direct quadrature at the default
    density; monotone (PCHIP) interpolation is only third order and needs
    several times more nodes for the same accuracy.
    """

    def __init__(self, theta: float, t_min: float = 1e-12, t_max: float = 64.0,
                 per_decade: int = 64):
        self.theta = float(theta)
        self.t_min, self.t_max = t_min, t_max
        ndec = math.log10(t_max / t_min)
        self.nodes = np.geomspace(t_min, t_max, int(ndec * per_decade) + 1)
        vals = np.array([specfun.volterra_j(t, self.theta, rtol=1e-11).value for t in self.nodes])
        self._interp = CubicSpline(np.log(self.nodes), np.log(vals))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise DomainError("j(t) needs t > 0")
        if np.any((t < self.t_min) | (t > self.t_max)):
            flat = np.atleast_1d(t)
            out = np.array([specfun.volterra_j(float(s), self.theta).value for s in flat.ravel()])
            inside = (flat >= self.t_min) & (flat <= self.t_max)
            out[inside.ravel()] = np.exp(self._interp(np.log(flat[inside])))
            return out.reshape(t.shape)
        return np.exp(self._interp(np.log(t)))


_JLOCK = threading.Lock()


@lru_cache(maxsize=8)
def _jcache(theta: float) -> JCache:
    return JCache(theta)


def j_value(t, theta: float, direct: bool = False):
    """``j(t)``; cached interpolation unless ``direct``."""
    if direct:
        t = np.asarray(t, dtype=float)
        return np.vectorize(lambda s: specfun.volterra_j(s, theta).value)(t)
    with _JLOCK:
        cache = _jcache(float(theta))
    return cache(t)


# ---------------------------------------------------------------------------
# descriptors and pointwise evaluation

_KINDS = ("heat", "incoming", "incoming_adj", "swapping", "jop", "heat_eps_incoming",
          "heat_eps_incoming_adj", "heat_eps_swapping", "jop_eps")


@dataclass(frozen=True)
class KernelDescriptor:
    kind: str
    alpha: PairIdx | None = None
    alpha_prime: PairIdx | None = None
    t: float = 1.0
    eps: float | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise DomainError(f"unknown kernel kind {self.kind!r}")
        if not self.t > 0:
            raise DomainError("t must be positive")
        if self.kind != "heat" and self.alpha is None:
            raise DomainError(f"{self.kind} needs alpha")
        if "swapping" in self.kind and self.alpha_prime is None:
            raise DomainError("swapping kernels need alpha_prime")
        if self.kind == "swapping" and self.alpha == self.alpha_prime:
            raise DomainError("limiting swapping kernel needs alpha != alpha_prime")
        if "eps" in self.kind and not (self.eps is not None and 0 < self.eps < 1):
            raise DomainError("eps kernels need 0 < eps < 1")

    @property
    def is_eps(self) -> bool:
        return "eps" in self.kind


@dataclass(frozen=True)
class KernelContext:
    """Ambient data for kernel evaluation."""

    n: int
    theta: float = 0.0
    mollifier: object = None
    beta: float | None = None
    cgrid: CollisionGrid | None = None

    def phi(self, yr):
        if self.mollifier is None:
            raise DomainError("eps kernels need a mollifier")
        return _moll.phi_eval(self.mollifier, yr, sqrt=True)


def _as_x(pt, n):
    x = np.asarray(pt, dtype=float)
    if x.shape != (n, 2):
        raise ShapeError(f"expected X point of shape ({n}, 2), got {x.shape}")
    return x


def _as_y(pt, alpha, n, cls):
    if not isinstance(pt, cls):
        raise ShapeError(f"expected {cls.__name__}")
    if pt.alpha != alpha or pt.n != n:
        raise ShapeError("point pair/particle count does not match descriptor")
    return pt


def _heat_x(t, dx):
    return float(heat_kernel(t, np.asarray(dx).reshape(-1)))


def kernel_eval(d: KernelDescriptor, out_pt, in_pt, ctx: KernelContext) -> float:
    """Value of the kernel ``d`` at ``(out_pt, in_pt)``."""
    n, t = ctx.n, d.t
    kind = d.kind
    if kind == "heat":
        return _heat_x(t, _as_x(out_pt, n) - _as_x(in_pt, n))
    if kind == "incoming":
        y = _as_y(out_pt, d.alpha, n, YPoint)
        return _heat_x(t, s_alpha(d.alpha, n, y.yc, y.rest) - _as_x(in_pt, n))
    if kind == "incoming_adj":
        return kernel_eval(KernelDescriptor("incoming", d.alpha, None, t), in_pt, out_pt, ctx)
    if kind == "swapping":
        y = _as_y(out_pt, d.alpha, n, YPoint)
        y2 = _as_y(in_pt, d.alpha_prime, n, YPoint)
        return _heat_x(t, s_alpha(d.alpha, n, y.yc, y.rest) - s_alpha(d.alpha_prime, n, y2.yc, y2.rest))
    if kind == "jop":
        y = _as_y(out_pt, d.alpha, n, YPoint)
        y2 = _as_y(in_pt, d.alpha, n, YPoint)
        spect = float(heat_kernel(t, (y.rest - y2.rest).reshape(-1))) if n > 2 else 1.0
        return 4.0 * math.pi * float(j_value(t, ctx.theta)) * float(
            heat_kernel(0.5 * t, y.yc - y2.yc)) * spect
    eps = d.eps
    if kind == "heat_eps_incoming":
        y = _as_y(out_pt, d.alpha, n, YEpsPoint)
        ph = float(ctx.phi(y.yr))
        if ph == 0.0:
            return 0.0
        return ph * _heat_x(t, s_eps_alpha(d.alpha, n, eps, y.yr, y.yc, y.rest) - _as_x(in_pt, n))
    if kind == "heat_eps_incoming_adj":
        return kernel_eval(KernelDescriptor("heat_eps_incoming", d.alpha, None, t, eps),
                           in_pt, out_pt, ctx)
    if kind == "heat_eps_swapping":
        y = _as_y(out_pt, d.alpha, n, YEpsPoint)
        y2 = _as_y(in_pt, d.alpha_prime, n, YEpsPoint)
        ph = float(ctx.phi(y.yr)) * float(ctx.phi(y2.yr))
        if ph == 0.0:
            return 0.0
        xa = s_eps_alpha(d.alpha, n, eps, y.yr, y.yc, y.rest)
        xb = s_eps_alpha(d.alpha_prime, n, eps, y2.yr, y2.yc, y2.rest)
        return ph * _heat_x(t, xa - xb)
    # jop_eps
    y = _as_y(out_pt, d.alpha, n, YEpsPoint)
    y2 = _as_y(in_pt, d.alpha, n, YEpsPoint)
    spect = float(heat_kernel(t, (y.rest - y2.rest).reshape(-1))) if n > 2 else 1.0
    if ctx.beta is None:
        raise DomainError("jop_eps needs beta in the context")
    jr = jeps_kernel(t, y.yr, y2.yr, None, ctx, eps=eps).value
    return jr * float(heat_kernel(0.5 * t, y.yc - y2.yc)) * spect


# ---------------------------------------------------------------------------
# collision-space discretization


def green_hat(lam, r):
    """Laplace transform of ``g(2s, z)`` in ``s``: ``K_0(sqrt(lam) |z|)/(2 pi)``."""
    return kv(0, np.sqrt(lam) * r) / TWO_PI


_GL3 = np.polynomial.legendre.leggauss(3)
_GL16 = np.polynomial.legendre.leggauss(16)


def _k0_cell_mean_center(kappa, d):
    """Mean of ``K_0(kappa |u|)`` over a square of side ``d`` centered at 0.

    Uses polar coordinates and ``int_0^R K_0(k r) r dr = (1 - k R K_1(k R))/k^2``.
    """
    x, w = _GL16
    th = (x + 1.0) * math.pi / 8.0
    R = d / (2.0 * np.cos(th))
    kappa = np.asarray(kappa)[..., None]
    kr = kappa * R
    inner = (1.0 - kr * kv(1, kr)) / kappa ** 2
    return (8.0 / d ** 2) * np.sum(w * inner, axis=-1) * (math.pi / 8.0)


class CollisionGrid:
    """Cell-centered grid on ``supp phi`` for the relative collision coordinate.

    Nodes where ``Phi`` is below ``1e-14`` of its peak are dropped.  The
    symmetric discretization of a kernel ``k(y, y')`` is
    ``sqrt(w_i) phi_i k_ij phi_j sqrt(w_j)``.
    """

    def __init__(self, handle, n_side: int = 32):
        if n_side < 4:
            raise DomainError("n_side too small")
        self.handle = handle
        R = handle.support_radius
        self.h = 2.0 * R / n_side
        ax = -R + self.h * (np.arange(n_side) + 0.5)
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
        Phi = handle(pts)
        keep = Phi > 1e-14 * Phi.max()
        self.points = pts[keep]
        self.index = np.stack(np.meshgrid(np.arange(n_side), np.arange(n_side), indexing="ij"),
                              axis=-1).reshape(-1, 2)[keep]
        self.phi = np.sqrt(Phi[keep])
        self.w = np.full(len(self.points), self.h * self.h)
        self.n_side = n_side
        self._poles = {}
        self._lock = threading.RLock()

    def __len__(self):
        return len(self.points)

    @cached_property
    def _offsets(self):
        """Integer offsets ``(p, q)`` between nodes, reduced to unique ``p^2 + q^2``."""
        d = self.index[:, None, :] - self.index[None, :, :]
        key = d[..., 0] ** 2 + d[..., 1] ** 2
        uniq, inv = np.unique(key, return_inverse=True)
        return uniq, inv.reshape(key.shape)

    def pole(self, eps: float, beta: float) -> float:
        """Cached :func:`collision_pole` for this grid."""
        key = (float(eps), float(beta))
        with self._lock:
            if key not in self._poles:
                self._poles[key] = collision_pole(eps, beta, self)
            return self._poles[key]

    @property
    def sw_phi(self):
        return np.sqrt(self.w) * self.phi


def _k0_near_mean(kappa, h, p2):
    """Mean of ``K_0(kappa |z|)`` over a source cell whose center is at
    distance ``h sqrt(p2)``, via 3x3 Gauss points (for ``p2`` in {1, 2})."""
    x, w = _GL3
    vals = []
    for q in p2:
        off = (1.0, 0.0) if q == 1 else (1.0, 1.0)
        acc = 0.0
        for xi, wi in zip(x, w):
            for yj, wj in zip(x, w):
                r = h * math.hypot(off[0] + 0.5 * xi, off[1] + 0.5 * yj)
                acc = acc + 0.25 * wi * wj * kv(0, kappa * r)
        vals.append(acc)
    return vals


def collision_matrix(lam, eps: float, cg: CollisionGrid) -> np.ndarray:
    """Symmetric discretization of ``K(lam) = phi G_eps(lam) phi`` on ``cg``."""
    kappa = np.sqrt(lam + 0j) * eps
    uniq, inv = cg._offsets
    r = cg.h * np.sqrt(uniq.astype(float))
    vals = np.empty(len(uniq), dtype=complex)
    vals[1:] = kv(0, kappa * r[1:])
    vals[0] = _k0_cell_mean_center(kappa, cg.h * eps)
    # nearest and diagonal neighbours: average over the source cell
    for q, v in zip((1, 2), _k0_near_mean(kappa, cg.h * eps, (1, 2))):
        pos = np.searchsorted(uniq, q)
        if pos < len(uniq) and uniq[pos] == q:
            vals[pos] = v
    G = vals[inv] / TWO_PI
    s = cg.sw_phi
    out = s[:, None] * G * s[None, :]
    return out if np.iscomplexobj(lam) or np.iscomplex(lam) else out.real


def collision_pole(eps: float, beta: float, cg: CollisionGrid) -> float:
    """Largest ``lam > 0`` at which ``beta K(lam)`` has eigenvalue 1."""

    def top(loglam):
        K = collision_matrix(math.exp(loglam), eps, cg).real
        return beta * np.linalg.eigvalsh(K)[-1] - 1.0

    lo, hi = -5.0, 5.0
    while top(lo) < 0:
        lo -= 5.0
        if lo < -200:
            raise PoleError("no bound state found")
    while top(hi) > 0:
        hi += 5.0
        if hi > 200:
            raise PoleError("bound state energy out of range")
    return math.exp(optimize.brentq(top, lo, hi, xtol=1e-12))


@lru_cache(maxsize=16)
def _cgrid(handle, n_side):
    return CollisionGrid(handle, n_side)


def collision_resolvent(lam, eps: float, beta: float, cg: CollisionGrid, lmax: int | None,
                        K=None):
    """``beta sum_{l=0}^{lmax} (beta K)^l`` (symmetric form); all ``l`` if ``lmax`` is None."""
    if K is None:
        K = collision_matrix(lam, eps, cg)
    m = len(cg)
    if lmax is None:
        return beta * np.linalg.solve(np.eye(m) - beta * K, np.eye(m))
    acc = np.eye(m, dtype=K.dtype)
    P = np.eye(m, dtype=K.dtype)
    for _ in range(lmax):
        P = beta * (K @ P)
        acc = acc + P
    return beta * acc


def gauss_green_laplace(lam, r, s0: float, nquad: int = 160):
    """``int_0^inf e^{-lam s} g(s0 + 2s, r) ds`` for complex ``lam`` off ``(-inf, 0]``.

    For ``Re lam > 0`` the defining integral is used after the substitution
    ``s = e^v``; otherwise the path is rotated so that ``lam s`` is real,
    which gives the analytic continuation.  Both are trapezoid rules in a
    log variable and converge exponentially.
    """
    lam = np.asarray(lam, dtype=complex)
    r2 = np.square(np.asarray(r, dtype=float))
    lam_b, r2_b = np.broadcast_arrays(lam, r2)
    mod = np.abs(lam_b)
    rot = np.exp(-1j * np.angle(lam_b))
    # s = tau * rot, tau = e^v / |lam|, v in [-40, 4]
    v = np.linspace(-40.0, 4.0, nquad)
    dv = v[1] - v[0]
    tau = np.exp(v)[(None,) * lam_b.ndim] / mod[..., None]
    s = tau * rot[..., None]
    w = s0 + 2.0 * s
    integrand = np.exp(-lam_b[..., None] * s - r2_b[..., None] / (2.0 * w)) / (TWO_PI * w) * s
    wts = np.full(nquad, dv)
    wts[0] *= 0.5
    wts[-1] *= 0.5
    return np.sum(integrand * wts, axis=-1)


# ---------------------------------------------------------------------------
# j^eps


@dataclass(frozen=True)
class JepsResult:
    value: float
    terms: tuple
    tail: float


def _ctx_grid(ctx: KernelContext) -> CollisionGrid:
    if ctx.cgrid is not None:
        return ctx.cgrid
    return _cgrid(ctx.mollifier, 32)


def _shift(eps, beta, cg):
    return 1.5 * cg.pole(eps, beta) + 0.5


def jeps_matrix(t: float, eps: float, beta: float, cg: CollisionGrid, lmax: int | None = None,
                M: int = 24) -> np.ndarray:
    """Symmetric grid matrix of ``j^eps(t)`` (``sqrt(w) j^eps sqrt(w)``).

    Its spectral norm approximates ``||j^eps(t)||_{2->2}``.
    """
    shift = _shift(eps, beta, cg) if lmax is None else 0.5
    lam, wts = talbot_nodes(t, M, shift)
    m = len(cg)
    acc = np.zeros((m, m), dtype=complex)
    for lk, wk in zip(lam, wts):
        R = collision_resolvent(lk, eps, beta, cg, lmax)
        acc += wk * (R - beta * np.eye(m))
    return acc.real


def _orbit_projector(cg: CollisionGrid):
    """Orthonormal basis of functions invariant under the square's symmetries.

    Returns ``(order, starts, sizes)``: nodes sorted by orbit, the start of
    each orbit in that order, and orbit sizes.
    """
    c = 0.5 * (cg.n_side - 1)
    a = np.abs(cg.index - c)
    key = np.sort(a, axis=1)
    _, orbit = np.unique(key[:, 0] * (2 * cg.n_side) + key[:, 1], return_inverse=True)
    order = np.argsort(orbit, kind="stable")
    sizes = np.bincount(orbit)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    return order, starts, sizes


def jeps_norm(t: float, eps: float, beta: float, cg: CollisionGrid, lmax: int | None = None,
              M: int = 24) -> float:
    """Spectral norm of :func:`jeps_matrix` on the symmetric subspace.

    ``K(lam)`` commutes with the reflections and the diagonal swap of the
    grid, and ``j^eps(t)`` has a nonnegative kernel, so its top eigenvector
    is invariant (Perron-Frobenius) and the norm is that of the compression
    to invariant functions, which is about 8 times smaller.
    """
    order, starts, sizes = _orbit_projector(cg)
    scale = 1.0 / np.sqrt(sizes)
    shift = _shift(eps, beta, cg) if lmax is None else 0.5
    lam, wts = talbot_nodes(t, M, shift)
    n = len(sizes)
    acc = np.zeros((n, n), dtype=complex)
    for lk, wk in zip(lam, wts):
        K = collision_matrix(lk, eps, cg)[np.ix_(order, order)]
        Ks = np.add.reduceat(np.add.reduceat(K, starts, axis=0), starts, axis=1)
        Ks *= scale[:, None] * scale[None, :]
        if lmax is None:
            R = beta * np.linalg.solve(np.eye(n) - beta * Ks, np.eye(n))
        else:
            R, P = np.eye(n, dtype=complex), np.eye(n, dtype=complex)
            for _ in range(lmax):
                P = beta * (Ks @ P)
                R = R + P
            R = beta * R
        acc += wk * (R - beta * np.eye(n))
    J = acc.real
    return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (J + J.T)))))


def jeps_kernel(t: float, yr, yr2, lmax: int | None, ctx: KernelContext, eps: float | None = None,
                M: int = 24) -> JepsResult:
    """Kernel ``j^eps(t)(yr, yr2)`` summed to ``lmax`` terms (all terms if None).

    The ``l = 1`` term is exact, ``beta^2 phi(yr) g(2t, eps(yr-yr2)) phi(yr2)``;
    higher terms use Nystrom extension of the collision grid and Talbot
    inversion.  With finite ``lmax`` a geometric tail estimate from the last
    two terms is reported (and not added).
    """
    if not t > 0:
        raise DomainError("t must be positive")
    if eps is None:
        raise DomainError("eps required")
    beta = ctx.beta
    yr = np.asarray(yr, dtype=float)
    yr2 = np.asarray(yr2, dtype=float)
    ph1, ph2 = float(ctx.phi(yr)), float(ctx.phi(yr2))
    if ph1 == 0.0 or ph2 == 0.0:
        return JepsResult(0.0, (0.0,), 0.0)
    cg = _ctx_grid(ctx)
    first = beta ** 2 * ph1 * ph2 * math.exp(-eps * eps * float(np.sum((yr - yr2) ** 2)) / (4 * t)) \
        / (4 * math.pi * t)
    if lmax == 1:
        return JepsResult(first, (first,), float("nan"))
    s = cg.sw_phi
    d1 = eps * np.linalg.norm(cg.points - yr, axis=1)
    d2 = eps * np.linalg.norm(cg.points - yr2, axis=1)
    shift = _shift(eps, beta, cg) if lmax is None else 0.5
    lam, wts = talbot_nodes(t, M, shift)
    nterm = 1 if lmax is None else lmax - 1
    acc = np.zeros(nterm, dtype=complex)
    for lk, wk in zip(lam, wts):
        a = ph1 * kv(0, np.sqrt(lk) * np.maximum(d1, 1e-300)) / TWO_PI * s
        b = ph2 * kv(0, np.sqrt(lk) * np.maximum(d2, 1e-300)) / TWO_PI * s
        if lmax is None:
            K = collision_matrix(lk, eps, cg)
            x = np.linalg.solve(np.eye(len(cg)) - beta * K, b)
            acc[0] += wk * beta ** 3 * (a @ x)
        else:
            K = collision_matrix(lk, eps, cg)
            v = b.copy()
            for ell in range(2, lmax + 1):
                acc[ell - 2] += wk * beta ** (ell + 1) * (a @ v)
                v = K @ v
    higher = acc.real
    terms = (first,) + tuple(float(x) for x in higher)
    if lmax is None:
        return JepsResult(first + float(higher[0]), terms, 0.0)
    tail = 0.0
    if len(terms) >= 3 and terms[-2] > 0:
        ratio = terms[-1] / terms[-2]
        if ratio >= 1:
            raise TruncationError(f"j^eps terms not decaying (ratio {ratio:.3g})",
                                  achieved=ratio, value=sum(terms))
        tail = terms[-1] * ratio / (1 - ratio)
    return JepsResult(float(sum(terms)), terms, tail)
