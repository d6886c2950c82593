"""Heat, limiting and prelimiting semigroups for two particles.

For ``n = 2`` write ``c = (x_1 + x_2)/2`` and ``r = x_1 - x_2``.  Every kernel
in the diagram chain factorizes into a heat kernel in ``c`` (variance
``t/2``) and a relative part, so both semigroups act as
``G_c(t/2) (x) [G_r(2t) + Corr(t)]``.  The relative correction is the single
chain ``g*(tau_1/2) (beta delta_0 + J^eps)(tau_1) g(tau_3/2)`` (or its limit with
``J``), evaluated through its Laplace transform:

* limiting: ``4 pi j_hat(lam) G_hat(lam; r) <G_hat(lam; .), v>`` with
  ``j_hat = 1/(log lam - theta)``;
* eps: ``<G_hat(lam; r - eps y) phi, M(lam) phi v_hat(lam, eps y)>`` with
  ``M = beta (1 - beta K)^{-1}`` on the collision grid (or its truncation).

Time values come from fixed-Talbot inversion with the contour shifted past
the bound-state pole.  A Monte Carlo evaluation of the same chains (simplex
sampling) is available at probe points for small truncation orders.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import kv

from . import mollifier as _moll
from . import quadrature_mc as qmc
from . import specfun
from .errors import DomainError, ShapeError
from .kernels import CollisionGrid, _cgrid, collision_matrix, gauss_green_laplace, heat1
from .quad import talbot_nodes
from .spaces import AccuracyWarning, Diagram, GridFunction, PairIdx, enumerate_diagrams

__all__ = [
    "ChainResult",
    "ChainSpec",
    "GaussianState",
    "Sampling",
    "SemigroupContext",
    "chain_apply",
    "duhamel_apply",
    "heat_apply",
    "limiting_apply",
    "relative_operator",
    "tail_bound",
    "tail_sum",
]

TWO_PI = 2.0 * math.pi
_GL4 = np.polynomial.legendre.leggauss(4)


# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class GaussianState:
    """``f(x) = prod_i exp(-|x_i - m_i|^2 / (2 sigma^2))``."""

    centers: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float).reshape(-1, 2)
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")
        object.__setattr__(self, "centers", c)

    @classmethod
    def centered(cls, n: int = 2, sigma: float = 1.0) -> GaussianState:
        return cls(np.zeros((n, 2)), sigma)

    @property
    def n(self) -> int:
        return self.centers.shape[0]

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.exp(-np.sum((x - self.centers) ** 2, axis=(-1, -2)) / (2 * self.sigma ** 2))

    def heat(self, t: float, x) -> np.ndarray:
        """Exact free evolution ``G(t) f`` at points ``x`` of shape ``(..., n, 2)``."""
        s2 = self.sigma ** 2
        x = np.asarray(x, dtype=float)
        q = np.sum((x - self.centers) ** 2, axis=(-1, -2))
        return (s2 / (s2 + t)) ** self.n * np.exp(-q / (2 * (s2 + t)))

    # pair form: f = u(c) v(r)
    def pair_parts(self):
        if self.n != 2:
            raise DomainError("pair form needs n = 2")
        m1, m2 = self.centers
        return 0.5 * (m1 + m2), m1 - m2

    def on_grid(self, axes, chart: str = "cr") -> GridFunction:
        g = GridFunction(axes, np.zeros(tuple(len(a) for a in axes)), chart)
        return g.like(self(g.blocks()["x"]))


@dataclass(frozen=True)
class Sampling:
    """Evaluation controls: deterministic Laplace route or Monte Carlo."""

    method: str = "laplace"
    nsamples: int = 20000
    profile: str = "halfpow"
    seed: int = 0
    talbot_M: int = 24

    def __post_init__(self):
        if self.method not in ("laplace", "mc"):
            raise DomainError(f"unknown method {self.method!r}")


@dataclass(frozen=True)
class ChainSpec:
    diagram: Diagram
    t: float
    eps: float | None = None
    mmax: int = 1
    lmax: int | None = None
    sampling: Sampling = field(default_factory=Sampling)

    def __post_init__(self):
        if not self.t > 0:
            raise DomainError("t must be positive")
        if self.mmax < 1 or (self.lmax is not None and self.lmax < 0):
            raise DomainError("truncation must be positive")
        if self.eps is not None and not 0 < self.eps < 1:
            raise DomainError("eps must lie in (0, 1)")

    @property
    def variant(self) -> str:
        return "limiting" if self.eps is None else "eps"


@dataclass
class ChainResult:
    output: object
    stderr: np.ndarray | None
    meta: dict


class SemigroupContext:
    """Mollifier, coupling parameter and discretization shared by the semigroups.

    The collision-grid error is ``O(h^2)``.  With ``extrapolate`` (default)
    eps-chains are evaluated on ``n_side`` and ``1.5 n_side`` grids and
    combined by Richardson extrapolation.
    """

    def __init__(self, handle=None, theta: float = 0.0, n_side: int = 32,
                 beta_override: float | None = None, extrapolate: bool = True):
        self.handle = handle if handle is not None else _moll.standard_bump()
        self.theta = float(theta)
        self.n_side = n_side
        self.beta_override = beta_override
        self.extrapolate = extrapolate

    @property
    def cgrid(self) -> CollisionGrid:
        return _cgrid(self.handle, self.n_side)

    def _plain(self, n_side: int) -> SemigroupContext:
        return SemigroupContext(self.handle, self.theta, n_side, self.beta_override,
                                extrapolate=False)

    def richardson(self, evaluate):
        """``evaluate(ctx)`` on this grid, extrapolated in ``h^2`` if enabled."""
        if not self.extrapolate:
            return evaluate(self)
        n_fine = (3 * self.n_side) // 2
        vc = evaluate(self._plain(self.n_side))
        vf = evaluate(self._plain(n_fine))
        q = (n_fine / self.n_side) ** 2
        return (q * vf - vc) / (q - 1.0)

    def beta(self, eps: float) -> float:
        if self.beta_override is not None:
            return float(self.beta_override)
        return _moll.beta_eps(eps, self.theta, self.handle)

    @property
    def radial(self) -> bool:
        return self.handle.profile == "standard_bump"


# ---------------------------------------------------------------------------
# heat semigroup on grids

_DIFFUSIVITY = {"x": None, "cr": (0.5, 0.5, 2.0, 2.0)}


def _heat_matrix(ax: np.ndarray, var: float) -> np.ndarray:
    h = ax[1] - ax[0]
    return h * heat1(var, ax[:, None] - ax[None, :])


def heat_apply(f: GridFunction, t: float) -> GridFunction:
    """Free evolution by separable Gaussian convolution along every axis.

    Supports the particle chart ``x`` (variance ``t`` per axis) and the pair
    chart ``cr`` (variance ``t/2`` on center axes, ``2t`` on relative axes).
    Convolution uses the trapezoid rule; when the kernel width falls below
    the grid spacing a warning is attached to the result metadata.
    """
    if not t > 0:
        raise DomainError("t must be positive")
    if f.chart not in _DIFFUSIVITY:
        raise ShapeError(f"heat_apply does not support chart {f.chart!r}")
    diff = _DIFFUSIVITY[f.chart] or (1.0,) * len(f.axes)
    out = f.values
    for k, ax in enumerate(f.axes):
        K = _heat_matrix(ax, diff[k] * t)
        out = np.moveaxis(np.tensordot(K, np.moveaxis(out, k, 0), axes=(1, 0)), 0, k)
    res = f.like(out)
    if min(math.sqrt(d * t) / (a[1] - a[0]) for d, a in zip(diff, f.axes)) < 1.0:
        warnings.warn("heat kernel narrower than the grid spacing", AccuracyWarning, stacklevel=2)
    return res


# ---------------------------------------------------------------------------
# relative-coordinate Laplace building blocks


def _green_point(lam, d):
    return kv(0, np.sqrt(lam) * np.maximum(d, 1e-300)) / TWO_PI


def _green_cell(lam, targets, centers, h):
    """``G_hat(lam; target - z)`` averaged over the square cell of side ``h``
    around each center; point values for well-separated pairs."""
    diff = targets[:, None, :] - centers[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=-1))
    G = _green_point(lam, d)
    near = d < 1.5 * h
    if np.any(near):
        ti, ci = np.nonzero(near)
        x, w = _GL4
        acc = 0.0
        for xa, wa in zip(x, w):
            for xb, wb in zip(x, w):
                off = 0.5 * h * np.array([xa, xb])
                dd = np.linalg.norm(diff[ti, ci] - off, axis=-1)
                acc = acc + 0.25 * wa * wb * _green_point(lam, dd)
        G[ti, ci] = acc
    return G


def _limiting_shift(theta):
    return 1.5 * math.exp(theta) + 0.5


@dataclass
class _Source:
    """Relative part of the input: analytic Gaussian or grid values."""

    kind: str
    m_r: np.ndarray | None = None
    s0: float = 0.0
    amp: float = 1.0
    nodes: np.ndarray | None = None
    values: np.ndarray | None = None
    h: float = 0.0

    def green_at(self, lam, z):
        """``int G_hat(lam; z - x') v(x') dx'`` at points ``z`` of shape ``(k, 2)``."""
        if self.kind == "gauss":
            r = np.linalg.norm(z - self.m_r, axis=-1)
            return self.amp * gauss_green_laplace(lam, r, self.s0)
        G = _green_cell(lam, z, self.nodes, self.h)
        return (G * self.h ** 2) @ self.values

    def heat_at(self, t, z):
        """``(G_r(2t) v)(z)``."""
        if self.kind == "gauss":
            w = self.s0 + 2 * t
            return self.amp * np.exp(-np.sum((z - self.m_r) ** 2, axis=-1) / (2 * w)) / (TWO_PI * w)
        raise DomainError("pointwise heat of grid sources is not supported")


def _gauss_source(f: GaussianState) -> tuple[_Source, np.ndarray]:
    m_c, m_r = f.pair_parts()
    s2 = f.sigma ** 2
    # exp(-|r - m_r|^2/(4 s2)) = 4 pi s2 g(2 s2, r - m_r)
    return _Source("gauss", m_r=m_r, s0=2 * s2, amp=4 * math.pi * s2), m_c


def _corr_hat(lam, eps, beta, ctx: SemigroupContext, src: _Source, targets, lmax, target_h=0.0):
    """Laplace transform of the relative correction at ``targets`` for one ``lam``."""
    if eps is None:
        jhat = 1.0 / (np.log(lam) - ctx.theta)
        mh = src.green_at(lam, np.zeros((1, 2)))[0]
        if target_h > 0:
            out = _green_cell(lam, targets, np.zeros((1, 2)), target_h)[:, 0]
        else:
            out = _green_point(lam, np.linalg.norm(targets, axis=-1))
        return 4 * math.pi * jhat * mh * out
    cg = ctx.cgrid
    ey = eps * cg.points
    s = cg.sw_phi
    q = s * src.green_at(lam, ey)
    if lmax is None:
        K = collision_matrix(lam, eps, cg)
        u = beta * np.linalg.solve(np.eye(len(cg)) - beta * K, q)
    else:
        K = collision_matrix(lam, eps, cg) if lmax > 0 else None
        u = q.copy()
        acc = q.copy()
        for _ in range(lmax):
            u = beta * (K @ u)
            acc = acc + u
        u = beta * acc
    if target_h > 0:
        Out = _green_cell(lam, targets, ey, target_h)
    else:
        Out = _green_point(lam, np.linalg.norm(targets[:, None, :] - ey[None, :, :], axis=-1))
    return Out @ (s * u)


def _corr_time(t, eps, ctx, src, targets, lmax, M, target_h=0.0):
    beta = None if eps is None else ctx.beta(eps)
    if eps is None:
        shift = _limiting_shift(ctx.theta)
    elif lmax is None and beta != 0:
        shift = 1.5 * ctx.cgrid.pole(eps, beta) + 0.5
    else:
        shift = 0.5
    if eps is not None and beta == 0:
        return np.zeros(len(targets))
    lam, w = talbot_nodes(t, M, shift)
    acc = np.zeros(len(targets), dtype=complex)
    for lk, wk in zip(lam, w):
        acc += wk * _corr_hat(lk, eps, beta, ctx, src, targets, lmax, target_h)
    return acc.real


def _radial_targets(r_pts):
    """Unique radii of ``r_pts`` (as points on the first axis) and the scatter index."""
    rad = np.linalg.norm(r_pts, axis=-1)
    key = np.round(rad, 12)
    uniq, inv = np.unique(key, return_inverse=True)
    return np.stack([uniq, np.zeros_like(uniq)], axis=-1), inv


def _relative_corr(t, eps, ctx, src, r_pts, lmax, M):
    radial = ctx.radial and src.kind == "gauss" and np.allclose(src.m_r, 0.0)
    inv = None
    if radial:
        r_pts, inv = _radial_targets(r_pts)
    if eps is None:
        out = _corr_time(t, eps, ctx, src, r_pts, lmax, M)
    else:
        out = ctx.richardson(lambda c: _corr_time(t, eps, c, src, r_pts, lmax, M))
    return out if inv is None else out[inv]


# ---------------------------------------------------------------------------
# Monte Carlo evaluation of the chains (probe points, Gaussian input)


def _sample_phi(handle, rng, size):
    """Draw points from the density ``Phi`` by rejection from its support disk."""
    R = handle.support_radius
    peak = float(handle(np.zeros(2)))
    out = np.empty((0, 2))
    while len(out) < size:
        m = 2 * (size - len(out)) + 16
        rad = R * np.sqrt(rng.random(m))
        ang = TWO_PI * rng.random(m)
        p = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=-1)
        acc = rng.random(m) * peak < handle(p)
        out = np.concatenate([out, p[acc]])
    return out[:size]


def _g2(s, z):
    """``g(2s, z)`` for arrays ``s (N,)`` and ``z (N, 2)``."""
    return np.exp(-np.sum(z * z, axis=-1) / (4 * s)) / (4 * math.pi * s)


class _JSampler:
    """Inverse-CDF sampler for the density ``j(s)/J(t)`` on ``(0, t)``."""

    def __init__(self, t, theta):
        # dense near s = t where the density has most of its mass; linear
        # interpolation of a coarse CDF table biases the chain by ~0.3%
        u = np.concatenate([np.linspace(0.0, 20.0, 2001)[:-1], np.linspace(20.0, 300.0, 561)])
        s = t * np.exp(-u)
        J = np.array([specfun.volterra_j_integral(float(v), theta) for v in s])
        self.total = J[0]
        self.logs = np.log(s)[::-1]
        self.cdf = (J / self.total)[::-1]

    def __call__(self, rng, size):
        U = rng.random(size)
        U = np.maximum(U, self.cdf[0])
        return np.exp(np.interp(U, self.cdf, self.logs))


def _mc_chain(t, eps, ctx, src, r_pts, lmax, sampling: Sampling):
    N = sampling.nsamples
    means = np.zeros(len(r_pts))
    var = np.zeros(len(r_pts))
    if eps is None:
        js = _JSampler(t, ctx.theta)
        for k, x in enumerate(r_pts):
            rng = qmc.stream(sampling.seed, 11, k)
            s2 = js(rng, N)
            rem = t - s2
            s1 = rem * rng.random(N)
            s3 = rem - s1
            s1 = np.maximum(s1, 1e-300)
            vals = 4 * math.pi * js.total * rem * _g2(s1, np.broadcast_to(x, (N, 2))) \
                * src.heat_at(s3, np.zeros((N, 2)))
            means[k] = vals.mean()
            var[k] = vals.var(ddof=1) / N
        return means, np.sqrt(var)
    if lmax is None:
        raise DomainError("Monte Carlo chains need a finite lmax")
    beta = ctx.beta(eps)
    for ell in range(lmax + 1):
        for k, x in enumerate(r_pts):
            rng = qmc.stream(sampling.seed, 13, ell, k)
            taus, w = qmc.simplex_sample(ell + 2, t, sampling.profile, rng, size=N)
            ys = [_sample_phi(ctx.handle, rng, N) for _ in range(ell + 1)]
            val = w * beta ** (ell + 1) * _g2(taus[:, 0], x - eps * ys[0])
            for j in range(1, ell + 1):
                val = val * _g2(taus[:, j], eps * (ys[j - 1] - ys[j]))
            val = val * src.heat_at(taus[:, ell + 1], eps * ys[ell])
            means[k] += val.mean()
            var[k] += val.var(ddof=1) / N
    return means, np.sqrt(var)


# ---------------------------------------------------------------------------
# public entry points


def _check_pair_input(f):
    n = f.n
    if n != 2:
        raise DomainError("the diagram semigroups are implemented for n = 2")


def _pair_points(points):
    x = np.asarray(points, dtype=float)
    if x.ndim != 3 or x.shape[1:] != (2, 2):
        raise ShapeError("probe points must have shape (P, 2, 2)")
    return 0.5 * (x[:, 0] + x[:, 1]), x[:, 0] - x[:, 1]


def _center_heat_gauss(f: GaussianState, t, c):
    m_c, _ = f.pair_parts()
    s2 = f.sigma ** 2
    # exp(-|c - m_c|^2/s2) evolved with variance t/2 per axis
    return (s2 / (s2 + t)) * np.exp(-np.sum((c - m_c) ** 2, axis=-1) / (s2 + t))


def _grid_pair_axes(grid: GridFunction):
    if grid.chart != "cr":
        raise ShapeError("grid outputs use the pair chart 'cr'")
    c_axes, r_axes = grid.axes[:2], grid.axes[2:]
    R1, R2 = np.meshgrid(*r_axes, indexing="ij")
    return c_axes, r_axes, np.stack([R1.ravel(), R2.ravel()], axis=-1)


def chain_apply(spec: ChainSpec, f, *, points=None, grid: GridFunction | None = None,
                ctx: SemigroupContext | None = None) -> ChainResult:
    """Apply the chain for ``spec.diagram`` (``n = 2``: the single pair) to ``f``.

    ``f`` is a :class:`GaussianState` (analytic input) or a ``cr``-chart
    :class:`GridFunction`.  Output goes to probe ``points`` of shape
    ``(P, 2, 2)`` or to the nodes of ``grid``.  With ``sampling.method ==
    "mc"`` the chain is estimated by simplex Monte Carlo at probe points and
    a standard error is returned.
    """
    ctx = ctx or SemigroupContext()
    if len(spec.diagram) != 1 or spec.diagram[0] != PairIdx(1, 2):
        raise DomainError("only the two-particle diagram (12) is supported")
    t0 = time.perf_counter()
    M = spec.sampling.talbot_M
    lmax = spec.lmax
    meta = {"variant": spec.variant, "t": spec.t, "eps": spec.eps, "lmax": lmax,
            "method": spec.sampling.method}
    if isinstance(f, GaussianState):
        _check_pair_input(f)
        src, _ = _gauss_source(f)
        if points is not None:
            c, r = _pair_points(points)
            uc = _center_heat_gauss(f, spec.t, c)
            if spec.sampling.method == "mc":
                mean, se = _mc_chain(spec.t, spec.eps, ctx, src, r, lmax, spec.sampling)
                meta["runtime"] = time.perf_counter() - t0
                meta["nsamples"] = spec.sampling.nsamples
                meta["seed"] = spec.sampling.seed
                return ChainResult(uc * mean, np.abs(uc) * se, meta)
            corr = _relative_corr(spec.t, spec.eps, ctx, src, r, lmax, M)
            meta["runtime"] = time.perf_counter() - t0
            return ChainResult(uc * corr, None, meta)
        if grid is None:
            raise DomainError("need points or grid")
        if spec.sampling.method == "mc":
            raise DomainError("Monte Carlo chains evaluate probe points only")
        c_axes, r_axes, r_pts = _grid_pair_axes(grid)
        C1, C2 = np.meshgrid(*c_axes, indexing="ij")
        uc = _center_heat_gauss(f, spec.t, np.stack([C1, C2], axis=-1))
        corr = _relative_corr(spec.t, spec.eps, ctx, src, r_pts, lmax, M)
        vals = uc[:, :, None, None] * corr.reshape(len(r_axes[0]), len(r_axes[1]))[None, None]
        meta["runtime"] = time.perf_counter() - t0
        return ChainResult(grid.like(vals), None, meta)
    if not isinstance(f, GridFunction) or f.chart != "cr":
        raise ShapeError("grid inputs must use the pair chart 'cr'")
    if spec.sampling.method == "mc":
        raise DomainError("Monte Carlo chains need a Gaussian input")
    R = relative_operator(spec.t, spec.eps, f.axes[2:], ctx, lmax=lmax, M=M, include_heat=False)
    out = _apply_pair(f, spec.t, R)
    meta["runtime"] = time.perf_counter() - t0
    return ChainResult(out, None, meta)


def relative_operator(t: float, eps: float | None, r_axes, ctx: SemigroupContext | None = None,
                      lmax: int | None = None, M: int = 24, include_heat: bool = True) -> np.ndarray:
    """Matrix of the relative evolution on a grid (values at nodes from cell values).

    The input is taken piecewise constant on grid cells, the output is the
    cell average; the heat part uses the trapezoid rule.  Returns an
    ``(N, N)`` matrix with ``N = len(r_axes[0]) * len(r_axes[1])``.
    """
    ctx = ctx or SemigroupContext()
    ax1, ax2 = (np.asarray(a, dtype=float) for a in r_axes)
    h = ax1[1] - ax1[0]
    if not np.isclose(ax2[1] - ax2[0], h):
        raise ShapeError("relative axes need equal spacing")
    R1, R2 = np.meshgrid(ax1, ax2, indexing="ij")
    nodes = np.stack([R1.ravel(), R2.ravel()], axis=-1)
    N = len(nodes)
    out = np.zeros((N, N))
    if include_heat:
        out += np.kron(_heat_matrix(ax1, 2 * t), _heat_matrix(ax2, 2 * t))
    if eps is None:
        return out + _operator_corr(t, None, nodes, h, ctx, lmax, M)
    if ctx.beta(eps) == 0:
        return out
    return out + ctx.richardson(lambda c: _operator_corr(t, eps, nodes, h, c, lmax, M))


def _operator_corr(t, eps, nodes, h, ctx, lmax, M):
    N = len(nodes)
    beta = None if eps is None else ctx.beta(eps)
    if eps is None:
        shift = _limiting_shift(ctx.theta)
    elif lmax is None:
        shift = 1.5 * ctx.cgrid.pole(eps, beta) + 0.5
    else:
        shift = 0.5
    lam, w = talbot_nodes(t, M, shift)
    acc = np.zeros((N, N), dtype=complex)
    for lk, wk in zip(lam, w):
        if eps is None:
            g = _green_cell(lk, nodes, np.zeros((1, 2)), h)[:, 0]
            jhat = 1.0 / (np.log(lk) - ctx.theta)
            acc += wk * 4 * math.pi * jhat * np.outer(g, g * h * h)
            continue
        cg = ctx.cgrid
        G = _green_cell(lk, nodes, eps * cg.points, h)  # (N, Ny)
        K = collision_matrix(lk, eps, cg)
        if lmax is None:
            Mres = beta * np.linalg.inv(np.eye(len(cg)) - beta * K)
        else:
            P = np.eye(len(cg), dtype=complex)
            Mres = P.copy()
            for _ in range(lmax):
                P = beta * (K @ P)
                Mres = Mres + P
            Mres = beta * Mres
        left = G * cg.sw_phi[None, :]
        acc += wk * (left @ Mres @ (left.T * h * h))
    return acc.real


def _apply_pair(f: GridFunction, t: float, R: np.ndarray, center: bool = True) -> GridFunction:
    vals = f.values
    if center:
        for k in (0, 1):
            K = _heat_matrix(f.axes[k], 0.5 * t)
            vals = np.moveaxis(np.tensordot(K, np.moveaxis(vals, k, 0), axes=(1, 0)), 0, k)
    sh = vals.shape
    flat = vals.reshape(sh[0] * sh[1], sh[2] * sh[3])
    return f.like((flat @ R.T).reshape(sh))


def _semigroup(f, t, eps, lmax, points, grid, ctx, sampling):
    _check_pair_input(f)
    ctx = ctx or SemigroupContext()
    sampling = sampling or Sampling()
    spec = ChainSpec(Diagram((PairIdx(1, 2),)), t, eps, 1, lmax, sampling)
    if isinstance(f, GaussianState):
        ch = chain_apply(spec, f, points=points, grid=grid, ctx=ctx)
        if points is not None:
            heat = f.heat(t, np.asarray(points, dtype=float))
            return ChainResult(heat + ch.output, ch.stderr, ch.meta)
        heat = f.heat(t, grid.blocks()["x"])
        return ChainResult(grid.like(heat + ch.output.values), None, ch.meta)
    R = relative_operator(t, eps, f.axes[2:], ctx, lmax=lmax, M=sampling.talbot_M)
    t0 = time.perf_counter()
    out = _apply_pair(f, t, R)
    return ChainResult(out, None, {"variant": spec.variant, "t": t, "eps": eps,
                                   "runtime": time.perf_counter() - t0})


def limiting_apply(f, t: float, mmax: int = 1, sampling: Sampling | None = None, *,
                   points=None, grid=None, ctx: SemigroupContext | None = None) -> ChainResult:
    """``S(t) f = G(t) f + sum over diagrams``; for ``n = 2`` the sum is one chain.

    The result metadata records ``tail = 0``: with two particles the diagram
    set is the single pair, so there is no truncation.
    """
    if mmax < 1:
        raise DomainError("mmax must be >= 1")
    res = _semigroup(f, t, None, None, points, grid, ctx, sampling)
    res.meta["tail"] = 0.0
    res.meta["diagrams"] = [str(d) for d in enumerate_diagrams(2, mmax)]
    return res


def duhamel_apply(f, t: float, eps: float, mmax: int = 1, lmax: int | None = None,
                  sampling: Sampling | None = None, *, points=None, grid=None,
                  ctx: SemigroupContext | None = None) -> ChainResult:
    """``S^eps(t) f`` from the resummed Duhamel series (``lmax=None`` sums all ``l``)."""
    if not 0 < eps < 1:
        raise DomainError("eps must lie in (0, 1)")
    if mmax < 1:
        raise DomainError("mmax must be >= 1")
    res = _semigroup(f, t, eps, lmax, points, grid, ctx, sampling)
    res.meta["tail"] = 0.0 if lmax is None else float("nan")
    return res


# ---------------------------------------------------------------------------
# truncation control


def tail_bound(m: int, t: float, lam: float, c0: float, c1: float,
               c_universal: float = 10.0) -> float:
    """``c^m m^3 e^{lam t} (c1^m + c0^2 (c1 + c0^2/log(lam - c0 - 1))^{m-1})``."""
    if m < 1:
        raise DomainError("m must be >= 1")
    if lam < c0 + 2:
        raise DomainError("need lam >= c0 + 2")
    base = c1 + c0 ** 2 / math.log(lam - c0 - 1)
    return c_universal ** m * m ** 3 * math.exp(lam * t) * (c1 ** m + c0 ** 2 * base ** (m - 1))


def tail_sum(mmax: int, t: float, lam: float, c0: float, c1: float,
             c_universal: float = 10.0) -> float:
    """Sum of :func:`tail_bound` over ``m > mmax``; ``inf`` unless the terms decay
    geometrically (base ``c max(c1, c1 + c0^2/log(lam - c0 - 1)) < 1``)."""
    if lam < c0 + 2:
        raise DomainError("need lam >= c0 + 2")
    base = c_universal * max(c1, c1 + c0 ** 2 / math.log(lam - c0 - 1))
    if base >= 1.0:
        return math.inf
    total, m = 0.0, mmax + 1
    while True:
        term = tail_bound(m, t, lam, c0, c1, c_universal)
        total += term
        if term < 1e-17 * total or m > mmax + 10000:
            return total
        m += 1
