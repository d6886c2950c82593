"""Discretized operator norms and numerical checks of the bound families.

Operators are stored in factored form

    T = D_out . sum_k c_k (A_1^k (x) A_2^k (x) ...) . D_in

acting on flattened tensor grids.  Each factor ``A_d`` maps one group of
input axes (in practice: all axes of one Cartesian direction) to the
matching output group.  Square roots of the quadrature weights are folded
in, so the Euclidean norm of the matrix is the ``L^2`` norm of the operator.
``D_out``/``D_in`` are full-grid diagonals (mollifier factors, weights).
Weighted norms use conjugation, ``||T||_a = ||W_out T W_in^{-1}||``.

For two particles the kernels factor per direction in the coordinates
``c = (x_1 + x_2)/2``, ``r = x_1 - x_2`` (and ``y_c``, ``y_r`` on the
collision side): ``g(t, .)`` on ``R^4`` becomes
``heat1(t/2, dc) heat1(2t, dr)`` in each direction, and the exponential
weights split the same way.  Swapping kernels need ``alpha != alpha'`` and
hence three particles; they are reduced to Jacobi coordinates with the
center of mass removed.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh
from scipy.special import lambertw

from . import mollifier as _moll
from . import specfun
from .errors import (
    AccuracyError,
    DomainError,
    FittingError,
    ResolutionError,
    ShapeError,
)
from .kernels import KernelDescriptor, _cgrid, heat1, j_value, jeps_norm
from .quadrature_mc import stream
from .spaces import (
    PairIdx,
    WeightedNormSpec,
    log_weight,
    uniform_axis,
    weight_conjugate,
)

__all__ = [
    "BoundCheck",
    "BoundReport",
    "DiscretizedOperator",
    "NormEstimate",
    "NormGrid",
    "conjugated",
    "discretize",
    "fit_exp_constant",
    "fit_shape_constant",
    "graded_axis",
    "hk_comp_check",
    "jacobi_swapping_eps",
    "jacobi_swapping_eps_integrated",
    "jeps_check",
    "opnorm_estimate",
    "reduced_incoming_eps",
    "semigroup_operator",
    "verify_bounds",
    "verify_semigroup_growth",
]


# ---------------------------------------------------------------------------
# operator container


class DiscretizedOperator:
    """Sum of tensor-product matrices between flattened grids, with diagonals.

    Parameters
    ----------
    terms : list of (float, list of ndarray)
        Coefficient and one matrix per factor; factor ``d`` has shape
        ``(out_shape[d], in_shape[d])``.
    d_out, d_in : ndarray or None
        Diagonals of shape ``out_shape`` / ``in_shape``.
    out_points, in_points : dict or callable
        Named coordinate blocks over the grids (see
        :func:`~deltabose.spaces.log_weight`); a callable is evaluated on
        first use, since full-grid blocks can be large.
    out_spec, in_spec : WeightedNormSpec or None
        Norms the operator is meant to be measured in.
    symmetric : bool
        Declares ``T == T^T`` (enables Lanczos on ``T`` itself).
    """

    def __init__(self, terms, d_out=None, d_in=None, out_points=None, in_points=None,
                 out_spec=None, in_spec=None, symmetric=False):
        if not terms:
            raise ShapeError("operator needs at least one term")
        self.terms = [(float(c), [np.asarray(A, dtype=float) for A in fs]) for c, fs in terms]
        self.out_shape = tuple(A.shape[0] for A in self.terms[0][1])
        self.in_shape = tuple(A.shape[1] for A in self.terms[0][1])
        for _, fs in self.terms:
            if tuple(A.shape[0] for A in fs) != self.out_shape or \
                    tuple(A.shape[1] for A in fs) != self.in_shape:
                raise ShapeError("factor shapes differ between terms")
            if not all(np.all(np.isfinite(A)) for A in fs):
                raise DomainError("non-finite operator entries")
        self.d_out = None if d_out is None else np.broadcast_to(d_out, self.out_shape).copy()
        self.d_in = None if d_in is None else np.broadcast_to(d_in, self.in_shape).copy()
        for d in (self.d_out, self.d_in):
            if d is not None and not np.all(np.isfinite(d)):
                raise DomainError("non-finite diagonal")
        self._out_points = out_points
        self._in_points = in_points
        self.out_spec = out_spec
        self.in_spec = in_spec
        self.symmetric = symmetric

    @property
    def out_points(self) -> dict:
        if callable(self._out_points):
            self._out_points = self._out_points()
        return self._out_points or {}

    @property
    def in_points(self) -> dict:
        if callable(self._in_points):
            self._in_points = self._in_points()
        return self._in_points or {}

    @property
    def shape(self) -> tuple[int, int]:
        return int(np.prod(self.out_shape)), int(np.prod(self.in_shape))

    def _copy(self, **kw) -> DiscretizedOperator:
        args = {"terms": self.terms, "d_out": self.d_out, "d_in": self.d_in,
                    "out_points": self._out_points, "in_points": self._in_points,
                    "out_spec": self.out_spec, "in_spec": self.in_spec, "symmetric": self.symmetric}
        args.update(kw)
        return DiscretizedOperator(**args)

    @staticmethod
    def _apply(factors, v):
        if len(factors) == 2:
            return factors[0] @ v @ factors[1].T
        for k, A in enumerate(factors):
            v = np.moveaxis(np.tensordot(A, v, axes=(1, k)), 0, k)
        return v

    def matvec(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float).reshape(self.in_shape)
        if self.d_in is not None:
            v = v * self.d_in
        out = sum(c * self._apply(fs, v) for c, fs in self.terms)
        if self.d_out is not None:
            out = out * self.d_out
        return out.reshape(-1)

    def rmatvec(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float).reshape(self.out_shape)
        if self.d_out is not None:
            v = v * self.d_out
        out = sum(c * self._apply([A.T for A in fs], v) for c, fs in self.terms)
        if self.d_in is not None:
            out = out * self.d_in
        return out.reshape(-1)

    @property
    def T(self) -> DiscretizedOperator:
        """Adjoint (transpose) with input and output roles exchanged."""
        return DiscretizedOperator([(c, [A.T for A in fs]) for c, fs in self.terms],
                                   self.d_in, self.d_out, self._in_points, self._out_points,
                                   self.in_spec, self.out_spec, self.symmetric)

    def scaled(self, c: float) -> DiscretizedOperator:
        return self._copy(terms=[(c * k, fs) for k, fs in self.terms])

    def with_diagonals(self, d_out=None, d_in=None) -> DiscretizedOperator:
        """Copy with extra multiplicative diagonals on either side."""
        do = self.d_out if d_out is None else (d_out if self.d_out is None else self.d_out * d_out)
        di = self.d_in if d_in is None else (d_in if self.d_in is None else self.d_in * d_in)
        sym = self.symmetric and d_out is None and d_in is None
        return self._copy(d_out=do, d_in=di, symmetric=sym)

    def gram(self) -> DiscretizedOperator:
        """``T T^T`` for a single-term operator without input diagonal."""
        if len(self.terms) != 1 or self.d_in is not None:
            raise ShapeError("gram needs a single term and no input diagonal")
        c, fs = self.terms[0]
        return DiscretizedOperator([(c * c, [A @ A.T for A in fs])], self.d_out, self.d_out,
                                   self._out_points, self._out_points, symmetric=True)

    def dense(self) -> np.ndarray:
        """Full matrix (small operators only)."""
        m, n = self.shape
        if m * n > 2e7:
            raise ShapeError("operator too large to densify")
        out = np.zeros((m, n))
        for c, fs in self.terms:
            M = fs[0]
            for A in fs[1:]:
                M = np.kron(M, A)
            out += c * M
        if self.d_out is not None:
            out *= self.d_out.reshape(-1)[:, None]
        if self.d_in is not None:
            out *= self.d_in.reshape(-1)[None, :]
        return out


# ---------------------------------------------------------------------------
# norm estimation


@dataclass(frozen=True)
class NormEstimate:
    """Largest singular value with convergence diagnostics.

    ``gap`` is the relative change over the last power step (or the relative
    Ritz residual for Lanczos); ``route`` names the evaluation path.
    """

    value: float
    gap: float
    iterations: int
    converged: bool
    route: str

    def __float__(self) -> float:
        return self.value


def _top_eig(matvec, n, iters, tol, seed, method, signed=False):
    """Largest eigenvalue (in modulus if ``signed``) of a symmetric operator."""
    rng = np.random.default_rng(seed)
    v = 1.0 + 0.01 * rng.random(n)
    if method == "lanczos" and n > 2:
        op = LinearOperator((n, n), matvec=matvec, dtype=float)
        vals, vecs = eigsh(op, k=1, which="LM" if signed else "LA", v0=v, tol=tol,
                           maxiter=iters, ncv=min(n - 1, 20))
        lam, x = float(vals[0]), vecs[:, 0]
        res = float(np.linalg.norm(matvec(x) - lam * x)) / max(abs(lam), 1e-300)
        return abs(lam), res, iters, True
    v /= np.linalg.norm(v)
    lam, gap = 0.0, math.inf
    for k in range(1, iters + 1):
        w = matvec(v)
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0, 0.0, k, True
        gap = abs(nw - lam) / nw
        lam, v = nw, w / nw
        if gap < tol:
            return lam, gap, k, True
    return lam, gap, iters, False


def opnorm_estimate(T: DiscretizedOperator, iters: int = 2000, tol: float = 1e-11,
                    seed: int = 0, method: str = "power", strict: bool = True) -> NormEstimate:
    """Largest singular value of ``T``.

    Routes, in order of preference:

    * ``"factor"``: single term without diagonals; the norm of a Kronecker
      product is the product of the factor norms (dense SVD per factor).
    * ``"gram"``: single term, no input diagonal and a smaller output side;
      iterate on ``T T^T`` assembled per factor (``"cogram"``: the mirror
      case with ``T^T T``).
    * ``"symmetric"``: ``T`` declared symmetric; iterate on ``T`` directly.
    * ``"normal"``: iterate on ``T^T T``.

    ``method`` is ``"power"`` (deterministic start, relative-change gap) or
    ``"lanczos"`` (scipy ``eigsh``, relative Ritz residual as gap).  Without
    convergence ``strict`` raises :class:`AccuracyError`.
    """
    if method not in ("power", "lanczos"):
        raise DomainError(f"unknown method {method!r}")
    m, n = T.shape
    if len(T.terms) == 1 and T.d_out is None and T.d_in is None:
        c, fs = T.terms[0]
        val = abs(c) * math.prod(float(np.linalg.norm(A, 2)) for A in fs)
        return NormEstimate(val, 0.0, 0, True, "factor")
    if len(T.terms) == 1 and T.d_in is None and m < n:
        G = T.gram()
        lam, gap, k, ok = _top_eig(G.matvec, m, iters, tol, seed, method)
        route, val = "gram", math.sqrt(lam)
    elif len(T.terms) == 1 and T.d_out is None and n < m:
        G = T.T.gram()
        lam, gap, k, ok = _top_eig(G.matvec, n, iters, tol, seed, method)
        route, val = "cogram", math.sqrt(lam)
    elif T.symmetric:
        lam, gap, k, ok = _top_eig(T.matvec, n, iters, tol, seed, method, signed=True)
        route, val = "symmetric", lam
    else:
        lam, gap, k, ok = _top_eig(lambda v: T.rmatvec(T.matvec(v)), n, iters, tol, seed, method)
        route, val = "normal", math.sqrt(lam)
    if strict and not ok:
        raise AccuracyError(f"norm iteration did not converge (gap {gap:.2e})",
                            achieved=gap, value=val)
    return NormEstimate(val, gap, k, ok, route)


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class NormGrid:
    """Spacing and half-width of unbounded axes, nodes per side on supp phi."""

    h: float = 0.1
    L: float = 4.0
    n_y: int = 8

    def __post_init__(self):
        if not (self.h > 0 and self.L > self.h and self.n_y >= 2):
            raise DomainError(f"invalid norm grid {self}")

    def refined(self, factor: float = 1.5) -> NormGrid:
        return NormGrid(self.h / factor, self.L, round(self.n_y * factor))


def _mid(ax):
    # cell-centered axes: midpoint weights
    return np.full(len(ax), ax[1] - ax[0])


def _supp_axis(handle, n):
    R = handle.support_radius
    h = 2.0 * R / n
    return -R + h * (np.arange(n) + 0.5)


def _fold(K, wo, wi):
    """Fold square-root quadrature weights into a kernel block."""
    return np.sqrt(wo)[:, None] * K * np.sqrt(wi)[None, :]


def _flat2(a, b):
    A, B = np.meshgrid(a, b, indexing="ij")
    return A.ravel(), B.ravel()


def _check_resolution(h, t, what):
    if h > math.sqrt(t) / 4.0 * (1 + 1e-9):
        raise ResolutionError(f"{what}: spacing {h:.3g} exceeds sqrt(t)/4 = "
                              f"{math.sqrt(t) / 4:.3g}")


def _two_dirs(v):
    """Per-direction flattened coordinate -> full-grid ``(F, F, 2)`` array."""
    F = len(v)
    return np.stack([np.broadcast_to(v[:, None], (F, F)),
                     np.broadcast_to(v[None, :], (F, F))], axis=-1)


def _phi2(handle, ay):
    Y1, Y2 = np.meshgrid(ay, ay, indexing="ij")
    vals = _moll.phi_eval(handle, np.stack([Y1, Y2], axis=-1).reshape(-1, 2), sqrt=True)
    return vals.reshape(len(ay), len(ay))


def _spread(phi, rep):
    """``phi`` on the y_r nodes -> full grid where each node carries ``rep`` others."""
    return np.repeat(np.repeat(phi, rep, axis=0), rep, axis=1)


class _Side:
    """One side of a two-particle operator, described per direction.

    ``coords`` holds flattened per-direction coordinate arrays of a common
    length; ``kind`` is the space (``"X"``, ``"Y"`` or ``"YEps"``).
    """

    def __init__(self, kind, coords, weights, phi=None):
        self.kind, self.coords, self.weights, self.phi = kind, coords, weights, phi

    def dir_blocks(self) -> dict:
        """Coordinate blocks for one direction (trailing axis of length 1)."""
        c = self.coords
        if self.kind == "X":
            return {"x": np.stack([c["c"] + 0.5 * c["r"], c["c"] - 0.5 * c["r"]],
                                  axis=-1)[..., None]}
        if self.kind == "Y":
            return {"yc": c["yc"][:, None]}
        return {"yr": c["yr"][:, None], "yc": c["yc"][:, None]}

    def full_blocks(self) -> dict:
        c = self.coords
        if self.kind == "X":
            C, R = _two_dirs(c["c"]), _two_dirs(c["r"])
            return {"x": np.stack([C + 0.5 * R, C - 0.5 * R], axis=-2)}
        return {k: _two_dirs(v) for k, v in c.items()}

    def diag(self):
        """Full-grid ``phi(y_r)`` for collision sides, else ``None``."""
        if self.phi is None:
            return None
        return _spread(self.phi, len(self.coords["yr"]) // self.phi.shape[0])


def _x_side(grid):
    ax = uniform_axis(grid.L, grid.h)
    c, r = _flat2(ax, ax)
    return _Side("X", {"c": c, "r": r}, np.outer(_mid(ax), _mid(ax)).ravel())


def _y_side(grid):
    ax = uniform_axis(grid.L, grid.h)
    return _Side("Y", {"yc": ax}, _mid(ax))


def _yeps_side(grid, handle):
    ay = _supp_axis(handle, grid.n_y)
    ac = uniform_axis(grid.L, grid.h)
    yr, yc = _flat2(ay, ac)
    w = np.outer(_mid(ay), _mid(ac)).ravel()
    return _Side("YEps", {"yr": yr, "yc": yc}, w, _phi2(handle, ay))


def _spec(kind, a, eps):
    if kind == "YEps":
        return WeightedNormSpec(a, "YEps", PairIdx(1, 2), eps=eps)
    if kind == "Y":
        return WeightedNormSpec(a, "Y", PairIdx(1, 2))
    return WeightedNormSpec(a, "X")


# ---------------------------------------------------------------------------
# discretization of the two-particle kernels


_DISCRETE = ("heat", "incoming", "jop", "heat_eps_incoming", "heat_eps_swapping")


def discretize(d: KernelDescriptor, grid: NormGrid, ctx=None, a: float = 0.0,
               check: bool = True) -> DiscretizedOperator:
    """Matrix proxy of the two-particle kernel ``d``.

    Supported kinds: ``heat``, ``incoming``, ``jop``, ``heat_eps_incoming``
    (and the ``_adj`` variants) and ``heat_eps_swapping`` with
    ``alpha == alpha' == (12)``.  Kernels are sampled at cell centers with
    midpoint weights folded in.  For ``a != 0`` the per-direction part of
    the conjugating weights is folded into the factors, so the plain norm
    of the result is the weighted norm.

    ``ctx`` may provide ``mollifier`` (or ``handle``) and ``theta``.
    """
    t, eps = d.t, d.eps
    handle = getattr(ctx, "mollifier", None) or getattr(ctx, "handle", None) \
        or _moll.standard_bump()
    theta = float(getattr(ctx, "theta", 0.0))
    adj = d.kind.endswith("_adj")
    base = d.kind[:-4] if adj else d.kind
    if base not in _DISCRETE:
        raise DomainError(f"discretize does not support {d.kind!r}")
    for p in (d.alpha, d.alpha_prime):
        if p is not None and p != PairIdx(1, 2):
            raise DomainError("two-particle operators use the pair (12)")
    if check:
        _check_resolution(grid.h, t, d.kind)
        if eps is not None:
            _check_resolution(eps * 2 * handle.support_radius / grid.n_y, t, d.kind)

    coef = 1.0
    if base == "heat":
        out = inn = _x_side(grid)
        K = heat1(0.5 * t, out.coords["c"][:, None] - inn.coords["c"][None, :]) \
            * heat1(2 * t, out.coords["r"][:, None] - inn.coords["r"][None, :])
    elif base == "incoming":
        out, inn = _y_side(grid), _x_side(grid)
        K = heat1(0.5 * t, out.coords["yc"][:, None] - inn.coords["c"][None, :]) \
            * heat1(2 * t, inn.coords["r"])[None, :]
    elif base == "jop":
        # 4 pi j(t) g(t/2, dy_c); per direction heat1(t/2), the scalar on the term
        out = inn = _y_side(grid)
        K = heat1(0.5 * t, out.coords["yc"][:, None] - inn.coords["yc"][None, :])
        coef = 4 * math.pi * float(j_value(t, theta))
    elif base == "heat_eps_incoming":
        out, inn = _yeps_side(grid, handle), _x_side(grid)
        K = heat1(0.5 * t, out.coords["yc"][:, None] - inn.coords["c"][None, :]) \
            * heat1(2 * t, eps * out.coords["yr"][:, None] - inn.coords["r"][None, :])
    else:
        if d.alpha != d.alpha_prime:
            raise DomainError("two particles only have alpha == alpha'")
        out = inn = _yeps_side(grid, handle)
        K = heat1(0.5 * t, out.coords["yc"][:, None] - inn.coords["yc"][None, :]) \
            * heat1(2 * t, eps * (out.coords["yr"][:, None] - inn.coords["yr"][None, :]))

    so, si = _spec(out.kind, a, eps), _spec(inn.kind, a, eps)
    A = _fold(K, out.weights, inn.weights)
    if a:
        lw_o = log_weight(so, out.dir_blocks())
        lw_i = log_weight(si, inn.dir_blocks())
        A = A * np.exp(lw_o[:, None] - lw_i[None, :])
    T = DiscretizedOperator([(coef, [A, A])], out.diag(), inn.diag(), out.full_blocks,
                            inn.full_blocks, so, si, symmetric=(out is inn and not a))
    return T.T if adj else T


def conjugated(T: DiscretizedOperator, a: float) -> DiscretizedOperator:
    """Full-grid weight conjugation of an unweighted two-particle operator."""
    so = WeightedNormSpec(a, T.out_spec.space, T.out_spec.alpha, T.out_spec.eps)
    si = WeightedNormSpec(a, T.in_spec.space, T.in_spec.alpha, T.in_spec.eps)
    return weight_conjugate(T, si, so)


# ---------------------------------------------------------------------------
# reduced operators for the unweighted bounds


def reduced_incoming_eps(t: float, eps: float, grid: NormGrid, handle=None,
                         check: bool = True) -> DiscretizedOperator:
    """``phi(y_r) g(2t, eps y_r - r)`` from ``L^2(dr)`` to ``L^2(dy_r)``.

    In ``(c, r)`` coordinates the center enters the incoming operator as a
    convolution with a probability density, of ``L^2`` norm 1, so the
    relative part carries the whole norm.
    """
    handle = handle or _moll.standard_bump()
    ay = _supp_axis(handle, grid.n_y)
    if check:
        _check_resolution(grid.h, t, "incoming")
        _check_resolution(eps * (ay[1] - ay[0]), t, "incoming")
    L = max(grid.L, eps * handle.support_radius + 7 * math.sqrt(2 * t))
    ar = uniform_axis(L, grid.h)
    A = _fold(heat1(2 * t, eps * ay[:, None] - ar[None, :]), _mid(ay), _mid(ar))
    return DiscretizedOperator([(1.0, [A, A])], _phi2(handle, ay), None)


# Three particles, alpha = (12), alpha' = (13), in Jacobi coordinates
# (y_r, xi) relative to the total center C; per direction, positions minus C
#   unprimed (pair 12, spectator 3):  (-xi/3 + eps r/2, -xi/3 - eps r/2, 2 xi/3)
#   primed   (pair 13, spectator 2):  (-xi/3 + eps r/2, 2 xi/3, -xi/3 - eps r/2)
# The map (y_c, y_3) -> (C, xi) has unit Jacobian, and the C-part of g(t, .)
# on R^6 is heat1(t/3, dC) per direction, a probability density.  The rest
# is exp(-Q/2t) / (sqrt(3) 2 pi t) per direction, with Q the squared
# distance of the two position triples.  The kernel is symmetric.


def _jacobi_positions(r, xi, eps, primed):
    a = -xi / 3.0
    if primed:
        return np.stack([a + 0.5 * eps * r, 2.0 * xi / 3.0, a - 0.5 * eps * r])
    return np.stack([a + 0.5 * eps * r, a - 0.5 * eps * r, 2.0 * xi / 3.0])


def _jacobi_side(handle, n_y, xi, wxi):
    """Half grid ``xi > 0`` (see :func:`_jacobi_factor`) times the ``y_r`` nodes."""
    keep = xi > 0
    ay = _supp_axis(handle, n_y)
    r, x = _flat2(ay, xi[keep])
    w = np.outer(_mid(ay), wxi[keep]).ravel()
    return r, x, w, _spread(_phi2(handle, ay), int(keep.sum()))


def _jacobi_factor(t, eps, r, xi, w):
    """Per-direction factor restricted to parity-even functions.

    The kernel is positive and invariant under ``(r, xi) -> (-r, -xi)`` on
    both sides, so its top singular vector is even (Perron-Frobenius) and
    the norm is attained on the even subspace.  On the half grid that
    subspace has the kernel ``K(p, p') + K(p, -p')``.
    """
    P = _jacobi_positions(r, xi, eps, primed=False)
    K = np.zeros((len(r), len(r)))
    for sign in (1.0, -1.0):
        Pp = _jacobi_positions(sign * r, sign * xi, eps, primed=True)
        Q = np.zeros_like(K)
        for k in range(3):
            Q += (P[k][:, None] - Pp[k][None, :]) ** 2
        K += np.exp(-Q / (2 * t))
    return _fold(K / (math.sqrt(3.0) * 2 * math.pi * t), w, w)


def jacobi_swapping_eps(t: float, eps: float, grid: NormGrid, handle=None,
                        check: bool = True) -> DiscretizedOperator:
    """Swapping operator ``(12) <- (13)`` for three particles, center removed.

    The Jacobi axis spans ``8 sqrt(t)`` on each side (the kernel decays
    like ``exp(-(xi^2 + xi xi' + xi'^2)/3t)``) with spacing
    ``grid.h * sqrt(t)``, so ``grid.h`` is relative here.
    """
    handle = handle or _moll.standard_bump()
    st = math.sqrt(t)
    xi = uniform_axis(8 * st + eps, grid.h * st)
    if check:
        _check_resolution(xi[1] - xi[0], t, "swapping")
        _check_resolution(eps * 2 * handle.support_radius / grid.n_y, t, "swapping")
    r, x, w, diag = _jacobi_side(handle, grid.n_y, xi, _mid(xi))
    A = _jacobi_factor(t, eps, r, x, w)
    return DiscretizedOperator([(1.0, [A, A])], diag, diag, symmetric=True)


def graded_axis(h0: float, ratio: float, x_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric axis ``x = s sinh(u)`` with spacing ``~h0`` at 0 and growth ``ratio``.

    Returns nodes and quadrature weights (cell-centered in ``u``).
    """
    du = math.log(ratio)
    s = h0 / du
    m = math.ceil(math.asinh(x_max / s) / du)
    u = du * (np.arange(-m, m) + 0.5)
    return s * np.sinh(u), s * np.cosh(u) * du


def jacobi_swapping_eps_integrated(eps: float, grid: NormGrid, handle=None,
                                   gamma: float = 1.0, nodes: int = 12,
                                   t_max: float = 25.0) -> DiscretizedOperator:
    """``int_0^inf e^{-gamma t} G^eps_{(12)(13)}(t) dt`` as a sum of separable terms.

    Gauss-Legendre in ``log t`` on ``[t_min, t_max]`` with
    ``t_min = (eps/2)^2``; for fixed ``eps`` the norm of ``G^eps(t)`` stays
    bounded as ``t -> 0``, so the omitted piece is ``O(t_min)``.  The Jacobi
    axis is graded: spacing ``grid.h * sqrt(t_min)`` at the origin, growing
    geometrically so that the local spacing at ``|xi| = 3 sqrt(t)`` stays
    near ``grid.h * sqrt(t)``.
    """
    handle = handle or _moll.standard_bump()
    t_min = (0.5 * eps) ** 2
    xi, wxi = graded_axis(grid.h * math.sqrt(t_min), 1.0 + grid.h / 3.0,
                          4 * math.sqrt(t_max))
    r, x, w, diag = _jacobi_side(handle, grid.n_y, xi, wxi)
    z, wz = np.polynomial.legendre.leggauss(nodes)
    lo, hi = math.log(t_min), math.log(t_max)
    terms = []
    for zk, wk in zip(z, wz):
        tk = math.exp(0.5 * (hi - lo) * (zk + 1) + lo)
        coef = 0.5 * (hi - lo) * wk * tk * math.exp(-gamma * tk)
        terms.append((coef, [_jacobi_factor(tk, eps, r, x, w)] * 2))
    return DiscretizedOperator(terms, diag, diag, symmetric=True)


# ---------------------------------------------------------------------------
# semigroup operators on the cr grid


def semigroup_operator(t: float, eps: float | None, grid: NormGrid, a: float = 0.0,
                       ctx=None, lmax=None) -> DiscretizedOperator:
    """``S(t)`` (``eps=None``) or ``S^eps(t)`` on the ``cr`` grid, weight-conjugated.

    Factors: heat ``t/2`` on each center axis and the dense relative
    evolution on the flattened relative grid.
    """
    from .semigroup import SemigroupContext, _heat_matrix, relative_operator

    ctx = ctx or SemigroupContext()
    ax = uniform_axis(grid.L, grid.h)
    Hc = _heat_matrix(ax, 0.5 * t)
    R = relative_operator(t, eps, (ax, ax), ctx, lmax=lmax)

    def points():
        C1, C2 = np.meshgrid(ax, ax, indexing="ij")
        R1, R2 = np.meshgrid(ax, ax, indexing="ij")
        C = np.stack([C1, C2], axis=-1)[:, :, None, :]
        Rr = np.stack([R1.ravel(), R2.ravel()], axis=-1)[None, None, :, :]
        return {"x": np.stack([C + 0.5 * Rr, C - 0.5 * Rr], axis=-2)}

    spec = WeightedNormSpec(a, "X")
    T = DiscretizedOperator([(1.0, [Hc, Hc, R])], None, None, points, points, spec, spec)
    return weight_conjugate(T, spec, spec) if a else T


# ---------------------------------------------------------------------------
# constant fitting


def fit_shape_constant(lhs, shape) -> float:
    """Smallest ``c`` with ``lhs <= c * shape`` on the sample."""
    lhs, shape = np.asarray(lhs, dtype=float), np.asarray(shape, dtype=float)
    if np.any(shape <= 0) or not np.all(np.isfinite(lhs)):
        raise FittingError("shape must be positive and lhs finite")
    return float(np.max(lhs / shape))


def fit_exp_constant(ts, ratio) -> float:
    """Smallest ``c`` with ``ratio(t) <= c e^{c t}`` on the sample.

    For fixed ``t`` the minimal ``c`` solves ``c t e^{c t} = ratio t``, i.e.
    ``c = W(ratio t) / t`` with the principal Lambert W branch.
    """
    ts, ratio = np.asarray(ts, dtype=float), np.asarray(ratio, dtype=float)
    if np.any(ts <= 0) or np.any(ratio < 0) or not np.all(np.isfinite(ratio)):
        raise FittingError("need t > 0 and finite nonnegative ratios")
    return float(np.max(np.real(lambertw(ratio * ts)) / ts))


def _jop_shape(t):
    return 1.0 / (t * math.log(min(t, 0.5)) ** 2)


# ---------------------------------------------------------------------------
# bound verification


@dataclass
class BoundCheck:
    """One bound over a t-grid: LHS, RHS shape, fitted constant, stability."""

    name: str
    t: list
    lhs: list
    rhs_shape: list
    ratio: list
    fitted_c: float
    refinement_delta: float
    passed: bool
    shape_violation: bool = False
    note: str = ""


@dataclass
class BoundReport:
    family: str
    params: dict
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> str:
        data = {"family": self.family, "params": self.params,
                "checks": [vars(c) for c in self.checks]}
        return json.dumps(data, indent=1, sort_keys=True)


def _shape_violation(ratio, fine_ratio) -> bool:
    """The ratio peaks at the smallest t and grows there under refinement."""
    ratio, fine_ratio = np.asarray(ratio), np.asarray(fine_ratio)
    if len(ratio) < 3:
        return False
    peak_first = int(np.argmax(fine_ratio)) == 0
    steep = fine_ratio[0] > 2.0 * fine_ratio[1]
    growing = fine_ratio[0] > 1.2 * ratio[0]
    return bool(peak_first and steep and growing)


def _check(name, ts, lhs_of, shape, fit="shape", tol=0.2, note=""):
    """Evaluate ``lhs_of(t, level)`` on two grid levels and fit the constant."""
    ts = [float(t) for t in ts]
    lhs = [[float(lhs_of(t, lev)) for t in ts] for lev in (0, 1)]
    shp = np.array([shape(t) for t in ts], dtype=float)
    ratios = [np.array(v) / shp for v in lhs]
    if fit == "exp":
        cs = [fit_exp_constant(ts, r) for r in ratios]
    else:
        cs = [fit_shape_constant(v, shp) for v in lhs]
    delta = abs(cs[1] - cs[0]) / max(abs(cs[1]), 1e-300)
    viol = _shape_violation(ratios[0], ratios[1])
    ok = bool(delta <= tol and not viol and np.all(np.isfinite(ratios[1])))
    return BoundCheck(name, ts, lhs[1], shp.tolist(), ratios[1].tolist(), cs[1],
                      float(delta), ok, viol, note)


_DEFAULT_T = {
    "comp": (0.1, 0.2, 0.4, 0.8),
    "comp_eps": (0.1, 0.2, 0.4, 0.8),
    "bds_eps": (0.02, 0.05, 0.1, 0.2, 0.5, 1.0),
}


@dataclass(frozen=True)
class _Ctx:
    mollifier: object
    theta: float


def verify_bounds(family: str, eps: float | None = None, ts=None, grid: NormGrid | None = None,
                  a: float = 0.5, theta: float = 0.0, handle=None, tol: float = 0.2,
                  n_side: int = 32) -> BoundReport:
    """Numerical check of one bound family with fitted constants.

    Families
    --------
    ``comp``
        Weighted limiting operators at ``t`` against unweighted ones at
        ``2t`` (``c e^{ct}`` fit): incoming, its adjoint, and ``J(t)``
        against ``j(t) ||g(t)||``.
    ``comp_eps``
        The ``eps`` incoming operator and its adjoint, weighted at ``t``
        against unweighted at ``2t``.
    ``bds_eps``
        Unweighted ``eps`` bounds: incoming (``t^{-1/2}``), swapping
        (``t^{-1}``), time-integrated swapping (constant), and
        ``||j^eps(t)|| <= B_eps(t)`` pointwise with a fitted
        ``t^{-1}|log(t ^ 1/2)|^{-2} e^{ct}`` constant.
    ``hk_comp``
        Pointwise heat-kernel comparison, see :func:`hk_comp_check`.

    Every fitted constant is computed on ``grid`` and on a refined grid; a
    check passes when the relative change is at most ``tol`` and no shape
    violation is flagged.
    """
    handle = handle or _moll.standard_bump()
    if family == "hk_comp":
        return hk_comp_check()
    if family not in _DEFAULT_T:
        raise DomainError(f"unknown bound family {family!r}")
    if family != "comp" and not (eps is not None and 0 < eps < 1):
        raise DomainError(f"{family} needs 0 < eps < 1")
    ts = tuple(float(t) for t in (_DEFAULT_T[family] if ts is None else ts))
    params = {"a": a, "eps": eps, "theta": theta, "t": list(ts)}

    if family == "bds_eps":
        g0 = grid or NormGrid(h=0.25, L=1.0, n_y=8)
        levels = (g0, g0.refined())
        params["grid"] = [vars(g) for g in levels]
        return BoundReport(family, params, _bds_eps(eps, ts, levels, handle, theta, tol, n_side))

    g0 = grid or NormGrid(h=math.sqrt(min(ts)) / 4, L=3.0, n_y=8)
    levels = (g0, NormGrid(g0.h / 1.5, g0.L, g0.n_y + 4))
    params["grid"] = [vars(g) for g in levels]
    ctx = _Ctx(handle, theta)
    A12 = PairIdx(1, 2)

    def weighted_vs_plain(kind, t, lev):
        g = levels[lev]
        num = discretize(KernelDescriptor(kind, A12, None, t, eps=eps), g, ctx, a=a)
        den = discretize(KernelDescriptor(kind, A12, None, 2 * t, eps=eps), g, ctx, check=False)
        return opnorm_estimate(num, tol=1e-9).value \
            / opnorm_estimate(den, tol=1e-9).value

    checks = []
    kinds = ("incoming", "incoming_adj") if family == "comp" else \
        ("heat_eps_incoming", "heat_eps_incoming_adj")
    for kind in kinds:
        checks.append(_check(kind, ts, lambda t, lev, k=kind: weighted_vs_plain(k, t, lev),
                             lambda t: 1.0, fit="exp", tol=tol,
                             note="||T(t)||_a / ||T(2t)||; fit c e^{ct}"))
    if family == "comp":
        def jop_ratio(t, lev):
            d = KernelDescriptor("jop", A12, None, t)
            return opnorm_estimate(discretize(d, levels[lev], ctx, a=a)).value \
                / (4 * math.pi * float(j_value(t, theta)))

        checks.append(_check("jop", ts, jop_ratio, lambda t: 1.0, fit="exp", tol=tol,
                             note="||J(t)||_a / (4 pi j(t)), with ||g(t/2)|| = 1; "
                                  "fit c e^{ct}"))
    return BoundReport(family, params, checks)


def _bds_eps(eps, ts, levels, handle, theta, tol, n_side):
    checks = []

    def incoming(t, lev):
        g = levels[lev]
        h = min(g.h * math.sqrt(t), 0.999 * math.sqrt(t) / 4)
        T = reduced_incoming_eps(t, eps, NormGrid(h, g.L, g.n_y), handle, check=False)
        return opnorm_estimate(T, tol=1e-10).value

    checks.append(_check("incoming", ts, incoming, lambda t: t ** -0.5, tol=tol,
                         note="||G^eps_alpha(t)|| = ||G^eps_alpha(t)^*||; shape t^{-1/2}"))

    def swapping(t, lev):
        T = jacobi_swapping_eps(t, eps, levels[lev], handle, check=False)
        return opnorm_estimate(T, tol=1e-9).value

    checks.append(_check("swapping", ts, swapping, lambda t: 1.0 / t, tol=tol,
                         note="three particles, alpha = (12), alpha' = (13); shape t^{-1}"))

    def swapping_int(_t, lev):
        T = jacobi_swapping_eps_integrated(eps, levels[lev], handle)
        return opnorm_estimate(T, tol=1e-9).value

    checks.append(_check("swapping_int", [1.0], swapping_int, lambda t: 1.0, tol=tol,
                         note="||int e^{-t} G^eps_{alpha alpha'}(t) dt||; constant shape"))

    checks.append(jeps_check(eps, ts, handle, theta, tol, n_side))
    return checks


def jeps_check(eps: float, ts, handle=None, theta: float = 0.0, tol: float = 0.2,
               n_side: int = 32) -> BoundCheck:
    """``||j^eps(t)||`` on collision grids ``n_side`` and ``1.5 n_side``.

    Fits ``c`` in ``c t^{-1}|log(t ^ 1/2)|^{-2} e^{ct}`` and requires the
    pointwise bound ``||j^eps(t)|| <= B_eps(t)`` on the refined grid.
    """
    handle = handle or _moll.standard_bump()
    p = specfun.scalar_params(handle, eps, theta)
    B = [specfun.b_eps_contour(t, p) for t in ts]
    sides = (n_side, (3 * n_side) // 2)

    def jnorm(t, lev):
        return jeps_norm(t, eps, p.beta_eps, _cgrid(handle, sides[lev]))

    jc = _check("jeps", ts, jnorm, _jop_shape, fit="exp", tol=tol,
                note="||j^eps(t)|| against t^{-1}|log(t ^ 1/2)|^{-2} e^{ct}")
    within = bool(all(v <= b for v, b in zip(jc.lhs, B)))
    jc.passed = jc.passed and within
    jc.note += f"; B_eps(t) = {[float(f'{b:.6g}') for b in B]}; below B_eps: {within}"
    return jc


def verify_semigroup_growth(ts=(0.1, 0.25, 0.5, 1.0), eps: float | None = None,
                            grid: NormGrid | None = None, a: float = 0.5, ctx=None,
                            tol: float = 0.2) -> BoundCheck:
    """Weighted norms of ``S(t)`` or ``S^eps(t)`` against ``C e^{Ct}``.

    The minimal ``C`` is fitted on ``grid`` and on a grid with spacing
    divided by 4/3; the check passes when it is finite and stable within
    ``tol``.
    """
    from .semigroup import SemigroupContext

    ctx = ctx or SemigroupContext(n_side=24, extrapolate=False)
    g0 = grid or NormGrid(0.4, 4.0, 8)
    levels = (g0, NormGrid(0.75 * g0.h, g0.L, g0.n_y))

    def norm(t, lev):
        T = semigroup_operator(t, eps, levels[lev], a=a, ctx=ctx)
        return opnorm_estimate(T, tol=1e-9).value

    name = "S" if eps is None else f"S^eps(eps={eps:g})"
    return _check(name, ts, norm, lambda t: 1.0, fit="exp", tol=tol,
                  note=f"||{'S' if eps is None else 'S^eps'}(t)||_(2,a), a = {a:g}; fit C e^(Ct)")


# ---------------------------------------------------------------------------
# heat-kernel comparison


def _log_g2(t, z):
    return -np.sum(z * z, axis=-1) / (2 * t) - np.log(2 * np.pi * t)


def hk_comp_check(nsamples: int = 100000, seed: int = 0, a_max_literal: float = 1.0,
                  a_max_corrected: float = 4.0, t_max: float = 2.0,
                  x_scale: float = 3.0) -> BoundReport:
    """Sampled check of ``g(t, x-y) e^{a(|y|_1-|x|_1)} <= 2 e^{E} g(2t, x-y)`` on ``R^2``.

    Two forms are checked on independent samples: ``E = 2at`` for ``a`` in
    ``(0, a_max_literal]`` and ``E = 2a^2 t`` for ``a`` in
    ``(0, a_max_corrected]``.  The first form fails for every ``a > 1``
    (``x = 0``, ``y = (s, s)``, ``s = 2at`` gives the ratio
    ``e^{2a^2 t - 2at}``); that counterexample is evaluated and reported.
    Displacements are drawn at the scale ``sqrt(4t)`` where the inequality
    is tight.  Comparisons are made in log form.
    """
    checks = []
    forms = (("literal", a_max_literal, lambda a, t: 2 * a * t),
             ("corrected", a_max_corrected, lambda a, t: 2 * a * a * t))
    for k, (name, a_max, expo) in enumerate(forms):
        rng = stream(seed, 6, k)
        t = t_max * (1.0 - rng.random(nsamples))
        a = a_max * (1.0 - rng.random(nsamples))
        x = rng.normal(scale=x_scale, size=(nsamples, 2))
        y = x + rng.normal(size=(nsamples, 2)) * np.sqrt(4 * t)[:, None]
        z = x - y
        lhs = _log_g2(t, z) + a * (np.abs(y).sum(-1) - np.abs(x).sum(-1))
        rhs = math.log(2.0) + expo(a, t) + _log_g2(2 * t, z)
        margin = rhs - lhs
        viol = int(np.sum(margin < -1e-12))
        checks.append(BoundCheck(
            f"hk_comp_{name}", [float(t.min()), float(t.max())], [], [], [], float(a_max),
            0.0, viol == 0, False,
            f"{nsamples} samples, a in (0, {a_max:g}], violations {viol}, "
            f"min log-margin {float(margin.min()):.6g}"))
    a, t = 1.5, 0.5
    s = 2 * a * t
    z = np.array([-s, -s])
    lhs = float(_log_g2(t, z)) + a * 2 * s
    rhs = math.log(2.0) + 2 * a * t + float(_log_g2(2 * t, z))
    checks.append(BoundCheck(
        "hk_comp_counterexample", [t], [lhs], [rhs], [math.exp(lhs - rhs)], a, 0.0,
        lhs > rhs, False,
        "log values; x = 0, y = (2at, 2at), a = 1.5: the e^{2at} form fails as predicted"))
    return BoundReport("hk_comp", {"nsamples": nsamples, "seed": seed}, checks)
