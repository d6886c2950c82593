"""Index combinatorics, coordinate spaces, embeddings and weighted norms.

Particles are labelled ``1..n``.  A pair ``alpha = ij`` collides two
particles; functions after a collision live on the reduced space with a
center coordinate ``y_c`` (and, at positive ``eps``, a relative coordinate
``y_r``) plus the untouched particles in increasing label order.
"""
from __future__ import annotations

import itertools
import math
import warnings
from collections.abc import Iterator
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError

__all__ = [
    "AccuracyWarning",
    "Diagram",
    "GridFunction",
    "NormValue",
    "PairIdx",
    "WeightedNormSpec",
    "YEpsPoint",
    "YPoint",
    "embed_s_alpha",
    "embed_s_eps_alpha",
    "enumerate_diagrams",
    "enumerate_pairs",
    "iter_diagrams",
    "log_weight",
    "s_alpha",
    "s_eps_alpha",
    "uniform_axis",
    "weight_conjugate",
    "weighted_norm",
]


class AccuracyWarning(UserWarning):
    """A numerical result is likely under-resolved."""


# ---------------------------------------------------------------------------
# pairs and diagrams


@dataclass(frozen=True, order=True)
class PairIdx:
    """Unordered pair ``{i < j}`` of particle labels (1-based)."""

    i: int
    j: int

    def __post_init__(self):
        if not (isinstance(self.i, (int, np.integer)) and isinstance(self.j, (int, np.integer))):
            raise TypeError("pair labels must be integers")
        if not 1 <= self.i < self.j:
            raise DomainError(f"need 1 <= i < j, got ({self.i}, {self.j})")

    def check(self, n: int) -> PairIdx:
        if self.j > n:
            raise DomainError(f"pair {self} out of range for n={n}")
        return self

    def others(self, n: int) -> tuple[int, ...]:
        """Labels in ``[n]`` not in the pair, increasing."""
        self.check(n)
        return tuple(k for k in range(1, n + 1) if k not in (self.i, self.j))

    def __contains__(self, k: int) -> bool:
        return k == self.i or k == self.j

    def __str__(self) -> str:
        return f"{self.i}{self.j}" if self.j < 10 else f"{self.i},{self.j}"


@dataclass(frozen=True)
class Diagram:
    """Pair sequence with no two equal neighbours."""

    seq: tuple[PairIdx, ...]

    def __post_init__(self):
        seq = tuple(self.seq)
        object.__setattr__(self, "seq", seq)
        if not seq:
            raise DomainError("diagram must be nonempty")
        for a, b in itertools.pairwise(seq):
            if a == b:
                raise DomainError(f"adjacent repeat {a} in diagram")

    def __len__(self) -> int:
        return len(self.seq)

    def __iter__(self) -> Iterator[PairIdx]:
        return iter(self.seq)

    def __getitem__(self, k):
        return self.seq[k]

    def __str__(self) -> str:
        return "(" + ",".join(str(a) for a in self.seq) + ")"


def enumerate_pairs(n: int) -> list[PairIdx]:
    """All ``n(n-1)/2`` pairs in lexicographic order."""
    if n < 2:
        raise DomainError("need n >= 2")
    return [PairIdx(i, j) for i, j in itertools.combinations(range(1, n + 1), 2)]


def iter_diagrams(n: int, mmax: int) -> Iterator[Diagram]:
    """Lazily yield diagrams of length ``1..mmax`` ordered by (length, lex)."""
    pairs = enumerate_pairs(n)
    for m in range(1, mmax + 1):
        for seq in itertools.product(pairs, repeat=m):
            if all(a != b for a, b in itertools.pairwise(seq)):
                yield Diagram(seq)


def enumerate_diagrams(n: int, mmax: int) -> list[Diagram]:
    if mmax < 1:
        raise DomainError("need mmax >= 1")
    return list(iter_diagrams(n, mmax))


# ---------------------------------------------------------------------------
# points and embeddings


@dataclass(frozen=True)
class YPoint:
    """Point of the collision space: center ``yc`` and the other particles."""

    alpha: PairIdx
    n: int
    yc: np.ndarray
    rest: np.ndarray = field(default=None)

    def __post_init__(self):
        self.alpha.check(self.n)
        yc = np.asarray(self.yc, dtype=float)
        rest = np.zeros((0, 2)) if self.rest is None else np.asarray(self.rest, dtype=float)
        rest = rest.reshape(-1, 2)
        if yc.shape != (2,) or rest.shape[0] != self.n - 2:
            raise ShapeError(f"YPoint shapes {yc.shape}, {rest.shape} inconsistent with n={self.n}")
        if not (np.all(np.isfinite(yc)) and np.all(np.isfinite(rest))):
            raise DomainError("non-finite coordinates")
        object.__setattr__(self, "yc", yc)
        object.__setattr__(self, "rest", rest)


@dataclass(frozen=True)
class YEpsPoint:
    """Point of the eps-collision space: relative ``yr``, center ``yc``, others."""

    alpha: PairIdx
    n: int
    yr: np.ndarray
    yc: np.ndarray
    rest: np.ndarray = field(default=None)

    def __post_init__(self):
        self.alpha.check(self.n)
        yr = np.asarray(self.yr, dtype=float)
        yc = np.asarray(self.yc, dtype=float)
        rest = np.zeros((0, 2)) if self.rest is None else np.asarray(self.rest, dtype=float)
        rest = rest.reshape(-1, 2)
        if yr.shape != (2,) or yc.shape != (2,) or rest.shape[0] != self.n - 2:
            raise ShapeError("YEpsPoint shapes inconsistent with n")
        if not all(np.all(np.isfinite(v)) for v in (yr, yc, rest)):
            raise DomainError("non-finite coordinates")
        object.__setattr__(self, "yr", yr)
        object.__setattr__(self, "yc", yc)
        object.__setattr__(self, "rest", rest)


def s_alpha(alpha: PairIdx, n: int, yc, rest) -> np.ndarray:
    """Vectorized ``S_alpha``: ``yc (..., 2)``, ``rest (..., n-2, 2)`` to ``(..., n, 2)``."""
    alpha.check(n)
    yc = np.asarray(yc, dtype=float)
    rest = np.asarray(rest, dtype=float)
    if yc.shape[-1] != 2 or rest.shape[-2:] != (n - 2, 2):
        raise ShapeError("S_alpha input shapes")
    batch = np.broadcast_shapes(yc.shape[:-1], rest.shape[:-2])
    x = np.empty(batch + (n, 2))
    x[..., alpha.i - 1, :] = yc
    x[..., alpha.j - 1, :] = yc
    for k, lab in enumerate(alpha.others(n)):
        x[..., lab - 1, :] = rest[..., k, :]
    return x


def s_eps_alpha(alpha: PairIdx, n: int, eps: float, yr, yc, rest) -> np.ndarray:
    """Vectorized ``S^eps_alpha``: particle ``i`` at ``yc + eps yr/2``, ``j`` at ``yc - eps yr/2``."""
    x = s_alpha(alpha, n, yc, rest)
    half = 0.5 * eps * np.asarray(yr, dtype=float)
    x[..., alpha.i - 1, :] += half
    x[..., alpha.j - 1, :] -= half
    return x


def embed_s_alpha(alpha: PairIdx, y: YPoint) -> np.ndarray:
    if y.alpha != alpha:
        raise ShapeError("point belongs to a different pair")
    return s_alpha(alpha, y.n, y.yc, y.rest)


def embed_s_eps_alpha(alpha: PairIdx, eps: float, y: YEpsPoint) -> np.ndarray:
    if y.alpha != alpha:
        raise ShapeError("point belongs to a different pair")
    return s_eps_alpha(alpha, y.n, eps, y.yr, y.yc, y.rest)


# ---------------------------------------------------------------------------
# weights


@dataclass(frozen=True)
class WeightedNormSpec:
    """Exponential weight ``e^{a |.|_1}`` on one of the three spaces.

    ``space`` is ``"X"`` (particle coordinates), ``"Y"`` (collision space,
    doubled weight on ``y_c``) or ``"YEps"`` (weight
    ``sum_sigma |y_c + sigma eps y_r/2|_1`` on the pair).
    """

    a: float
    space: str = "X"
    alpha: PairIdx | None = None
    eps: float | None = None

    def __post_init__(self):
        if not math.isfinite(self.a):
            raise DomainError("weight exponent must be finite")
        if self.space not in ("X", "Y", "YEps"):
            raise DomainError(f"unknown space {self.space!r}")
        if self.space == "YEps" and self.eps is None:
            raise DomainError("YEps weight needs eps")


def log_weight(spec: WeightedNormSpec, point: dict) -> np.ndarray:
    """``log`` of the weight at points given as named coordinate blocks.

    ``point`` maps block names to arrays with trailing axis 2: ``"x"``
    (shape ``(..., n, 2)``) for ``X``; ``"yc"``, ``"rest"`` for ``Y``;
    ``"yr"``, ``"yc"``, ``"rest"`` for ``YEps``.  Missing ``rest`` means
    no spectator particles.
    """
    a = spec.a
    if spec.space == "X":
        return a * np.abs(point["x"]).sum(axis=(-1, -2))
    rest = point.get("rest")
    spect = 0.0 if rest is None else np.abs(rest).sum(axis=(-1, -2))
    yc = point["yc"]
    if spec.space == "Y":
        return a * (2.0 * np.abs(yc).sum(axis=-1) + spect)
    half = 0.5 * spec.eps * point["yr"]
    pair = np.abs(yc + half).sum(axis=-1) + np.abs(yc - half).sum(axis=-1)
    return a * (pair + spect)


# ---------------------------------------------------------------------------
# grid functions


def uniform_axis(L: float, h: float) -> np.ndarray:
    """Cell-centered nodes covering ``[-L, L]`` with spacing close to ``h``.

    The node count is even, so the origin is never a node; this keeps
    log-singular kernels finite on the grid.
    """
    if not (L > 0 and h > 0):
        raise DomainError("need L > 0 and h > 0")
    m = max(1, math.ceil(L / h))
    hh = L / m
    return -L + hh * (np.arange(2 * m) + 0.5)


# chart -> tuple of (block name, particle index or None) per scalar axis pair
_CHARTS = ("x", "cr", "y", "yeps")


@dataclass
class GridFunction:
    """Values on a tensor grid with one uniform axis per scalar coordinate.

    ``chart`` fixes how axes map to points: ``"x"`` has axes
    ``(x_1^1, x_1^2, x_2^1, ...)``; ``"cr"`` (two particles only) has
    ``(c^1, c^2, r^1, r^2)`` with ``x_1 = c + r/2``, ``x_2 = c - r/2`` and unit
    Jacobian; ``"y"`` has ``(y_c, rest...)``; ``"yeps"`` has
    ``(y_r, y_c, rest...)``.  Superscripts are Cartesian directions.
    """

    axes: tuple
    values: np.ndarray
    chart: str = "x"
    alpha: PairIdx | None = None
    n: int | None = None

    def __post_init__(self):
        self.axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        self.values = np.asarray(self.values)
        if self.chart not in _CHARTS:
            raise DomainError(f"unknown chart {self.chart!r}")
        if self.values.shape != tuple(len(a) for a in self.axes):
            raise ShapeError(f"values {self.values.shape} do not match axes")
        if len(self.axes) % 2:
            raise ShapeError("axes come in 2-d blocks")
        if self.chart == "cr" and len(self.axes) != 4:
            raise ShapeError("cr chart is for two particles")
        for ax in self.axes:
            if len(ax) < 2:
                raise ShapeError("each axis needs at least two nodes")
            d = np.diff(ax)
            if not np.allclose(d, d[0], rtol=1e-9, atol=0):
                raise ShapeError("axes must be uniform")
        if self.n is None:
            self.n = {"x": len(self.axes) // 2, "cr": 2}.get(self.chart)

    @property
    def spacings(self) -> np.ndarray:
        return np.array([a[1] - a[0] for a in self.axes])

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    def mesh(self, k: int) -> np.ndarray:
        """Axis ``k`` broadcast against the full grid shape."""
        shape = [1] * len(self.axes)
        shape[k] = len(self.axes[k])
        return self.axes[k].reshape(shape)

    def blocks(self) -> dict:
        """Named coordinate blocks (broadcastable arrays with trailing axis 2)."""
        nb = len(self.axes) // 2
        pts = [np.stack(np.broadcast_arrays(self.mesh(2 * b), self.mesh(2 * b + 1)), axis=-1)
               for b in range(nb)]
        if self.chart == "x":
            return {"x": np.stack(pts, axis=-2)}
        if self.chart == "cr":
            c, r = pts
            return {"x": np.stack([c + 0.5 * r, c - 0.5 * r], axis=-2)}
        if self.chart == "y":
            out = {"yc": pts[0]}
            if nb > 1:
                out["rest"] = np.stack(pts[1:], axis=-2)
            return out
        out = {"yr": pts[0], "yc": pts[1]}
        if nb > 2:
            out["rest"] = np.stack(pts[2:], axis=-2)
        return out

    def trapezoid_weights(self) -> np.ndarray:
        w = 1.0
        for k, ax in enumerate(self.axes):
            wk = np.full(len(ax), ax[1] - ax[0])
            wk[0] *= 0.5
            wk[-1] *= 0.5
            shape = [1] * len(self.axes)
            shape[k] = len(ax)
            w = w * wk.reshape(shape)
        return w

    def like(self, values) -> GridFunction:
        return GridFunction(self.axes, values, self.chart, self.alpha, self.n)

    def integral(self) -> float:
        return float(np.sum(self.values * self.trapezoid_weights()))

    @classmethod
    def from_callable(cls, fn, axes, chart="x", alpha=None, n=None) -> GridFunction:
        """Sample ``fn`` (taking the ``blocks()`` dict) on the grid."""
        g = cls(axes, np.zeros(tuple(len(a) for a in axes)), chart, alpha, n)
        g.values = np.broadcast_to(np.asarray(fn(g.blocks()), dtype=float), g.values.shape).copy()
        return g


class NormValue(float):
    """A norm value that carries an accuracy warning string (or ``None``)."""

    warning: str | None

    def __new__(cls, value, warning=None):
        obj = super().__new__(cls, value)
        obj.warning = warning
        return obj


def _default_spec_space(f: GridFunction) -> str:
    return {"x": "X", "cr": "X", "y": "Y", "yeps": "YEps"}[f.chart]


def weighted_norm(f: GridFunction, spec: WeightedNormSpec) -> NormValue:
    """Trapezoidal approximation of ``(int |f e^{a|.|_1}|^2)^{1/2}``.

    A warning is attached (and emitted) when the weighted integrand is not
    small on the grid boundary or the weight changes by more than a factor
    ``e`` across one cell.
    """
    if spec.space != _default_spec_space(f):
        raise ShapeError(f"norm spec space {spec.space} does not match chart {f.chart}")
    if spec.a == 0.0:
        lw = 0.0
    else:
        lw = log_weight(spec, f.blocks())
    dens = np.abs(f.values) ** 2 * np.exp(2.0 * lw)
    total = float(np.sum(dens * f.trapezoid_weights()))
    msg = None
    edge = 0.0
    for k in range(dens.ndim):
        edge = max(edge, float(np.max(np.take(dens, [0, -1], axis=k))))
    if total > 0 and edge * f.cell_volume > 1e-8 * total:
        msg = "grid does not cover the weighted support"
    nblk = max(1, len(f.axes) // 2)
    if abs(spec.a) * float(np.max(f.spacings)) * 2 * nblk > 1.0:
        msg = (msg + "; " if msg else "") + "weight varies by more than e per cell"
    if msg:
        warnings.warn(msg, AccuracyWarning, stacklevel=2)
    return NormValue(math.sqrt(total), msg)


def weight_conjugate(T, spec_in: WeightedNormSpec, spec_out: WeightedNormSpec):
    """``W_out T W_in^{-1}`` for an operator exposing input/output grid points.

    ``T`` must provide ``in_points`` / ``out_points`` (dicts of coordinate
    blocks over its input and output grids) and ``with_diagonals(d_out,
    d_in)`` returning a copy with extra multiplicative diagonals.  The
    result acts between unweighted spaces and has the same norm as ``T``
    between the weighted ones.
    """
    lw_out = log_weight(spec_out, T.out_points) if spec_out.a else 0.0
    lw_in = log_weight(spec_in, T.in_points) if spec_in.a else 0.0
    d_out = np.exp(lw_out) if spec_out.a else None
    d_in = np.exp(-lw_in) if spec_in.a else None
    return T.with_diagonals(d_out, d_in)
