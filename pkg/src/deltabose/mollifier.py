"""The mollifier Phi, its square root phi, rescalings, and the critical coupling.

The standard profile is the C-infinity bump ``C exp(-1/(1-|x|^2))`` on the unit
disk.  A tabulated profile (CSV rows ``x1,x2,value`` on a tensor grid) is also
accepted for sensitivity studies.  Both are normalized to unit mass at
construction.

Two derived quantities are needed repeatedly and are cached on the handle:

* the angular autocorrelation ``A(r) = int_0^{2pi} dtheta int Phi(x) Phi(x + r e_theta) dx``,
  stored as a Chebyshev interpolant on ``[0, 2 * support_radius]``;
* ``K_Phi = 2 int int Phi(x) log|x - x'| Phi(x')``, which equals
  ``2 int_0^{2R} r log(r) A(r) dr`` (polar coordinates around ``x'``).
"""
from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy import interpolate

from .errors import AccuracyError, DomainError
from .quad import quad

__all__ = [
    "MollifierHandle",
    "beta_eps",
    "from_table",
    "log_overlap_kphi",
    "phi_eval",
    "standard_bump",
]

EULER_GAMMA = float(np.euler_gamma)

_LOCK = threading.Lock()


def _bump(r2):
    out = np.zeros_like(r2, dtype=float)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


@dataclass(frozen=True, eq=False)
class MollifierHandle:
    """Immutable description of a normalized mollifier.

    Use :func:`standard_bump` or :func:`from_table` to construct one.
    """

    profile: str
    normalization: float
    support_radius: float
    _raw: object = field(repr=False)
    grid_n: int = field(default=160, repr=False)
    n_angles: int = field(default=16, repr=False)
    cheb_deg: int = field(default=96, repr=False)

    def __call__(self, x) -> np.ndarray:
        """Phi at points ``x`` with trailing dimension 2."""
        x = np.asarray(x, dtype=float)
        return self.normalization * self._raw(x[..., 0], x[..., 1])

    def sqrt(self, x) -> np.ndarray:
        """phi = sqrt(Phi) at points ``x``."""
        return np.sqrt(self(x))

    # -- cached derived quantities ------------------------------------------
    @cached_property
    def _grid(self):
        rho = self.support_radius
        x = np.linspace(-rho, rho, self.grid_n + 1)
        h = x[1] - x[0]
        X, Y = np.meshgrid(x, x, indexing="ij")
        return X, Y, h

    def _autocorr_angular(self, r: np.ndarray) -> np.ndarray:
        X, Y, h = self._grid
        P = self.normalization * self._raw(X, Y)
        th = 2.0 * np.pi * np.arange(self.n_angles) / self.n_angles
        out = np.empty(len(r))
        for k, rk in enumerate(r):
            acc = 0.0
            for a in th:
                Q = self._raw(X + rk * math.cos(a), Y + rk * math.sin(a))
                acc += float(np.sum(P * Q))
            out[k] = acc * self.normalization * h * h * (2.0 * np.pi / self.n_angles)
        return out

    @cached_property
    def autocorr(self):
        """Chebyshev coefficients of ``A(r)`` on ``[0, 2R]`` (computed once)."""
        with _LOCK:
            two_r = 2.0 * self.support_radius
            k = np.arange(self.cheb_deg + 1)
            nodes = np.cos(np.pi * (k + 0.5) / (self.cheb_deg + 1))
            r = 0.5 * two_r * (nodes + 1.0)
            vals = self._autocorr_angular(r)
            return C.chebfit(nodes, vals, self.cheb_deg)

    def autocorr_eval(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        two_r = 2.0 * self.support_radius
        t = 2.0 * r / two_r - 1.0
        out = C.chebval(np.clip(t, -1.0, 1.0), self.autocorr)
        return np.where(r >= two_r, 0.0, out)

    @cached_property
    def k_phi(self) -> float:
        return log_overlap_kphi(self)

    @cached_property
    def mass(self) -> float:
        X, Y, h = self._grid
        return float(np.sum(self(np.stack([X, Y], -1))) * h * h)


def standard_bump(**kw) -> MollifierHandle:
    """Unit-mass C-infinity bump supported on the closed unit disk."""
    val = quad(lambda r: r * math.exp(-1.0 / (1.0 - r * r)) if r < 1 else 0.0, 0.0, 1.0,
               rtol=1e-13).value
    cb = 1.0 / (2.0 * math.pi * val)
    return MollifierHandle(
        profile="standard_bump",
        normalization=cb,
        support_radius=1.0,
        _raw=lambda x1, x2: _bump(np.asarray(x1) ** 2 + np.asarray(x2) ** 2),
        **kw,
    )


def from_table(path, **kw) -> MollifierHandle:
    """Build a mollifier from CSV rows ``x1,x2,value`` on a tensor grid.

    Values are interpolated by a bicubic spline, clipped at zero, set to zero
    outside the table, and renormalized to unit mass.
    """
    rows = []
    with open(Path(path), newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                rows.append([float(v) for v in row[:3]])
            except ValueError:
                continue  # header
    arr = np.array(rows)
    xs, ys = np.unique(arr[:, 0]), np.unique(arr[:, 1])
    if len(xs) * len(ys) != len(arr):
        raise DomainError("mollifier table must be a full tensor grid")
    order = np.lexsort((arr[:, 1], arr[:, 0]))
    Z = arr[order, 2].reshape(len(xs), len(ys))
    if np.any(Z < -1e-12):
        raise DomainError("mollifier table has negative values")
    spl = interpolate.RectBivariateSpline(xs, ys, np.maximum(Z, 0.0), kx=3, ky=3)
    lo = (xs[0], ys[0])
    hi = (xs[-1], ys[-1])
    nz = Z > 0
    Xg, Yg = np.meshgrid(xs, ys, indexing="ij")
    radius = float(np.sqrt(Xg[nz] ** 2 + Yg[nz] ** 2).max()) if nz.any() else 1.0
    radius = max(radius, float(np.max(np.abs([*lo, *hi]))))

    def raw(x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        out = np.maximum(spl.ev(x1, x2), 0.0)
        outside = (x1 < lo[0]) | (x1 > hi[0]) | (x2 < lo[1]) | (x2 > hi[1])
        return np.where(outside | (x1 ** 2 + x2 ** 2 >= radius ** 2), 0.0, out)

    probe = MollifierHandle("user_table", 1.0, radius, raw, **kw)
    mass = probe.mass
    if not mass > 0:
        raise DomainError("mollifier table has zero mass")
    return MollifierHandle("user_table", 1.0 / mass, radius, raw, **kw)


def phi_eval(h: MollifierHandle, x, eps: float | None = None, sqrt: bool = False):
    """Evaluate Phi (or phi = sqrt(Phi) if ``sqrt``), optionally rescaled.

    With ``eps`` set this returns ``eps^-2 Phi(x / eps)``; for ``sqrt`` it
    returns the square root of that rescaled density.
    """
    x = np.asarray(x, dtype=float)
    if eps is None:
        v = h(x)
    else:
        v = h(x / eps) / eps ** 2
    return np.sqrt(v) if sqrt else v


def log_overlap_kphi(h: MollifierHandle) -> float:
    """``K_Phi = 2 int int Phi(x) log|x-x'| Phi(x') dx dx'``.

    The logarithmic singularity is absorbed by the polar Jacobian: the
    integrand is ``r log(r) A(r)``, integrated with a QUADPACK algebraic-log
    weight.
    """
    two_r = 2.0 * h.support_radius
    res = quad(lambda r: float(h.autocorr_eval(r)), 0.0, two_r,
               weight="alg-loga", wvar=(1.0, 0.0), rtol=1e-11, atol=1e-14)
    if res.error > 1e-8:
        raise AccuracyError("K_Phi quadrature inaccurate", achieved=res.error, value=res.value)
    return 2.0 * res.value


def beta_eps(eps: float, theta: float, h: MollifierHandle) -> float:
    """Critical coupling ``2pi/L + pi/L^2 (theta - 2log2 + 2gamma + K_Phi)``, ``L = |log eps|``."""
    if not 0.0 < eps < 1.0:
        raise DomainError(f"eps must lie in (0, 1), got {eps}")
    L = abs(math.log(eps))
    return 2.0 * math.pi / L + math.pi / L ** 2 * (
        theta - 2.0 * math.log(2.0) + 2.0 * EULER_GAMMA + h.k_phi
    )
