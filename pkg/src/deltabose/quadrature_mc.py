"""Simplex Monte Carlo, Brownian paths, and the Feynman-Kac estimator.

Random streams are counter-based (Philox) and derived from ``(seed, key...)``
through :class:`numpy.random.SeedSequence`, so every block of work owns an
independent, reproducible stream regardless of scheduling.
"""
from __future__ import annotations

import math
import os
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _native
from .errors import DegenerateEstimateError, DomainError, ResolutionError

__all__ = [
    "MCEstimate",
    "PathBundle",
    "brownian_sample",
    "dirichlet_closed_form",
    "feynman_kac_estimate",
    "simplex_integrate",
    "simplex_sample",
    "stream",
]

CLAMP_EXPONENT = 700.0


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    nsamples: int
    seed: int
    n_clamped: int = 0

    def __post_init__(self):
        if self.stderr < 0 or self.nsamples < 1:
            raise ValueError("invalid MCEstimate")

    @property
    def valid(self) -> bool:
        """False when more than 0.1% of samples hit the exponent clamp."""
        return self.n_clamped <= 1e-3 * self.nsamples

    def as_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "nsamples": self.nsamples,
                "seed": self.seed, "n_clamped": self.n_clamped}


@dataclass(frozen=True)
class PathBundle:
    """Brownian trajectories; ``paths`` has shape ``(npaths, nsteps + 1, n, 2)``."""

    times: np.ndarray
    paths: np.ndarray
    start: np.ndarray

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox generator for ``(seed, *key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# simplex


def dirichlet_closed_form(l: int, t: float) -> float:
    """``int_Sigma(t) prod tau_k^(-1/2) = t^(l/2-1) Gamma(1/2)^l / Gamma(l/2)``."""
    if l < 1 or not t > 0:
        raise DomainError("need l >= 1 and t > 0")
    return math.exp((0.5 * l - 1.0) * math.log(t) + l * math.lgamma(0.5) - math.lgamma(0.5 * l))


def simplex_sample(l: int, t: float, profile: str, rng: np.random.Generator,
                   size: int | None = None):
    """Draw points of ``Sigma(t) = {tau >= 0, sum tau = t}`` with importance weights.

    ``uniform`` draws Dirichlet(1, ..., 1) and weights by the simplex volume
    ``t^(l-1)/(l-1)!``; ``halfpow`` draws Dirichlet(1/2, ..., 1/2) and weights
    by the inverse density.  Returns ``(taus, weights)``; with ``size=None``
    a single point of shape ``(l,)`` and a scalar weight.
    """
    if l < 1:
        raise DomainError("l must be >= 1")
    if not t > 0:
        raise DomainError("t must be positive")
    m = 1 if size is None else int(size)
    if l == 1:
        taus = np.full((m, 1), float(t))
        w = np.ones(m)
    elif profile == "uniform":
        g = rng.standard_exponential((m, l))
        taus = t * g / g.sum(axis=1, keepdims=True)
        w = np.full(m, t ** (l - 1) / math.factorial(l - 1))
    elif profile == "halfpow":
        g = rng.standard_gamma(0.5, (m, l))
        taus = t * g / g.sum(axis=1, keepdims=True)
        w = dirichlet_closed_form(l, t) * np.prod(np.sqrt(taus), axis=1)
    else:
        raise ValueError(f"unknown profile {profile!r}")
    if size is None:
        return taus[0], float(w[0])
    return taus, w


def simplex_integrate(f: Callable[[np.ndarray], np.ndarray], l: int, t: float, profile: str,
                      nsamples: int, rng: np.random.Generator, seed: int = -1) -> MCEstimate:
    """Importance-sampled estimate of ``int_Sigma(t) f``; ``f`` maps ``(N, l)`` to ``(N,)``."""
    taus, w = simplex_sample(l, t, profile, rng, size=nsamples)
    vals = np.asarray(f(taus), dtype=float) * w
    if not np.all(np.isfinite(vals)):
        raise DegenerateEstimateError("non-finite simplex samples")
    if not np.any(vals):
        raise DegenerateEstimateError("all simplex samples are zero")
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(nsamples)) if nsamples > 1 else 0.0
    return MCEstimate(mean, se, nsamples, seed)


# ---------------------------------------------------------------------------
# Brownian motion and Feynman-Kac


def _nsteps(t, dt):
    if not dt > 0:
        raise DomainError("dt must be positive")
    k = round(t / dt)
    if k < 1 or abs(k * dt - t) > 1e-9 * max(t, 1.0):
        raise DomainError(f"dt={dt} does not divide t={t}")
    return k


def brownian_sample(x, t: float, dt: float, rng: np.random.Generator,
                    npaths: int = 1) -> PathBundle:
    """``npaths`` bundles of ``n`` independent planar Brownian motions from ``x``."""
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    k = _nsteps(t, dt)
    incr = rng.standard_normal((npaths, k, x.shape[0], 2)) * math.sqrt(dt)
    paths = np.empty((npaths, k + 1, x.shape[0], 2))
    paths[:, 0] = x
    np.cumsum(incr, axis=1, out=paths[:, 1:])
    paths[:, 1:] += x
    return PathBundle(np.linspace(0.0, k * dt, k + 1), paths, x)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("DELTABOSE_WORKERS", "1")))
    except ValueError:
        return 1


def _merge(stats):
    """Combine per-block (count, mean, M2) triples in order (Chan et al.)."""
    n, mean, m2 = 0, 0.0, 0.0
    for nb, mb, m2b in stats:
        if nb == 0:
            continue
        delta = mb - mean
        tot = n + nb
        mean += delta * nb / tot
        m2 += m2b + delta * delta * n * nb / tot
        n = tot
    return n, mean, m2


def feynman_kac_estimate(f: Callable[[np.ndarray], np.ndarray], x, t: float, eps: float,
                         dt: float, nsamples: int, beta: float, mollifier, seed: int = 0,
                         block: int = 256, check_resolution: bool = True,
                         backend: str | None = None) -> MCEstimate:
    """Estimate ``(e^{-t H^eps} f)(x) = E_x[exp(beta int_0^t sum_pairs Phi^eps) f(B_t)]``.

    ``f`` maps endpoints of shape ``(N, n, 2)`` to ``(N,)``.  The potential
    time integral uses the trapezoid rule on the path grid.  Exponents above
    700 are clamped and counted on the result.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    n = x.shape[0]
    k = _nsteps(t, dt)
    if check_resolution and dt > eps * eps / 4.0:
        raise ResolutionError(f"dt={dt} too coarse for eps={eps} (need dt <= eps^2/4)")
    pairs = np.array([(i, j) for i in range(n) for j in range(i + 1, n)], dtype=np.int64)
    nblocks = -(-nsamples // block)
    sqdt = math.sqrt(dt)
    use_bump = getattr(mollifier, "profile", None) == "standard_bump"

    def run(b):
        m = min(block, nsamples - b * block)
        rng = stream(seed, 7, b)
        incr = rng.standard_normal((k, m, n, 2)) * sqdt
        if beta == 0.0:
            expo = np.zeros(m)
            end = x + incr.sum(axis=0)
        elif use_bump:
            expo, end = _native.fk_block_bump(x, incr, dt, pairs, beta, eps,
                                              mollifier.normalization, which=backend)
        else:
            from ._fk_py import fk_block
            expo, end = fk_block(x, incr, dt, pairs,
                                 lambda z: beta * mollifier(z / eps) / eps ** 2)
        clamped = int(np.count_nonzero(expo > CLAMP_EXPONENT))
        vals = np.exp(np.minimum(expo, CLAMP_EXPONENT)) * np.asarray(f(end), dtype=float)
        mb = float(vals.mean())
        return m, mb, float(np.sum((vals - mb) ** 2)), clamped

    workers = _workers()
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            res = list(ex.map(run, range(nblocks)))
    else:
        res = [run(b) for b in range(nblocks)]
    ntot, mean, m2 = _merge([(r[0], r[1], r[2]) for r in res])
    se = math.sqrt(m2 / (ntot - 1) / ntot) if ntot > 1 else 0.0
    return MCEstimate(mean, se, ntot, seed, sum(r[3] for r in res))
