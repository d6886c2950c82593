"""Pure-NumPy Feynman-Kac block kernel (fallback for the compiled core)."""
from __future__ import annotations

import numpy as np


def fk_block(x0, incr, dt, pairs, potential):
    """Exponent ``int_0^t V(B_s) ds`` (trapezoid) and endpoints for one block.

    ``incr`` has shape ``(nsteps, npaths, n, 2)``; ``potential`` maps relative
    positions ``(..., 2)`` to ``beta * Phi^eps``.
    """
    nsteps, npaths = incr.shape[:2]
    pos = np.empty((nsteps + 1,) + incr.shape[1:])
    pos[0] = x0
    np.cumsum(incr, axis=0, out=pos[1:])
    pos[1:] += x0
    V = np.zeros((nsteps + 1, npaths))
    for i, j in pairs:
        V += potential(pos[:, :, i, :] - pos[:, :, j, :])
    expo = dt * (V.sum(axis=0) - 0.5 * (V[0] + V[-1]))
    return expo, pos[-1].copy()


def bump_potential(z, beta, eps, norm):
    """``beta * eps^-2 * norm * exp(-1/(1 - |z/eps|^2))`` inside the eps-disk."""
    r2 = (z[..., 0] ** 2 + z[..., 1] ** 2) / (eps * eps)
    out = np.zeros(r2.shape)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return (beta * norm / (eps * eps)) * out


def fk_block_bump(x0, incr, dt, pairs, beta, eps, norm):
    return fk_block(x0, incr, dt, pairs, lambda z: bump_potential(z, beta, eps, norm))
