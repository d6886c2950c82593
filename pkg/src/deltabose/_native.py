"""Backend selection for hot kernels.

The compiled extension is used when it imports and ``DELTABOSE_PURE`` is not
set; otherwise the NumPy fallback runs.  Both produce the same numbers up to
floating-point summation order.
"""
from __future__ import annotations

import os

import numpy as np

from . import _fk_py

try:  # pragma: no cover - depends on build
    from . import _fkcore as _compiled
except ImportError:  # pragma: no cover
    _compiled = None

HAVE_NATIVE = _compiled is not None


def backend() -> str:
    if HAVE_NATIVE and not os.environ.get("DELTABOSE_PURE"):
        return "native"
    return "python"


def fk_block_bump(x0, incr, dt, pairs, beta, eps, norm, which: str | None = None):
    which = which or backend()
    if which == "native":
        if not HAVE_NATIVE:
            raise RuntimeError("compiled core not available")
        return _compiled.fk_block_bump(
            np.ascontiguousarray(x0, dtype=float),
            np.ascontiguousarray(incr, dtype=float),
            float(dt),
            np.ascontiguousarray(pairs, dtype=np.int64),
            float(beta), float(eps), float(norm),
        )
    return _fk_py.fk_block_bump(x0, incr, dt, pairs, beta, eps, norm)
