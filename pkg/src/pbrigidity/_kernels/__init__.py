"""Hot kernels, compiled when available.

The Cython extension ``_ckernels`` is used when it was built at install time;
otherwise (or with ``PBRIGIDITY_PURE=1``) the numpy/scipy fallback is used.
Both backends return identical results.
"""
import os

import numpy as np

from . import _pykernels as python_backend

try:
    if os.environ.get("PBRIGIDITY_PURE") == "1":
        raise ImportError("pure backend requested")
    from . import _ckernels as compiled_backend
except ImportError:
    compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "python"


def count_preimages(fq, gq, u0, du, nu, v0, dv, nv, offset=0.5):
    return _active.count_preimages(
        np.ascontiguousarray(fq, dtype=np.float64), np.ascontiguousarray(gq, dtype=np.float64),
        float(u0), float(du), int(nu), float(v0), float(dv), int(nv), float(offset),
    )


def label_equal_keys(keys, periodic_x=False, periodic_y=False):
    return _active.label_equal_keys(
        np.ascontiguousarray(keys, dtype=np.int64), bool(periodic_x), bool(periodic_y)
    )

__all__ = ["BACKEND", "count_preimages", "label_equal_keys",
           "compiled_backend", "python_backend"]
