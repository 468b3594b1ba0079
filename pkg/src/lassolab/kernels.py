"""Shrinkage kernel dispatch: compiled core when available, numpy fallback otherwise.

Set LASSOLAB_KERNELS=python to force the fallback. Both backends produce
identical floating point results (same operation order per element).
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("LASSOLAB_KERNELS", "").lower() in ("py", "python", "numpy"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def _as_theta(theta):
    t = np.atleast_1d(np.ascontiguousarray(theta, dtype=np.float64))
    if t.ndim != 1:
        raise ValueError("theta must be a scalar or a 1-d vector")
    return t


def soft_threshold(u, theta):
    """Elementwise h_theta(u) = sign(u) * max(|u| - theta, 0).

    theta is a nonnegative scalar or per-coordinate vector (matching the
    leading axis of u). theta = 0 reduces to the identity.
    """
    t = _as_theta(theta)
    if np.any(t < 0.0):
        raise ValueError("negative threshold")
    a = np.ascontiguousarray(u, dtype=np.float64)
    if a.ndim == 1:
        if t.shape[0] not in (1, a.shape[0]):
            raise ValueError("theta length does not match input")
        return _impl.soft_threshold_1d(a, t)
    if a.ndim == 2:
        if t.shape[0] not in (1, a.shape[0]):
            raise ValueError("theta length does not match input rows")
        return _impl.soft_threshold_2d(a, t)
    raise ValueError("soft_threshold supports 1-d and 2-d inputs")


def shrink_mask(w, theta):
    """Threshold plus active-set mask (1.0 where |w| > theta, else 0.0).

    Internal fused kernel for network forward/backward passes; w must be 2-d.
    """
    t = _as_theta(theta)
    a = np.ascontiguousarray(w, dtype=np.float64)
    return _impl.shrink_mask_2d(a, t)
