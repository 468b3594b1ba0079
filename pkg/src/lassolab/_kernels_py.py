"""Pure-numpy shrinkage kernels. Drop-in fallback for the compiled module."""

import numpy as np


def soft_threshold_1d(u, theta):
    return np.sign(u) * np.maximum(np.abs(u) - theta, 0.0)


def soft_threshold_2d(w, theta):
    # theta: length-1 array broadcasts as a scalar, length-m applies per row
    t = theta[:, None] if theta.shape[0] > 1 else theta[0]
    return np.sign(w) * np.maximum(np.abs(w) - t, 0.0)


def shrink_mask_2d(w, theta):
    t = theta[:, None] if theta.shape[0] > 1 else theta[0]
    a = np.abs(w) - t
    mask = (a > 0.0).astype(np.float64)
    return np.sign(w) * np.maximum(a, 0.0), mask
