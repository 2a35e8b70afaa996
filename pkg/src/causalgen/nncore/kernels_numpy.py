"""Pure-numpy reference implementation of the hot-path kernels.

The compiled extension in ``_kernels.pyx`` implements the same contract;
either backend can be selected at import time (see :mod:`backend`).  All
arrays are C-contiguous float64.

Activation codes: 0 = identity, 1 = tanh.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"

ACT_IDENTITY = 0
ACT_TANH = 1


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, act: int) -> np.ndarray:
    # in-place updates keep the temporary count down; large fresh
    # allocations are disproportionately expensive on small-cache hosts
    y = x @ w
    y += b
    if act == ACT_TANH:
        np.tanh(y, out=y)
    return y


def dense_backward(
    x: np.ndarray, w: np.ndarray, y: np.ndarray, dy: np.ndarray, act: int
):
    if act == ACT_TANH:
        da = y * y
        np.subtract(1.0, da, out=da)
        da *= dy
    else:
        da = dy
    dx = da @ w.T
    dw = x.T @ da
    db = da.sum(axis=0)
    return dx, dw, db


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # stable two-sided form without fancy indexing: with t = exp(-|x|),
    # sigmoid(x) = 1/(1+t) for x >= 0 and t/(1+t) otherwise
    t = np.abs(x)
    np.negative(t, out=t)
    np.exp(t, out=t)
    denom = 1.0 + t
    return np.where(x >= 0, 1.0, t) / denom


def gru_step_forward(
    ax: np.ndarray,
    h: np.ndarray,
    u_z: np.ndarray,
    u_r: np.ndarray,
    u_h: np.ndarray,
):
    """One GRU update from fused input projections ``ax = [az | ar | ah]``.

    ``ax`` is ``[m, 3H]`` with biases already folded in:
    z = sigmoid(az + h U_z); r = sigmoid(ar + h U_r);
    c = tanh(ah + (r*h) U_h); h' = (1-z)*h + z*c.
    Returns ``(h_new, z, r, c)``; the gate values feed the backward pass.
    """
    width = h.shape[1]
    z = _sigmoid(ax[:, :width] + h @ u_z)
    r = _sigmoid(ax[:, width : 2 * width] + h @ u_r)
    c = np.tanh(ax[:, 2 * width :] + (r * h) @ u_h)
    h_new = (1.0 - z) * h + z * c
    return h_new, z, r, c


def gru_step_backward(
    h: np.ndarray,
    u_z: np.ndarray,
    u_r: np.ndarray,
    u_h: np.ndarray,
    z: np.ndarray,
    r: np.ndarray,
    c: np.ndarray,
    dh_new: np.ndarray,
):
    """Gradients of one GRU update; ``dax`` is fused ``[m, 3H]``."""
    dz = dh_new * (c - h)
    dc = dh_new * z
    dh = dh_new * (1.0 - z)

    width = h.shape[1]
    dax = np.empty((h.shape[0], 3 * width))

    da_h = dc * (1.0 - c * c)
    rh = r * h
    du_h = rh.T @ da_h
    drh = da_h @ u_h.T
    dr = drh * h
    dh = dh + drh * r

    da_r = dr * r * (1.0 - r)
    du_r = h.T @ da_r
    dh = dh + da_r @ u_r.T

    da_z = dz * z * (1.0 - z)
    du_z = h.T @ da_z
    dh = dh + da_z @ u_z.T

    dax[:, :width] = da_z
    dax[:, width : 2 * width] = da_r
    dax[:, 2 * width :] = da_h
    return dax, dh, du_z, du_r, du_h
