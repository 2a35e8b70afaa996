"""Differentiable building blocks: dense layers, GRU cells, affine couplings.

Dense and GRU updates dispatch to the active kernel backend; couplings are
composed from generic tape ops because their matrices are tiny and often
batched over time steps.
"""

from __future__ import annotations

import numpy as np

from . import backend
from .autodiff import (
    Tensor,
    _make,
    absolute,
    add,
    as_tensor,
    clip,
    concat,
    matmul_bias,
    mul,
    scale_shift,
    scale_shift_inverse,
    sub,
    tanh,
    tsum,
)

SCALE_CLAMP = 8.0  # keeps exp(scale) finite during early training


def dense(x: Tensor, w: Tensor, b: Tensor, activation: str = "tanh") -> Tensor:
    """Affine map plus activation on 2-d inputs, via the kernel backend."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 2 or w.ndim != 2:
        raise ValueError(f"dense expects 2-d input/weights, got {x.shape} @ {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"input width {x.shape[1]} != weight rows {w.shape[0]}")
    act = {"identity": 0, "tanh": 1}[activation]
    kernels = backend.kernels
    y = kernels.dense_forward(x.data, w.data, b.data, act)

    def vjp(g):
        return kernels.dense_backward(x.data, w.data, y, g, act)

    return _make(y, (x, w, b), vjp)


def gru_core(
    ax: Tensor, h: Tensor, u_z: Tensor, u_r: Tensor, u_h: Tensor
) -> Tensor:
    """GRU update from fused input projections ``[az | ar | ah]`` (biases in)."""
    kernels = backend.kernels
    h_new, z, r, c = kernels.gru_step_forward(
        ax.data, h.data, u_z.data, u_r.data, u_h.data
    )

    def vjp(g):
        return kernels.gru_step_backward(
            h.data, u_z.data, u_r.data, u_h.data, z, r, c, g
        )

    return _make(h_new, (ax, h, u_z, u_r, u_h), vjp)


def gru_step(
    x: Tensor, h_prev: Tensor,
    w_z: Tensor, u_z: Tensor, b_z: Tensor,
    w_r: Tensor, u_r: Tensor, b_r: Tensor,
    w_h: Tensor, u_h: Tensor, b_h: Tensor,
) -> Tensor:
    """One GRU step: z/r gates, candidate state, convex-combination update.

    Uses the convention h' = (1 - z) * h + z * candidate.
    """
    ax = concat(
        [
            dense(x, w_z, b_z, "identity"),
            dense(x, w_r, b_r, "identity"),
            dense(x, w_h, b_h, "identity"),
        ],
        axis=-1,
    )
    return gru_core(ax, as_tensor(h_prev), u_z, u_r, u_h)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Generic affine map; supports stacked (batched) weights for flows."""
    return matmul_bias(x, w, b)


def _coupling_split(dim: int, flip: bool) -> tuple[slice, slice]:
    """Pass-through and transformed column ranges for a coupling layer.

    For 1-d inputs the pass-through half is empty on either parity, which
    degenerates into a conditioning-only (or bias-only) affine transform.
    """
    k = dim // 2
    if flip:
        return slice(dim - k, dim), slice(0, dim - k)
    return slice(0, k), slice(k, dim)


def _coupling_nets(
    passthrough: Tensor, cond: Tensor | None,
    w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor,
    n_transformed: int,
):
    """Scale (clamped) and shift computed from the pass-through half + context."""
    pieces = [passthrough]
    if cond is not None:
        pieces.append(as_tensor(cond))
    net_in = concat(pieces, axis=-1) if len(pieces) > 1 else passthrough
    hidden = tanh(linear(net_in, w1, b1))
    raw = linear(hidden, w2, b2)
    s = clip(raw[..., :n_transformed], -SCALE_CLAMP, SCALE_CLAMP)
    t = raw[..., n_transformed:]
    return s, t


def coupling_forward(
    u: Tensor, cond: Tensor | None,
    w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor,
    flip: bool = False,
) -> tuple[Tensor, Tensor]:
    """Affine coupling, sampling direction: v_b = u_b * exp(s) + t.

    Returns the transformed vector and the per-row log-determinant.
    """
    dim = u.shape[-1]
    keep, trans = _coupling_split(dim, flip)
    u_a = u[..., keep]
    u_b = u[..., trans]
    s, t = _coupling_nets(u_a, cond, w1, b1, w2, b2, u_b.shape[-1])
    v_b = scale_shift(u_b, s, t)
    log_det = tsum(s, axis=-1)
    parts = [v_b, u_a] if flip else [u_a, v_b]
    return concat(parts, axis=-1), log_det


def coupling_inverse(
    v: Tensor, cond: Tensor | None,
    w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor,
    flip: bool = False,
) -> tuple[Tensor, Tensor]:
    """Exact inverse of :func:`coupling_forward`; log-determinant negated."""
    dim = v.shape[-1]
    keep, trans = _coupling_split(dim, flip)
    v_a = v[..., keep]
    v_b = v[..., trans]
    s, t = _coupling_nets(v_a, cond, w1, b1, w2, b2, v_b.shape[-1])
    u_b = scale_shift_inverse(v_b, s, t)
    log_det = mul(tsum(s, axis=-1), -1.0)
    parts = [u_b, v_a] if flip else [v_a, u_b]
    return concat(parts, axis=-1), log_det


def l1_path_cost(x: Tensor, x_hat: Tensor) -> Tensor:
    """Per-sequence stepwise L1 transport cost, summed over time and variables."""
    gap = absolute(sub(x, x_hat))
    return tsum(gap, axis=(1, 2))


def uniform_fan_in(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Weight init: uniform with range +-sqrt(1/fan_in); fan_in = rows."""
    bound = float(np.sqrt(1.0 / max(rows, 1)))
    return rng.uniform(-bound, bound, size=(rows, cols))
