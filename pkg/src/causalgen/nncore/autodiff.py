"""Reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tensor` records the operations that produced it; calling
:meth:`Tensor.backward` on a scalar walks the tape once and accumulates
vector-Jacobian products into every reachable leaf.  Nodes whose inputs do
not require gradients skip tape construction entirely, so the same code
path serves training and fast inference.
"""

from __future__ import annotations

import numpy as np

from .params import GradStore, ParamStore

LOG_2PI = float(np.log(2.0 * np.pi))


class NonFiniteLossError(RuntimeError):
    """Raised when a loss evaluates to NaN or infinity."""


class ScatterGrad:
    """Sparse vjp result: ``values`` destined for ``parent[index]``.

    Lets slicing ops accumulate into a shared buffer instead of
    materializing a full-size zero array per slice.
    """

    __slots__ = ("index", "values")

    def __init__(self, index, values):
        self.index = index
        self.values = values


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar root")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            incoming = node.grad
            for parent, grad in zip(node._parents, node._vjp(incoming)):
                if grad is None or not parent.requires_grad:
                    continue
                if isinstance(grad, ScatterGrad):
                    if parent.grad is None:
                        parent.grad = np.zeros_like(parent.data)
                    parent.grad[grad.index] += grad.values
                elif parent.grad is None:
                    # own the buffer before later in-place accumulation:
                    # views and pass-through returns may be shared
                    if grad is incoming or grad.base is not None:
                        grad = grad.copy()
                    parent.grad = grad
                else:
                    parent.grad += grad

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise and structural ops -------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data
    return _make(
        data,
        (a, b),
        lambda g: (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g, b.data.shape) if b.requires_grad else None,
        ),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data
    return _make(
        data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
        ),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data
    return _make(
        data,
        (a, b),
        lambda g: (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.data.shape) if b.requires_grad else None,
        ),
    )


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)
    return _make(data, (a,), lambda g: (g * data,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    data = np.tanh(a.data)
    return _make(data, (a,), lambda g: (g * (1.0 - data * data),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    data = _sigmoid(a.data)
    return _make(data, (a,), lambda g: (g * data * (1.0 - data),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp with zero gradient outside the open interval (lo, hi)."""
    a = as_tensor(a)
    data = np.clip(a.data, lo, hi)
    mask = (a.data > lo) & (a.data < hi)
    return _make(data, (a,), lambda g: (g * mask,))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape),)
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.data.shape),)

    return _make(data, (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[i] for i in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def matmul(a, b) -> Tensor:
    """2-d or equal-batch stacked matrix product."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim > 2 or b.ndim > 2:
        if a.ndim != b.ndim or a.data.shape[:-2] != b.data.shape[:-2]:
            raise ValueError(
                f"batched matmul needs matching batch dims, got {a.shape} @ {b.shape}"
            )
    data = np.matmul(a.data, b.data)

    def vjp(g):
        return (
            np.matmul(g, np.swapaxes(b.data, -1, -2)),
            np.matmul(np.swapaxes(a.data, -1, -2), g),
        )

    return _make(data, (a, b), vjp)


def matmul_bias(a, w, b) -> Tensor:
    """Fused ``a @ w + b`` (2-d or equal-batch stacks; bias broadcasts)."""
    a, w, b = as_tensor(a), as_tensor(w), as_tensor(b)
    data = np.matmul(a.data, w.data)
    data += b.data

    def vjp(g):
        return (
            np.matmul(g, np.swapaxes(w.data, -1, -2)) if a.requires_grad else None,
            np.matmul(np.swapaxes(a.data, -1, -2), g) if w.requires_grad else None,
            _unbroadcast(g, b.data.shape) if b.requires_grad else None,
        )

    return _make(data, (a, w, b), vjp)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(tensors), vjp)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(data, tuple(tensors), vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inverse = np.argsort(axes)
    return _make(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),)
    )


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    data = a.data[index]

    def vjp(g):
        return (ScatterGrad(index, g),)

    return _make(data, (a,), vjp)


def gaussian_log_density(x, mean_t, log_var) -> Tensor:
    """Diagonal-Gaussian log density summed over the last axis (fused op)."""
    x, mean_t, log_var = as_tensor(x), as_tensor(mean_t), as_tensor(log_var)
    diff = x.data - mean_t.data
    inv_var = np.exp(-log_var.data)
    scaled = diff * inv_var
    quad = diff * scaled
    data = -0.5 * (LOG_2PI + log_var.data + quad).sum(axis=-1)

    def vjp(g):
        ge = np.expand_dims(g, -1)
        dx = -ge * scaled
        return (
            dx if x.requires_grad else None,
            -dx if mean_t.requires_grad else None,
            (-0.5 * ge * (1.0 - quad)) if log_var.requires_grad else None,
        )

    return _make(data, (x, mean_t, log_var), vjp)


def standard_normal_log_density(x) -> Tensor:
    """Standard-normal log density summed over the last axis (fused op)."""
    x = as_tensor(x)
    data = -0.5 * (LOG_2PI + x.data * x.data).sum(axis=-1)

    def vjp(g):
        return (-np.expand_dims(g, -1) * x.data,)

    return _make(data, (x,), vjp)


def scale_shift(u, s, t) -> Tensor:
    """Fused affine transform u * exp(s) + t (the coupling forward map)."""
    u, s, t = as_tensor(u), as_tensor(s), as_tensor(t)
    es = np.exp(s.data)
    data = u.data * es + t.data

    def vjp(g):
        return (
            (g * es) if u.requires_grad else None,
            (g * u.data * es) if s.requires_grad else None,
            (_unbroadcast(g, t.data.shape)) if t.requires_grad else None,
        )

    return _make(data, (u, s, t), vjp)


def scale_shift_inverse(v, s, t) -> Tensor:
    """Fused inverse transform (v - t) * exp(-s)."""
    v, s, t = as_tensor(v), as_tensor(s), as_tensor(t)
    ens = np.exp(-s.data)
    data = (v.data - t.data) * ens

    def vjp(g):
        ge = g * ens
        return (
            ge if v.requires_grad else None,
            (-g * data) if s.requires_grad else None,
            (_unbroadcast(-ge, t.data.shape)) if t.requires_grad else None,
        )

    return _make(data, (v, s, t), vjp)


# -- gradient drivers ----------------------------------------------------

def value_and_grad(loss_fn, params: ParamStore):
    """Evaluate ``loss_fn`` on tracked leaves and backpropagate.

    ``loss_fn`` receives a dict of leaf Tensors keyed like ``params`` and
    returns either a scalar Tensor or ``(scalar Tensor, aux)``.  Returns
    ``(loss value, aux, GradStore)``; parameters the loss never touched get
    zero gradients.
    """
    leaves = {name: Tensor(arr, requires_grad=True) for name, arr in params.items()}
    result = loss_fn(leaves)
    aux = None
    if isinstance(result, tuple):
        result, aux = result
    if not isinstance(result, Tensor) or result.data.size != 1:
        raise ValueError("loss_fn must return a scalar Tensor")
    if not np.isfinite(result.data).all():
        raise NonFiniteLossError(f"loss is {result.data.ravel()[0]}")
    result.backward()
    grads = GradStore(
        {
            name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data))
            for name, leaf in leaves.items()
        }
    )
    return float(result.data.ravel()[0]), aux, grads


def gradient(loss_fn, params: ParamStore) -> GradStore:
    """Exact reverse-mode gradients of a scalar loss over a ParamStore."""
    _, _, grads = value_and_grad(loss_fn, params)
    return grads


def finite_diff_gradient(loss_fn, params: ParamStore, h: float = 1e-5) -> GradStore:
    """Central finite differences, the independent oracle for `gradient`."""

    def evaluate(store: ParamStore) -> float:
        leaves = {name: Tensor(arr) for name, arr in store.items()}
        result = loss_fn(leaves)
        if isinstance(result, tuple):
            result = result[0]
        value = float(result.data)
        if not np.isfinite(value):
            raise NonFiniteLossError(f"loss is {value}")
        return value

    work = params.copy()
    grads = GradStore.zeros_for(params)
    for name, arr in params.items():
        flat = work[name].ravel()
        grad_flat = grads[name].ravel()
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            upper = evaluate(work)
            flat[i] = original - h
            lower = evaluate(work)
            flat[i] = original
            grad_flat[i] = (upper - lower) / (2.0 * h)
    return grads
