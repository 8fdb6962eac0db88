"""Reverse-mode automatic differentiation over dense numpy arrays.

Each differentiable op returns a :class:`Tensor` that remembers its parents
and a closure mapping the output gradient to parent gradients. ``backward``
orders the recorded graph topologically (the tape) and replays it in reverse.

Broadcasting is limited to leading axes: an operand may omit leading
dimensions of the other, nothing else.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import erf

_grad_enabled = True


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording; ops return constant tensors."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 _parents: tuple = (), _backward: Optional[Callable] = None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_wrap(other), -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def backward(self, grad: Optional[np.ndarray] = None):
        backward(self, grad)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _make(data: np.ndarray, parents: Sequence[Tensor], fn: Callable) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, True, None, tuple(parents), fn)
    return Tensor(data)


def tape(root: Tensor) -> list[Tensor]:
    """Tensors reachable from ``root`` in topological order (inputs first)."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, grad: Optional[np.ndarray] = None) -> None:
    """Accumulate d loss / d t into ``t.grad`` for every leaf requiring grad."""
    if grad is None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        return
    grads = {id(loss): grad}
    for node in reversed(tape(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g


def _check_trailing(a: Tensor, b: Tensor, op: str):
    short, long_ = (a, b) if a.ndim <= b.ndim else (b, a)
    if long_.shape[long_.ndim - short.ndim:] != short.shape:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ----------------------------------------------------------------------------
# elementwise and linear ops


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_trailing(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_trailing(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``(..., n, k) @ (k, m)`` or batched ``(..., n, k) @ (..., k, m)``."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or (
            b.ndim > 2 and a.shape[:-2] != b.shape[:-2]):
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _make(ad @ bd, (a, b), back)


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Permute axes; default swaps the last two."""
    if axes is None:
        axes = list(range(a.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def getitem(a: Tensor, index) -> Tensor:
    src, dt = a.shape, a.dtype

    def back(g):
        out = np.zeros(src, dtype=dt)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), back)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)))


def split_heads(x: Tensor, heads: int) -> Tensor:
    """``(..., N, h*d)`` -> ``(..., h, N, d)``."""
    *lead, n, dm = x.shape
    if dm % heads:
        raise ShapeError(f"model dim {dm} not divisible by {heads} heads")
    y = reshape(x, (*lead, n, heads, dm // heads))
    nd = y.ndim
    axes = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
    return transpose(y, axes)


def merge_heads(x: Tensor) -> Tensor:
    """Inverse of :func:`split_heads`."""
    *lead, h, n, d = x.shape
    nd = x.ndim
    axes = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
    return reshape(transpose(x, axes), (*lead, n, h * d))


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape, dt = a.shape, a.dtype
    return _make(np.asarray(a.data.sum(), dtype=dt), (a,),
                 lambda g: (np.broadcast_to(g, shape).astype(dt),))


def mean(a: Tensor, axis: int) -> Tensor:
    n = a.shape[axis]
    shape = a.shape

    def back(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),)

    return _make(a.data.mean(axis=axis), (a,), back)


# ----------------------------------------------------------------------------
# nonlinearities


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = (x * cdf).astype(x.dtype, copy=False)

    def back(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return ((g * (cdf + x * pdf)).astype(x.dtype, copy=False),)

    return _make(out, (a,), back)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, max-shifted."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (a,), back)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis, then apply learnable gain and bias."""
    if gain.shape != a.shape[-1:] or bias.shape != a.shape[-1:]:
        raise ShapeError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} vs input {a.shape}")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def back(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        gg = (g * xhat).reshape(-1, x.shape[-1]).sum(axis=0)
        gb = g.reshape(-1, x.shape[-1]).sum(axis=0)
        return dx, gg, gb

    return _make(xhat * gd + bias.data, (a, gain, bias), back)


def dropout(a: Tensor, p: float, rng: Optional[np.random.Generator], train: bool) -> Tensor:
    """Inverted dropout; identity in eval mode or when ``p == 0``."""
    if not train or p == 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    if rng is None:
        raise ValueError("dropout in train mode needs a generator")
    mask = (rng.random(a.shape) >= p).astype(a.dtype) / (1.0 - p)
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def log_softmax(a: np.ndarray) -> np.ndarray:
    z = a - a.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    x = logits.data
    squeeze = x.ndim == 1
    if squeeze:
        x, labels = x[None], labels.reshape(1)
    if x.ndim != 2 or labels.shape != (x.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    lsm = log_softmax(x)
    b = x.shape[0]
    rows = np.arange(b)
    loss = -lsm[rows, labels].mean()

    def back(g):
        p = np.exp(lsm)
        p[rows, labels] -= 1.0
        p *= g / b
        return (p.reshape(logits.shape),)

    return _make(np.asarray(loss, dtype=x.dtype), (logits,), back)
