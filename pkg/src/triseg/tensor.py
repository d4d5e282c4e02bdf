"""Minimal reverse-mode autodiff over dense numpy arrays.

A ``Tensor`` wraps a numpy float array (float32 for training, float64 for
gradient verification) and records the operations that produced it so that
``backward()`` can accumulate gradients into every reachable leaf.  All
operations are pure: they never mutate their inputs, so values can be shared
freely between threads.  Execution is eager and single-threaded.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

__all__ = ["Tensor", "concat", "softmax_channels"]


def _as_array(data, dtype):
    arr = np.asarray(data, dtype=dtype if dtype is not None else None)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A node in the computation graph.

    Leaves created with ``requires_grad=True`` (parameters) receive a ``.grad``
    array after ``backward()``; interior nodes are garbage-collected with the
    graph.  ``shape`` is restricted to 1-4 dims by convention (NCHW for
    images), though nothing enforces that here.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_bwd")

    def __init__(self, data, requires_grad=False, name=None, dtype=None,
                 _parents=(), _bwd=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in _parents)
        self.name = name
        self._parents = _parents if self.requires_grad else ()
        self._bwd = _bwd if self.requires_grad else None

    # -- introspection -----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, name={self.name!r})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True) if g.dtype != self.data.dtype else g.copy()
        else:
            self.grad += g

    # -- backward ----------------------------------------------------------

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self._accum(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)

    # -- arithmetic --------------------------------------------------------

    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._lift(other)
        out = Tensor(self.data + other.data, _parents=(self, other))

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.data.shape))
        out._bwd = bwd
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, _parents=(self,))
        out._bwd = lambda g: self._accum(-g)
        return out

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)
        out = Tensor(self.data * other.data, _parents=(self, other))

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.data, other.data.shape))
        out._bwd = bwd
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        out = Tensor(self.data / other.data, _parents=(self, other))

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(-g * self.data / other.data ** 2,
                                          other.data.shape))
        out._bwd = bwd
        return out

    def matmul(self, other: "Tensor") -> "Tensor":
        other = self._lift(other)
        out = Tensor(np.matmul(self.data, other.data), _parents=(self, other))

        def bwd(g):
            if self.requires_grad:
                ga = np.matmul(g, np.swapaxes(other.data, -1, -2))
                self._accum(_unbroadcast(ga, self.data.shape))
            if other.requires_grad:
                gb = np.matmul(np.swapaxes(self.data, -1, -2), g)
                other._accum(_unbroadcast(gb, other.data.shape))
        out._bwd = bwd
        return out

    __matmul__ = matmul

    # -- shape ops ----------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src_shape = self.data.shape
        out = Tensor(self.data.reshape(shape), _parents=(self,))
        out._bwd = lambda g: self._accum(g.reshape(src_shape))
        return out

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        out = Tensor(self.data.transpose(axes), _parents=(self,))
        out._bwd = lambda g: self._accum(g.transpose(inv))
        return out

    def __getitem__(self, idx) -> "Tensor":
        out = Tensor(self.data[idx], _parents=(self,))

        def bwd(g):
            full = np.zeros_like(self.data)
            full[idx] = g
            self._accum(full)
        out._bwd = bwd
        return out

    def roll(self, shift, axis) -> "Tensor":
        out = Tensor(np.roll(self.data, shift, axis=axis), _parents=(self,))
        neg = tuple(-s for s in shift) if isinstance(shift, tuple) else -shift
        out._bwd = lambda g: self._accum(np.roll(g, neg, axis=axis))
        return out

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims),
                     _parents=(self,))

        def bwd(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.data.shape))
        out._bwd = bwd
        return out

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    # -- elementwise nonlinearities -------------------------------------------

    def relu(self) -> "Tensor":
        mask = self.data > 0
        out = Tensor(np.where(mask, self.data, 0), _parents=(self,))
        out._bwd = lambda g: self._accum(g * mask)
        return out

    def sigmoid(self) -> "Tensor":
        s = expit(self.data)
        out = Tensor(s, _parents=(self,))
        out._bwd = lambda g: self._accum(g * s * (1 - s))
        return out

    def silu(self) -> "Tensor":
        s = 1.0 / (1.0 + np.exp(-self.data))
        out = Tensor(self.data * s, _parents=(self,))
        out._bwd = lambda g: self._accum(g * s * (1 + self.data * (1 - s)))
        return out

    def gelu(self) -> "Tensor":
        # exact erf form; python-float constants keep float32 inputs float32
        from scipy.special import erf
        x = self.data
        phi = np.exp(-0.5 * x * x) * 0.3989422804014327
        cdf = 0.5 * (1 + erf(x * 0.7071067811865476))
        out = Tensor(x * cdf, _parents=(self,))
        out._bwd = lambda g: self._accum(g * (cdf + x * phi))
        return out

    def softplus(self) -> "Tensor":
        out = Tensor(np.logaddexp(0, self.data), _parents=(self,))
        out._bwd = lambda g: self._accum(g * expit(self.data))
        return out

    def exp(self) -> "Tensor":
        e = np.exp(self.data)
        out = Tensor(e, _parents=(self,))
        out._bwd = lambda g: self._accum(g * e)
        return out

    def log(self) -> "Tensor":
        out = Tensor(np.log(self.data), _parents=(self,))
        out._bwd = lambda g: self._accum(g / self.data)
        return out

    def clamp_min(self, lo: float) -> "Tensor":
        mask = self.data > lo
        out = Tensor(np.where(mask, self.data, lo), _parents=(self,))
        out._bwd = lambda g: self._accum(g * mask)
        return out

    def softmax(self, axis: int) -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError("softmax received non-finite logits")
        z = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=axis, keepdims=True)
        out = Tensor(y, _parents=(self,))

        def bwd(g):
            dot = (g * y).sum(axis=axis, keepdims=True)
            self._accum(y * (g - dot))
        out._bwd = bwd
        return out


def concat(tensors, axis: int) -> Tensor:
    datas = [t.data for t in tensors]
    out = Tensor(np.concatenate(datas, axis=axis), _parents=tuple(tensors))
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accum(piece)
    out._bwd = bwd
    return out


def softmax_channels(logits: Tensor) -> Tensor:
    """Logits (N,K,H,W) -> per-pixel class probabilities summing to 1."""
    if logits.ndim != 4:
        raise ValueError(f"expected NCHW logits, got shape {logits.shape}")
    return logits.softmax(axis=1)
