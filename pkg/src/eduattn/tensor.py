"""Dense float64 tensors with reverse-mode differentiation.

Graphs are built dynamically: every op records its parents and a closure
that pushes the output gradient back into them. ``Tensor.backward`` walks
the graph in reverse topological order.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from eduattn.errors import DimensionError, NumericError, ConfigError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), op: str = "",
                 name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents = _parents
        self._backward: Callable[[], None] | None = None
        self.op = op
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, op={self.op or 'leaf'})"

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
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
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        for node in order:
            if node._backward is not None and node.grad is None:
                node.grad = np.zeros_like(node.data)
        self.grad = self.grad + grad if self.grad is not None else np.array(grad, dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    rg = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=False, _parents=tuple(parents) if rg else (), op=op)
    out.requires_grad = rg
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    out = _make(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def _backward():
            if a.requires_grad:
                a._accum(_unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(out.grad, b.shape))
        out._backward = _backward
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    out = _make(a.data - b.data, (a, b), "sub")
    if out.requires_grad:
        def _backward():
            if a.requires_grad:
                a._accum(_unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                b._accum(-_unbroadcast(out.grad, b.shape))
        out._backward = _backward
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    out = _make(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def _backward():
            if a.requires_grad:
                a._accum(_unbroadcast(out.grad * b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(out.grad * a.data, b.shape))
        out._backward = _backward
    return out


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    out = _make(y, (x,), "tanh")
    if out.requires_grad:
        def _backward():
            x._accum(out.grad * (1.0 - y * y))
        out._backward = _backward
    return out


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    out = _make(y, (x,), "sigmoid")
    if out.requires_grad:
        def _backward():
            x._accum(out.grad * y * (1.0 - y))
        out._backward = _backward
    return out


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    out = _make(y, (x,), "exp")
    if out.requires_grad:
        def _backward():
            x._accum(out.grad * y)
        out._backward = _backward
    return out


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = _make(np.log(x.data), (x,), "log")
    if out.requires_grad:
        def _backward():
            x._accum(out.grad / x.data)
        out._backward = _backward
    return out


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), stable for large |x|."""
    x = as_tensor(x)
    v = x.data
    out = _make(np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v))), (x,), "softplus")
    if out.requires_grad:
        def _backward():
            x._accum(out.grad * _sigmoid(v))
        out._backward = _backward
    return out


def elementwise(op: str, *inputs) -> Tensor:
    """Dispatch by name: ``tanh``, ``sigmoid``, ``add`` or ``mul``."""
    table = {"tanh": tanh, "sigmoid": sigmoid, "add": add, "mul": mul}
    if op not in table:
        raise ValueError(f"unknown elementwise op {op!r}")
    return table[op](*inputs)


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules; both operands need ndim >= 2."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    try:
        y = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}") from None
    out = _make(y, (a, b), "matmul")
    if out.requires_grad:
        def _backward():
            g = out.grad
            if a.requires_grad:
                a._accum(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
            if b.requires_grad:
                if a.ndim > 2 and b.ndim == 2:
                    # fold batch dims into rows: one GEMM instead of a batched one
                    gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
                else:
                    gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
                b._accum(gb)
        out._backward = _backward
    return out


# -- reductions and shape ops ------------------------------------------------------

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), "sum")
    if out.requires_grad:
        def _backward():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            x._accum(np.broadcast_to(g, x.shape))
        out._backward = _backward
    return out


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([x.shape[i] for i in axes]))
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from None
    out = _make(y, (x,), "reshape")
    if out.requires_grad:
        def _backward():
            x._accum(out.grad.reshape(x.shape))
        out._backward = _backward
    return out


def transpose(x: Tensor, axes=None) -> Tensor:
    x = as_tensor(x)
    out = _make(np.transpose(x.data, axes), (x,), "transpose")
    if out.requires_grad:
        inv = None if axes is None else np.argsort(axes)
        def _backward():
            x._accum(np.transpose(out.grad, inv))
        out._backward = _backward
    return out


def getitem(x: Tensor, idx) -> Tensor:
    """Basic or advanced indexing; the backward scatters with ``np.add.at``."""
    x = as_tensor(x)
    out = _make(x.data[idx], (x,), "getitem")
    if out.requires_grad:
        def _backward():
            g = np.zeros_like(x.data)
            np.add.at(g, idx, out.grad)
            x._accum(g)
        out._backward = _backward
    return out


def flip(x: Tensor, axis: int = 0) -> Tensor:
    x = as_tensor(x)
    out = _make(np.flip(x.data, axis=axis), (x,), "flip")
    if out.requires_grad:
        def _backward():
            x._accum(np.flip(out.grad, axis=axis))
        out._backward = _backward
    return out


def take_rows(table: Tensor, ids) -> Tensor:
    """Gather rows of a 2-D table; output shape is ``ids.shape + (cols,)``."""
    ids = np.asarray(ids, dtype=np.int64)
    out = _make(table.data[ids], (table,), "take_rows")
    if out.requires_grad:
        def _backward():
            g = np.zeros_like(table.data)
            np.add.at(g, ids.reshape(-1), out.grad.reshape(-1, table.shape[1]))
            table._accum(g)
        out._backward = _backward
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    out = _make(y, tensors, "concat")
    if out.requires_grad:
        bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
        def _backward():
            for t, g in zip(tensors, np.split(out.grad, bounds, axis=axis)):
                if t.requires_grad:
                    t._accum(g)
        out._backward = _backward
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"stack: incompatible shapes {[t.shape for t in tensors]}") from None
    out = _make(y, tensors, "stack")
    if out.requires_grad:
        def _backward():
            for i, t in enumerate(tensors):
                if t.requires_grad:
                    t._accum(np.take(out.grad, i, axis=axis))
        out._backward = _backward
    return out


# -- normalisers -----------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _make(y, (x,), "softmax")
    if out.requires_grad:
        def _backward():
            g = out.grad
            x._accum(y * (g - (g * y).sum(axis=axis, keepdims=True)))
        out._backward = _backward
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    out = _make(y, (x,), "log_softmax")
    if out.requires_grad:
        def _backward():
            g = out.grad
            x._accum(g - np.exp(y) * g.sum(axis=axis, keepdims=True))
        out._backward = _backward
    return out


def frobenius(x: Tensor, axes=(-2, -1), squared: bool = False) -> Tensor:
    """Frobenius norm over ``axes``; the gradient at a zero matrix is taken as 0."""
    x = as_tensor(x)
    sq = np.sum(x.data * x.data, axis=axes)
    if squared:
        out = _make(sq, (x,), "frobenius_sq")
        if out.requires_grad:
            def _backward():
                x._accum(2.0 * x.data * np.expand_dims(out.grad, axes))
            out._backward = _backward
        return out
    nrm = np.sqrt(sq)
    out = _make(nrm, (x,), "frobenius")
    if out.requires_grad:
        def _backward():
            safe = np.where(nrm > 0, nrm, 1.0)
            scale = np.where(nrm > 0, out.grad / safe, 0.0)
            x._accum(x.data * np.expand_dims(scale, axes))
        out._backward = _backward
    return out


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when not training or ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(keep))


# -- verification -------------------------------------------------------------------

def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor], eps: float = 1e-5,
               abs_floor: float = 1e-8, max_elems: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Largest relative error between backprop and central differences.

    ``f`` rebuilds the graph on every call and returns a scalar. Entries whose
    gradient magnitude is below ``abs_floor`` are compared by absolute error.
    ``max_elems`` subsamples each parameter to keep big checks affordable.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericError("grad_check: loss is not finite")
    loss.backward()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        idxs = np.arange(flat.size)
        if max_elems is not None and flat.size > max_elems:
            idxs = (rng or np.random.default_rng(0)).choice(flat.size, max_elems, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericError("grad_check: loss is not finite under perturbation")
            num = (fp - fm) / (2.0 * eps)
            ana = ga.reshape(-1)[i]
            scale = max(abs(num), abs(ana))
            err = abs(num - ana) if scale < abs_floor else abs(num - ana) / scale
            worst = max(worst, err)
    return worst
