"""Small reverse-mode autodiff engine over float64 numpy arrays.

Every operation records its inputs and a closure mapping the output gradient
to input gradients. ``Tensor.backward`` walks the recorded graph in reverse
topological order. Only leaves (tensors not produced by an op) keep their
``grad``; repeated ``backward`` calls accumulate into it until ``zero_grad``.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .exceptions import ConfigurationError, ContractError, DimensionError

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Dense float64 array that can take part in a differentiable graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = ""

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable, op: str):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- autodiff -------------------------------------------------------------
    def backward(self) -> None:
        """Populate ``grad`` on every leaf that requires it."""
        if self.data.size != 1 or self.data.ndim > 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
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
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- arithmetic -----------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor._from_op(
            self.data + other.data, (self, other),
            lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)), "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor._from_op(
            self.data - other.data, (self, other),
            lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)), "sub")

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return Tensor._from_op(
            x * y, (self, other),
            lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)), "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        out = x / y
        return Tensor._from_op(
            out, (self, other),
            lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * out / y, y.shape)), "div")

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __neg__(self):
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,), "neg")

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        x = self.data
        return Tensor._from_op(
            x ** exponent, (self,), lambda g: (g * exponent * x ** (exponent - 1),), "pow")

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    def __getitem__(self, index):
        shape = self.shape

        def backward(g):
            out = np.zeros(shape)
            np.add.at(out, index, g)
            return (out,)

        return Tensor._from_op(self.data[index], (self,), backward, "getitem")

    # -- reductions and shape -------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) / count

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._from_op(
            self.data.reshape(shape), (self,), lambda g: (g.reshape(old),), "reshape")

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor._from_op(
            self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),), "transpose")

    def swapaxes(self, a: int, b: int):
        return Tensor._from_op(
            self.data.swapaxes(a, b), (self,), lambda g: (g.swapaxes(a, b),), "swapaxes")

    @property
    def T(self):
        return self if self.ndim < 2 else self.swapaxes(-1, -2)

    # -- elementwise ----------------------------------------------------------
    def exp(self):
        out = np.exp(self.data)
        return Tensor._from_op(out, (self,), lambda g: (g * out,), "exp")

    def log(self):
        x = self.data
        return Tensor._from_op(np.log(x), (self,), lambda g: (g / x,), "log")

    def abs(self):
        x = self.data
        return Tensor._from_op(np.abs(x), (self,), lambda g: (g * np.sign(x),), "abs")

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting of leading dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul batch dimensions incompatible: {a.shape} @ {b.shape}") from exc
    x, y = a.data, b.data

    def backward(g):
        ga = np.matmul(g, np.swapaxes(y, -1, -2))
        gb = np.matmul(np.swapaxes(x, -1, -2), g)
        return _unbroadcast(ga, x.shape), _unbroadcast(gb, y.shape)

    return Tensor._from_op(out, (a, b), backward, "matmul")


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor._from_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def _expit(x: np.ndarray) -> np.ndarray:
    # exp(-logaddexp(0, -x)) never overflows
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = _expit(x.data)
    return Tensor._from_op(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid}


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}") from None
    return fn(x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis`` (the last axis by default)."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(s, (x,), backward, "softmax")


def row_softmax(x: Tensor) -> Tensor:
    return softmax(x, axis=-1)


def clip(x: Tensor, lo, hi) -> Tensor:
    """Clamp elementwise to ``[lo, hi]``; gradient is zero where clamped."""
    x = as_tensor(x)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    out = np.minimum(np.maximum(x.data, lo), hi)
    inside = (x.data >= lo) & (x.data <= hi)
    return Tensor._from_op(out, (x,), lambda g: (g * inside,), "clip")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor._from_op(out, tensors, backward, "stack")


def concatenate(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return Tensor._from_op(
        out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)), "concatenate")


def causal_dilated_conv1d(x: Tensor, filters: Tensor, dilation: int = 1, bias: Tensor | None = None) -> Tensor:
    """Causal 1-D convolution along the second-to-last (time) axis.

    ``x`` has shape ``(..., T, D_in)`` and ``filters`` ``(r, D_in, D_out)``.
    ``out[t] = sum_s filters[s] . x[t - dilation*s]`` with ``x[tau] = 0`` for
    ``tau < 0``, so the output keeps length ``T``.
    """
    x, filters = as_tensor(x), as_tensor(filters)
    if filters.ndim != 3:
        raise ConfigurationError(f"filters must be (r, D_in, D_out), got {filters.shape}")
    r = filters.shape[0]
    if r < 1 or int(dilation) != dilation or dilation < 1:
        raise ConfigurationError(f"kernel size and dilation must be positive, got r={r}, dilation={dilation}")
    if x.ndim < 2 or x.shape[-1] != filters.shape[1]:
        raise DimensionError(f"conv input {x.shape} does not match filters {filters.shape}")
    dilation = int(dilation)
    T = x.shape[-2]
    pad = (r - 1) * dilation
    xp = np.concatenate([np.zeros(x.shape[:-2] + (pad, x.shape[-1])), x.data], axis=-2)
    w = filters.data
    out = np.zeros(x.shape[:-1] + (w.shape[2],))
    views = []
    for s in range(r):
        start = pad - dilation * s
        view = xp[..., start:start + T, :]
        views.append(view)
        out += view @ w[s]

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w)
        g2 = g.reshape(-1, g.shape[-1])
        for s in range(r):
            start = pad - dilation * s
            gxp[..., start:start + T, :] += g @ w[s].T
            gw[s] = views[s].reshape(-1, w.shape[1]).T @ g2
        return gxp[..., pad:, :], gw

    conv = Tensor._from_op(out, (x, filters), backward, "conv1d")
    return conv if bias is None else conv + bias


def moving_average(x: Tensor, kernel: int) -> Tensor:
    """Centered moving average along the time axis (second-to-last).

    Both ends are padded by replicating the edge value ``(kernel - 1) / 2``
    times, so the output has the same length as the input.
    Computed as ``x[t] + sum_j (x[t+j] - x[t]) / kernel``.
    """
    x = as_tensor(x)
    if int(kernel) != kernel or kernel < 1 or kernel % 2 == 0:
        raise ConfigurationError(f"moving-average kernel must be an odd positive integer, got {kernel}")
    kernel = int(kernel)
    T = x.shape[-2]
    if kernel > 2 * T - 1:
        raise ConfigurationError(f"kernel {kernel} too large for series of length {T}")
    p = (kernel - 1) // 2
    if p == 0:
        return Tensor._from_op(x.data.copy(), (x,), lambda g: (g,), "moving_average")
    xd = x.data
    xp = np.concatenate(
        [np.repeat(xd[..., :1, :], p, axis=-2), xd, np.repeat(xd[..., -1:, :], p, axis=-2)], axis=-2)
    # centre plus mean offset: a constant window gives exactly the centre value
    acc = np.zeros_like(xd)
    for j in range(kernel):
        if j != p:
            acc += xp[..., j:j + T, :] - xd
    out = xd + acc / kernel

    def backward(g):
        gp = np.zeros(xp.shape)
        gk = g / kernel
        for j in range(kernel):
            gp[..., j:j + T, :] += gk
        gx = gp[..., p:p + T, :].copy()
        gx[..., 0, :] += gp[..., :p, :].sum(axis=-2)
        gx[..., -1, :] += gp[..., p + T:, :].sum(axis=-2)
        return (gx,)

    return Tensor._from_op(out, (x,), backward, "moving_average")


def finite_diff_check(f: Callable[..., Tensor], inputs, h: float = 1e-5) -> float:
    """Largest relative disagreement between autodiff and central differences.

    ``f`` is called as ``f(*inputs)`` and must return a scalar tensor. The
    error per coordinate is ``|a - c| / (|a| + |c| + 1e-12)``.
    """
    if not h > 0:
        raise ConfigurationError(f"finite-difference step must be positive, got {h}")
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    inputs = list(inputs)
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)  # reshape(-1) below must be a view
        t.requires_grad = True
        t.zero_grad()
    f(*inputs).backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    with no_grad():
        for t, a in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            af = a.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = float(f(*inputs).data)
                flat[i] = orig - h
                down = float(f(*inputs).data)
                flat[i] = orig
                c = (up - down) / (2 * h)
                err = abs(af[i] - c) / (abs(af[i]) + abs(c) + 1e-12)
                worst = max(worst, err)
    return worst


def parameters_zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
