"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable operation is a :class:`Function` subclass with a numpy
``forward`` and an analytic ``backward``. Calling ``Function.apply`` records
the function on the output tensor when any input requires a gradient, and
``Tensor.backward`` walks the recorded graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
import contextvars
from collections.abc import Iterator, Sequence

import numpy as np
from scipy.special import expit

_GRAD_ENABLED = contextvars.ContextVar("grad_enabled", default=True)
_CHECKED = contextvars.ContextVar("checked", default=False)
_DEFAULT_DTYPE = contextvars.ContextVar("default_dtype", default=np.dtype(np.float64))


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""

    pass


class NumericalError(ArithmeticError):
    """Raised when a non-finite value is produced in checked mode."""

    pass


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


@contextlib.contextmanager
def checked() -> Iterator[None]:
    """Verify that every op inside the block produces only finite values."""
    token = _CHECKED.set(True)
    try:
        yield
    finally:
        _CHECKED.reset(token)


@contextlib.contextmanager
def precision(dtype: str | np.dtype) -> Iterator[None]:
    """Select the dtype used for tensors built from Python scalars and lists.

    Args:
        dtype: ``"float32"`` or ``"float64"``.
    """
    token = _DEFAULT_DTYPE.set(np.dtype(dtype))
    try:
        yield
    finally:
        _DEFAULT_DTYPE.reset(token)


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE.get()


def grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


class Tensor:
    """A dense array of floats with optional gradient tracking."""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(default_dtype())
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._ctx: Function | None = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # arithmetic
    def __add__(self, other) -> Tensor:
        return Add.apply(self, _lift(other, self))

    def __radd__(self, other) -> Tensor:
        return Add.apply(_lift(other, self), self)

    def __sub__(self, other) -> Tensor:
        return Sub.apply(self, _lift(other, self))

    def __rsub__(self, other) -> Tensor:
        return Sub.apply(_lift(other, self), self)

    def __mul__(self, other) -> Tensor:
        return Mul.apply(self, _lift(other, self))

    def __rmul__(self, other) -> Tensor:
        return Mul.apply(_lift(other, self), self)

    def __truediv__(self, other) -> Tensor:
        return Div.apply(self, _lift(other, self))

    def __rtruediv__(self, other) -> Tensor:
        return Div.apply(_lift(other, self), self)

    def __neg__(self) -> Tensor:
        return Neg.apply(self)

    def __pow__(self, exponent: float) -> Tensor:
        return Pow.apply(self, exponent=float(exponent))

    def __matmul__(self, other) -> Tensor:
        return matmul(self, other)

    def __getitem__(self, index) -> Tensor:
        return GetItem.apply(self, index=index)

    # shape and reductions
    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        total = self.sum(axis=axis, keepdims=keepdims)
        count = self.data.size // max(total.data.size, 1)
        return total * (1.0 / count)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose.apply(self, axes=axes or None)

    def exp(self) -> Tensor:
        return Exp.apply(self)

    def log(self) -> Tensor:
        return Log.apply(self)

    def tanh(self) -> Tensor:
        return Tanh.apply(self)

    def sigmoid(self) -> Tensor:
        return Sigmoid.apply(self)

    def relu(self) -> Tensor:
        return ReLU.apply(self)

    def abs(self) -> Tensor:
        return Abs.apply(self)

    def sqrt(self) -> Tensor:
        return Sqrt.apply(self)

    def backward(self, grad: np.ndarray | None = None, retain_intermediate: bool = True) -> None:
        """Populate ``grad`` for every reachable tensor that requires it.

        Leaf gradients accumulate across calls until :meth:`zero_grad`;
        intermediate gradients are overwritten.

        Args:
            grad: Seed gradient. Defaults to 1 for a scalar loss.
            retain_intermediate: Store gradients on non-leaf tensors too.

        Raises:
            ShapeError: If no seed is given and the tensor is not a scalar.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}.")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return

        pending: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(_toposort(self)):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._ctx is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if retain_intermediate:
                node.grad = g
            for parent, pg in zip(node._ctx.parents, node._ctx.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pending[key] + pg if key in pending else pg


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node._ctx is not None:
            for parent in node._ctx.parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or default_dtype()), requires_grad=requires_grad)


class Function:
    """One recorded operation of the tape."""

    def __init__(self, *parents: Tensor):
        self.parents = parents

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        ctx = cls(*inputs)
        out = ctx.forward(*[t.data for t in inputs], **kwargs)
        requires = grad_enabled() and any(t.requires_grad for t in inputs)
        result = Tensor(out, requires_grad=requires)
        if requires:
            result._ctx = ctx
        if _CHECKED.get() and not np.all(np.isfinite(result.data)):
            raise NumericalError(f"{cls.__name__} produced a non-finite value.")
        return result

    def forward(self, *args, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        raise NotImplementedError


def _check_broadcast(op: str, sa: tuple[int, ...], sb: tuple[int, ...]) -> None:
    """Accept equal shapes, scalars, suffix broadcasts and one-sided keep-dims."""
    if sa == sb:
        return
    for small, big in ((sa, sb), (sb, sa)):
        if int(np.prod(small)) == 1 and len(small) <= len(big):
            return
    if len(sa) != len(sb):
        short, long = (sa, sb) if len(sa) < len(sb) else (sb, sa)
        if long[len(long) - len(short) :] == short:
            return
        raise ShapeError(f"{op}: cannot broadcast shapes {sa} and {sb}.")
    a_expands = any(x == 1 and y != 1 for x, y in zip(sa, sb))
    b_expands = any(y == 1 and x != 1 for x, y in zip(sa, sb))
    clash = any(x != y and x != 1 and y != 1 for x, y in zip(sa, sb))
    if clash or (a_expands and b_expands):
        raise ShapeError(f"{op}: cannot broadcast shapes {sa} and {sb}.")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class _Binary(Function):
    def forward(self, a, b):
        _check_broadcast(type(self).__name__, a.shape, b.shape)
        self.a, self.b = a, b
        return self.compute(a, b)

    def compute(self, a, b):
        raise NotImplementedError


class Add(_Binary):
    def compute(self, a, b):
        return a + b

    def backward(self, grad):
        return _unbroadcast(grad, self.a.shape), _unbroadcast(grad, self.b.shape)


class Sub(_Binary):
    def compute(self, a, b):
        return a - b

    def backward(self, grad):
        return _unbroadcast(grad, self.a.shape), _unbroadcast(-grad, self.b.shape)


class Mul(_Binary):
    def compute(self, a, b):
        return a * b

    def backward(self, grad):
        return (
            _unbroadcast(grad * self.b, self.a.shape),
            _unbroadcast(grad * self.a, self.b.shape),
        )


class Div(_Binary):
    def compute(self, a, b):
        return a / b

    def backward(self, grad):
        return (
            _unbroadcast(grad / self.b, self.a.shape),
            _unbroadcast(-grad * self.a / (self.b * self.b), self.b.shape),
        )


class Neg(Function):
    def forward(self, x):
        return -x

    def backward(self, grad):
        return (-grad,)


class Pow(Function):
    def forward(self, x, exponent):
        self.x, self.p = x, exponent
        return x**exponent

    def backward(self, grad):
        return (grad * self.p * self.x ** (self.p - 1),)


class Exp(Function):
    def forward(self, x):
        self.out = np.exp(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    def forward(self, x):
        self.x = x
        return np.log(x)

    def backward(self, grad):
        return (grad / self.x,)


class Tanh(Function):
    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad):
        return (grad * (1 - self.out * self.out),)


class Sigmoid(Function):
    def forward(self, x):
        self.out = expit(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1 - self.out),)


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype)

    def backward(self, grad):
        return (grad * self.mask,)


class Abs(Function):
    def forward(self, x):
        self.sign = np.sign(x)
        return np.abs(x)

    def backward(self, grad):
        return (grad * self.sign,)


class Sqrt(Function):
    def forward(self, x):
        self.out = np.sqrt(x)
        return self.out

    def backward(self, grad):
        return (grad / (2 * self.out),)


class ClampMin(Function):
    def forward(self, x, floor):
        self.mask = x > floor
        return np.where(self.mask, x, floor).astype(x.dtype)

    def backward(self, grad):
        return (grad * self.mask,)


class PReLU(Function):
    def forward(self, x, slope):
        self.x, self.slope_shape = x, slope.shape
        self.pos = x > 0
        self.slope = slope
        return np.where(self.pos, x, slope * x).astype(x.dtype)

    def backward(self, grad):
        dx = grad * np.where(self.pos, 1, self.slope)
        dslope = _unbroadcast(grad * np.where(self.pos, 0, self.x), self.slope_shape)
        return dx.astype(grad.dtype), dslope


class Sum(Function):
    def forward(self, x, axis, keepdims):
        self.shape, self.axis, self.keepdims = x.shape, axis, keepdims
        return np.sum(x, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape).copy(),)


class LogSumExp(Function):
    def forward(self, x, axis, keepdims):
        self.axis, self.keepdims = axis, keepdims
        m = np.max(x, axis=axis, keepdims=True)
        shifted = np.exp(x - m)
        total = shifted.sum(axis=axis, keepdims=True)
        self.weights = shifted / total
        out = m + np.log(total)
        return out if keepdims else np.squeeze(out, axis=axis)

    def backward(self, grad):
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (grad * self.weights,)


class Softmax(Function):
    def forward(self, x, axis):
        self.axis = axis
        shifted = np.exp(x - np.max(x, axis=axis, keepdims=True))
        self.out = shifted / shifted.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        inner = np.sum(grad * self.out, axis=self.axis, keepdims=True)
        return (self.out * (grad - inner),)


class LayerNorm(Function):
    def forward(self, x, gain, bias, axis, eps):
        if gain.shape != (x.shape[axis],) or bias.shape != (x.shape[axis],):
            raise ShapeError(
                f"layer_norm: gain {gain.shape} and bias {bias.shape} must match "
                f"axis {axis} of {x.shape}."
            )
        self.axis = axis % x.ndim
        view = [1] * x.ndim
        view[self.axis] = x.shape[self.axis]
        self.gain = gain.reshape(view)
        mu = x.mean(axis=self.axis, keepdims=True)
        var = x.var(axis=self.axis, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.xhat = (x - mu) * self.inv_std
        return self.xhat * self.gain + bias.reshape(view)

    def backward(self, grad):
        n = self.xhat.shape[self.axis]
        others = tuple(i for i in range(grad.ndim) if i != self.axis)
        dgain = np.sum(grad * self.xhat, axis=others)
        dbias = np.sum(grad, axis=others)
        dxhat = grad * self.gain
        dx = (
            self.inv_std
            / n
            * (
                n * dxhat
                - dxhat.sum(axis=self.axis, keepdims=True)
                - self.xhat * np.sum(dxhat * self.xhat, axis=self.axis, keepdims=True)
            )
        )
        return dx, dgain, dbias


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}.")
        _check_broadcast("matmul", a.shape[:-2], b.shape[:-2])
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        ga = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        gb = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return _unbroadcast(ga, self.a.shape), _unbroadcast(gb, self.b.shape)


class Reshape(Function):
    def forward(self, x, shape):
        self.shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    def forward(self, x, axes):
        self.axes = axes if axes is not None else tuple(reversed(range(x.ndim)))
        return np.transpose(x, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class GetItem(Function):
    def forward(self, x, index):
        self.shape, self.dtype, self.index = x.shape, x.dtype, index
        return np.array(x[index])

    def backward(self, grad):
        out = np.zeros(self.shape, dtype=self.dtype)
        np.add.at(out, self.index, grad)
        return (out,)


class Concat(Function):
    def forward(self, *xs, axis):
        self.axis = axis
        self.bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
        return np.concatenate(xs, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.bounds, axis=self.axis))


class Stack(Function):
    def forward(self, *xs, axis):
        self.axis = axis
        return np.stack(xs, axis=axis)

    def backward(self, grad):
        n = grad.shape[self.axis]
        return tuple(np.take(grad, i, axis=self.axis) for i in range(n))


class Pad(Function):
    def forward(self, x, widths):
        self.slices = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, x.shape))
        return np.pad(x, widths)

    def backward(self, grad):
        return (grad[self.slices],)


class Frame(Function):
    """Cut the last axis into windows of ``size`` taken every ``step`` samples."""

    def forward(self, x, size, step):
        n = x.shape[-1]
        if n < size:
            raise ShapeError(f"frame: length {n} is shorter than window {size}.")
        self.length, self.size, self.step = n, size, step
        self.count = (n - size) // step + 1
        view = np.lib.stride_tricks.sliding_window_view(x, size, axis=-1)
        return np.ascontiguousarray(view[..., :: step, :][..., : self.count, :])

    def backward(self, grad):
        return (_overlap_add(grad, self.step, self.length),)


class OverlapAdd(Function):
    """Inverse of :class:`Frame`: sum windows back onto a sample axis."""

    def forward(self, x, step):
        self.size, self.step = x.shape[-1], step
        self.length = (x.shape[-2] - 1) * step + x.shape[-1]
        return _overlap_add(x, step, self.length)

    def backward(self, grad):
        view = np.lib.stride_tricks.sliding_window_view(grad, self.size, axis=-1)
        return (np.ascontiguousarray(view[..., :: self.step, :]),)


def _overlap_add(frames: np.ndarray, step: int, length: int) -> np.ndarray:
    count, size = frames.shape[-2], frames.shape[-1]
    out = np.zeros(frames.shape[:-2] + (length,), dtype=frames.dtype)
    stop = step * (count - 1) + 1
    for k in range(size):
        out[..., k : k + stop : step] += frames[..., :, k]
    return out


class LSTM(Function):
    """Single-direction LSTM over axis 1 of a (batch, time, features) input.

    Gate order in the packed 4H axis is input, forget, cell, output.
    """

    def forward(self, x, w_ih, w_hh, bias, reverse):
        batch, steps, _ = x.shape
        hidden = w_hh.shape[0]
        self.x, self.w_ih, self.w_hh = x, w_ih, w_hh
        self.order = list(range(steps - 1, -1, -1)) if reverse else list(range(steps))
        xw = x @ w_ih + bias
        h = np.zeros((batch, hidden), dtype=x.dtype)
        c = np.zeros((batch, hidden), dtype=x.dtype)
        self.gates = np.empty(xw.shape, dtype=x.dtype)
        self.cells = np.empty((batch, steps, hidden), dtype=x.dtype)
        self.hiddens = np.empty((batch, steps, hidden), dtype=x.dtype)
        for t in self.order:
            a = xw[:, t] + h @ w_hh
            i = expit(a[:, :hidden])
            f = expit(a[:, hidden : 2 * hidden])
            g = np.tanh(a[:, 2 * hidden : 3 * hidden])
            o = expit(a[:, 3 * hidden :])
            c = f * c + i * g
            h = o * np.tanh(c)
            self.gates[:, t] = np.concatenate([i, f, g, o], axis=1)
            self.cells[:, t] = c
            self.hiddens[:, t] = h
        return self.hiddens.copy()

    def backward(self, grad):
        hidden = self.w_hh.shape[0]
        batch = grad.shape[0]
        zeros = np.zeros((batch, hidden), dtype=grad.dtype)
        dh_next, dc_next = zeros, zeros
        dxw = np.empty(self.gates.shape, dtype=grad.dtype)
        dw_hh = np.zeros_like(self.w_hh)
        for pos in range(len(self.order) - 1, -1, -1):
            t = self.order[pos]
            prev = self.order[pos - 1] if pos > 0 else None
            gates = self.gates[:, t]
            i = gates[:, :hidden]
            f = gates[:, hidden : 2 * hidden]
            g = gates[:, 2 * hidden : 3 * hidden]
            o = gates[:, 3 * hidden :]
            c_prev = self.cells[:, prev] if prev is not None else zeros
            h_prev = self.hiddens[:, prev] if prev is not None else zeros
            tc = np.tanh(self.cells[:, t])
            dh = grad[:, t] + dh_next
            dc = dc_next + dh * o * (1 - tc * tc)
            da = np.concatenate(
                [
                    dc * g * i * (1 - i),
                    dc * c_prev * f * (1 - f),
                    dc * i * (1 - g * g),
                    dh * tc * o * (1 - o),
                ],
                axis=1,
            )
            dxw[:, t] = da
            dw_hh += h_prev.T @ da
            dh_next = da @ self.w_hh.T
            dc_next = dc * f
        dx = dxw @ self.w_ih.T
        flat_x = self.x.reshape(-1, self.x.shape[-1])
        flat_d = dxw.reshape(-1, dxw.shape[-1])
        return dx, flat_x.T @ flat_d, dw_hh, flat_d.sum(axis=0)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes with broadcast leading axes.

    Raises:
        ShapeError: If the inner dimensions disagree; the message names both shapes.
    """
    return MatMul.apply(a, b)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtracted) along ``axis``."""
    return Softmax.apply(x, axis=axis)


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    return LogSumExp.apply(x, axis=axis, keepdims=keepdims)


def layer_norm(x: Tensor, axis: int, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each slice along ``axis`` to zero mean and unit variance, then scale/shift."""
    return LayerNorm.apply(x, gain, bias, axis=axis, eps=eps)


def lstm(x: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor, reverse: bool = False) -> Tensor:
    return LSTM.apply(x, w_ih, w_hh, bias, reverse=reverse)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    return PReLU.apply(x, slope)


def clamp_min(x: Tensor, floor: float) -> Tensor:
    return ClampMin.apply(x, floor=floor)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*xs, axis=axis)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Stack.apply(*xs, axis=axis)


def pad(x: Tensor, widths: Sequence[tuple[int, int]]) -> Tensor:
    return Pad.apply(x, widths=tuple(tuple(w) for w in widths))


def frame(x: Tensor, size: int, step: int) -> Tensor:
    """Windows of ``size`` samples every ``step`` samples along the last axis."""
    return Frame.apply(x, size=size, step=step)


def overlap_add(x: Tensor, step: int) -> Tensor:
    """Sum (..., frames, size) windows spaced ``step`` apart onto one axis."""
    return OverlapAdd.apply(x, step=step)
