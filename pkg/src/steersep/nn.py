"""Parameters, module trees and the basic layers every block is built from."""

from __future__ import annotations

import contextlib
import contextvars
import copy
from collections.abc import Iterator
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor, concat, default_dtype, layer_norm, lstm, matmul, prelu

_TRACE: contextvars.ContextVar[ActivationTrace | None] = contextvars.ContextVar(
    "activation_trace", default=None
)


class Parameter(Tensor):
    """A trainable tensor. Its name is the dotted attribute path inside the model."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = ""


@dataclass
class ActivationTrace:
    """Shapes of the activations retained by a forward pass, in call order."""

    records: list[tuple[str, tuple[int, ...], int]] = field(default_factory=list)

    @property
    def total_bytes(self) -> int:
        return sum(int(np.prod(shape)) * itemsize for _, shape, itemsize in self.records)


@contextlib.contextmanager
def trace_activations() -> Iterator[ActivationTrace]:
    trace = ActivationTrace()
    token = _TRACE.set(trace)
    try:
        yield trace
    finally:
        _TRACE.reset(token)


def record_activation(label: str, shape: tuple[int, ...], itemsize: int = 4) -> None:
    trace = _TRACE.get()
    if trace is not None:
        trace.records.append((label, tuple(int(n) for n in shape), itemsize))


class Module:
    """Base class: parameters and child modules are discovered from attributes."""

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            path = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{path}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self) -> None:
        """Write each parameter's path into ``Parameter.name``."""
        for name, param in self.named_parameters():
            param.name = name

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise KeyError(f"State mismatch; missing={missing}, unexpected={unexpected}.")
        for name, value in state.items():
            if name not in own:
                continue
            param = own[name]
            if param.shape != tuple(value.shape):
                raise ShapeError(f"{name}: expected shape {param.shape}, got {value.shape}.")
            param.data = np.array(value, dtype=param.dtype)

    def astype(self, dtype) -> Module:
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def replicate(self) -> Module:
        """A structural copy whose parameters share storage but own their gradients."""
        clone = copy.deepcopy(self)
        source = dict(self.named_parameters())
        for name, param in clone.named_parameters():
            param.data = source[name].data
            param.grad = None
        return clone


def _uniform(rng: np.random.Generator, bound: float, shape, dtype) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    """y = x W + b over the last axis."""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        bias: bool = True,
        dtype=None,
    ):
        dtype = dtype or default_dtype()
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Parameter(_uniform(rng, bound, (in_features, out_features), dtype))
        self.bias = Parameter(_uniform(rng, bound, (out_features,), dtype)) if bias else None
        self.in_features, self.out_features = in_features, out_features

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(
                f"Linear expects last axis {self.in_features}, got input shape {x.shape}."
            )
        if x.ndim == 1:
            y = matmul(x.reshape(1, -1), self.weight).reshape(self.out_features)
        else:
            y = matmul(x, self.weight)
        if self.bias is not None:
            y = y + self.bias
        record_activation("linear", y.shape, y.dtype.itemsize)
        return y


class LayerNorm(Module):
    def __init__(self, features: int, axis: int = -1, eps: float = 1e-5, dtype=None):
        dtype = dtype or default_dtype()
        self.gain = Parameter(np.ones(features, dtype=dtype))
        self.bias = Parameter(np.zeros(features, dtype=dtype))
        self.axis, self.eps = axis, eps

    def forward(self, x: Tensor) -> Tensor:
        y = layer_norm(x, self.axis, self.gain, self.bias, self.eps)
        record_activation("layer_norm", y.shape, y.dtype.itemsize)
        return y


class PReLU(Module):
    def __init__(self, init: float = 0.25, dtype=None):
        self.slope = Parameter(np.full(1, init, dtype=dtype or default_dtype()))

    def forward(self, x: Tensor) -> Tensor:
        return prelu(x, self.slope)


class LSTMDirection(Module):
    def __init__(self, input_size: int, hidden: int, rng: np.random.Generator, dtype=None):
        dtype = dtype or default_dtype()
        bound = 1.0 / np.sqrt(hidden)
        self.w_ih = Parameter(_uniform(rng, bound, (input_size, 4 * hidden), dtype))
        self.w_hh = Parameter(_uniform(rng, bound, (hidden, 4 * hidden), dtype))
        self.bias = Parameter(_uniform(rng, bound, (4 * hidden,), dtype))
        self.hidden = hidden


class BiLSTM(Module):
    """Bidirectional LSTM over axis 1 of a (batch, time, features) tensor.

    The output concatenates the forward and backward hidden states: (batch, time, 2H).
    """

    def __init__(self, input_size: int, hidden: int, rng: np.random.Generator, dtype=None):
        self.forward_dir = LSTMDirection(input_size, hidden, rng, dtype)
        self.backward_dir = LSTMDirection(input_size, hidden, rng, dtype)
        self.input_size, self.hidden = input_size, hidden

    def forward(self, x: Tensor) -> Tensor:
        return bilstm(x, self.forward_dir, self.backward_dir)


def bilstm(x: Tensor, forward_dir: LSTMDirection, backward_dir: LSTMDirection) -> Tensor:
    """Run both LSTM directions over ``x`` (T x D_in, or batch x T x D_in).

    Raises:
        ShapeError: On an empty sequence or a feature-size mismatch.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    if x.shape[1] == 0:
        raise ShapeError("bilstm: empty sequence (T == 0).")
    if x.shape[2] != forward_dir.w_ih.shape[0]:
        raise ShapeError(
            f"bilstm: expected {forward_dir.w_ih.shape[0]} input features, got {x.shape}."
        )
    fw = lstm(x, forward_dir.w_ih, forward_dir.w_hh, forward_dir.bias)
    bw = lstm(x, backward_dir.w_ih, backward_dir.w_hh, backward_dir.bias, reverse=True)
    batch, steps = x.shape[0], x.shape[1]
    hidden = forward_dir.hidden
    for _ in range(2):
        record_activation("lstm", (batch, steps, 6 * hidden), x.dtype.itemsize)
    out = concat([fw, bw], axis=-1)
    return out.reshape(steps, 2 * hidden) if squeeze else out
