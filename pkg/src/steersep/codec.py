"""Learned analysis/synthesis filterbanks and the source mask head."""

import numpy as np

from .nn import Linear, Module, Parameter, PReLU, record_activation
from .tensor import ShapeError, Tensor, default_dtype, frame, overlap_add, pad, relu


def num_frames(length: int, window: int) -> int:
    """I = floor((L - W) / (W/2)) + 1."""
    return (length - window) // (window // 2) + 1


class Encoder(Module):
    """Strided 1-D convolution (kernel W, stride W/2, no bias) followed by ReLU."""

    def __init__(self, window: int, features: int, rng: np.random.Generator, dtype=None):
        dtype = dtype or default_dtype()
        bound = 1.0 / np.sqrt(window)
        self.weight = Parameter(rng.uniform(-bound, bound, (window, features)).astype(dtype))
        self.window, self.features = window, features

    def forward(self, waveform: Tensor) -> Tensor:
        """Map a 1-D waveform of length L to a D x I feature map.

        Raises:
            ShapeError: If the waveform is shorter than the window.
        """
        if waveform.ndim != 1:
            raise ShapeError(f"Encoder expects a 1-D waveform, got shape {waveform.shape}.")
        if waveform.shape[0] < self.window:
            raise ShapeError(
                f"Mixture of {waveform.shape[0]} samples is shorter than window {self.window}."
            )
        frames = frame(waveform, self.window, self.window // 2)
        out = relu(frames @ self.weight).transpose(1, 0)
        record_activation("encoder", out.shape, out.dtype.itemsize)
        return out


class MaskHead(Module):
    """PReLU then a 1x1 map D -> C*D, split into C mask logits of D x I."""

    def __init__(self, features: int, num_sources: int, rng: np.random.Generator, dtype=None):
        self.act = PReLU(dtype=dtype)
        self.proj = Linear(features, num_sources * features, rng, dtype=dtype)
        self.features, self.num_sources = features, num_sources

    def forward(self, x: Tensor) -> list[Tensor]:
        d, length = x.shape
        y = self.proj(self.act(x).transpose(1, 0))
        y = y.reshape(length, self.num_sources, d).transpose(1, 2, 0)
        return [y[j] for j in range(self.num_sources)]


class Decoder(Module):
    """Transposed 1-D convolution (kernel W, stride W/2) of masked mixture features."""

    def __init__(self, window: int, features: int, rng: np.random.Generator, dtype=None):
        dtype = dtype or default_dtype()
        bound = 1.0 / np.sqrt(features)
        self.weight = Parameter(rng.uniform(-bound, bound, (features, window)).astype(dtype))
        self.window, self.features = window, features

    def synthesize(self, masked: Tensor, length: int) -> Tensor:
        frames = masked.transpose(1, 0) @ self.weight
        wave = overlap_add(frames, self.window // 2)
        n = wave.shape[0]
        if n < length:
            return pad(wave, [(0, length - n)])
        return wave[:length]

    def forward(self, features: Tensor, mixture_features: Tensor, length: int) -> Tensor:
        """Apply mask = ReLU(features) to the mixture features and synthesize ``length`` samples.

        Raises:
            ShapeError: If the mask and mixture features differ in shape.
        """
        if features.shape != mixture_features.shape:
            raise ShapeError(
                f"Mask shape {features.shape} does not match mixture features "
                f"{mixture_features.shape}."
            )
        masked = relu(features) * mixture_features
        record_activation("decoder", masked.shape, masked.dtype.itemsize)
        return self.synthesize(masked, length)
