"""Globally attentive, locally recurrent (GALR) blocks.

A block maps a D x S x K segment tensor to one of the same shape: a
recurrent (or attentive) layer runs inside each K-long segment, then a
pooled attention layer runs across the S segments for each of Q slots.
"""

from __future__ import annotations

import numpy as np

from .attention import (
    SteeringSite,
    SteeringVector,
    dual_attention,
    film_between_cells,
    film_inside_ga,
)
from .config import ModelConfig
from .models import GlobalKind, LocalKind, SteeringKind
from .nn import BiLSTM, LayerNorm, Linear, Module, record_activation
from .tensor import ShapeError, Tensor, matmul, softmax


def positional_embedding(segments: int, features: int, dtype=np.float64) -> np.ndarray:
    """Sinusoidal S x D table; shared across the Q pooled slots."""
    pos = np.arange(segments)[:, None]
    rates = 1.0 / (10000 ** (np.arange(0, features, 2) / features))
    table = np.zeros((segments, features))
    table[:, 0::2] = np.sin(pos * rates)
    table[:, 1::2] = np.cos(pos * rates[: features // 2])
    return table.astype(dtype)


class MultiHeadAttention(Module):
    """Scaled dot-product attention with learned query/key/value/output maps.

    Inputs are (batch, time, D). The key/value input may differ from the query
    input, which is how the steered variants reuse these projections.
    """

    def __init__(self, features: int, heads: int, rng: np.random.Generator, dtype=None):
        if features % heads:
            raise ShapeError(f"features {features} not divisible by heads {heads}.")
        self.query = Linear(features, features, rng, dtype=dtype)
        self.key = Linear(features, features, rng, dtype=dtype)
        self.value = Linear(features, features, rng, dtype=dtype)
        self.output = Linear(features, features, rng, dtype=dtype)
        self.features, self.heads = features, heads
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        batch, steps, _ = x.shape
        head = self.features // self.heads
        return x.reshape(batch, steps, self.heads, head).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor, memory: Tensor | None = None) -> Tensor:
        memory = x if memory is None else memory
        if memory.shape[-1] != self.features:
            raise ShapeError(
                f"Attention memory has {memory.shape[-1]} features, expected {self.features}."
            )
        q = self._split(self.query(x))
        k = self._split(self.key(memory))
        v = self._split(self.value(memory))
        scale = 1.0 / np.sqrt(self.features // self.heads)
        weights = softmax(matmul(q, k.transpose(0, 1, 3, 2)) * scale, axis=-1)
        record_activation("attention", weights.shape, weights.dtype.itemsize)
        self.last_weights = weights.data
        batch, steps, _ = x.shape
        mixed = matmul(weights, v).transpose(0, 2, 1, 3).reshape(batch, steps, self.features)
        return self.output(mixed)


class LocallyRecurrent(Module):
    """L = LN(Lin(BiLSTM(X[:, s, :]))) + X[:, s, :] for every segment s."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator, dtype=None):
        self.kind = config.local_kind
        if self.kind == LocalKind.RNN:
            self.rnn = BiLSTM(config.features, config.hidden, rng, dtype)
            self.proj = Linear(2 * config.hidden, config.features, rng, dtype=dtype)
        else:
            self.attn = MultiHeadAttention(config.features, config.heads, rng, dtype)
        self.norm = LayerNorm(config.features, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        seq = x.transpose(1, 2, 0)  # S x K x D
        if self.kind == LocalKind.RNN:
            y = self.proj(self.rnn(seq))
        else:
            y = self.attn(seq)
        return self.norm(y).transpose(2, 0, 1) + x


class InterSegmentRecurrent(Module):
    """Dual-path RNN global layer: BiLSTM across S for each of the K positions."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator, dtype=None):
        self.rnn = BiLSTM(config.features, config.hidden, rng, dtype)
        self.proj = Linear(2 * config.hidden, config.features, rng, dtype=dtype)
        self.norm = LayerNorm(config.features, dtype=dtype)

    def forward(self, x: Tensor, steering=None, site=None) -> Tensor:
        seq = x.transpose(2, 1, 0)  # K x S x D
        return self.norm(self.proj(self.rnn(seq))).transpose(2, 1, 0) + x


class GloballyAttentive(Module):
    """Pool K -> Q, normalize over D, add P, attend across S, unpool Q -> K.

    Attention runs once per pooled slot, so the number of attention calls
    drops from K to Q.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator, dtype=None):
        self.pool = Linear(config.segment, config.pooled, rng, dtype=dtype)
        self.norm = LayerNorm(config.features, dtype=dtype)
        self.attn = MultiHeadAttention(config.features, config.heads, rng, dtype)
        self.unpool = Linear(config.pooled, config.segment, rng, dtype=dtype)
        self.positional = config.positional
        self.residual = config.ga_residual
        self.features = config.features

    @property
    def attention_invocation_ratio(self) -> float:
        return self.pool.out_features / self.pool.in_features

    def embed(self, x: Tensor) -> Tensor:
        """G = LN_D(pool(L)) + P, laid out as Q x S x D."""
        pooled = self.pool(x).transpose(2, 1, 0)
        g = self.norm(pooled)
        if self.positional:
            g = g + Tensor(positional_embedding(g.shape[1], self.features, g.dtype))
        return g

    def forward(
        self, x: Tensor, steering: SteeringVector | None = None, site: SteeringSite | None = None
    ) -> Tensor:
        g = self.embed(x)
        if steering is None or site is None:
            attended = self.attn(g)
        elif site.kind == SteeringKind.FILM_INSIDE:
            attended = film_inside_ga(g, steering, site, self.attn)
        else:
            attended = dual_attention(g, steering, site, self.attn)
        y = self.unpool(attended.transpose(2, 1, 0))
        return y + x if self.residual else y


class GALRBlock(Module):
    """One locally recurrent layer followed by one global layer.

    Stimuli-space blocks carry a steering site; FiLM-between sites modulate
    the block output instead of the attention memory.
    """

    def __init__(
        self, config: ModelConfig, rng: np.random.Generator, steered: bool = False, dtype=None
    ):
        self.local = LocallyRecurrent(config, rng, dtype)
        if config.global_kind == GlobalKind.SELF_ATTN:
            self.globl = GloballyAttentive(config, rng, dtype)
        else:
            self.globl = InterSegmentRecurrent(config, rng, dtype)
        self.site = (
            SteeringSite(config.features, config.steering_kind, rng, config.dual_layernorm, dtype)
            if steered
            else None
        )

    def forward(self, x: Tensor, steering: SteeringVector | None = None) -> Tensor:
        if x.ndim != 3:
            raise ShapeError(f"GALR block expects D x S x K input, got {x.shape}.")
        y = self.local(x)
        between = self.site is not None and self.site.kind == SteeringKind.FILM_BETWEEN
        if steering is not None and between:
            return film_between_cells(self.globl(y), steering, self.site)
        return self.globl(y, steering, self.site)


class BlockStack(Module):
    def __init__(
        self,
        config: ModelConfig,
        count: int,
        rng: np.random.Generator,
        steered: bool = False,
        dtype=None,
    ):
        self.blocks = [GALRBlock(config, rng, steered, dtype) for _ in range(count)]

    def __len__(self) -> int:
        return len(self.blocks)

    def forward(self, x: Tensor, steering: SteeringVector | None = None) -> Tensor:
        for block in self.blocks:
            x = block(x, steering)
        return x
