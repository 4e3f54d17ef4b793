"""Bridges between the speaker-knowledge and speech-stimuli spaces.

Cross attention pulls a steering vector per source out of the speaker
features; dual attention (or one of the FiLM variants) pushes it back into
every global layer of the stimuli space.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .models import SteeringKind, SteeringReg
from .nn import LayerNorm, Linear, Module, PReLU
from .output import write_csv
from .tensor import ShapeError, Tensor, matmul, softmax

NOISE_VARIANCE = 0.1
DROPOUT_RATE = 0.1


@dataclass
class SteeringVector:
    """Z_j for source j; ``clean`` keeps the value before any regularizer."""

    z: Tensor
    source_index: int
    clean: Tensor | None = None

    @property
    def features(self) -> int:
        return self.z.shape[0]


class QKVProjections(Module):
    def __init__(self, features: int, rng: np.random.Generator, dtype=None):
        self.query = Linear(features, features, rng, dtype=dtype)
        self.key = Linear(features, features, rng, dtype=dtype)
        self.value = Linear(features, features, rng, dtype=dtype)
        self.features = features


def cross_attention(
    generic: Tensor, speaker_feats: Sequence[Tensor], proj: QKVProjections
) -> tuple[list[SteeringVector], list[np.ndarray]]:
    """Retrieve one steering vector per source from its speaker features.

    The query is the generic-space output averaged over K; the softmax runs
    over the S_j speaker segments and Z_j = (1/S) sum_S sum_Sj a * Value(Y_j).

    Args:
        generic: D x S x K output of the generic space.
        speaker_feats: C tensors of D x S_j.
        proj: Query/Key/Value maps of this site.

    Returns:
        Steering vectors and the S x S_j attention matrices.

    Raises:
        ShapeError: If a speaker feature has no segments or the wrong D.
    """
    summary = generic.mean(axis=2).transpose(1, 0)  # S x D
    queries = proj.query(summary)
    segments = summary.shape[0]
    vectors, weights = [], []
    for j, feats in enumerate(speaker_feats):
        if feats.ndim != 2 or feats.shape[1] == 0:
            raise ShapeError(
                f"Speaker feature {j} has shape {feats.shape}; need D x S_j with S_j > 0."
            )
        if feats.shape[0] != proj.features:
            raise ShapeError(
                f"Speaker feature {j} has D={feats.shape[0]}, expected {proj.features}."
            )
        keys_in = feats.transpose(1, 0)
        a = softmax(matmul(queries, proj.key(keys_in).transpose(1, 0)), axis=-1)
        z = matmul(a, proj.value(keys_in)).sum(axis=0) * (1.0 / segments)
        vectors.append(SteeringVector(z=z, source_index=j, clean=z))
        weights.append(a.data)
    return vectors, weights


def regularize_steering(
    vector: SteeringVector,
    mode: SteeringReg,
    training: bool,
    rng: np.random.Generator | None = None,
) -> SteeringVector:
    """Embedding noise N(0, 0.1) or Dropout(0.1) on Z_j during training only."""
    if not training or mode == SteeringReg.NONE:
        return vector
    rng = rng or np.random.default_rng()
    z = vector.z
    if mode == SteeringReg.NOISE:
        noise = rng.normal(0.0, np.sqrt(NOISE_VARIANCE), size=z.shape).astype(z.dtype)
        out = z + Tensor(noise)
    else:
        keep = (rng.random(z.shape) >= DROPOUT_RATE) / (1.0 - DROPOUT_RATE)
        out = z * Tensor(keep.astype(z.dtype))
    clean = vector.clean if vector.clean is not None else vector.z
    return SteeringVector(z=out, source_index=vector.source_index, clean=clean)


class SteeringSite(Module):
    """Learned r(.) and h(.) maps of one steered layer.

    ``r`` starts with a unit bias so a fresh site is close to the identity
    modulation.
    """

    def __init__(
        self,
        features: int,
        kind: SteeringKind,
        rng: np.random.Generator,
        layernorm: bool = True,
        dtype=None,
    ):
        self.r = Linear(features, features, rng, dtype=dtype)
        self.r.bias.data = np.ones_like(self.r.bias.data)
        self.h = Linear(features, features, rng, dtype=dtype)
        self.kind = kind
        self.norm = (
            LayerNorm(features, dtype=dtype)
            if kind == SteeringKind.DUAL_ATTN and layernorm
            else None
        )
        self.act = PReLU(dtype=dtype) if kind != SteeringKind.DUAL_ATTN else None
        self.features = features

    def scale_shift(self, vector: SteeringVector) -> tuple[Tensor, Tensor]:
        if vector.z.shape != (self.features,):
            raise ShapeError(
                f"Steering vector has shape {vector.z.shape}, expected ({self.features},)."
            )
        return self.r(vector.z), self.h(vector.z)


def dual_attention(g: Tensor, vector: SteeringVector, site: SteeringSite, attn) -> Tensor:
    """Self-attention whose keys and values come from A = LN(r(Z) * G + h(Z)).

    Args:
        g: Q x S x D output of the pooling/normalization stage.
        vector: Steering vector of this source.
        site: r/h maps (and the optional LayerNorm) of this layer.
        attn: The layer's multi-head attention; its projections are reused.

    Returns:
        Q x S x D attended features.
    """
    scale, shift = site.scale_shift(vector)
    modulated = scale * g + shift
    if site.norm is not None:
        modulated = site.norm(modulated)
    return attn(g, modulated)


def film_inside_ga(g: Tensor, vector: SteeringVector, site: SteeringSite, attn) -> Tensor:
    """Keys and values from F = PReLU(r(Z) * G + h(Z)); queries from G."""
    scale, shift = site.scale_shift(vector)
    return attn(g, site.act(scale * g + shift))


def film_between_cells(x: Tensor, vector: SteeringVector, site: SteeringSite) -> Tensor:
    """PReLU(r(Z) * X + h(Z)) on a D x S x K block output."""
    scale, shift = site.scale_shift(vector)
    d = site.features
    return site.act(scale.reshape(d, 1, 1) * x + shift.reshape(d, 1, 1))


def averaged_cross_attention(weights: np.ndarray) -> np.ndarray:
    """Average an S x S_j cross-attention matrix over S."""
    return np.asarray(weights).mean(axis=0)


def export_cross_attention(
    weights: Sequence[np.ndarray], path: Path, time_axis: Sequence[float]
) -> None:
    """One row per speaker segment: its time and each source's averaged weight."""
    curves = [averaged_cross_attention(w) for w in weights]
    if any(len(c) != len(time_axis) for c in curves):
        lengths = [len(c) for c in curves]
        raise ShapeError(f"Time axis of {len(time_axis)} does not match curve lengths {lengths}.")
    fields = ["time"] + [f"source_{j}" for j in range(len(curves))]
    rows = [
        {"time": f"{t:.6f}", **{f"source_{j}": f"{c[i]:.8f}" for j, c in enumerate(curves)}}
        for i, t in enumerate(time_axis)
    ]
    write_csv(path, fields, rows)


def export_dual_attention(weights: Sequence[np.ndarray], path: Path) -> None:
    """Heat map rows (source, query_segment, key_segment, weight).

    Each entry of ``weights`` is a (Q, heads, S, S) tensor from one steered
    layer for one source; Q slots and heads are averaged.
    """
    rows = []
    for j, w in enumerate(weights):
        heat = np.asarray(w).reshape(-1, w.shape[-2], w.shape[-1]).mean(axis=0)
        for q, k in np.ndindex(heat.shape):
            rows.append({"source": j, "query_segment": q, "key_segment": k,
                         "weight": f"{heat[q, k]:.8f}"})
    write_csv(path, ["source", "query_segment", "key_segment", "weight"], rows)
