"""Speaker-knowledge space: embedder head, EMA speaker table and its losses.

The speaker table holds one centroid row per training speaker. In the
self-supervised setting the rows move only by exponential moving average
(plus the anti-collapse regularizer); with ``token_id`` they are ordinary
learned embeddings.
"""

from __future__ import annotations

import csv
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp as np_logsumexp
from scipy.stats import multivariate_normal
from sklearn.metrics import auc, roc_curve

from .nn import Linear, Module, Parameter
from .output import write_csv
from .tensor import ShapeError, Tensor, clamp_min, default_dtype, logsumexp, no_grad, stack

DISTANCE_FLOOR = 1e-8


class MetricError(ValueError):
    """Raised when a verification metric is undefined for the given trials."""

    pass


class SpeakerTable(Module):
    """N x D centroid matrix E with a learnable kernel width alpha = exp(alpha_raw)."""

    def __init__(
        self,
        num_speakers: int,
        features: int,
        rng: np.random.Generator,
        epsilon: float = 0.05,
        dtype=None,
    ):
        dtype = dtype or default_dtype()
        init = rng.normal(0.0, np.sqrt(1.0 / features), (num_speakers, features))
        self.E = Parameter(init.astype(dtype))
        self.alpha_raw = Parameter(np.zeros(1, dtype=dtype))
        self.epsilon = epsilon

    @property
    def num_speakers(self) -> int:
        return self.E.shape[0]

    @property
    def alpha(self) -> Tensor:
        return self.alpha_raw.exp()

    def check_ids(self, speaker_ids: Sequence[int]) -> None:
        for i in speaker_ids:
            if not 0 <= int(i) < self.num_speakers:
                raise IndexError(f"Speaker id {i} outside table of {self.num_speakers} rows.")


class Embedder(Module):
    """Project D -> C*D, average over K and split into C speaker features D x S_j."""

    def __init__(self, features: int, num_sources: int, rng: np.random.Generator, dtype=None):
        self.proj = Linear(features, num_sources * features, rng, dtype=dtype)
        self.features, self.num_sources = features, num_sources

    def forward(self, x: Tensor) -> list[Tensor]:
        if x.ndim != 3 or x.shape[0] != self.features:
            raise ShapeError(f"Embedder expects {self.features} x S_j x K input, got {x.shape}.")
        segments = x.shape[1]
        y = self.proj(x.transpose(1, 2, 0)).mean(axis=1)  # S_j x C*D
        y = y.reshape(segments, self.num_sources, self.features).transpose(1, 2, 0)
        return [y[j] for j in range(self.num_sources)]


def squared_distances(z: Sequence[Tensor], table: Tensor) -> Tensor:
    """C x N matrix of ||Z_j - E_i||^2."""
    rows = []
    for zj in z:
        diff = table - zj
        rows.append((diff * diff).sum(axis=1))
    return stack(rows, axis=0)


def speaker_logits(z: Sequence[Tensor], table: SpeakerTable, learn_rows: bool) -> Tensor:
    """-alpha ||Z_j - E_i||^2; rows are detached unless ``learn_rows``."""
    if table.num_speakers < 1:
        raise ShapeError("Speaker table has no rows.")
    rows = table.E if learn_rows else table.E.detach()
    return squared_distances(z, rows) * (-table.alpha)


def _contrastive(logits: Tensor, speaker_ids: Sequence[int]) -> Tensor:
    picked = logits[np.arange(len(speaker_ids)), np.asarray(speaker_ids)]
    return (logsumexp(logits, axis=1) - picked).mean()


def tune_ince_loss(z: Sequence[Tensor], speaker_ids: Sequence[int], table: SpeakerTable) -> Tensor:
    """-(1/C) sum_j log softmax_i(-alpha ||Z_j - E_i||^2)[i_j], log-sum-exp stabilized.

    Raises:
        ShapeError: If the table is empty.
        IndexError: If a speaker id is outside the table.
    """
    table.check_ids(speaker_ids)
    return _contrastive(speaker_logits(z, table, learn_rows=False), speaker_ids)


def token_embedding_baseline(
    z: Sequence[Tensor], speaker_ids: Sequence[int], table: SpeakerTable
) -> Tensor:
    """Cross-entropy over the same logits with gradient-learned rows (token-id baseline)."""
    table.check_ids(speaker_ids)
    return _contrastive(speaker_logits(z, table, learn_rows=True), speaker_ids)


def ema_update(table: SpeakerTable, z: np.ndarray, speaker_id: int) -> None:
    """E[i] <- E[i] + epsilon (Z - E[i]); every other row is left untouched."""
    table.check_ids([speaker_id])
    z = np.asarray(z, dtype=table.E.dtype)
    if z.shape != (table.E.shape[1],):
        raise ShapeError(f"EMA input has shape {z.shape}, expected ({table.E.shape[1]},).")
    with no_grad():
        row = table.E.data[speaker_id]
        table.E.data[speaker_id] = row + table.epsilon * (z - row)


def nearest_other(rows: np.ndarray, index: int) -> int:
    """Row with the smallest L1 distance to ``rows[index]``, excluding itself."""
    dist = np.abs(rows - rows[index]).sum(axis=1)
    dist[index] = np.inf
    return int(np.argmin(dist))


def reg_loss(table: SpeakerTable, speaker_ids: Sequence[int], gamma: float = 3.0) -> Tensor:
    """-(1/(gamma C)) sum_j log max(||E_ij - E_i*||_1, 1e-8), i* the nearest other row.

    Gradient flows into the rows, pushing each matched centroid away from its
    nearest neighbour.
    """
    if table.num_speakers < 2:
        raise ShapeError("reg_loss needs at least two speaker rows.")
    table.check_ids(speaker_ids)
    terms = []
    for i in speaker_ids:
        other = nearest_other(table.E.data, int(i))
        dist = (table.E[int(i)] - table.E[other]).abs().sum()
        terms.append(clamp_min(dist, DISTANCE_FLOOR).log())
    return stack(terms).sum() * (-1.0 / (gamma * len(speaker_ids)))


def sv_score(z_a: np.ndarray, z_b: np.ndarray, alpha: float) -> float:
    """exp(-alpha ||z_a - z_b||^2), a symmetric similarity in (0, 1]."""
    diff = np.asarray(z_a, dtype=np.float64) - np.asarray(z_b, dtype=np.float64)
    return float(np.exp(-alpha * float(diff @ diff)))


@dataclass
class RocReport:
    auc: float
    eer: float
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray

    def rows(self) -> list[dict]:
        return [
            {"threshold": f"{t:.10g}", "fpr": f"{f:.10g}", "tpr": f"{p:.10g}"}
            for t, f, p in zip(self.thresholds, self.fpr, self.tpr)
        ]


def equal_error_rate(fpr: np.ndarray, tpr: np.ndarray) -> float:
    """FPR where FPR - FNR crosses zero, interpolated between adjacent thresholds."""
    diff = fpr - (1.0 - tpr)
    exact = np.flatnonzero(diff == 0)
    if exact.size:
        return float(fpr[exact[0]])
    crossing = np.flatnonzero(np.diff(np.sign(diff)) != 0)
    if not crossing.size:
        k = int(np.argmin(np.abs(diff)))
        return float(fpr[k])
    k = int(crossing[0])
    t = diff[k] / (diff[k] - diff[k + 1])
    return float(fpr[k] + t * (fpr[k + 1] - fpr[k]))


def roc_metrics(scores: Sequence[float], same: Sequence[bool]) -> RocReport:
    """AUC, EER and the full ROC over every unique score threshold.

    Raises:
        MetricError: If the trials contain only one class.
    """
    labels = np.asarray(same, dtype=bool)
    if labels.all() or not labels.any():
        raise MetricError("ROC needs at least one same-speaker and one different-speaker trial.")
    fpr, tpr, thresholds = roc_curve(labels, np.asarray(scores, dtype=np.float64),
                                     drop_intermediate=False)
    return RocReport(
        auc=float(auc(fpr, tpr)),
        eer=equal_error_rate(fpr, tpr),
        thresholds=thresholds,
        fpr=fpr,
        tpr=tpr,
    )


@dataclass
class IdentityReport:
    """Worst absolute (claim 3) or relative (claims 2 and 4) residuals."""

    decomposition_error: float
    infonce_rescaling_error: float
    gaussian_ratio_error: float
    mutual_information_bound: str = "theorem, untested"


def _relative(a: np.ndarray, b: np.ndarray) -> float:
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b) / scale))


def ince_identity_checks(
    rows: np.ndarray, z: np.ndarray, speaker_ids: Sequence[int], alpha: float
) -> IdentityReport:
    """Evaluate both sides of the algebraic identities behind Tune-InCE in float64."""
    rows = np.asarray(rows, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    ids = np.asarray(speaker_ids)
    d2 = ((z[:, None, :] - rows[None, :, :]) ** 2).sum(axis=-1)
    logits = -alpha * d2
    lse = np_logsumexp(logits, axis=1)
    loss = float(np.mean(lse - logits[np.arange(len(ids)), ids]))
    decomposed = float(np.mean(alpha * d2[np.arange(len(ids)), ids]) + np.mean(lse))

    f = np.exp(-alpha * d2)
    zz = (z * z).sum(axis=1)[:, None]
    ee = (rows * rows).sum(axis=1)[None, :]
    rescaled = np.exp(z @ rows.T) ** (2 * alpha) / np.exp(alpha * zz + alpha * ee)

    lhs = np.exp(-alpha * d2 + alpha * zz)
    cov = np.eye(z.shape[1]) / (2 * alpha)
    ratio = np.array([
        [
            np.exp(multivariate_normal.logpdf(zj, mean=e, cov=cov)
                   - multivariate_normal.logpdf(zj, mean=np.zeros_like(e), cov=cov))
            for e in rows
        ]
        for zj in z
    ])
    return IdentityReport(
        decomposition_error=abs(loss - decomposed),
        infonce_rescaling_error=_relative(f, rescaled),
        gaussian_ratio_error=_relative(lhs, ratio),
    )


def export_embeddings(vectors: np.ndarray, speaker_ids: Sequence[int], path: Path) -> None:
    """Rows of (speaker_id, e0..e{D-1}) ordered by speaker id."""
    vectors = np.asarray(vectors)
    order = np.argsort(np.asarray(speaker_ids), kind="stable")
    fields = ["speaker_id"] + [f"e{k}" for k in range(vectors.shape[1])]
    rows = [
        {"speaker_id": int(speaker_ids[i]),
         **{f"e{k}": repr(float(v)) for k, v in enumerate(vectors[i])}}
        for i in order
    ]
    write_csv(path, fields, rows)


def read_embeddings(path: Path) -> tuple[np.ndarray, list[int]]:
    with open(path, newline="") as fh:
        records = list(csv.DictReader(fh))
    ids = [int(r.pop("speaker_id")) for r in records]
    return np.array([[float(v) for v in r.values()] for r in records]), ids
