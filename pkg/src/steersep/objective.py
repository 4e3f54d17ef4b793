"""Separation metrics, permutation search and the joint training loss."""

from __future__ import annotations

import itertools
from collections.abc import Sequence

import numpy as np

from .models import PermutationAssignment, PermutationMethod
from .tensor import Tensor

EPS = 1e-8
MAX_SOURCES = 4
_DB = 10.0 / np.log(10.0)


class AssignmentError(ValueError):
    """Raised when estimates and references cannot be paired."""

    pass


class SilentTargetError(ValueError):
    """Raised when a reference signal has zero power."""

    pass


def _as_signal(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def _check_pair(target: np.ndarray, estimate: np.ndarray) -> None:
    if target.shape != estimate.shape or target.ndim != 1 or target.size == 0:
        raise AssignmentError(
            f"Target {target.shape} and estimate {estimate.shape} must be equal-length 1-D signals."
        )


def si_snr(target, estimate) -> float:
    """Scale-invariant SNR in dB after removing the means of both signals.

    Raises:
        SilentTargetError: If the zero-mean target has no energy.
    """
    target, estimate = _as_signal(target), _as_signal(estimate)
    _check_pair(target, estimate)
    target = target - target.mean()
    estimate = estimate - estimate.mean()
    energy = float(target @ target)
    if energy == 0:
        raise SilentTargetError("SI-SNR is undefined for a zero-power target.")
    projection = (float(estimate @ target) / energy) * target
    noise = estimate - projection
    return float(10 * np.log10((projection @ projection + EPS) / (noise @ noise + EPS)))


def sdr(target, estimate) -> float:
    """Plain SNR after least-squares projection onto the target (no mean removal)."""
    target, estimate = _as_signal(target), _as_signal(estimate)
    _check_pair(target, estimate)
    energy = float(target @ target)
    if energy == 0:
        raise SilentTargetError("SDR is undefined for a zero-power target.")
    projection = (float(estimate @ target) / energy) * target
    noise = estimate - projection
    return float(10 * np.log10((projection @ projection + EPS) / (noise @ noise + EPS)))


def si_snr_tensor(target, estimate: Tensor) -> Tensor:
    """Differentiable SI-SNR of ``estimate`` against a constant reference."""
    ref = _as_signal(target)
    _check_pair(ref, estimate.data)
    ref = ref - ref.mean()
    energy = float(ref @ ref)
    if energy == 0:
        raise SilentTargetError("SI-SNR is undefined for a zero-power target.")
    ref_t = Tensor(ref.astype(estimate.dtype))
    est = estimate - estimate.mean()
    projection = ref_t * ((est * ref_t).sum() * (1.0 / energy))
    noise = est - projection
    ratio = ((projection * projection).sum() + EPS) / ((noise * noise).sum() + EPS)
    return ratio.log() * _DB


def _improvement(metric, mixture, targets, estimates) -> float:
    if len(targets) != len(estimates):
        raise AssignmentError(f"{len(targets)} targets but {len(estimates)} estimates.")
    mixture = _as_signal(mixture)
    gains = [metric(t, e) - metric(t, mixture) for t, e in zip(targets, estimates)]
    return float(np.mean(gains))


def si_snr_i(mixture, targets: Sequence, estimates: Sequence) -> float:
    """Mean SI-SNR improvement over the unprocessed mixture, per aligned source."""
    return _improvement(si_snr, mixture, targets, estimates)


def sdr_i(mixture, targets: Sequence, estimates: Sequence) -> float:
    return _improvement(sdr, mixture, targets, estimates)


def _best_permutation(score: np.ndarray) -> tuple[tuple[int, ...], float]:
    """Maximize the mean of score[j, mapping[j]]; first permutation wins ties."""
    count = score.shape[0]
    best, best_value = None, -np.inf
    for perm in itertools.permutations(range(count)):
        value = float(np.mean([score[j, perm[j]] for j in range(count)]))
        if value > best_value:
            best, best_value = perm, value
    return best, best_value


def _check_counts(n_targets: int, n_estimates: int) -> None:
    if n_targets != n_estimates:
        raise AssignmentError(f"{n_targets} targets but {n_estimates} estimates.")
    if not 1 <= n_targets <= MAX_SOURCES:
        raise AssignmentError(
            f"Exhaustive assignment supports 1..{MAX_SOURCES} sources, got {n_targets}."
        )


def pairwise_si_snr(targets: Sequence, estimates: Sequence) -> np.ndarray:
    """score[j, i] = SI-SNR of estimate j against target i."""
    return np.array([[si_snr(t, e) for t in targets] for e in estimates])


def upit_assign(targets: Sequence, estimates: Sequence) -> PermutationAssignment:
    """Exhaustive utterance-level PIT; ``mapping[j]`` is the target of estimate j.

    ``cost`` is the negative mean SI-SNR of the chosen pairing.
    """
    _check_counts(len(targets), len(estimates))
    mapping, value = _best_permutation(pairwise_si_snr(targets, estimates))
    return PermutationAssignment(mapping=mapping, cost=-value,
                                 method=PermutationMethod.UPIT_SISNR)


def speaker_assign(
    z: np.ndarray, speaker_ids: Sequence[int], rows: np.ndarray, alpha: float
) -> PermutationAssignment:
    """Pair steering vectors with speakers by minimal alpha-scaled squared distance.

    ``mapping[j]`` indexes ``speaker_ids`` (and hence the reference list).
    """
    z = np.asarray(z, dtype=np.float64)
    _check_counts(len(speaker_ids), len(z))
    centroids = np.asarray(rows, dtype=np.float64)[np.asarray(speaker_ids)]
    d2 = ((z[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)
    mapping, value = _best_permutation(-alpha * d2)
    return PermutationAssignment(mapping=mapping, cost=-value * len(z),
                                 method=PermutationMethod.UPIT_SPEAKER)


def reconstruction_loss(
    targets: Sequence, estimates: Sequence[Tensor], assignment: PermutationAssignment
) -> Tensor:
    """Negative mean SI-SNR over (estimate j, target mapping[j]), summed in estimate order."""
    terms = [si_snr_tensor(targets[assignment.mapping[j]], est) for j, est in enumerate(estimates)]
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total * (-1.0 / len(terms))


def upit_loss(
    targets: Sequence, estimates: Sequence[Tensor]
) -> tuple[Tensor, PermutationAssignment]:
    assignment = upit_assign(targets, estimates)
    return reconstruction_loss(targets, estimates, assignment), assignment


def joint_loss(
    separation: Tensor | None,
    speaker: Tensor | None,
    regularizer: Tensor | None,
    lambda_: float,
) -> Tensor:
    """L_SI-SNR + lambda (L_InCE + L_reg).

    Without a separation term (speaker augmentation) the speaker terms are
    used unweighted; without speaker terms (autopilot) only L_SI-SNR remains.
    """
    speaker_terms = None
    for term in (speaker, regularizer):
        if term is not None:
            speaker_terms = term if speaker_terms is None else speaker_terms + term
    if separation is None:
        if speaker_terms is None:
            raise AssignmentError("joint_loss needs at least one term.")
        return speaker_terms
    if speaker_terms is None or lambda_ == 0:
        return separation
    return separation + speaker_terms * lambda_
