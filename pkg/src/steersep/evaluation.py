"""Separation and speaker-verification evaluation of a trained model."""

from __future__ import annotations

import itertools
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import export_cross_attention, export_dual_attention
from .audio import Corpus, MixtureSample, mix, write_wav
from .model import ModeError, SeparationModel, SpaceOutputs
from .models import Mode, PermutationAssignment, PermutationMethod, SeparationRow, SvTrial
from .objective import sdr_i, si_snr, si_snr_i, upit_assign
from .output import write_csv
from .speaker import RocReport, export_embeddings, roc_metrics, sv_score
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

SEPARATION_FIELDS = [
    "mixture_id", "mode", "si_snr", "si_snri", "sdri", "permutation", "method",
]
ROC_FIELDS = ["threshold", "fpr", "tpr"]


@dataclass
class SeparationReport:
    rows: list[SeparationRow]
    cache_hits: dict[int, int] = field(default_factory=dict)

    def means(self) -> dict[Mode, dict[str, float]]:
        out = {}
        for mode in Mode:
            subset = [r for r in self.rows if r.mode == mode]
            if subset:
                out[mode] = {
                    "si_snr": float(np.mean([r.si_snr for r in subset])),
                    "si_snri": float(np.mean([r.si_snri for r in subset])),
                    "sdri": float(np.mean([r.sdri for r in subset])),
                }
        return out


class EnrollmentCache:
    """Speaker features computed once per enrolled speaker, with a hit counter."""

    def __init__(self, model: SeparationModel, enrollments: dict[int, MixtureSample]):
        self.model = model
        self.enrollments = enrollments
        self.features: dict[int, Tensor] = {}
        self.hits: dict[int, int] = {}

    def get(self, speaker_id: int) -> Tensor:
        if speaker_id in self.features:
            self.hits[speaker_id] += 1
            return self.features[speaker_id]
        if speaker_id not in self.enrollments:
            raise ModeError(f"No enrollment recording for speaker {speaker_id} in offline mode.")
        dtype = self.model.encoder.weight.dtype
        wave = np.asarray(self.enrollments[speaker_id].mixture, dtype=dtype)
        with no_grad():
            feats = self.model.enroll(Tensor(wave))
        self.features[speaker_id] = feats
        self.hits[speaker_id] = 0
        return feats


def _aligned(
    sample: MixtureSample, estimates: list[np.ndarray], mode: Mode
) -> tuple[list[np.ndarray], PermutationAssignment]:
    """Estimates reordered to match the references."""
    references = sample.references
    if mode == Mode.OFFLINE:
        mapping = tuple(range(len(estimates)))
        assignment = PermutationAssignment(
            mapping=mapping, cost=0.0, method=PermutationMethod.UPIT_SPEAKER
        )
    else:
        assignment = upit_assign(references, estimates)
    ordered = [None] * len(estimates)
    for j, i in enumerate(assignment.mapping):
        ordered[i] = estimates[j]
    return ordered, assignment


def evaluate_separation(
    model: SeparationModel,
    samples: Sequence[MixtureSample],
    modes: Sequence[Mode],
    enrollments: dict[int, MixtureSample] | None = None,
    out_dir: Path | None = None,
) -> SeparationReport:
    """SI-SNR, SI-SNRi and SDRi of every mixture in every mode.

    In offline mode each source is steered by the enrollment of its speaker;
    the enrollment features are computed once per speaker and reused.

    Args:
        model: Trained model.
        samples: Fixed test mixtures.
        modes: Modes to evaluate.
        enrollments: Enrollment recordings keyed by speaker id (offline mode).
        out_dir: If given, estimates are written as ``<id>_<mode>_s<j>.wav`` in
            reference order.

    Raises:
        ModeError: If offline mode meets a speaker without an enrollment.
    """
    cache = EnrollmentCache(model, enrollments or {})
    rows = []
    for mode in map(Mode, modes):
        for sample in samples:
            enrollment = None
            if mode == Mode.OFFLINE:
                enrollment = [cache.get(sid) for sid in sample.speaker_ids]
            out = model.separate(sample.mixture, mode, enrollment)
            estimates = [e.data.astype(np.float64) for e in out.estimates]
            ordered, assignment = _aligned(sample, estimates, mode)
            references = sample.references
            rows.append(
                SeparationRow(
                    mixture_id=sample.mixture_id,
                    mode=mode,
                    si_snr=float(np.mean([si_snr(r, e) for r, e in zip(references, ordered)])),
                    si_snri=si_snr_i(sample.mixture, references, ordered),
                    sdri=sdr_i(sample.mixture, references, ordered),
                    permutation=assignment.mapping,
                    method=assignment.method,
                )
            )
            if out_dir is not None:
                for j, est in enumerate(ordered):
                    name = f"{sample.mixture_id}_{mode.value}_s{j}.wav"
                    write_wav(Path(out_dir) / name, est, sample.sample_rate)
    for speaker, hits in sorted(cache.hits.items()):
        logger.debug("Enrollment of speaker %d reused %d times", speaker, hits)
    return SeparationReport(rows=rows, cache_hits=dict(cache.hits))


def write_separation_csv(rows: Sequence[SeparationRow], path: Path) -> None:
    write_csv(
        path,
        SEPARATION_FIELDS,
        [
            {
                "mixture_id": r.mixture_id,
                "mode": r.mode.value,
                "si_snr": repr(r.si_snr),
                "si_snri": repr(r.si_snri),
                "sdri": repr(r.sdri),
                "permutation": " ".join(map(str, r.permutation)),
                "method": r.method.value,
            }
            for r in rows
        ],
    )


# speaker verification ---------------------------------------------------


def utterance_key(speaker_id: int, index: int) -> str:
    return f"{speaker_id}:{index}"


def parse_utterance_key(key: str) -> tuple[int, int]:
    speaker, _, index = key.partition(":")
    return int(speaker), int(index)


def _masker(
    corpus: Corpus, speakers: list[int], target: int, rng: np.random.Generator,
    sir_range: tuple[float, float],
) -> tuple[str, float]:
    others = [s for s in speakers if s != target]
    other = int(others[int(rng.integers(0, len(others)))])
    index = int(rng.integers(0, len(corpus.utterances[other])))
    return utterance_key(other, index), float(rng.uniform(*sir_range))


def build_sv_trials(
    corpus: Corpus,
    speakers: Sequence[int],
    count: int,
    seed: int,
    clean: bool = False,
    sir_range: tuple[float, float] = (0.0, 5.0),
) -> list[SvTrial]:
    """Same-speaker pairs among the utterances plus as many different-speaker pairs.

    At most ``count // 2`` same-speaker pairs are kept (a seeded subset). Unless
    ``clean``, each side is masked by an utterance of another listed speaker.

    Raises:
        ValueError: If fewer than two speakers are given.
    """
    speakers = [int(s) for s in speakers]
    if len(speakers) < 2:
        raise ValueError("SV trials need at least two speakers.")
    rng = np.random.default_rng(seed)
    same = [
        (utterance_key(s, a), utterance_key(s, b))
        for s in speakers
        for a, b in itertools.combinations(range(len(corpus.utterances[s])), 2)
    ]
    limit = max(1, count // 2)
    if len(same) > limit:
        keep = sorted(rng.choice(len(same), size=limit, replace=False))
        same = [same[k] for k in keep]
    different = []
    for _ in range(len(same)):
        a, b = rng.choice(len(speakers), size=2, replace=False)
        sa, sb = speakers[int(a)], speakers[int(b)]
        ia = int(rng.integers(0, len(corpus.utterances[sa])))
        ib = int(rng.integers(0, len(corpus.utterances[sb])))
        different.append((utterance_key(sa, ia), utterance_key(sb, ib)))

    trials = []
    for key_a, key_b in same + different:
        trial = SvTrial(
            utterance_a=key_a,
            utterance_b=key_b,
            speaker_a=parse_utterance_key(key_a)[0],
            speaker_b=parse_utterance_key(key_b)[0],
        )
        if not clean:
            trial.interferer_a, trial.sir_a = _masker(corpus, speakers, trial.speaker_a, rng,
                                                      sir_range)
            trial.interferer_b, trial.sir_b = _masker(corpus, speakers, trial.speaker_b, rng,
                                                      sir_range)
        trials.append(trial)
    return trials


def steering_of(model: SeparationModel, wave: np.ndarray) -> np.ndarray:
    """Steering vector of the dominant source, read through the online path."""
    out = model.separate(wave, Mode.ONLINE)
    powers = [float(np.mean(e.data.astype(np.float64) ** 2)) for e in out.estimates]
    dominant = int(np.argmax(powers))
    return out.steering[dominant].clean.data.astype(np.float64)


@dataclass
class SvReport:
    roc: RocReport
    trials: list[SvTrial]
    scores: list[float]
    vectors: np.ndarray
    vector_speakers: list[int]


def _side(corpus: Corpus, key: str, interferer: str | None, sir: float) -> np.ndarray:
    speaker, index = parse_utterance_key(key)
    target = corpus.utterances[speaker][index]
    if interferer is None:
        return np.asarray(target, dtype=np.float64)
    other, other_index = parse_utterance_key(interferer)
    return mix(target, corpus.utterances[other][other_index], sir).mixture


def evaluate_sv(model: SeparationModel, corpus: Corpus, trials: Sequence[SvTrial]) -> SvReport:
    """Score every trial with exp(-alpha ||Z_a - Z_b||^2) and summarize the ROC.

    Raises:
        MetricError: If the trials contain a single class.
    """
    alpha = float(model.speaker_table.alpha.data[0])
    cache: dict[tuple, np.ndarray] = {}

    def vector(key: str, interferer: str | None, sir: float) -> np.ndarray:
        token = (key, interferer, sir)
        if token not in cache:
            cache[token] = steering_of(model, _side(corpus, key, interferer, sir))
        return cache[token]

    scores = []
    for trial in trials:
        za = vector(trial.utterance_a, trial.interferer_a, trial.sir_a)
        zb = vector(trial.utterance_b, trial.interferer_b, trial.sir_b)
        scores.append(sv_score(za, zb, alpha))
    roc = roc_metrics(scores, [t.same for t in trials])
    keys = list(cache)
    vectors = np.stack([cache[k] for k in keys]) if keys else np.zeros((0, 0))
    speakers = [parse_utterance_key(k[0])[0] for k in keys]
    logger.info("SV over %d trials: AUC %.4f, EER %.4f", len(trials), roc.auc, roc.eer)
    return SvReport(roc=roc, trials=list(trials), scores=scores, vectors=vectors,
                    vector_speakers=speakers)


def write_sv_outputs(report: SvReport, model: SeparationModel, out_dir: Path) -> None:
    """roc.csv, steering.csv (evaluated vectors) and speaker_table.csv (table rows)."""
    out_dir = Path(out_dir)
    write_csv(out_dir / "roc.csv", ROC_FIELDS, report.roc.rows())
    if len(report.vectors):
        export_embeddings(report.vectors, report.vector_speakers, out_dir / "steering.csv")
    table = model.speaker_table.E.data
    export_embeddings(table, list(range(len(table))), out_dir / "speaker_table.csv")


def export_attention(
    model: SeparationModel, out: SpaceOutputs, sample_rate: int, out_dir: Path
) -> list[Path]:
    """Cross-attention curves over the speaker segments and dual-attention heat maps.

    Sources whose speaker features differ in length get one curve file each.

    Returns:
        The files written.
    """
    out_dir = Path(out_dir)
    if not out.cross_weights:
        return []
    hop_seconds = (model.config.segment // 2) * (model.config.window // 2) / sample_rate
    lengths = {w.shape[1] for w in out.cross_weights}
    written = []
    if len(lengths) == 1:
        times = [k * hop_seconds for k in range(lengths.pop())]
        path = out_dir / "cross_attention.csv"
        export_cross_attention(out.cross_weights, path, times)
        written.append(path)
    else:
        for j, weights in enumerate(out.cross_weights):
            times = [k * hop_seconds for k in range(weights.shape[1])]
            path = out_dir / f"cross_attention_s{j}.csv"
            export_cross_attention([weights], path, times)
            written.append(path)
    if out.dual_weights and all(w.size for w in out.dual_weights):
        path = out_dir / "dual_attention.csv"
        export_dual_attention(out.dual_weights, path)
        written.append(path)
    return written
