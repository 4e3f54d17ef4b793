"""Synthetic multi-speaker corpus, SIR mixing and PCM-16 WAV I/O.

Speakers are harmonic sources with a fixed fundamental, vibrato and three
formant resonances; utterances are sequences of amplitude-modulated
"syllables". Every waveform is a pure function of its seeds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import soundfile as sf
from scipy.signal import iirpeak, lfilter

from .checkpoint import atomic_write
from .config import CorpusConfig
from .models import CorpusManifest, MixtureManifest, MixtureRecord, UtteranceRecord

logger = logging.getLogger(__name__)

MIN_DURATION_S = 0.5
PEAK = 0.9
F0_LOW_HZ = 80.0
F0_SPACING_HZ = 6.0
F0_SLOTS = 50
FORMANT_RANGES_HZ = ((300.0, 900.0), (900.0, 2300.0), (2300.0, 3400.0))


class CorpusError(Exception):
    """Raised for invalid synthesis or mixing requests."""

    pass


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: int
    fundamental_hz: float
    formant_centers: tuple[float, float, float]
    vibrato_rate: float
    vibrato_depth: float
    seed: int


def speaker_profile(speaker_id: int, corpus_seed: int) -> SpeakerProfile:
    """Deterministic profile for ``speaker_id``.

    Fundamentals sit on a 6 Hz grid shuffled by the corpus seed, so any two
    speakers of one corpus differ by at least 6 Hz.

    Raises:
        CorpusError: If the id exceeds the number of pitch slots.
    """
    if not 0 <= speaker_id < F0_SLOTS:
        raise CorpusError(f"speaker_id must be in [0, {F0_SLOTS}), got {speaker_id}.")
    slots = np.random.default_rng([corpus_seed, 0x5EED]).permutation(F0_SLOTS)
    rng = np.random.default_rng([corpus_seed, speaker_id])
    formants = tuple(float(rng.uniform(lo, hi)) for lo, hi in FORMANT_RANGES_HZ)
    return SpeakerProfile(
        speaker_id=speaker_id,
        fundamental_hz=F0_LOW_HZ + F0_SPACING_HZ * int(slots[speaker_id]),
        formant_centers=formants,
        vibrato_rate=float(rng.uniform(4.0, 7.0)),
        vibrato_depth=float(rng.uniform(0.002, 0.006)),
        seed=int(rng.integers(0, 2**31 - 1)),
    )


def _syllable_envelope(n: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    env = np.zeros(n)
    pos = 0
    while pos < n:
        length = int(rng.uniform(0.08, 0.25) * sample_rate)
        gap = int(rng.uniform(0.01, 0.06) * sample_rate)
        stop = min(pos + length, n)
        ramp = np.hanning(max(stop - pos, 2))[: stop - pos]
        env[pos:stop] = rng.uniform(0.3, 1.0) * ramp
        pos = stop + gap
    return env


def _harmonic_source(
    f0: float, rate: float, depth: float, n: int, sample_rate: int, rng: np.random.Generator
) -> np.ndarray:
    t = np.arange(n) / sample_rate
    phase0 = rng.uniform(0, 2 * np.pi)
    inst = f0 * (1.0 + depth * np.sin(2 * np.pi * rate * t + phase0))
    phase = 2 * np.pi * np.cumsum(inst) / sample_rate
    nyquist = sample_rate / 2
    harmonics = int((nyquist * 0.95) // (f0 * (1 + depth)))
    source = np.zeros(n)
    for k in range(1, max(harmonics, 1) + 1):
        source += np.sin(k * phase) / k**1.5
    return source


def synth_utterance(
    profile: SpeakerProfile, duration_s: float, seed: int, sample_rate: int = 8000
) -> np.ndarray:
    """Render one utterance of ``profile``.

    Args:
        profile: Speaker voice parameters.
        duration_s: Length in seconds (at least 0.5).
        seed: Utterance seed; identical (profile, seed) give identical samples.
        sample_rate: Output rate in Hz.

    Returns:
        float32 samples peak-normalized to 0.9.

    Raises:
        CorpusError: If the duration is too short.
    """
    if duration_s < MIN_DURATION_S:
        raise CorpusError(f"Utterance duration {duration_s}s is below {MIN_DURATION_S}s.")
    n = int(round(duration_s * sample_rate))
    rng = np.random.default_rng([profile.seed, seed])
    source = _harmonic_source(
        profile.fundamental_hz, profile.vibrato_rate, profile.vibrato_depth, n, sample_rate, rng
    )
    shaped = source.copy()
    for center in profile.formant_centers:
        b, a = iirpeak(center, Q=4.0, fs=sample_rate)
        shaped += 0.5 * lfilter(b, a, source)
    wave = shaped * _syllable_envelope(n, sample_rate, rng)
    peak = np.max(np.abs(wave))
    if peak > 0:
        wave *= PEAK / peak
    return wave.astype(np.float32)


@dataclass
class MixtureSample:
    """A mixture and its raw sources; ``references`` are the scaled sources."""

    mixture: np.ndarray
    sources: list[np.ndarray]
    speaker_ids: list[int]
    scale_factors: list[float]
    sir_db: float
    sample_rate: int = 8000
    mixture_id: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def references(self) -> list[np.ndarray]:
        return [c * s for c, s in zip(self.scale_factors, self.sources)]

    @property
    def num_sources(self) -> int:
        return len(self.sources)


def fit_length(wave: np.ndarray, length: int) -> np.ndarray:
    """Crop or zero-pad the tail to ``length`` samples."""
    if len(wave) >= length:
        return wave[:length]
    return np.pad(wave, (0, length - len(wave)))


def power(wave: np.ndarray) -> float:
    return float(np.mean(np.asarray(wave, dtype=np.float64) ** 2))


def mix(
    target: np.ndarray,
    interferer: np.ndarray,
    sir_db: float,
    target_id: int = 0,
    interferer_id: int = 1,
    sample_rate: int = 8000,
) -> MixtureSample:
    """Scale ``interferer`` so that 10·log10(P_target / P_interferer) == sir_db, then sum.

    Raises:
        CorpusError: If either input has zero power.
    """
    target = np.asarray(target, dtype=np.float64)
    interferer = fit_length(np.asarray(interferer, dtype=np.float64), len(target))
    p_target, p_interf = power(target), power(interferer)
    if p_interf == 0:
        raise CorpusError("Interferer is silent (zero power); cannot realize an SIR.")
    if p_target == 0:
        raise CorpusError("Target is silent (zero power); cannot realize an SIR.")
    scale = float(np.sqrt(p_target / (p_interf * 10 ** (sir_db / 10))))
    return MixtureSample(
        mixture=target + scale * interferer,
        sources=[target, interferer],
        speaker_ids=[target_id, interferer_id],
        scale_factors=[1.0, scale],
        sir_db=float(sir_db),
        sample_rate=sample_rate,
    )


def random_crop(wave: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    if len(wave) <= length:
        return fit_length(wave, length)
    start = int(rng.integers(0, len(wave) - length + 1))
    return wave[start : start + length]


def read_wav(path: Path) -> tuple[np.ndarray, int]:
    """Read a mono WAV as float64 in [-1, 1].

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        CorpusError: If the file has more than one channel.
    """
    if not Path(path).exists():
        raise FileNotFoundError(f"WAV file not found: {path}")
    data, sample_rate = sf.read(str(path), dtype="float64", always_2d=False)
    if data.ndim != 1:
        raise CorpusError(f"{path} has {data.shape[1]} channels; only mono is supported.")
    return data, int(sample_rate)


def write_wav(path: Path, data: np.ndarray, sample_rate: int) -> None:
    """Write mono PCM 16-bit little-endian."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(path), np.clip(np.asarray(data), -1.0, 1.0), sample_rate,
             subtype="PCM_16", endian="LITTLE")


def joint_normalize(sample: MixtureSample, peak: float = 0.99) -> MixtureSample:
    """Rescale mixture and sources together so nothing clips in PCM-16."""
    top = max(np.max(np.abs(sample.mixture)), *(np.max(np.abs(r)) for r in sample.references))
    if top <= peak:
        return sample
    g = peak / top
    sample.mixture = sample.mixture * g
    sample.sources = [s * g for s in sample.sources]
    return sample


class Corpus:
    """Utterances of one synthetic corpus, indexed by speaker."""

    def __init__(self, sample_rate: int, utterances: dict[int, list[np.ndarray]],
                 train_speakers: list[int], heldout_speakers: list[int],
                 paths: dict[int, list[str]] | None = None):
        self.sample_rate = sample_rate
        self.utterances = utterances
        self.train_speakers = train_speakers
        self.heldout_speakers = heldout_speakers
        self.paths = paths or {}

    @classmethod
    def synthesize(cls, config: CorpusConfig, speaker_offset: int = 0) -> Corpus:
        """Render a corpus in memory; ids start at ``speaker_offset``."""
        total = config.num_speakers + config.heldout_speakers
        utterances = {}
        for local in range(total):
            profile = speaker_profile(local, config.seed)
            utterances[speaker_offset + local] = [
                synth_utterance(profile, config.utterance_seconds, seed=k,
                                sample_rate=config.sample_rate)
                for k in range(config.utterances_per_speaker)
            ]
        ids = list(range(speaker_offset, speaker_offset + total))
        return cls(config.sample_rate, utterances, ids[: config.num_speakers],
                   ids[config.num_speakers :])

    @classmethod
    def from_manifest(cls, manifest_path: Path) -> Corpus:
        manifest_path = Path(manifest_path)
        if not manifest_path.exists():
            raise FileNotFoundError(f"Corpus manifest not found: {manifest_path}")
        manifest = CorpusManifest.model_validate_json(manifest_path.read_text())
        root = manifest_path.parent
        utterances: dict[int, list[np.ndarray]] = {}
        paths: dict[int, list[str]] = {}
        for record in manifest.utterances:
            wave, _ = read_wav(root / record.utterance_path)
            utterances.setdefault(record.speaker_id, []).append(wave)
            paths.setdefault(record.speaker_id, []).append(record.utterance_path)
        return cls(manifest.sample_rate, utterances, manifest.train_speakers,
                   manifest.heldout_speakers, paths)

    def online_mixture(self, target_id: int, utt_index: int, pool: list[int],
                       seconds: float, sir_range: tuple[float, float],
                       rng: np.random.Generator) -> MixtureSample:
        """Mask one utterance with a random utterance of another speaker from ``pool``."""
        length = int(round(seconds * self.sample_rate))
        others = [s for s in pool if s != target_id]
        if not others:
            raise CorpusError("Need at least two speakers to mix.")
        other = int(others[int(rng.integers(0, len(others)))])
        candidates = self.utterances[other]
        interferer = candidates[int(rng.integers(0, len(candidates)))]
        target = random_crop(self.utterances[target_id][utt_index], length, rng)
        interferer = random_crop(interferer, length, rng)
        sir = float(rng.uniform(*sir_range))
        return mix(target, interferer, sir, target_id, other, self.sample_rate)

    def fixed_mixtures(self, pool: list[int], count: int, seconds: float,
                       sir_range: tuple[float, float], seed: int,
                       prefix: str) -> list[MixtureSample]:
        rng = np.random.default_rng(seed)
        out = []
        for i in range(count):
            target = int(pool[int(rng.integers(0, len(pool)))])
            utt = int(rng.integers(0, len(self.utterances[target])))
            sample = self.online_mixture(target, utt, pool, seconds, sir_range, rng)
            sample.mixture_id = f"{prefix}{i:04d}"
            out.append(sample)
        return out


def write_corpus(config: CorpusConfig, out_dir: Path) -> dict[str, Path]:
    """Synthesize the corpus, validation/test mixtures and enrollments to disk.

    Returns:
        Paths of the written manifests keyed by ``corpus``, ``validation``, ``test``.
    """
    out_dir = Path(out_dir)
    corpus = Corpus.synthesize(config)
    records = []
    for speaker, waves in corpus.utterances.items():
        for k, wave in enumerate(waves):
            rel = f"utterances/spk{speaker:03d}_{k:02d}.wav"
            write_wav(out_dir / rel, wave, config.sample_rate)
            records.append(UtteranceRecord(speaker_id=speaker, utterance_path=rel,
                                           duration=len(wave) / config.sample_rate))
    manifest = CorpusManifest(sample_rate=config.sample_rate,
                              train_speakers=corpus.train_speakers,
                              heldout_speakers=corpus.heldout_speakers, utterances=records)
    paths = {"corpus": out_dir / "corpus.json"}
    atomic_write(paths["corpus"], manifest.model_dump_json(indent=2))

    seconds = min(4.0, config.utterance_seconds)
    validation = corpus.fixed_mixtures(corpus.train_speakers, config.validation_mixtures,
                                       seconds, config.sir_range, config.seed + 1, "val")
    paths["validation"] = _write_mixtures(out_dir, "validation", validation, config.sample_rate)

    if len(corpus.heldout_speakers) >= 2 and config.test_mixtures:
        test = corpus.fixed_mixtures(corpus.heldout_speakers, config.test_mixtures, seconds,
                                     config.sir_range, config.seed + 2, "test")
        enrollments = _enrollments(corpus, config)
        paths["test"] = _write_mixtures(out_dir, "test", test, config.sample_rate, enrollments)
    logger.info("Wrote %d utterances to %s", len(records), out_dir)
    return paths


def _enrollments(corpus: Corpus, config: CorpusConfig) -> dict[int, MixtureSample]:
    rng = np.random.default_rng(config.seed + 3)
    out = {}
    for speaker in corpus.heldout_speakers:
        profile = speaker_profile(speaker, config.seed)
        target = synth_utterance(profile, config.enrollment_seconds, seed=10_000 + speaker,
                                 sample_rate=config.sample_rate)
        others = [s for s in corpus.heldout_speakers if s != speaker]
        other = int(others[int(rng.integers(0, len(others)))])
        interferer = np.concatenate(corpus.utterances[other])
        reps = int(np.ceil(len(target) / len(interferer)))
        interferer = np.tile(interferer, reps)[: len(target)]
        sample = mix(target, interferer, float(rng.uniform(*config.sir_range)), speaker, other,
                     config.sample_rate)
        sample.mixture_id = f"enroll{speaker:03d}"
        out[speaker] = sample
    return out


def _write_mixtures(out_dir: Path, name: str, samples: list[MixtureSample], sample_rate: int,
                    enrollments: dict[int, MixtureSample] | None = None) -> Path:
    def _record(sample: MixtureSample) -> MixtureRecord:
        sample = joint_normalize(sample)
        mix_rel = f"{name}/{sample.mixture_id}_mix.wav"
        write_wav(out_dir / mix_rel, sample.mixture, sample_rate)
        source_rels = []
        for j, ref in enumerate(sample.references):
            rel = f"{name}/{sample.mixture_id}_s{j}.wav"
            write_wav(out_dir / rel, ref, sample_rate)
            source_rels.append(rel)
        return MixtureRecord(mixture_id=sample.mixture_id, mixture_path=mix_rel,
                             source_paths=source_rels, sir_db=sample.sir_db,
                             speaker_ids=sample.speaker_ids)

    manifest = MixtureManifest(
        sample_rate=sample_rate,
        mixtures=[_record(s) for s in samples],
        enrollments={k: _record(v) for k, v in (enrollments or {}).items()},
    )
    path = out_dir / f"{name}.json"
    atomic_write(path, manifest.model_dump_json(indent=2))
    return path


def load_mixture(record: MixtureRecord, root: Path) -> MixtureSample:
    """Read a pre-generated mixture; sources are the stored (scaled) references."""
    root = Path(root)
    mixture, sample_rate = read_wav(root / record.mixture_path)
    sources = [read_wav(root / p)[0] for p in record.source_paths]
    return MixtureSample(mixture=mixture, sources=sources, speaker_ids=record.speaker_ids,
                         scale_factors=[1.0] * len(sources), sir_db=record.sir_db,
                         sample_rate=sample_rate, mixture_id=record.mixture_id)
