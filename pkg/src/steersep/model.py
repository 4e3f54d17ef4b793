"""The three-space separator: generic, speaker-knowledge and speech-stimuli."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .attention import QKVProjections, SteeringVector, cross_attention, regularize_steering
from .codec import Decoder, Encoder, MaskHead
from .config import ModelConfig
from .galr import BlockStack
from .models import GlobalKind, Mode, SteeringKind, SteeringReg
from .nn import Module
from .segmentation import SegmentTensor, merge, split
from .speaker import Embedder, SpeakerTable
from .tensor import Tensor, default_dtype, no_grad

logger = logging.getLogger(__name__)

SPEAKER_SPACE = ("speaker.", "speaker_table.")
STIMULI_SPACE = ("stimuli.", "decoder.")


class ModeError(ValueError):
    """Raised when a mode's inputs or architecture requirements are not met."""

    pass


class SpeakerSpace(Module):
    """B1 blocks, the embedder head and the cross-attention projections."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator, dtype=None):
        self.blocks = BlockStack(config, config.speaker_blocks, rng, dtype=dtype)
        self.embedder = Embedder(config.features, config.num_sources, rng, dtype)
        self.cross = QKVProjections(config.features, rng, dtype)

    def forward(self, generic: Tensor) -> list[Tensor]:
        return self.embedder(self.blocks(generic))


class DecoderHead(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator, dtype=None):
        self.mask = MaskHead(config.features, config.num_sources, rng, dtype)
        self.synth = Decoder(config.window, config.features, rng, dtype)


@dataclass
class SpaceOutputs:
    mixture_features: Tensor
    segments: SegmentTensor
    generic: Tensor
    stimuli: list[Tensor]
    estimates: list[Tensor]
    speaker_feats: list[Tensor] | None = None
    steering: list[SteeringVector] | None = None
    cross_weights: list[np.ndarray] = field(default_factory=list)
    dual_weights: list[np.ndarray] = field(default_factory=list)


class SeparationModel(Module):
    """Encoder, B generic blocks, B1 speaker blocks, B2 steered stimuli blocks, decoder."""

    def __init__(self, config: ModelConfig, num_speakers: int, dtype=None):
        dtype = dtype or default_dtype()
        rng = np.random.default_rng(config.seed)
        self.config = config
        self.encoder = Encoder(config.window, config.features, rng, dtype)
        self.generic = BlockStack(config, config.generic_blocks, rng, dtype=dtype)
        self.speaker = SpeakerSpace(config, rng, dtype)
        self.stimuli = BlockStack(config, config.stimuli_blocks, rng, steered=True, dtype=dtype)
        self.decoder = DecoderHead(config, rng, dtype)
        self.speaker_table = SpeakerTable(max(num_speakers, 1), config.features, rng, dtype=dtype)
        self.assign_names()

    @property
    def num_sources(self) -> int:
        return self.config.num_sources

    def parameters_in(self, prefixes: Sequence[str]) -> list:
        return [p for name, p in self.named_parameters() if name.startswith(tuple(prefixes))]

    def summary(self) -> list[tuple[str, tuple[int, ...], int]]:
        return [(name, p.shape, p.size) for name, p in self.named_parameters()]

    def front_end(self, waveform: Tensor) -> tuple[Tensor, SegmentTensor, Tensor]:
        """Encode, segment and run the generic space."""
        features = self.encoder(waveform)
        segments = split(features, self.config.segment)
        return features, segments, self.generic(segments.data)

    def _check_steerable(self) -> None:
        needs_attention = self.config.steering_kind != SteeringKind.FILM_BETWEEN
        if needs_attention and self.config.global_kind == GlobalKind.RNN and len(self.stimuli):
            raise ModeError(
                f"steering_kind={self.config.steering_kind.value} needs global_kind=self_attn; "
                "use film_between or autopilot mode with a recurrent global layer."
            )

    def run_spaces(
        self,
        waveform: Tensor,
        mode: Mode,
        enrollment: Sequence[Tensor] | None = None,
        steering_reg: SteeringReg = SteeringReg.NONE,
        training: bool = False,
        rng: np.random.Generator | None = None,
        capture: bool = False,
    ) -> SpaceOutputs:
        """Separate one mixture.

        Args:
            waveform: 1-D mixture.
            mode: ``autopilot`` skips the speaker branch; ``online`` reads speaker
                features from the mixture itself; ``offline`` takes them from
                ``enrollment`` (one D x S_j tensor per source).
            enrollment: Precomputed speaker features for offline mode.
            steering_reg: Regularizer applied to steering vectors while training.
            training: Enables the steering regularizer.
            rng: Randomness for the regularizer.
            capture: Keep dual-attention weights for export.

        Raises:
            ModeError: If offline mode lacks enrollments or the architecture cannot steer.
        """
        mode = Mode(mode)
        length = waveform.shape[0]
        features, segments, generic = self.front_end(waveform)
        out = SpaceOutputs(features, segments, generic, stimuli=[], estimates=[])
        c = self.num_sources

        if mode == Mode.AUTOPILOT:
            stimuli = self.stimuli(generic)
            out.stimuli = [stimuli]
            masks = self.decoder.mask(merge(segments.with_data(stimuli)))
            out.estimates = [self.decoder.synth(m, features, length) for m in masks]
            return out

        self._check_steerable()
        if mode == Mode.OFFLINE:
            if enrollment is None or len(enrollment) != c:
                got = 0 if enrollment is None else len(enrollment)
                raise ModeError(f"Offline mode needs {c} enrollment features, got {got}.")
            speaker_feats = list(enrollment)
        else:
            speaker_feats = self.speaker(generic)
        out.speaker_feats = speaker_feats
        vectors, out.cross_weights = cross_attention(generic, speaker_feats, self.speaker.cross)
        out.steering = vectors
        for j, vector in enumerate(vectors):
            steered = regularize_steering(vector, steering_reg, training, rng)
            stimuli = self.stimuli(generic, steered)
            if capture:
                out.dual_weights.append(self._dual_weights())
            out.stimuli.append(stimuli)
            mask = self.decoder.mask(merge(segments.with_data(stimuli)))[j]
            out.estimates.append(self.decoder.synth(mask, features, length))
        return out

    def _dual_weights(self) -> np.ndarray:
        """Attention weights of the last steered global layer, (Q, heads, S, S)."""
        for block in reversed(self.stimuli.blocks):
            attn = getattr(block.globl, "attn", None)
            if attn is not None and attn.last_weights is not None:
                return attn.last_weights
        return np.zeros((0, 0, 0, 0))

    def enroll(self, waveform: Tensor) -> Tensor:
        """Speaker features of the dominant source of an enrollment recording.

        The enrollment is separated online; the channel whose estimate carries
        the most power is taken as the enrolled speaker.
        """
        self._check_steerable()
        _, _, generic = self.front_end(waveform)
        feats = self.speaker(generic)
        with no_grad():
            detached = [Tensor(f.data) for f in feats]
            estimates = self.run_spaces(waveform.detach(), Mode.OFFLINE, detached).estimates
        powers = [float(np.mean(e.data.astype(np.float64) ** 2)) for e in estimates]
        dominant = int(np.argmax(powers))
        logger.debug("Enrollment channel powers %s; using %d", powers, dominant)
        return feats[dominant]

    def separate(
        self, waveform: np.ndarray, mode: Mode, enrollment: Sequence[Tensor] | None = None
    ) -> SpaceOutputs:
        with no_grad():
            x = Tensor(np.asarray(waveform, dtype=self.encoder.weight.dtype))
            return self.run_spaces(x, mode, enrollment, capture=True)
