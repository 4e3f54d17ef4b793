from enum import Enum

from pydantic import BaseModel, Field, model_validator


class Mode(str, Enum):
    AUTOPILOT = "autopilot"
    ONLINE = "online"
    OFFLINE = "offline"


class LocalKind(str, Enum):
    RNN = "rnn"
    SELF_ATTN = "self_attn"


class GlobalKind(str, Enum):
    RNN = "rnn"
    SELF_ATTN = "self_attn"


class SteeringKind(str, Enum):
    DUAL_ATTN = "dual_attn"
    FILM_BETWEEN = "film_between"
    FILM_INSIDE = "film_inside"


class SteeringReg(str, Enum):
    NOISE = "noise"
    DROPOUT = "dropout"
    NONE = "none"


class SpeakerLoss(str, Enum):
    INCE = "ince"
    TOKEN_ID = "token_id"


class PermutationMethod(str, Enum):
    UPIT_SISNR = "upit_sisnr"
    UPIT_SPEAKER = "upit_speaker"


class Phase(str, Enum):
    WARMUP = "warmup"
    MAIN = "main"
    SPEAKER_AUG = "speaker_aug"
    FINETUNE = "finetune"


class PermutationAssignment(BaseModel):
    mapping: tuple[int, ...]
    cost: float
    method: PermutationMethod

    @model_validator(mode="after")
    def _bijection(self) -> "PermutationAssignment":
        if sorted(self.mapping) != list(range(len(self.mapping))):
            raise ValueError(f"mapping {self.mapping} is not a permutation")
        return self


class UtteranceRecord(BaseModel):
    speaker_id: int
    utterance_path: str
    duration: float


class CorpusManifest(BaseModel):
    sample_rate: int
    train_speakers: list[int]
    heldout_speakers: list[int]
    utterances: list[UtteranceRecord]

    def for_speaker(self, speaker_id: int) -> list[UtteranceRecord]:
        return [u for u in self.utterances if u.speaker_id == speaker_id]


class MixtureRecord(BaseModel):
    mixture_id: str
    mixture_path: str
    source_paths: list[str]
    sir_db: float
    speaker_ids: list[int]


class MixtureManifest(BaseModel):
    sample_rate: int
    mixtures: list[MixtureRecord]
    enrollments: dict[int, MixtureRecord] = Field(default_factory=dict)


class SvTrial(BaseModel):
    utterance_a: str
    utterance_b: str
    speaker_a: int
    speaker_b: int
    interferer_a: str | None = None
    interferer_b: str | None = None
    sir_a: float = 0.0
    sir_b: float = 0.0

    @property
    def same(self) -> bool:
        return self.speaker_a == self.speaker_b


class SeparationRow(BaseModel):
    mixture_id: str
    mode: Mode
    si_snr: float
    si_snri: float
    sdri: float
    permutation: tuple[int, ...]
    method: PermutationMethod


class EpochRecord(BaseModel):
    epoch: int
    phase: Phase
    train_loss: float
    val_loss: float
    val_si_snr: float


class CostRow(BaseModel):
    arch: str
    window: int
    params: int
    memory_bytes: int
    gflops: float


class AblationRow(BaseModel):
    name: str
    config_hash: str
    si_snri: float
    auc: float | None = None
