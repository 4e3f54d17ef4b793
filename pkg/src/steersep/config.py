"""Run configuration: one JSON document with corpus/model/train/eval/cost sections."""

import json
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .models import GlobalKind, LocalKind, Mode, SpeakerLoss, SteeringKind, SteeringReg

ALLOWED_WINDOWS = (2, 4, 8, 16)


class ConfigError(Exception):
    """Raised when a run configuration fails validation."""

    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CorpusConfig(_Section):
    seed: int = 0
    sample_rate: int = Field(8000, gt=0)
    num_speakers: int = Field(20, ge=2)
    heldout_speakers: int = Field(5, ge=0)
    utterances_per_speaker: int = Field(5, ge=1)
    utterance_seconds: float = Field(5.0, ge=0.5)
    enrollment_seconds: float = Field(16.0, ge=0.5)
    test_mixtures: int = Field(50, ge=0)
    validation_mixtures: int = Field(10, ge=1)
    sir_range: tuple[float, float] = (0.0, 5.0)

    @model_validator(mode="after")
    def _check_range(self) -> "CorpusConfig":
        lo, hi = self.sir_range
        if lo > hi:
            raise ValueError(f"sir_range lower bound {lo} exceeds upper bound {hi}")
        return self


class SpeakerAugConfig(_Section):
    seed: int = 1000
    num_speakers: int = Field(20, ge=2)
    utterances_per_speaker: int = Field(5, ge=1)


class ModelConfig(_Section):
    """Architecture; block counts may be zero (pass-through) for cost accounting."""

    window: int = 8
    features: int = Field(32, ge=1)
    segment: int = Field(32, ge=2)
    pooled: int = Field(8, ge=1)
    hidden: int = Field(32, ge=1)
    heads: int = Field(4, ge=1)
    generic_blocks: int = Field(2, ge=0)
    speaker_blocks: int = Field(1, ge=0)
    stimuli_blocks: int = Field(1, ge=0)
    num_sources: int = Field(2, ge=1, le=4)
    local_kind: LocalKind = LocalKind.RNN
    global_kind: GlobalKind = GlobalKind.SELF_ATTN
    steering_kind: SteeringKind = SteeringKind.DUAL_ATTN
    ga_residual: bool = True
    dual_layernorm: bool = True
    positional: bool = True
    seed: int = 0

    @model_validator(mode="after")
    def _check_shapes(self) -> "ModelConfig":
        if self.window not in ALLOWED_WINDOWS:
            raise ValueError(f"window must be one of {ALLOWED_WINDOWS}, got {self.window}")
        if self.segment % 2:
            raise ValueError(f"segment length K must be even, got {self.segment}")
        if self.pooled > self.segment:
            raise ValueError(f"pooled Q={self.pooled} exceeds segment K={self.segment}")
        if self.features % self.heads:
            raise ValueError(f"features D={self.features} not divisible by heads={self.heads}")
        return self


class TrainConfig(_Section):
    mode: Mode = Mode.ONLINE
    precision: str = Field("float32", pattern="^float(32|64)$")
    lr: float = Field(1e-3, gt=0)
    weight_decay: float = Field(1e-6, ge=0)
    clip_l2: float = Field(5.0, gt=0)
    max_epochs: int = Field(30, ge=0)
    warmup_epochs: int = Field(0, ge=0)
    speaker_aug_epochs: int = Field(0, ge=0)
    finetune_epochs: int = Field(0, ge=0)
    patience: int = Field(10, ge=1)
    batch_size: int = Field(4, ge=1)
    mixtures_per_epoch: int | None = Field(None, ge=1)
    utterance_seconds: float = Field(4.0, gt=0)
    sir_range: tuple[float, float] = (0.0, 5.0)
    lambda_: float = Field(10.0, ge=0, alias="lambda")
    gamma: float = Field(3.0, gt=0)
    epsilon: float = Field(0.05, gt=0, le=1)
    use_reg_loss: bool = True
    pit_switch_epoch: int = Field(30, ge=0)
    seed: int = 0
    steering_reg: SteeringReg = SteeringReg.NOISE
    speaker_loss: SpeakerLoss = SpeakerLoss.INCE
    speaker_aug: SpeakerAugConfig | None = None

    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class EvalConfig(_Section):
    modes: list[Mode] = Field(default_factory=lambda: [Mode.AUTOPILOT, Mode.ONLINE])
    sv_trials: int = Field(200, ge=2)
    sv_clean: bool = False
    seed: int = 7


class CostConfig(_Section):
    input_seconds: float = Field(1.0, gt=0)
    sample_rate: int = Field(8000, gt=0)
    windows: list[int] = Field(default_factory=lambda: list(ALLOWED_WINDOWS))
    window_grid: bool = False


class RunConfig(_Section):
    corpus: CorpusConfig = Field(default_factory=CorpusConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    cost: CostConfig = Field(default_factory=CostConfig)

    def to_json(self) -> str:
        return self.model_dump_json(indent=2, by_alias=True)


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(document: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` overrides to a raw config document.

    Args:
        document: Parsed JSON config.
        overrides: Dotted assignments; values are parsed as JSON when possible.

    Returns:
        The updated document.

    Raises:
        ConfigError: If an override is not of the form ``a.b=value``.
    """
    for item in overrides:
        key, sep, raw = item.lstrip("-").partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"Override '{item}' must look like --section.key=value.")
        node = document
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"Override '{item}' descends into a non-object value.")
        node[leaf] = _parse_value(raw)
    return document


def load_config(path: Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Read, override and validate a run configuration.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        ConfigError: If the document is not valid JSON or fails the schema.
    """
    document: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        try:
            document = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config {path} is not valid JSON: {e}") from e
    apply_overrides(document, overrides or [])
    try:
        return RunConfig.model_validate(document)
    except ValidationError as e:
        raise ConfigError(str(e)) from e
