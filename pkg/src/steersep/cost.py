"""Closed-form parameter, activation-memory and FLOP accounting.

Every layer contributes a :class:`LayerCost` whose activation count matches
what that layer reports through ``nn.record_activation`` during a real
forward pass, so a traced run and the estimate can be compared directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .codec import num_frames
from .config import ALLOWED_WINDOWS, CostConfig, ModelConfig
from .models import CostRow, GlobalKind, LocalKind, Mode, SteeringKind
from .output import write_csv
from .segmentation import num_segments

COST_FIELDS = ["arch", "window", "params", "memory_bytes", "gflops"]

REFERENCE_GALR = ModelConfig(
    window=4, features=128, segment=256, pooled=8, hidden=128, heads=8,
    generic_blocks=6, speaker_blocks=0, stimuli_blocks=0,
)
REFERENCE_DPRNN = ModelConfig(
    window=2, features=64, segment=250, pooled=8, hidden=128, heads=4,
    generic_blocks=6, speaker_blocks=0, stimuli_blocks=0, global_kind=GlobalKind.RNN,
)
# (K, Q) used with each window length when window_grid is set.
WINDOW_SEGMENTS = {16: (64, 32), 8: (128, 16), 4: (256, 8), 2: (256, 8)}


@dataclass
class LayerCost:
    name: str
    macs: int
    activations: int


# parameters -------------------------------------------------------------


def _linear(n_in: int, n_out: int, bias: bool = True) -> int:
    return n_in * n_out + (n_out if bias else 0)


def _bilstm(n_in: int, hidden: int) -> int:
    return 2 * (n_in * 4 * hidden + hidden * 4 * hidden + 4 * hidden)


def _attention(d: int) -> int:
    return 4 * _linear(d, d)


def _block_params(config: ModelConfig, steered: bool) -> int:
    d, h = config.features, config.hidden
    if config.local_kind == LocalKind.RNN:
        local = _bilstm(d, h) + _linear(2 * h, d)
    else:
        local = _attention(d)
    local += 2 * d
    if config.global_kind == GlobalKind.SELF_ATTN:
        globl = (
            _linear(config.segment, config.pooled) + 2 * d + _attention(d)
            + _linear(config.pooled, config.segment)
        )
    else:
        globl = _bilstm(d, h) + _linear(2 * h, d) + 2 * d
    site = 0
    if steered:
        site = 2 * _linear(d, d)
        if config.steering_kind == SteeringKind.DUAL_ATTN:
            site += 2 * d if config.dual_layernorm else 0
        else:
            site += 1
    return local + globl + site


def count_params(config: ModelConfig, num_speakers: int = 1) -> int:
    """Exact parameter count of ``SeparationModel(config, num_speakers)``."""
    d, c, w = config.features, config.num_sources, config.window
    blocks = (config.generic_blocks + config.speaker_blocks) * _block_params(config, False)
    blocks += config.stimuli_blocks * _block_params(config, True)
    codec = w * d + d * w + 1 + _linear(d, c * d)
    speaker = _linear(d, c * d) + 3 * _linear(d, d)
    table = max(num_speakers, 1) * d + 1
    return blocks + codec + speaker + table


# per-layer accounting ---------------------------------------------------


def _lstm_cost(name: str, batch: int, steps: int, d: int, h: int) -> list[LayerCost]:
    per_dir = batch * steps * 4 * h * (d + h)
    return [
        LayerCost(f"{name}.fw", per_dir, batch * steps * 6 * h),
        LayerCost(f"{name}.bw", per_dir, batch * steps * 6 * h),
    ]


def _mha_cost(name: str, batch: int, steps: int, d: int, heads: int) -> list[LayerCost]:
    rows = batch * steps
    return [
        LayerCost(f"{name}.qkv", 3 * rows * d * d, 3 * rows * d),
        LayerCost(f"{name}.weights", 2 * batch * steps * steps * d,
                  batch * heads * steps * steps),
        LayerCost(f"{name}.output", rows * d * d, rows * d),
    ]


def ga_attention_flops(config: ModelConfig, segments: int, pooled: bool = True) -> int:
    """FLOPs of the attention products (QK^T and aV) of one GA layer.

    Without pooling attention would run once per position k in K.
    """
    invocations = config.pooled if pooled else config.segment
    return 2 * invocations * 2 * segments * segments * config.features


def _block_costs(
    config: ModelConfig, s: int, prefix: str, steering: SteeringKind | None
) -> list[LayerCost]:
    d, h, k, q = config.features, config.hidden, config.segment, config.pooled
    out: list[LayerCost] = []
    if config.local_kind == LocalKind.RNN:
        out += _lstm_cost(f"{prefix}.local.rnn", s, k, d, h)
        out.append(LayerCost(f"{prefix}.local.proj", s * k * 2 * h * d, s * k * d))
    else:
        out += _mha_cost(f"{prefix}.local.attn", s, k, d, config.heads)
    out.append(LayerCost(f"{prefix}.local.norm", 0, s * k * d))
    site = [LayerCost(f"{prefix}.site", 2 * d * d, 2 * d)] if steering else []
    if config.global_kind == GlobalKind.SELF_ATTN:
        out.append(LayerCost(f"{prefix}.global.pool", d * s * k * q, d * s * q))
        out.append(LayerCost(f"{prefix}.global.norm", 0, q * s * d))
        out += site
        if steering == SteeringKind.DUAL_ATTN and config.dual_layernorm:
            out.append(LayerCost(f"{prefix}.site.norm", 0, q * s * d))
        out += _mha_cost(f"{prefix}.global.attn", q, s, d, config.heads)
        out.append(LayerCost(f"{prefix}.global.unpool", d * s * q * k, d * s * k))
    else:
        out += _lstm_cost(f"{prefix}.global.rnn", k, s, d, h)
        out.append(LayerCost(f"{prefix}.global.proj", k * s * 2 * h * d, k * s * d))
        out.append(LayerCost(f"{prefix}.global.norm", 0, k * s * d))
        out += site
    return out


def layer_costs(
    config: ModelConfig,
    input_seconds: float,
    sample_rate: int = 8000,
    mode: Mode = Mode.AUTOPILOT,
) -> list[LayerCost]:
    """Per-layer MACs and retained activations of one forward pass in ``mode``.

    Offline mode assumes the enrollment features are precomputed with as many
    segments as the mixture.
    """
    mode = Mode(mode)
    d, c, w, k = config.features, config.num_sources, config.window, config.segment
    length = int(round(input_seconds * sample_rate))
    frames = num_frames(length, w)
    s = num_segments(frames, k)
    out = [LayerCost("encoder", frames * w * d, d * frames)]
    for b in range(config.generic_blocks):
        out += _block_costs(config, s, f"generic.{b}", None)

    def head(tag: str) -> list[LayerCost]:
        return [LayerCost(f"{tag}.mask", frames * d * c * d, frames * c * d)]

    def decode(tag: str) -> LayerCost:
        return LayerCost(f"{tag}.decoder", frames * d * w, d * frames)

    if mode == Mode.AUTOPILOT:
        for b in range(config.stimuli_blocks):
            out += _block_costs(config, s, f"stimuli.{b}", None)
        out += head("stimuli")
        out += [decode(f"source{j}") for j in range(c)]
        return out

    if mode == Mode.ONLINE:
        for b in range(config.speaker_blocks):
            out += _block_costs(config, s, f"speaker.{b}", None)
        out.append(LayerCost("speaker.embedder", s * k * d * c * d, s * k * c * d))
    out.append(LayerCost("cross.query", s * d * d, s * d))
    for j in range(c):
        out.append(LayerCost(f"cross.{j}.key_value", 2 * s * d * d, 2 * s * d))
        out.append(LayerCost(f"cross.{j}.weights", 2 * s * s * d, 0))
    for j in range(c):
        for b in range(config.stimuli_blocks):
            out += _block_costs(config, s, f"stimuli.{j}.{b}", config.steering_kind)
        out += head(f"source{j}")
        out.append(decode(f"source{j}"))
    return out


def estimate_flops(
    config: ModelConfig, input_seconds: float, sample_rate: int = 8000,
    mode: Mode = Mode.AUTOPILOT,
) -> int:
    """Twice the multiply-accumulate count of one forward pass."""
    return 2 * sum(layer.macs for layer in layer_costs(config, input_seconds, sample_rate, mode))


def estimate_memory(
    config: ModelConfig, input_seconds: float, sample_rate: int = 8000,
    mode: Mode = Mode.AUTOPILOT, itemsize: int = 4,
) -> int:
    """Bytes of activations retained for the backward pass (forward-retained lifetime)."""
    layers = layer_costs(config, input_seconds, sample_rate, mode)
    return itemsize * sum(layer.activations for layer in layers)


# sweeps -----------------------------------------------------------------


def cost_row(arch: str, config: ModelConfig, cost: CostConfig, mode: Mode = Mode.AUTOPILOT,
             num_speakers: int = 1) -> CostRow:
    return CostRow(
        arch=arch,
        window=config.window,
        params=count_params(config, num_speakers),
        memory_bytes=estimate_memory(config, cost.input_seconds, cost.sample_rate, mode),
        gflops=estimate_flops(config, cost.input_seconds, cost.sample_rate, mode) / 1e9,
    )


def galr_at(
    window: int, base: ModelConfig = REFERENCE_GALR, window_grid: bool = False
) -> ModelConfig:
    update: dict = {"window": window}
    if window_grid:
        segment, pooled = WINDOW_SEGMENTS[window]
        update.update(segment=segment, pooled=pooled, features=128)
    return base.model_copy(update=update)


def sweep(cost: CostConfig, galr: ModelConfig = REFERENCE_GALR,
          dprnn: ModelConfig = REFERENCE_DPRNN) -> list[CostRow]:
    """Cost rows over the window grid for both architectures, GALR first.

    Raises:
        ValueError: If a window is not one of the supported lengths.
    """
    for window in cost.windows:
        if window not in ALLOWED_WINDOWS:
            raise ValueError(f"window must be one of {ALLOWED_WINDOWS}, got {window}")
    rows = [cost_row("galr", galr_at(w, galr, cost.window_grid), cost) for w in cost.windows]
    rows += [cost_row("dprnn", dprnn.model_copy(update={"window": w}), cost)
             for w in cost.windows]
    return rows


def write_cost_csv(rows: list[CostRow], path: Path) -> None:
    write_csv(
        path,
        COST_FIELDS,
        [{**row.model_dump(), "gflops": repr(row.gflops)} for row in rows],
    )
