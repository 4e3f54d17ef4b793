"""Tests for cost module."""

import csv
import itertools

import numpy as np
import pytest

from steersep.config import CostConfig
from steersep.cost import (
    REFERENCE_DPRNN,
    REFERENCE_GALR,
    count_params,
    estimate_flops,
    estimate_memory,
    ga_attention_flops,
    sweep,
    write_cost_csv,
)
from steersep.model import SeparationModel
from steersep.models import GlobalKind, LocalKind, Mode, SteeringKind
from steersep.nn import trace_activations
from steersep.tensor import precision


@pytest.mark.parametrize(
    "local,globl,steering",
    list(itertools.product(LocalKind, GlobalKind, SteeringKind)),
)
def test_count_params_matches_model(make_model_config, local, globl, steering):
    """Test the closed-form count against a constructed model for every architecture."""
    config = make_model_config(local_kind=local, global_kind=globl, steering_kind=steering,
                               generic_blocks=2)
    model = SeparationModel(config, num_speakers=5)
    assert model.num_parameters() == count_params(config, 5)


def test_count_params_without_layernorm_site(make_model_config):
    """Test the dual-attention site without its LayerNorm."""
    config = make_model_config(dual_layernorm=False, num_sources=3)
    assert SeparationModel(config, 2).num_parameters() == count_params(config, 2)


def test_reference_galr_size():
    """Test that the reference GALR configuration has about 2.3M parameters."""
    assert count_params(REFERENCE_GALR) == pytest.approx(2.3e6, rel=0.1)


def test_pooling_cuts_attention_by_q_over_k():
    """Test that pooled attention costs Q/K of per-position attention."""
    pooled = ga_attention_flops(REFERENCE_GALR, segments=31)
    full = ga_attention_flops(REFERENCE_GALR, segments=31, pooled=False)
    assert pooled / full == pytest.approx(8 / 256)


def test_flops_scale_linearly_with_duration():
    """Test that doubling the input roughly doubles the FLOPs."""
    one = estimate_flops(REFERENCE_GALR, 1.0)
    two = estimate_flops(REFERENCE_GALR, 2.0)
    assert two / one == pytest.approx(2.0, rel=0.02)


def test_galr_is_cheaper_than_dprnn():
    """Test the FLOP and memory advantage over the recurrent reference at 1 s."""
    assert estimate_flops(REFERENCE_GALR, 1.0) / estimate_flops(REFERENCE_DPRNN, 1.0) < 0.4
    assert estimate_memory(REFERENCE_GALR, 1.0) / estimate_memory(REFERENCE_DPRNN, 1.0) < 0.6


@pytest.mark.parametrize("mode", [Mode.AUTOPILOT, Mode.ONLINE])
@pytest.mark.parametrize("globl", [GlobalKind.SELF_ATTN, GlobalKind.RNN])
def test_traced_memory_matches_estimate(make_model_config, rng, mode, globl):
    """Test that the retained activations of a real forward pass equal the estimate."""
    steering = SteeringKind.DUAL_ATTN if globl == GlobalKind.SELF_ATTN else (
        SteeringKind.FILM_BETWEEN
    )
    config = make_model_config(global_kind=globl, steering_kind=steering)
    with precision("float32"):
        model = SeparationModel(config, 3, dtype=np.float32)
    wave = rng.normal(size=400).astype(np.float32)
    with trace_activations() as trace:
        model.separate(wave, mode)
    assert trace.total_bytes == estimate_memory(config, 400 / 8000, 8000, mode)


def test_traced_memory_local_attention(make_model_config, rng):
    """Test the estimate for a self-attention local layer with FiLM-inside steering."""
    config = make_model_config(local_kind=LocalKind.SELF_ATTN,
                               steering_kind=SteeringKind.FILM_INSIDE)
    with precision("float32"):
        model = SeparationModel(config, 3, dtype=np.float32)
    with trace_activations() as trace:
        model.separate(rng.normal(size=300).astype(np.float32), Mode.ONLINE)
    assert trace.total_bytes == estimate_memory(config, 300 / 8000, 8000, Mode.ONLINE)


def test_sweep_rows_and_monotonicity(tmp_path):
    """Test eight rows, GALR first, with cost falling as the window grows."""
    rows = sweep(CostConfig())
    assert len(rows) == 8
    assert [r.arch for r in rows] == ["galr"] * 4 + ["dprnn"] * 4
    assert [r.window for r in rows] == [2, 4, 8, 16] * 2
    for arch in ("galr", "dprnn"):
        subset = [r for r in rows if r.arch == arch]
        assert all(a.gflops > b.gflops for a, b in zip(subset, subset[1:]))
        assert all(a.memory_bytes > b.memory_bytes for a, b in zip(subset, subset[1:]))
    path = tmp_path / "cost.csv"
    write_cost_csv(rows, path)
    with open(path, newline="") as fh:
        records = list(csv.DictReader(fh))
    assert len(records) == 8
    assert float(records[0]["gflops"]) == rows[0].gflops


def test_sweep_window_grid_changes_segments():
    """Test that the window grid pairs short windows with long segments."""
    rows = sweep(CostConfig(windows=[16], window_grid=True))
    default = sweep(CostConfig(windows=[16]))
    assert rows[0].params != default[0].params


def test_sweep_rejects_unknown_window():
    """Test that only the supported window lengths are swept."""
    with pytest.raises(ValueError, match="window"):
        sweep(CostConfig(windows=[3]))


def test_encoder_only_activation_floor(make_model_config, rng):
    """Test that a model with no blocks still matches the estimate."""
    config = make_model_config(generic_blocks=0, speaker_blocks=0, stimuli_blocks=0)
    with precision("float32"):
        model = SeparationModel(config, 1, dtype=np.float32)
    with trace_activations() as trace:
        model.separate(rng.normal(size=100).astype(np.float32), Mode.AUTOPILOT)
    assert trace.total_bytes == estimate_memory(config, 100 / 8000, 8000, Mode.AUTOPILOT)
