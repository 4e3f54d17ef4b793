"""Tests for ablation module."""

import csv

import pytest

from steersep.ablation import (
    Grid,
    ablate,
    config_hash,
    desk_datasets,
    summarizer_grid,
    sv_grid,
    table_grid,
)
from steersep.config import CorpusConfig, RunConfig
from steersep.models import GlobalKind, LocalKind, Mode, SpeakerLoss, SteeringReg


def test_summarizer_grid_permutes_summarizers(make_run_config):
    """Test the four local/global pairings, all autopilot at window 16."""
    cells = summarizer_grid(make_run_config())
    pairs = [(c.config.model.local_kind, c.config.model.global_kind) for c in cells]
    assert pairs == [
        (LocalKind.RNN, GlobalKind.SELF_ATTN),
        (LocalKind.RNN, GlobalKind.RNN),
        (LocalKind.SELF_ATTN, GlobalKind.SELF_ATTN),
        (LocalKind.SELF_ATTN, GlobalKind.RNN),
    ]
    assert all(c.config.model.window == 16 for c in cells)
    assert all(c.config.train.mode == Mode.AUTOPILOT for c in cells)
    assert all(c.config.train.speaker_aug is None for c in cells)


def test_table_grid_ablates_one_thing_at_a_time(make_run_config):
    """Test the baseline and its four single-change variants."""
    cells = {c.name: c.config.train for c in table_grid(make_run_config())}
    assert list(cells) == ["baseline", "dropout", "no-noise", "no-speaker-aug", "no-reg"]
    base = cells["baseline"]
    assert base.mode == Mode.ONLINE
    assert base.steering_reg == SteeringReg.NOISE
    assert base.speaker_aug is not None and base.speaker_aug_epochs >= 1
    assert cells["dropout"].steering_reg == SteeringReg.DROPOUT
    assert cells["no-noise"].steering_reg == SteeringReg.NONE
    assert cells["no-speaker-aug"].speaker_aug is None
    assert cells["no-reg"].use_reg_loss is False
    assert cells["no-reg"].speaker_aug == base.speaker_aug


def test_sv_grid(make_run_config):
    """Test Tune-InCE against the token-id baseline."""
    cells = sv_grid(make_run_config(mode="autopilot"))
    assert [c.config.train.speaker_loss for c in cells] == [
        SpeakerLoss.INCE,
        SpeakerLoss.TOKEN_ID,
    ]
    assert all(c.config.train.mode == Mode.ONLINE for c in cells)


def test_config_hash(make_run_config):
    """Test that the hash is stable and tells configs apart."""
    a, b = make_run_config(), make_run_config()
    assert config_hash(a) == config_hash(b)
    assert len(config_hash(a)) == 64
    assert config_hash(a) != config_hash(make_run_config(lr=2e-3))
    hashes = {config_hash(c.config) for c in table_grid(a)}
    assert len(hashes) == 5


def test_desk_datasets_need_two_heldout_speakers():
    """Test the held-out speaker check and the split sizes."""
    config = RunConfig(corpus=CorpusConfig(num_speakers=2, heldout_speakers=1))
    with pytest.raises(ValueError, match="two held-out"):
        desk_datasets(config)


def test_ablate_summarizer_grid(make_run_config, tmp_path):
    """Test a one-epoch summarizer ablation end to end."""
    config = make_run_config(max_epochs=1)
    data = desk_datasets(config)
    assert len(data.validation) == 1
    assert len(data.test) == 2
    rows = ablate(config, Grid.SUMMARIZER, tmp_path, data=data)
    assert len(rows) == 4
    assert all(r.auc is None for r in rows)
    with open(tmp_path / "ablation.csv", newline="") as f:
        table = list(csv.DictReader(f))
    assert [r["name"] for r in table] == [r.name for r in rows]
    assert all(r["auc"] == "" for r in table)
    assert (tmp_path / rows[0].name / "metrics.csv").exists()


@pytest.mark.slow
def test_desk_scale_ince_steering_verifies_unseen_speakers(tmp_path):
    """Test AUC >= 0.9 on masked unseen-speaker trials, above the token-id baseline."""
    config = RunConfig()
    assert config.eval.sv_trials == 200
    assert config.corpus.heldout_speakers == 5
    rows = {r.name: r for r in ablate(config, Grid.SV, tmp_path)}
    assert rows["ince"].auc >= 0.9
    assert rows["ince"].auc > rows["token_id"].auc
