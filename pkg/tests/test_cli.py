"""Tests for cli module."""

import json

import pytest
from click.testing import CliRunner

from steersep.audio import read_wav
from steersep.cli import cli
from steersep.config import load_config
from steersep.cost import count_params


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def config_file(make_run_config, tmp_path):
    path = tmp_path / "config.json"
    path.write_text(make_run_config(max_epochs=1).to_json())
    return path


def test_help(runner):
    """Test that every command is listed."""
    result = runner.invoke(cli, ["--help"])
    assert result.exit_code == 0
    for command in ("synth", "train", "separate", "eval-sep", "eval-sv", "cost", "ablate",
                    "summary"):
        assert command in result.output


def test_cost_sweep_writes_csv(runner, tmp_path):
    """Test the window sweep writes a header plus eight rows."""
    result = runner.invoke(cli, ["cost", "--sweep", "-o", str(tmp_path), "--json"])
    assert result.exit_code == 0, result.output
    lines = (tmp_path / "cost.csv").read_text().splitlines()
    assert len(lines) == 9
    rows = json.loads(result.stdout)
    assert rows[0]["arch"] == "galr"


def test_invalid_override_exits_with_config_code(runner, tmp_path):
    """Test exit code 2 for a config that fails validation."""
    result = runner.invoke(cli, ["cost", "-o", str(tmp_path), "--model.window=3"])
    assert result.exit_code == 2
    assert "Error:" in result.output


def test_missing_config_exits_with_missing_code(runner, tmp_path):
    """Test exit code 3 for a config path that does not exist."""
    result = runner.invoke(cli, ["cost", "-c", str(tmp_path / "nope.json"), "-o", str(tmp_path)])
    assert result.exit_code == 3
    assert "not found" in result.output


def test_summary_counts_match_cost_model(runner, config_file):
    """Test the parameter inventory against the closed-form count."""
    result = runner.invoke(cli, ["summary", "-c", str(config_file), "--json"])
    assert result.exit_code == 0, result.output
    rows = json.loads(result.stdout)
    config = load_config(config_file)
    assert sum(r["count"] for r in rows) == count_params(config.model, 3)


def test_synth_train_separate(runner, config_file, tmp_path):
    """Test the corpus-to-separation workflow through the command line."""
    data, run, out = tmp_path / "data", tmp_path / "run", tmp_path / "sep"
    result = runner.invoke(cli, ["synth", "-c", str(config_file), "-o", str(data), "--json"])
    assert result.exit_code == 0, result.output
    assert set(json.loads(result.stdout)) == {"corpus", "validation", "test"}

    result = runner.invoke(
        cli, ["train", "-c", str(config_file), "-o", str(run), "--corpus", str(data), "--json"]
    )
    assert result.exit_code == 0, result.output
    assert [r["epoch"] for r in json.loads(result.stdout)] == [0]

    mixture = data / "test" / "test0000_mix.wav"
    result = runner.invoke(cli, [
        "separate", "--checkpoint", str(run / "checkpoint.bin"), "-i", str(mixture),
        "-o", str(out), "--json",
    ])
    assert result.exit_code == 0, result.output
    length = len(read_wav(mixture)[0])
    for j in range(2):
        wave, rate = read_wav(out / f"source{j}.wav")
        assert len(wave) == length
        assert rate == 8000
    assert (out / "cross_attention.csv").exists()


def test_separate_missing_checkpoint(runner, tmp_path):
    """Test exit code 3 when the checkpoint does not exist."""
    result = runner.invoke(cli, [
        "separate", "--checkpoint", str(tmp_path / "checkpoint.bin"),
        "-i", str(tmp_path / "mix.wav"), "-o", str(tmp_path / "out"),
    ])
    assert result.exit_code == 3


def test_eval_commands_accept_overrides(runner, config_file, tmp_path):
    """Test that eval-sep and eval-sv apply dotted config overrides."""
    data, run = tmp_path / "data", tmp_path / "run"
    assert runner.invoke(cli, ["synth", "-c", str(config_file), "-o", str(data)]).exit_code == 0
    result = runner.invoke(
        cli, ["train", "-c", str(config_file), "-o", str(run), "--corpus", str(data), "--json"]
    )
    assert result.exit_code == 0, result.output
    checkpoint = str(run / "checkpoint.bin")

    result = runner.invoke(cli, [
        "eval-sep", "--checkpoint", checkpoint, "--manifest", str(data / "test.json"),
        "-c", str(config_file), "-o", str(tmp_path / "sep"), "--json",
        '--eval.modes=["autopilot"]',
    ])
    assert result.exit_code == 0, result.output
    assert set(json.loads(result.stdout)) == {"autopilot"}

    result = runner.invoke(cli, [
        "eval-sv", "--checkpoint", checkpoint, "--corpus", str(data),
        "-c", str(config_file), "-o", str(tmp_path / "sv"), "--json", "--eval.sv_trials=4",
    ])
    assert result.exit_code == 0, result.output
    assert json.loads(result.stdout)["trials"] == 4

    result = runner.invoke(cli, [
        "eval-sv", "--checkpoint", checkpoint, "--corpus", str(data),
        "-o", str(tmp_path / "sv"), "--eval.sv_trials=1",
    ])
    assert result.exit_code == 2


def test_train_runs_write_identical_metrics(runner, config_file, tmp_path):
    """Test that two training runs with one seed write byte-identical metrics.csv."""
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        result = runner.invoke(cli, [
            "train", "-c", str(config_file), "-o", str(out), "--seed", "5", "--json",
            "--train.max_epochs=2",
        ])
        assert result.exit_code == 0, result.output
        outputs.append((out / "metrics.csv").read_bytes())
    assert outputs[0] == outputs[1]
    assert len(outputs[0].splitlines()) == 3
