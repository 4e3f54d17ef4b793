"""Tests for evaluation module."""

import csv

import numpy as np
import pytest

from steersep.ablation import desk_datasets
from steersep.audio import Corpus, read_wav
from steersep.config import RunConfig
from steersep.evaluation import (
    build_sv_trials,
    evaluate_separation,
    evaluate_sv,
    export_attention,
    write_separation_csv,
    write_sv_outputs,
)
from steersep.model import ModeError, SeparationModel
from steersep.models import Mode, PermutationMethod
from steersep.tensor import Tensor, no_grad
from steersep.trainer import Trainer

SECONDS = 0.05


@pytest.fixture
def corpus(make_run_config):
    return Corpus.synthesize(make_run_config().corpus)


@pytest.fixture
def model(make_model_config):
    return SeparationModel(make_model_config(), num_speakers=3)


@pytest.fixture
def test_mixtures(corpus):
    return corpus.fixed_mixtures(corpus.heldout_speakers, 3, SECONDS, (0.0, 5.0), 21, "test")


@pytest.fixture
def enrollments(corpus):
    rng = np.random.default_rng(8)
    pool = corpus.heldout_speakers
    return {sid: corpus.online_mixture(sid, 0, pool, SECONDS, (0.0, 5.0), rng) for sid in pool}


def _short(corpus, samples=400):
    utterances = {s: [u[:samples] for u in waves] for s, waves in corpus.utterances.items()}
    return Corpus(corpus.sample_rate, utterances, corpus.train_speakers, corpus.heldout_speakers)


def _read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_separation_rows_per_mode(model, test_mixtures, tmp_path):
    """Test one scored row per mixture and mode, and the CSV written from them."""
    report = evaluate_separation(model, test_mixtures, [Mode.AUTOPILOT, Mode.ONLINE])
    assert len(report.rows) == 6
    assert [r.mode for r in report.rows] == [Mode.AUTOPILOT] * 3 + [Mode.ONLINE] * 3
    assert [r.mixture_id for r in report.rows[:3]] == ["test0000", "test0001", "test0002"]
    for row in report.rows:
        assert sorted(row.permutation) == [0, 1]
        assert row.method == PermutationMethod.UPIT_SISNR
        assert np.isfinite([row.si_snr, row.si_snri, row.sdri]).all()
    assert set(report.means()) == {Mode.AUTOPILOT, Mode.ONLINE}
    write_separation_csv(report.rows, tmp_path / "separation.csv")
    rows = _read_csv(tmp_path / "separation.csv")
    assert len(rows) == 6
    assert rows[0]["mode"] == "autopilot"
    assert float(rows[0]["si_snri"]) == report.rows[0].si_snri


def test_offline_reuses_enrollments(model, test_mixtures, enrollments):
    """Test that each enrolled speaker is embedded once and then served from the cache."""
    report = evaluate_separation(model, test_mixtures, [Mode.OFFLINE], enrollments)
    assert report.cache_hits == {3: 2, 4: 2}
    assert all(r.permutation == (0, 1) for r in report.rows)
    assert all(r.method == PermutationMethod.UPIT_SPEAKER for r in report.rows)


def test_offline_without_enrollment(model, test_mixtures, enrollments):
    """Test that a speaker missing from the enrollments is a ModeError."""
    del enrollments[4]
    with pytest.raises(ModeError, match="speaker 4"):
        evaluate_separation(model, test_mixtures, [Mode.OFFLINE], enrollments)


def test_estimates_written_in_reference_order(model, test_mixtures, tmp_path):
    """Test one WAV per source with the mixture's length."""
    evaluate_separation(model, test_mixtures[:1], [Mode.ONLINE], out_dir=tmp_path)
    for j in range(2):
        wave, rate = read_wav(tmp_path / f"test0000_online_s{j}.wav")
        assert rate == 8000
        assert len(wave) == len(test_mixtures[0].mixture)


def test_sv_trials_are_balanced(corpus):
    """Test equal same- and different-speaker counts with maskers from the listed speakers."""
    trials = build_sv_trials(corpus, corpus.train_speakers, 4, seed=3)
    same = [t for t in trials if t.same]
    assert len(same) == 2
    assert len(trials) == 4
    for t in trials:
        assert t.interferer_a is not None
        assert int(t.interferer_a.split(":")[0]) != t.speaker_a
        assert 0.0 <= t.sir_a <= 5.0
    assert build_sv_trials(corpus, corpus.train_speakers, 4, seed=3) == trials


def test_sv_trials_clean_and_errors(corpus):
    """Test unmasked trials and the two-speaker minimum."""
    trials = build_sv_trials(corpus, corpus.heldout_speakers, 10, seed=1, clean=True)
    assert all(t.interferer_a is None and t.interferer_b is None for t in trials)
    with pytest.raises(ValueError):
        build_sv_trials(corpus, [0], 10, seed=1)


def test_evaluate_sv_and_outputs(model, corpus, tmp_path):
    """Test that SV scores every trial and writes roc, steering and table CSVs."""
    short = _short(corpus)
    trials = build_sv_trials(short, short.heldout_speakers, 10, seed=2)
    report = evaluate_sv(model, short, trials)
    assert len(report.scores) == len(trials)
    assert all(0.0 <= s <= 1.0 for s in report.scores)
    assert 0.0 <= report.roc.auc <= 1.0
    assert report.vectors.shape == (len(report.vector_speakers), 8)
    write_sv_outputs(report, model, tmp_path)
    assert _read_csv(tmp_path / "roc.csv")
    assert len(_read_csv(tmp_path / "steering.csv")) == len(report.vectors)
    assert len(_read_csv(tmp_path / "speaker_table.csv")) == 3


def test_export_attention_online(model, test_mixtures, tmp_path):
    """Test one cross-attention curve file plus the dual-attention heat map."""
    out = model.separate(test_mixtures[0].mixture, Mode.ONLINE)
    written = export_attention(model, out, 8000, tmp_path)
    assert [p.name for p in written] == ["cross_attention.csv", "dual_attention.csv"]
    rows = _read_csv(tmp_path / "cross_attention.csv")
    assert len(rows) == out.cross_weights[0].shape[1]
    assert float(rows[1]["time"]) == pytest.approx(8 // 2 * (4 // 2) / 8000)


def test_export_attention_offline_lengths(model, corpus, test_mixtures, tmp_path):
    """Test per-source curve files when enrollments differ in length."""
    rng = np.random.default_rng(0)
    pool = corpus.heldout_speakers
    long = corpus.online_mixture(pool[0], 0, pool, 0.08, (0.0, 5.0), rng).mixture
    short = corpus.online_mixture(pool[1], 0, pool, SECONDS, (0.0, 5.0), rng).mixture
    with no_grad():
        enrollment = [model.enroll(Tensor(long)), model.enroll(Tensor(short))]
    out = model.separate(test_mixtures[0].mixture, Mode.OFFLINE, enrollment)
    names = [p.name for p in export_attention(model, out, 8000, tmp_path)]
    assert names[:2] == ["cross_attention_s0.csv", "cross_attention_s1.csv"]


def test_export_attention_autopilot(model, test_mixtures, tmp_path):
    """Test that autopilot has no attention to export."""
    out = model.separate(test_mixtures[0].mixture, Mode.AUTOPILOT)
    assert export_attention(model, out, 8000, tmp_path) == []


@pytest.mark.slow
def test_desk_scale_separation(tmp_path):
    """Test SI-SNRi >= 5 dB on unseen pairs and online within 0.5 dB of autopilot or better."""
    config = RunConfig()
    assert config.train.mode == Mode.ONLINE
    data = desk_datasets(config)
    assert len(data.test) == 50
    model = Trainer(config, data.corpus, data.validation, tmp_path, show_progress=False).fit().model
    means = evaluate_separation(model, data.test, [Mode.AUTOPILOT, Mode.ONLINE]).means()
    online, autopilot = means[Mode.ONLINE]["si_snri"], means[Mode.AUTOPILOT]["si_snri"]
    assert online >= 5.0
    assert online >= autopilot - 0.5
