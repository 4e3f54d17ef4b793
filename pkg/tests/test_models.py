"""Tests for models module."""

import pytest
from pydantic import ValidationError

from steersep.models import (
    CorpusManifest,
    EpochRecord,
    Mode,
    PermutationAssignment,
    PermutationMethod,
    Phase,
    SeparationRow,
    SvTrial,
    UtteranceRecord,
)


def test_permutation_assignment_must_be_bijection():
    """Test that a mapping has to be a permutation of 0..C-1."""
    ok = PermutationAssignment(mapping=(1, 0), cost=-3.0, method=PermutationMethod.UPIT_SISNR)
    assert ok.mapping == (1, 0)
    with pytest.raises(ValidationError):
        PermutationAssignment(mapping=(0, 0), cost=0.0, method=PermutationMethod.UPIT_SISNR)
    with pytest.raises(ValidationError):
        PermutationAssignment(mapping=(1, 2), cost=0.0, method=PermutationMethod.UPIT_SPEAKER)


def test_sv_trial_same():
    """Test the same-speaker flag."""
    trial = SvTrial(utterance_a="3:0", utterance_b="3:1", speaker_a=3, speaker_b=3)
    assert trial.same
    assert trial.interferer_a is None
    assert not SvTrial(utterance_a="3:0", utterance_b="4:1", speaker_a=3, speaker_b=4).same


def test_corpus_manifest_for_speaker():
    """Test filtering utterance records by speaker."""
    manifest = CorpusManifest(
        sample_rate=8000,
        train_speakers=[0],
        heldout_speakers=[1],
        utterances=[
            UtteranceRecord(speaker_id=0, utterance_path="a.wav", duration=1.0),
            UtteranceRecord(speaker_id=1, utterance_path="b.wav", duration=1.0),
            UtteranceRecord(speaker_id=0, utterance_path="c.wav", duration=2.0),
        ],
    )
    assert [u.utterance_path for u in manifest.for_speaker(0)] == ["a.wav", "c.wav"]
    reloaded = CorpusManifest.model_validate_json(manifest.model_dump_json())
    assert reloaded == manifest


def test_enum_values_parse_from_strings():
    """Test that records accept the JSON spelling of their enums."""
    row = SeparationRow(mixture_id="m", mode="offline", si_snr=1.0, si_snri=2.0, sdri=3.0,
                        permutation=(0, 1), method="upit_speaker")
    assert row.mode == Mode.OFFLINE
    assert row.method == PermutationMethod.UPIT_SPEAKER
    record = EpochRecord(epoch=0, phase="speaker_aug", train_loss=1.0, val_loss=2.0,
                         val_si_snr=-2.0)
    assert record.phase == Phase.SPEAKER_AUG
