"""Shared fixtures: tiny configurations that keep every forward pass fast."""

import numpy as np
import pytest

from steersep.config import CorpusConfig, ModelConfig, RunConfig, TrainConfig


def _model_config(**update) -> ModelConfig:
    base = dict(
        window=4, features=8, segment=8, pooled=4, hidden=4, heads=2,
        generic_blocks=1, speaker_blocks=1, stimuli_blocks=1, seed=3,
    )
    base.update(update)
    return ModelConfig(**base)


def _run_config(model: dict | None = None, **train) -> RunConfig:
    settings = dict(
        max_epochs=2, batch_size=2, mixtures_per_epoch=2, utterance_seconds=0.05,
        patience=5, seed=11, pit_switch_epoch=0,
    )
    settings.update(train)
    return RunConfig(
        corpus=CorpusConfig(
            num_speakers=3, heldout_speakers=2, utterances_per_speaker=2,
            utterance_seconds=0.5, enrollment_seconds=0.5, validation_mixtures=1,
            test_mixtures=2, seed=5,
        ),
        model=_model_config(**(model or {})),
        train=TrainConfig(**settings),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_model_config():
    return _model_config


@pytest.fixture
def make_run_config():
    return _run_config


@pytest.fixture
def tiny_config():
    return _model_config()
