"""Tests for model module."""

import numpy as np
import pytest

from steersep.model import ModeError, SeparationModel
from steersep.models import (
    GlobalKind,
    Mode,
    PermutationAssignment,
    PermutationMethod,
    SteeringKind,
)
from steersep.objective import joint_loss, reconstruction_loss
from steersep.speaker import tune_ince_loss
from steersep.tensor import Tensor, no_grad

from .gradcheck import check_gradients

LENGTH = 200


@pytest.fixture
def model(make_model_config):
    return SeparationModel(make_model_config(), num_speakers=3)


def test_autopilot_separates_without_speaker_branch(model, rng):
    """Test C estimates of the input length and no steering."""
    out = model.separate(rng.normal(size=LENGTH), Mode.AUTOPILOT)
    assert [e.shape for e in out.estimates] == [(LENGTH,), (LENGTH,)]
    assert out.steering is None
    assert out.speaker_feats is None
    assert out.cross_weights == []


def test_online_steers_each_source(model, rng):
    """Test one steering vector, cross-attention map and dual-attention map per source."""
    out = model.separate(rng.normal(size=LENGTH), Mode.ONLINE)
    segments = out.segments.segments
    assert len(out.estimates) == 2
    assert [v.z.shape for v in out.steering] == [(8,), (8,)]
    assert [w.shape for w in out.cross_weights] == [(segments, segments)] * 2
    assert [w.shape for w in out.dual_weights] == [(4, 2, segments, segments)] * 2
    assert not out.estimates[0].requires_grad


def test_offline_uses_enrollment_features(model, rng):
    """Test offline separation from enrollment features of a different length."""
    with no_grad():
        enrolled = [model.enroll(Tensor(rng.normal(size=300))) for _ in range(2)]
    assert enrolled[0].shape[0] == 8
    out = model.separate(rng.normal(size=LENGTH), Mode.OFFLINE, enrolled)
    assert len(out.estimates) == 2
    assert out.cross_weights[0].shape == (out.segments.segments, enrolled[0].shape[1])


def test_offline_without_enrollment(model, rng):
    """Test that offline mode needs one enrollment per source."""
    wave = rng.normal(size=LENGTH)
    with pytest.raises(ModeError, match="got 0"):
        model.separate(wave, Mode.OFFLINE)
    with pytest.raises(ModeError, match="got 1"):
        model.separate(wave, Mode.OFFLINE, [Tensor(np.ones((8, 4)))])


def test_recurrent_global_layer_cannot_dual_attend(make_model_config, rng):
    """Test that attention steering needs an attentive global layer."""
    wave = rng.normal(size=LENGTH)
    rnn = SeparationModel(make_model_config(global_kind=GlobalKind.RNN), num_speakers=2)
    assert len(rnn.separate(wave, Mode.AUTOPILOT).estimates) == 2
    with pytest.raises(ModeError, match="global_kind=self_attn"):
        rnn.separate(wave, Mode.ONLINE)
    film = SeparationModel(
        make_model_config(global_kind=GlobalKind.RNN, steering_kind=SteeringKind.FILM_BETWEEN),
        num_speakers=2,
    )
    assert len(film.separate(wave, Mode.ONLINE).estimates) == 2


def test_three_sources(make_model_config, rng):
    """Test that the number of estimates follows num_sources."""
    model = SeparationModel(make_model_config(num_sources=3), num_speakers=4)
    out = model.separate(rng.normal(size=LENGTH), Mode.ONLINE)
    assert len(out.estimates) == 3
    assert len(out.steering) == 3


def test_summary_lists_every_parameter(model):
    """Test that the inventory covers the whole model exactly once."""
    rows = model.summary()
    names = [name for name, _, _ in rows]
    assert len(names) == len(set(names))
    assert sum(count for _, _, count in rows) == model.num_parameters()
    assert "speaker_table.E" in names
    assert all(p.name == name for name, p in model.named_parameters())


def test_separation_is_deterministic(make_model_config, rng):
    """Test that equal seeds give equal weights and equal outputs."""
    wave = rng.normal(size=LENGTH)
    a = SeparationModel(make_model_config(), 3).separate(wave, Mode.ONLINE)
    b = SeparationModel(make_model_config(), 3).separate(wave, Mode.ONLINE)
    for x, y in zip(a.estimates, b.estimates):
        assert np.array_equal(x.data, y.data)


def test_end_to_end_gradients(model, rng):
    """Test the joint online loss against finite differences on a subset of tensors."""
    wave = Tensor(rng.normal(size=64))
    references = [rng.normal(size=64), rng.normal(size=64)]
    assignment = PermutationAssignment(mapping=(0, 1), cost=0.0,
                                       method=PermutationMethod.UPIT_SISNR)
    params = dict(model.named_parameters())
    names = [
        "decoder.synth.weight",
        "stimuli.blocks.0.site.h.bias",
        "speaker.cross.key.weight",
        "speaker_table.alpha_raw",
        "generic.blocks.0.globl.unpool.bias",
    ]

    def loss():
        out = model.run_spaces(wave, Mode.ONLINE)
        separation = reconstruction_loss(references, out.estimates, assignment)
        z = [v.clean for v in out.steering]
        return joint_loss(separation, tune_ince_loss(z, [0, 2], model.speaker_table), None, 10.0)

    errors = check_gradients(loss, [params[n] for n in names])
    assert max(errors.values()) < 1e-4, errors
