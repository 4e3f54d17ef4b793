"""Tests for optim module."""

import numpy as np
import pytest

from steersep.nn import Parameter
from steersep.optim import Adam, clip_grad_norm


def _param(name, value, grad=None):
    p = Parameter(np.asarray(value, dtype=np.float64))
    p.name = name
    p.grad = None if grad is None else np.asarray(grad, dtype=np.float64)
    return p


def test_clip_grad_norm_bounds_global_norm():
    """Test that the joint norm is clipped to the limit and the direction kept."""
    a = _param("a", np.zeros(3), [30.0, 0.0, 40.0])
    b = _param("b", np.zeros(2), [0.0, 0.0])
    c = _param("c", np.zeros(1))
    before = clip_grad_norm([a, b, c], 5.0)
    assert before == pytest.approx(50.0)
    after = np.sqrt(np.sum(a.grad**2) + np.sum(b.grad**2))
    assert after <= 5.0 + 1e-6
    assert a.grad[2] / a.grad[0] == pytest.approx(4 / 3)


def test_clip_grad_norm_leaves_small_gradients():
    """Test that gradients under the limit are untouched."""
    a = _param("a", np.zeros(2), [0.3, 0.4])
    assert clip_grad_norm([a], 5.0) == pytest.approx(0.5)
    assert np.array_equal(a.grad, [0.3, 0.4])


def test_adam_skips_parameters_without_gradient():
    """Test that untouched and non-trainable parameters keep their values bit for bit."""
    a = _param("a", [1.0, 2.0], [0.1, -0.1])
    b = _param("b", [3.0, 4.0])
    c = _param("c", [5.0], [1.0])
    opt = Adam([a, b, c], lr=0.1, weight_decay=0.0)
    opt.step(trainable={"a", "b"})
    assert np.allclose(a.data, [0.9, 2.1])
    assert np.array_equal(b.data, [3.0, 4.0])
    assert np.array_equal(c.data, [5.0])
    assert opt.steps == 1


def test_adam_decoupled_weight_decay():
    """Test that weight decay shrinks weights even with a zero gradient."""
    a = _param("a", [2.0], [0.0])
    opt = Adam([a], lr=0.1, weight_decay=0.5)
    opt.step()
    assert a.data[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)


def test_adam_state_round_trip():
    """Test that moments and step count restore exactly."""
    a = _param("a", [1.0, -1.0], [0.5, 0.25])
    opt = Adam([a], lr=0.01)
    opt.step()
    state = {k: v.copy() for k, v in opt.state_dict().items()}
    fresh = Adam([a], lr=0.01)
    fresh.load_state_dict(state, steps=opt.steps)
    assert fresh.steps == 1
    assert np.array_equal(fresh.m["a"], opt.m["a"])
    assert np.array_equal(fresh.v["a"], opt.v["a"])
