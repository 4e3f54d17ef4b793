"""Tests for segmentation module."""

import numpy as np
import pytest

from steersep.segmentation import (
    SegmentationError,
    merge,
    num_segments,
    padded_length,
    split,
)
from steersep.tensor import Tensor


def test_split_merge_round_trip(rng):
    """Test that merge(split(x)) reproduces x for random sizes in float32."""
    for _ in range(50):
        features = int(rng.integers(1, 9))
        length = int(rng.integers(1, 300))
        segment = 2 * int(rng.integers(1, 33))
        x = rng.normal(size=(features, length)).astype(np.float32)
        seg = split(Tensor(x), segment)
        assert seg.data.shape == (features, num_segments(length, segment), segment)
        back = merge(seg).data
        assert back.shape == x.shape
        assert np.max(np.abs(back - x)) <= 1e-6


def test_padded_length():
    """Test the smallest padded length covering the signal."""
    assert padded_length(3, 8) == 8
    assert padded_length(8, 8) == 8
    assert padded_length(9, 8) == 12
    assert padded_length(12, 8) == 12
    assert num_segments(12, 8) == 2
    assert num_segments(8000, 256) == 62


def test_split_rejects_odd_segment():
    """Test that K must be even and at least 2."""
    for segment in (0, 1, 7):
        with pytest.raises(SegmentationError):
            split(Tensor(np.ones((2, 10))), segment)


def test_merge_rejects_inconsistent_metadata():
    """Test that merge refuses metadata that disagrees with the data."""
    seg = split(Tensor(np.ones((2, 10))), 4)
    bad_hop = seg.with_data(seg.data)
    bad_hop.hop = 3
    with pytest.raises(SegmentationError, match="hop"):
        merge(bad_hop)
    bad_len = seg.with_data(seg.data)
    bad_len.original_length = 11
    with pytest.raises(SegmentationError, match="Padding"):
        merge(bad_len)


def test_merge_gradient_is_adjoint(rng):
    """Test that split then merge has the identity as its gradient."""
    x = Tensor(rng.normal(size=(3, 21)), requires_grad=True)
    w = rng.normal(size=(3, 21))
    (merge(split(x, 6)) * Tensor(w)).sum().backward()
    assert np.allclose(x.grad, w)
