"""Half-overlapping segmentation of a D x I feature map into D x S x K and back."""

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, frame, overlap_add, pad


class SegmentationError(ValueError):
    """Raised when segment metadata disagrees with the packed data."""

    pass


@dataclass
class SegmentTensor:
    data: Tensor
    hop: int
    pad_front: int
    pad_back: int
    original_length: int

    @property
    def segments(self) -> int:
        return self.data.shape[-2]

    @property
    def segment_length(self) -> int:
        return self.data.shape[-1]

    @property
    def padded_length(self) -> int:
        return (self.segments - 1) * self.hop + self.segment_length

    def with_data(self, data: Tensor) -> "SegmentTensor":
        return SegmentTensor(data, self.hop, self.pad_front, self.pad_back, self.original_length)


def padded_length(length: int, segment: int) -> int:
    """Smallest I' >= max(I, K) with (I' - K) divisible by K/2."""
    hop = segment // 2
    if length <= segment:
        return segment
    return segment + -(-(length - segment) // hop) * hop


def num_segments(length: int, segment: int) -> int:
    return (padded_length(length, segment) - segment) // (segment // 2) + 1


def split(x: Tensor, segment: int) -> SegmentTensor:
    """Pack ``x`` (D x I) into S half-overlapping windows of length K.

    The tail is zero-padded so the windows cover the signal exactly.

    Raises:
        SegmentationError: If K is odd or smaller than 2.
    """
    if segment < 2 or segment % 2:
        raise SegmentationError(f"Segment length K must be even and >= 2, got {segment}.")
    length = x.shape[-1]
    extra = padded_length(length, segment) - length
    if extra:
        x = pad(x, [(0, 0)] * (x.ndim - 1) + [(0, extra)])
    data = frame(x, segment, segment // 2)
    return SegmentTensor(data, segment // 2, 0, extra, length)


def merge(seg: SegmentTensor) -> Tensor:
    """Overlap-add the windows, divide by per-sample coverage and strip padding.

    Raises:
        SegmentationError: If hop, padding or length disagree with the data shape.
    """
    if seg.data.ndim < 2:
        raise SegmentationError(f"Segment data must be at least 2-D, got {seg.data.shape}.")
    k = seg.segment_length
    if seg.hop * 2 != k:
        raise SegmentationError(f"hop {seg.hop} is not half of segment length {k}.")
    if seg.pad_front + seg.original_length + seg.pad_back != seg.padded_length:
        raise SegmentationError(
            f"Padding ({seg.pad_front}, {seg.pad_back}) and length {seg.original_length} "
            f"do not cover {seg.segments} segments of {k} (padded length {seg.padded_length})."
        )
    summed = overlap_add(seg.data, seg.hop)
    ones = np.ones((seg.segments, k), dtype=seg.data.dtype)
    coverage = overlap_add(Tensor(ones), seg.hop).data
    stop = seg.pad_front + seg.original_length
    return (summed * Tensor(1.0 / coverage))[..., seg.pad_front : stop]
