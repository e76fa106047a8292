"""Cheap per-frame quality checks run before inference.

Two filters: a Laplacian blur score on the grayscale image and a red
colour-dominance ratio. Both are orders of magnitude cheaper than the
classifier, so obviously bad frames never reach it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import DiscardReason, Frame, PipelineConfig

# ITU-R BT.601 luma weights.
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class PrefilterVerdict:
    """Outcome of the quality checks; both metrics are always populated."""

    passed: bool
    blur_variance: float
    red_ratio: float
    fail_reason: DiscardReason | None = None

    def __post_init__(self) -> None:
        if self.passed != (self.fail_reason is None):
            raise ValueError("passed must be true exactly when fail_reason is absent")


def rgb_array(frame: Frame) -> np.ndarray:
    """Read-only (H, W, 3) uint8 view of the frame's pixel buffer."""
    arr = np.frombuffer(frame.pixels, dtype=np.uint8)
    return arr.reshape(frame.height, frame.width, 3)


def laplacian_variance(frame: Frame) -> float:
    """Population variance of the 4-neighbour Laplacian response.

    The frame is converted to luma, convolved with the kernel
    [[0,1,0],[1,-4,1],[0,1,0]] over interior pixels only (no padding),
    and the variance of the responses is returned. Frames smaller than
    3x3 have no interior and score 0.
    """
    if frame.width < 3 or frame.height < 3:
        return 0.0
    luma = rgb_array(frame) @ LUMA_WEIGHTS
    resp = (
        luma[:-2, 1:-1]
        + luma[2:, 1:-1]
        + luma[1:-1, :-2]
        + luma[1:-1, 2:]
        - 4.0 * luma[1:-1, 1:-1]
    )
    return float(resp.var())


def red_ratio(frame: Frame) -> float:
    """mean(R) / (mean(R) + mean(G) + mean(B)), or 1/3 for an all-black frame.

    Computed from exact integer channel sums (the frame-size
    denominators cancel). The row-wise partial sums stay within uint32
    for any frame under ~16 million rows.
    """
    sums = rgb_array(frame).sum(axis=0, dtype=np.uint32).sum(axis=0, dtype=np.int64)
    total = int(sums.sum())
    if total == 0:
        return 1.0 / 3.0
    return int(sums[0]) / total


def prefilter(frame: Frame, config: PipelineConfig) -> PrefilterVerdict:
    """Run both checks in fixed order: blur first, then colour ratio."""
    variance = laplacian_variance(frame)
    ratio = red_ratio(frame)
    if variance < config.blur_var_min:
        reason = DiscardReason.BLUR
    elif not (config.red_ratio_min <= ratio <= config.red_ratio_max):
        reason = DiscardReason.COLOUR_RATIO
    else:
        reason = None
    return PrefilterVerdict(
        passed=reason is None,
        blur_variance=variance,
        red_ratio=ratio,
        fail_reason=reason,
    )
