"""Temporal smoothing of scored frames and the overall video score.

Only gated-in frames enter the rolling window; discarded frames are
skipped, never zero-filled, and the window is never reset within a
session. The video score is the maximum smoothed class, attributed to
the earliest window that attains it.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

from .domain import ProbVector, as_probs, check_mes
from .osr import argmax_high


class NoScoredFrames(ValueError):
    """The session produced no gated-in frames; the video is unscorable."""


@dataclass(frozen=True)
class SmoothedPoint:
    """Mean probability vector over the most recent scored frames."""

    frame_index: int
    window_fill: int
    mean_probs: ProbVector
    smoothed_mes: int


@dataclass(frozen=True)
class VideoScore:
    """Overall video outcome: the maximum smoothed class and where it peaked."""

    overall_mes: int
    peak_frame_index: int
    peak_probs: ProbVector

    def __post_init__(self) -> None:
        check_mes(self.overall_mes)


class SmootherState:
    """Length-W sliding window over scored-frame probability vectors.

    Single-owner: only the pipeline stage feeding it may push. The
    emitted SmoothedPoints are immutable.
    """

    def __init__(self, window: int) -> None:
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        self.window = window
        self._probs: deque[ProbVector] = deque(maxlen=window)

    @property
    def fill(self) -> int:
        return len(self._probs)

    def push_scored(self, probs: Sequence[float], frame_index: int) -> SmoothedPoint:
        """Add one scored frame and emit the current window mean."""
        self._probs.append(as_probs(probs))
        fill = len(self._probs)
        mean = tuple(
            math.fsum(p[c] for p in self._probs) / fill for c in range(4)
        )
        mean = as_probs(mean)
        return SmoothedPoint(
            frame_index=frame_index,
            window_fill=fill,
            mean_probs=mean,
            smoothed_mes=argmax_high(mean),
        )


def push_scored(probs: Sequence[float], frame_index: int, state: SmootherState) -> SmoothedPoint:
    return state.push_scored(probs, frame_index)


def finalize_video_score(points: Iterable[SmoothedPoint]) -> VideoScore:
    """Overall class = max smoothed class; peak = earliest point attaining it."""
    peak: SmoothedPoint | None = None
    for point in points:
        if peak is None or point.smoothed_mes > peak.smoothed_mes:
            peak = point
    if peak is None:
        raise NoScoredFrames("no smoothed points: session had no gated-in frames")
    return VideoScore(
        overall_mes=peak.smoothed_mes,
        peak_frame_index=peak.frame_index,
        peak_probs=peak.mean_probs,
    )
