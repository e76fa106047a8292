"""Shared vocabulary types used by every pipeline stage.

Frames, classifier output vectors, per-frame verdicts and the pipeline
configuration all live here. These values are immutable after
construction and safe to hand between concurrent stages; behaviour
beyond construction and validation belongs to the stage modules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from enum import Enum
from typing import Sequence

MES_CLASSES = (0, 1, 2, 3)

# Tolerance on a probability vector summing to one.
PROB_SUM_TOL = 1e-9


class ConfigError(ValueError):
    """Raised when a config file cannot be parsed."""


class DiscardReason(str, Enum):
    """Why a frame was excluded from scoring.

    BLUR, COLOUR_RATIO and BELOW_OSR_THRESHOLD are produced by the
    scoring chain itself; INFERENCE_UNAVAILABLE marks frames lost to a
    failing model backend and QUEUE_DROP marks frames evicted from the
    ingest queue when the backend cannot keep up with a live source.
    """

    BLUR = "blur"
    COLOUR_RATIO = "colour_ratio"
    BELOW_OSR_THRESHOLD = "below_osr_threshold"
    INFERENCE_UNAVAILABLE = "inference_unavailable"
    QUEUE_DROP = "queue_drop"


# 4-class vectors are plain tuples; the validators below are the only
# constructors the pipeline uses.
LogitVector = tuple[float, float, float, float]
ProbVector = tuple[float, float, float, float]


def as_logits(values: Sequence[float]) -> LogitVector:
    """Validate and freeze a 4-class logit vector."""
    vals = tuple(float(v) for v in values)
    if len(vals) != 4:
        raise ValueError(f"logit vector needs exactly 4 entries, got {len(vals)}")
    if not all(math.isfinite(v) for v in vals):
        raise ValueError(f"logit vector must be finite, got {vals}")
    return vals


def as_probs(values: Sequence[float]) -> ProbVector:
    """Validate and freeze a 4-class probability vector."""
    vals = tuple(float(v) for v in values)
    if len(vals) != 4:
        raise ValueError(f"probability vector needs exactly 4 entries, got {len(vals)}")
    for v in vals:
        if not (0.0 <= v <= 1.0):
            raise ValueError(f"probability entry {v} outside [0, 1]")
    total = math.fsum(vals)
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise ValueError(f"probability vector sums to {total}, expected 1")
    return vals


def check_mes(value: int) -> int:
    """Validate a Mayo endoscopic subscore (integer 0..3)."""
    if value not in MES_CLASSES:
        raise ValueError(f"MES score must be one of {MES_CLASSES}, got {value!r}")
    return int(value)


@dataclass(frozen=True)
class Frame:
    """One decoded RGB frame, the pipeline's unit of work.

    ``pixels`` is a row-major RGB8 buffer of exactly width*height*3
    bytes. Index monotonicity across a session is enforced by the
    session store, not here.
    """

    index: int
    timestamp_ms: float
    width: int
    height: int
    pixels: bytes

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError(f"frame index must be >= 0, got {self.index}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"frame must be at least 1x1, got {self.width}x{self.height}")
        expected = self.width * self.height * 3
        if len(self.pixels) != expected:
            raise ValueError(
                f"pixel buffer holds {len(self.pixels)} bytes, "
                f"expected {expected} for {self.width}x{self.height} RGB8"
            )


@dataclass(frozen=True)
class FrameVerdict:
    """Per-frame outcome: either discarded with a single reason, or scored.

    Scored verdicts carry the MES class, the calibrated probability
    vector, the raw maximum logit and the certainty (max probability).
    """

    frame_index: int
    timestamp_ms: float
    reason: DiscardReason | None = None
    mes: int | None = None
    probs: ProbVector | None = None
    max_logit: float | None = None
    certainty: float | None = None

    def __post_init__(self) -> None:
        if self.reason is None:
            if self.mes is None or self.probs is None or self.max_logit is None or self.certainty is None:
                raise ValueError("scored verdict requires mes, probs, max_logit and certainty")
            check_mes(self.mes)
            if self.certainty != max(self.probs):
                raise ValueError(
                    f"certainty {self.certainty} does not equal max(probs) {max(self.probs)}"
                )
        else:
            if any(v is not None for v in (self.mes, self.probs, self.max_logit, self.certainty)):
                raise ValueError("discarded verdict must not carry scoring fields")

    @property
    def is_scored(self) -> bool:
        return self.reason is None

    @classmethod
    def scored(
        cls,
        frame_index: int,
        timestamp_ms: float,
        mes: int,
        probs: Sequence[float],
        max_logit: float,
        certainty: float,
    ) -> "FrameVerdict":
        return cls(
            frame_index=frame_index,
            timestamp_ms=timestamp_ms,
            mes=mes,
            probs=as_probs(probs),
            max_logit=float(max_logit),
            certainty=float(certainty),
        )

    @classmethod
    def discarded(
        cls, frame_index: int, timestamp_ms: float, reason: DiscardReason
    ) -> "FrameVerdict":
        return cls(frame_index=frame_index, timestamp_ms=timestamp_ms, reason=reason)


@dataclass(frozen=True)
class PipelineConfig:
    """Tunable knobs for one scoring session.

    The defaults are shipped values; every deployment overrides them
    through the config file. ``osr_tau`` in particular has no sensible
    universal default and should be picked from an ROC sweep of the
    deployed model.
    """

    blur_var_min: float = 50.0
    red_ratio_min: float = 0.35
    red_ratio_max: float = 0.95
    osr_tau: float = 0.0
    temperature: float = 1.0
    window: int = 5
    k: int = 6
    min_gap: int = 30


# Fields parsed as integers in the config file; everything else is a float.
_INT_FIELDS = {"window", "k", "min_gap"}


def validate_config(config: PipelineConfig) -> list[str]:
    """Return every violated config invariant; empty list means usable."""
    violations: list[str] = []
    if not config.temperature > 0:
        violations.append("temperature must be > 0")
    if not math.isfinite(config.temperature):
        violations.append("temperature must be finite")
    if config.window < 1:
        violations.append("window must be >= 1")
    if config.k < 1:
        violations.append("k must be >= 1")
    if config.min_gap < 0:
        violations.append("min_gap must be >= 0")
    if not (0.0 <= config.red_ratio_min <= config.red_ratio_max <= 1.0):
        violations.append("red ratio bounds must satisfy 0 <= red_ratio_min <= red_ratio_max <= 1")
    return violations


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    """Parse the flat ``key = value`` config format.

    Lines starting with ``#`` and blank lines are ignored. Keys must be
    PipelineConfig field names; missing keys keep the value from
    ``base`` (or the shipped default).
    """
    values = {f.name: getattr(base or PipelineConfig(), f.name) for f in fields(PipelineConfig)}
    known = set(values)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        try:
            if key in _INT_FIELDS:
                values[key] = int(value)
            else:
                values[key] = float(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from exc
    return PipelineConfig(**values)


def render_config(config: PipelineConfig) -> str:
    """Serialize a config to the flat key-value format. Round-trips exactly."""
    lines = []
    for f in fields(PipelineConfig):
        value = getattr(config, f.name)
        lines.append(f"{f.name} = {value!r}" if isinstance(value, float) else f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def load_config(path: str) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
