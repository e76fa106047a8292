"""Deterministic synthetic endoscopy streams with known ground truth.

A desk-scale stand-in for expert-segmented clinical videos: usable
segments are sharp, red-tinted, textured frames whose stub-model
logits are constructed to be class-separable; non-usable segments are
flat, blue or near-black frames. The generator knows the stub weights,
so it plants frame content whose logits carry a chosen MES class and
logs its own intended max-logit score per frame as ground truth.

Frames are rendered as constant colour blocks aligned with the stub's
downsample grid, so the stub sees (up to uint8 quantization) exactly
the cell values the generator planted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .domain import Frame
from .evaluation import UsabilityLabelTrack
from .inference import StubModelSpec, stub_weights


@dataclass(frozen=True)
class Segment:
    """A run of frames of one kind: 'usable' (with a planted MES) or 'noise'."""

    kind: str
    length: int
    mes: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("usable", "noise"):
            raise ValueError(f"segment kind must be usable|noise, got {self.kind!r}")
        if self.length < 1:
            raise ValueError("segment length must be >= 1")
        if self.kind == "usable" and self.mes not in (0, 1, 2, 3):
            raise ValueError("usable segment needs a planted MES class")
        if self.kind == "noise" and self.mes is not None:
            raise ValueError("noise segment cannot carry an MES class")


def default_segments(
    classes: tuple[int, ...] = (0, 1, 2, 1), usable_len: int = 40, noise_len: int = 12
) -> tuple[Segment, ...]:
    segments: list[Segment] = [Segment("noise", noise_len)]
    for c in classes:
        segments.append(Segment("usable", usable_len, mes=c))
        segments.append(Segment("noise", noise_len))
    return tuple(segments)


@dataclass(frozen=True)
class SynthSpec:
    """Generator parameters; (spec, seed) fully determines the stream."""

    segments: tuple[Segment, ...] = field(default_factory=default_segments)
    width: int = 640
    height: int = 512
    noise: float = 0.0
    stub_seed: int = 0
    input_side: int = 32
    gamma: float = 10.0
    fps: float = 30.0

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("need at least one segment")
        if self.width % self.input_side or self.height % self.input_side:
            raise ValueError("frame size must be a multiple of input_side")
        if not (0.0 <= self.noise <= 1.0):
            raise ValueError("noise must be in [0, 1]")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")

    @property
    def total_frames(self) -> int:
        return sum(s.length for s in self.segments)

    @property
    def planted_max(self) -> int | None:
        planted = [s.mes for s in self.segments if s.kind == "usable"]
        return max(planted) if planted else None


# Certainty decays along each usable segment so the segment's first
# frame always carries its highest rank in the selection.
_DECAY = 0.35

_NOISE_FLAVOURS = ("flat", "blue", "black")


class SynthStream:
    """One generated video: per-frame ground truth plus lazily rendered frames."""

    def __init__(self, spec: SynthSpec, seed: int) -> None:
        self.spec = spec
        self.seed = seed
        rng = np.random.default_rng(seed)
        side = spec.input_side
        n = side * side * 3
        weights = stub_weights(StubModelSpec(seed=spec.stub_seed, input_side=side))
        directions = weights / np.linalg.norm(weights, axis=1, keepdims=True)

        self.usable: list[bool] = []
        self.true_mes: list[int | None] = []
        self._cells: list[np.ndarray] = []  # (side, side, 3) float64 in [0, 1]
        for segment in spec.segments:
            if segment.kind == "usable":
                base = np.empty((side, side, 3))
                base[:, :, 0] = rng.uniform(0.45, 0.75, size=(side, side))
                base[:, :, 1] = rng.uniform(0.15, 0.35, size=(side, side))
                base[:, :, 2] = rng.uniform(0.05, 0.25, size=(side, side))
                direction = directions[segment.mes].reshape(side, side, 3)
                for pos in range(segment.length):
                    shrink = 1.0 - spec.noise * rng.uniform()
                    gamma_i = spec.gamma * (1.0 - _DECAY * pos / segment.length) * shrink
                    cells = np.clip(base + gamma_i * direction, 0.0, 1.0)
                    self._cells.append(cells)
                    self.usable.append(True)
                    self.true_mes.append(segment.mes)
            else:
                for pos in range(segment.length):
                    flavour = _NOISE_FLAVOURS[int(rng.integers(len(_NOISE_FLAVOURS)))]
                    if flavour == "flat":
                        colour = np.array(
                            [rng.uniform(0.4, 0.7), rng.uniform(0.15, 0.3), rng.uniform(0.1, 0.2)]
                        )
                        cells = np.broadcast_to(colour, (side, side, 3)).copy()
                    elif flavour == "blue":
                        cells = np.empty((side, side, 3))
                        cells[:, :, 0] = rng.uniform(0.02, 0.12, size=(side, side))
                        cells[:, :, 1] = rng.uniform(0.05, 0.2, size=(side, side))
                        cells[:, :, 2] = rng.uniform(0.5, 0.85, size=(side, side))
                    else:
                        cells = rng.uniform(0.0, 0.02, size=(side, side, 3))
                    if spec.noise > 0:
                        push = spec.gamma * spec.noise * rng.uniform()
                        direction = directions[int(rng.integers(4))].reshape(side, side, 3)
                        cells = np.clip(cells + push * direction, 0.0, 1.0)
                    self._cells.append(cells)
                    self.usable.append(False)
                    self.true_mes.append(None)

        # Ground truth scores: max logit of the planted (unquantized) cells.
        flat = np.stack([c.ravel() for c in self._cells])  # (frames, n)
        logits = flat @ weights.T
        self.intended_logits: list[tuple[float, ...]] = [tuple(row) for row in logits]
        self.intended_scores: list[float] = [float(row.max()) for row in logits]

    def __len__(self) -> int:
        return len(self._cells)

    @property
    def planted_max(self) -> int | None:
        return self.spec.planted_max

    def label_track(self) -> UsabilityLabelTrack:
        return UsabilityLabelTrack(labels=tuple(self.usable), frame_count=len(self))

    def frame(self, index: int) -> Frame:
        """Render frame `index`; deterministic and idempotent."""
        cells = self._cells[index]
        quantized = np.rint(cells * 255.0).astype(np.uint8)
        block_h = self.spec.height // self.spec.input_side
        block_w = self.spec.width // self.spec.input_side
        pixels = np.repeat(np.repeat(quantized, block_h, axis=0), block_w, axis=1)
        return Frame(
            index=index,
            timestamp_ms=index * 1000.0 / self.spec.fps,
            width=self.spec.width,
            height=self.spec.height,
            pixels=pixels.tobytes(),
        )

    def frames(self) -> Iterator[Frame]:
        for i in range(len(self)):
            yield self.frame(i)


def synth_stream(spec: SynthSpec, seed: int) -> SynthStream:
    """Build the deterministic synthetic video for (spec, seed)."""
    return SynthStream(spec, seed)


def parse_synth_descriptor(descriptor: str) -> tuple[SynthSpec, int]:
    """Parse a CLI source string like ``synth:seed=42,noise=0.2,plan=n12-2:40``.

    Plan tokens are dash-separated: ``n<len>`` for a noise segment and
    ``<mes>:<len>`` for a usable segment. Omitted keys use defaults.
    """
    if not descriptor.startswith("synth:"):
        raise ValueError(f"not a synth descriptor: {descriptor!r}")
    body = descriptor[len("synth:"):]
    kwargs: dict = {}
    seed = 0
    for part in filter(None, body.split(",")):
        if "=" not in part:
            raise ValueError(f"bad synth parameter {part!r}")
        key, _, value = part.partition("=")
        if key == "seed":
            seed = int(value)
        elif key in ("noise", "gamma", "fps"):
            kwargs[key] = float(value)
        elif key in ("stub_seed", "width", "height", "input_side"):
            kwargs[key] = int(value)
        elif key == "plan":
            segments = []
            for token in value.split("-"):
                if token.startswith("n"):
                    segments.append(Segment("noise", int(token[1:])))
                else:
                    mes, _, length = token.partition(":")
                    segments.append(Segment("usable", int(length), mes=int(mes)))
            kwargs["segments"] = tuple(segments)
        else:
            raise ValueError(f"unknown synth parameter {key!r}")
    return SynthSpec(**kwargs), seed
