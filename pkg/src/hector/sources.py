"""Frame sources: where a session's frames come from.

Pluggable by descriptor string. Live capture hardware is out of scope;
a grabber would implement the same iterator interface. File sources are
unpaced (the pipeline pulls as fast as it can and nothing is dropped),
synthetic sources can opt into pacing for live-mode behaviour.
"""

from __future__ import annotations

import os
from typing import Iterator, Protocol

import numpy as np

from .domain import Frame
from .synth import SynthStream, parse_synth_descriptor, synth_stream


class SourceUnavailable(Exception):
    """The source descriptor cannot be opened."""


class FrameSource(Protocol):
    name: str
    paced: bool
    fps: float | None

    def frames(self) -> Iterator[Frame]: ...


class SynthSource:
    """Deterministic generated stream; carries its own ground truth."""

    def __init__(self, stream: SynthStream, paced: bool = False) -> None:
        self.stream = stream
        self.name = f"synth:seed={stream.seed}"
        self.paced = paced
        self.fps = stream.spec.fps

    def frames(self) -> Iterator[Frame]:
        return self.stream.frames()


class NpzSource:
    """Frames from an .npz archive: array 'frames' (N, H, W, 3) uint8, optional 'fps'."""

    def __init__(self, path: str, paced: bool = False) -> None:
        if not os.path.exists(path):
            raise SourceUnavailable(f"no such file: {path}")
        try:
            data = np.load(path)
            self._frames = np.ascontiguousarray(data["frames"])
        except (OSError, KeyError, ValueError) as exc:
            raise SourceUnavailable(f"cannot read frame archive {path}: {exc}") from exc
        if self._frames.ndim != 4 or self._frames.shape[3] != 3 or self._frames.dtype != np.uint8:
            raise SourceUnavailable(f"{path}: expected (N, H, W, 3) uint8 frames")
        self.fps = float(data["fps"]) if "fps" in data else 30.0
        self.name = path
        self.paced = paced

    def frames(self) -> Iterator[Frame]:
        _, h, w, _ = self._frames.shape
        for i in range(self._frames.shape[0]):
            yield Frame(
                index=i,
                timestamp_ms=i * 1000.0 / self.fps,
                width=w,
                height=h,
                pixels=self._frames[i].tobytes(),
            )


class VideoFileSource:
    """Frames decoded from a video container (requires OpenCV)."""

    def __init__(self, path: str, paced: bool = False) -> None:
        if not os.path.exists(path):
            raise SourceUnavailable(f"no such file: {path}")
        try:
            import cv2
        except ImportError as exc:
            raise SourceUnavailable("video decoding needs opencv-python") from exc
        self._cv2 = cv2
        self.path = path
        capture = cv2.VideoCapture(path)
        if not capture.isOpened():
            raise SourceUnavailable(f"cannot decode video {path}")
        self.fps = float(capture.get(cv2.CAP_PROP_FPS)) or 30.0
        capture.release()
        self.name = path
        self.paced = paced

    def frames(self) -> Iterator[Frame]:
        capture = self._cv2.VideoCapture(self.path)
        try:
            index = 0
            while True:
                ok, bgr = capture.read()
                if not ok:
                    return
                rgb = self._cv2.cvtColor(bgr, self._cv2.COLOR_BGR2RGB)
                h, w, _ = rgb.shape
                yield Frame(
                    index=index,
                    timestamp_ms=index * 1000.0 / self.fps,
                    width=w,
                    height=h,
                    pixels=np.ascontiguousarray(rgb).tobytes(),
                )
                index += 1
        finally:
            capture.release()


def open_source(descriptor: str) -> FrameSource:
    """Open a source descriptor: ``synth:...``, an .npz archive or a video file."""
    if descriptor.startswith("synth:"):
        paced = False
        parts = []
        for part in descriptor[len("synth:"):].split(","):
            if part.startswith("paced="):
                paced = part.split("=", 1)[1] in ("1", "true", "yes")
            elif part:
                parts.append(part)
        try:
            spec, seed = parse_synth_descriptor("synth:" + ",".join(parts))
        except ValueError as exc:
            raise SourceUnavailable(str(exc)) from exc
        return SynthSource(synth_stream(spec, seed), paced=paced)
    if descriptor.endswith(".npz"):
        return NpzSource(descriptor)
    return VideoFileSource(descriptor)
