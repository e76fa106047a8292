"""Frame builders shared across the test suite."""

from __future__ import annotations

import numpy as np

from hector.domain import Frame


def make_frame(array: np.ndarray, index: int = 0, timestamp_ms: float = 0.0) -> Frame:
    """Frame from an (H, W, 3) uint8 array."""
    arr = np.asarray(array, dtype=np.uint8)
    h, w, _ = arr.shape
    return Frame(index=index, timestamp_ms=timestamp_ms, width=w, height=h, pixels=arr.tobytes())


def solid_frame(width: int, height: int, rgb: tuple[int, int, int], index: int = 0) -> Frame:
    arr = np.zeros((height, width, 3), dtype=np.uint8)
    arr[:, :] = rgb
    return make_frame(arr, index=index)


def random_frame(rng: np.random.Generator, width: int, height: int, index: int = 0) -> Frame:
    arr = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    return make_frame(arr, index=index)


def checkerboard_frame(side: int, low: int = 0, high: int = 255) -> Frame:
    ys, xs = np.indices((side, side))
    cells = np.where((ys + xs) % 2 == 0, high, low).astype(np.uint8)
    arr = np.stack([cells] * 3, axis=-1)
    return make_frame(arr)
