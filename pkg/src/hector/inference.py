"""Logit providers: the pluggable classifier boundary.

Three backends share one interface: a deterministic linear stub for
testing and synthetic runs, a remote client speaking a length-framed
binary protocol to an external model server, and a replay provider
that re-serves logits logged by a previous session.

The stub's arithmetic is fully specified (box-average downsample with
exact integer sums, then an exactly-rounded dot product), so an
independent reimplementation reproduces its logits bit for bit.
"""

from __future__ import annotations

import json
import math
import socket
import struct
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .domain import Frame, LogitVector, as_logits

WIRE_MAGIC = b"HCT1"
REQUEST_HEADER = struct.Struct("<QHH")  # frame_index u64, width u16, height u16
RESPONSE_BODY = struct.Struct("<Q4f")  # frame_index u64, 4 float32 logits
RESPONSE_SIZE = len(WIRE_MAGIC) + RESPONSE_BODY.size
DEFAULT_TIMEOUT_S = 0.1


class InferenceError(Exception):
    """Base class: the frame could not be scored by the backend."""


class TransportError(InferenceError):
    """Timeout or connection failure talking to the model server."""


class ProtocolError(InferenceError):
    """The model server answered with a malformed response."""


@dataclass(frozen=True)
class ProviderInfo:
    """Capability descriptor for a logit provider."""

    name: str
    input_width: int | None = None
    input_height: int | None = None


class LogitProvider(Protocol):
    info: ProviderInfo

    def infer(self, frame: Frame) -> LogitVector: ...


# ---------------------------------------------------------------------------
# Deterministic stub backend
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StubModelSpec:
    """Seeded linear test double standing in for the real classifier."""

    seed: int
    input_side: int = 32


def stub_weights(spec: StubModelSpec) -> np.ndarray:
    """4 x (side*side*3) weight matrix, derived deterministically from the seed.

    Rows are scaled to unit expected norm so logits stay O(1) for
    typical frames.
    """
    n = spec.input_side * spec.input_side * 3
    rng = np.random.default_rng(spec.seed)
    return rng.standard_normal((4, n)) / math.sqrt(n)


def downsample_box(frame: Frame, side: int) -> np.ndarray:
    """Box-average the frame to (side, side, 3) float64 in 0..255.

    Bucket i covers source rows [floor(i*H/side), floor((i+1)*H/side));
    an empty bucket (frame smaller than the grid) replicates the row at
    its lower edge. Pixel values are integers, so every bucket sum is
    exact in float64 and the result is identical for any summation
    order.
    """
    arr = np.frombuffer(frame.pixels, dtype=np.uint8)
    arr = arr.reshape(frame.height, frame.width, 3).astype(np.float64)
    rows = (np.arange(side) * frame.height) // side
    cols = (np.arange(side) * frame.width) // side
    sums = np.add.reduceat(np.add.reduceat(arr, rows, axis=0), cols, axis=1)
    row_counts = np.maximum(np.diff(np.append(rows, frame.height)), 1)
    col_counts = np.maximum(np.diff(np.append(cols, frame.width)), 1)
    return sums / (row_counts[:, None] * col_counts[None, :])[:, :, None]


def stub_infer(frame: Frame, spec: StubModelSpec, weights: np.ndarray | None = None) -> LogitVector:
    """Downsample, normalize to [0,1], flatten and apply the linear map.

    Each logit is an exactly-rounded sum of products, making the whole
    computation reproducible by a straight-line reimplementation.
    """
    if weights is None:
        weights = stub_weights(spec)
    x = (downsample_box(frame, spec.input_side) / 255.0).ravel()
    return as_logits(math.fsum((weights[c] * x).tolist()) for c in range(4))


class StubProvider:
    """LogitProvider wrapper around stub_infer with cached weights."""

    def __init__(self, spec: StubModelSpec) -> None:
        self.spec = spec
        self.info = ProviderInfo(
            name=f"stub:{spec.seed}",
            input_width=spec.input_side,
            input_height=spec.input_side,
        )
        self._weights = stub_weights(spec)

    def infer(self, frame: Frame) -> LogitVector:
        return stub_infer(frame, self.spec, self._weights)


# ---------------------------------------------------------------------------
# Remote backend
# ---------------------------------------------------------------------------

def encode_request(frame: Frame) -> bytes:
    return WIRE_MAGIC + REQUEST_HEADER.pack(frame.index, frame.width, frame.height) + frame.pixels


def decode_request(buf: bytes) -> tuple[int, int, int, bytes]:
    """Parse a request into (frame_index, width, height, pixels). Server-side helper."""
    if buf[:4] != WIRE_MAGIC:
        raise ProtocolError(f"bad request magic {buf[:4]!r}")
    index, width, height = REQUEST_HEADER.unpack_from(buf, 4)
    pixels = buf[4 + REQUEST_HEADER.size:]
    if len(pixels) != width * height * 3:
        raise ProtocolError("request payload size does not match frame dimensions")
    return index, width, height, pixels


def encode_response(frame_index: int, logits: LogitVector) -> bytes:
    return WIRE_MAGIC + RESPONSE_BODY.pack(frame_index, *logits)


class RemoteProvider:
    """Client for an external model server over a stream socket.

    One request per message; the connection is reused across frames and
    re-established after any error. Inference failures surface as
    TransportError/ProtocolError and the caller discards the frame
    rather than stalling the stream.
    """

    def __init__(
        self,
        host: str,
        port: int,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        log: Callable[[int, LogitVector], None] | None = None,
    ) -> None:
        self.host = host
        self.port = port
        self.timeout_s = timeout_s
        self.info = ProviderInfo(name=f"remote:{host}:{port}")
        self._log = log
        self._sock: socket.socket | None = None

    def _connect(self) -> socket.socket:
        if self._sock is None:
            try:
                self._sock = socket.create_connection((self.host, self.port), timeout=self.timeout_s)
                self._sock.settimeout(self.timeout_s)
            except OSError as exc:
                self._sock = None
                raise TransportError(f"cannot reach model server: {exc}") from exc
        return self._sock

    def _drop_connection(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None

    def _recv_exact(self, sock: socket.socket, size: int) -> bytes:
        buf = bytearray()
        while len(buf) < size:
            try:
                chunk = sock.recv(size - len(buf))
            except socket.timeout as exc:
                raise TransportError("model server response timed out") from exc
            except OSError as exc:
                raise TransportError(f"connection to model server failed: {exc}") from exc
            if not chunk:
                raise ProtocolError(
                    f"model server closed mid-response ({len(buf)} of {size} bytes)"
                )
            buf.extend(chunk)
        return bytes(buf)

    def infer(self, frame: Frame) -> LogitVector:
        sock = self._connect()
        try:
            try:
                sock.sendall(encode_request(frame))
            except socket.timeout as exc:
                raise TransportError("sending frame to model server timed out") from exc
            except OSError as exc:
                raise TransportError(f"connection to model server failed: {exc}") from exc
            raw = self._recv_exact(sock, RESPONSE_SIZE)
        except InferenceError:
            self._drop_connection()
            raise
        if raw[:4] != WIRE_MAGIC:
            self._drop_connection()
            raise ProtocolError(f"bad response magic {raw[:4]!r}")
        index, *logit_values = RESPONSE_BODY.unpack(raw[4:])
        if index != frame.index:
            self._drop_connection()
            raise ProtocolError(f"response for frame {index}, expected {frame.index}")
        logits = as_logits(logit_values)
        if self._log is not None:
            self._log(frame.index, logits)
        return logits

    def close(self) -> None:
        self._drop_connection()


# ---------------------------------------------------------------------------
# Replay backend
# ---------------------------------------------------------------------------

class ReplayProvider:
    """Serve logits recorded in a previous session's inference log."""

    def __init__(self, responses: dict[int, LogitVector]) -> None:
        self.info = ProviderInfo(name="replay")
        self._responses = responses

    @classmethod
    def from_log(cls, path: str) -> "ReplayProvider":
        responses: dict[int, LogitVector] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                responses[int(rec["frame"])] = as_logits(rec["logits"])
        return cls(responses)

    def infer(self, frame: Frame) -> LogitVector:
        try:
            return self._responses[frame.index]
        except KeyError:
            raise TransportError(f"no logged response for frame {frame.index}") from None


def write_inference_log_entry(fh, frame_index: int, logits: LogitVector) -> None:
    """Append one replayable request/response pair to an inference log."""
    fh.write(json.dumps({"frame": frame_index, "logits": list(logits)}) + "\n")
