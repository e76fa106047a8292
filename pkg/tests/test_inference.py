from __future__ import annotations

import math
import socket
import struct
import threading
import time

import numpy as np
import pytest

from hector.inference import (
    ProtocolError,
    RemoteProvider,
    ReplayProvider,
    StubModelSpec,
    StubProvider,
    TransportError,
    WIRE_MAGIC,
    downsample_box,
    encode_response,
    decode_request,
    stub_infer,
    stub_weights,
    write_inference_log_entry,
)

from support import make_frame, random_frame, solid_frame


def oracle_stub_infer(frame, spec):
    """Straight-line reimplementation of the stub arithmetic, loops only."""
    side = spec.input_side
    px = np.frombuffer(frame.pixels, dtype=np.uint8).reshape(frame.height, frame.width, 3)
    weights = stub_weights(spec)
    x = []
    row_edges = [(i * frame.height) // side for i in range(side)] + [frame.height]
    col_edges = [(j * frame.width) // side for j in range(side)] + [frame.width]
    for i in range(side):
        r0, r1 = row_edges[i], max(row_edges[i + 1], row_edges[i] + 1)
        for j in range(side):
            c0, c1 = col_edges[j], max(col_edges[j + 1], col_edges[j] + 1)
            for ch in range(3):
                total = 0.0
                for y in range(r0, r1):
                    for x_ in range(c0, c1):
                        total += float(px[y, x_, ch])
                mean = total / ((r1 - r0) * (c1 - c0))
                x.append(mean / 255.0)
    return tuple(
        math.fsum(float(weights[c][i]) * x[i] for i in range(len(x))) for c in range(4)
    )


class TestStub:
    def test_black_frame_yields_zero_logits(self):
        frame = solid_frame(64, 64, (0, 0, 0))
        for seed in (0, 7, 42):
            assert stub_infer(frame, StubModelSpec(seed=seed)) == (0.0, 0.0, 0.0, 0.0)

    def test_matches_straight_line_oracle_bit_for_bit(self, rng):
        spec = StubModelSpec(seed=42)
        frame = random_frame(rng, 64, 64)
        got = stub_infer(frame, spec)
        want = oracle_stub_infer(frame, spec)
        assert got == want  # byte-identical doubles

    def test_oracle_agreement_on_odd_sizes(self, rng):
        spec = StubModelSpec(seed=3, input_side=8)
        for w, h in [(13, 9), (8, 8), (5, 17), (3, 3)]:
            frame = random_frame(rng, w, h)
            assert stub_infer(frame, spec) == oracle_stub_infer(frame, spec)

    def test_same_seed_same_logits(self, rng):
        frame = random_frame(rng, 48, 40)
        a = stub_infer(frame, StubModelSpec(seed=5))
        b = stub_infer(frame, StubModelSpec(seed=5))
        assert a == b
        c = stub_infer(frame, StubModelSpec(seed=6))
        assert a != c

    def test_frames_identical_after_downsampling_share_logits(self):
        spec = StubModelSpec(seed=9, input_side=2)
        # 4x4 frames with equal 2x2 box means but different pixels
        a = np.zeros((4, 4, 3), dtype=np.uint8)
        b = np.zeros((4, 4, 3), dtype=np.uint8)
        a[0, 0] = 100
        a[1, 1] = 100
        b[0, 1] = 100
        b[1, 0] = 100
        fa, fb = make_frame(a), make_frame(b)
        assert np.array_equal(downsample_box(fa, 2), downsample_box(fb, 2))
        assert stub_infer(fa, spec) == stub_infer(fb, spec)

    def test_provider_caches_weights(self, rng):
        provider = StubProvider(StubModelSpec(seed=11))
        frame = random_frame(rng, 32, 32)
        assert provider.infer(frame) == stub_infer(frame, provider.spec)

    def test_throughput_sustains_100_fps(self):
        provider = StubProvider(StubModelSpec(seed=1))
        rng = np.random.default_rng(0)
        frames = [random_frame(rng, 640, 512, index=i) for i in range(20)]
        start = time.perf_counter()
        for f in frames:
            provider.infer(f)
        elapsed = time.perf_counter() - start
        assert len(frames) / elapsed >= 100, f"stub at {len(frames)/elapsed:.0f} fps"


class MockModelServer:
    """One-shot TCP server scripted per test."""

    def __init__(self, handler):
        self.handler = handler
        self.sock = socket.socket()
        self.sock.bind(("127.0.0.1", 0))
        self.sock.listen(1)
        self.port = self.sock.getsockname()[1]
        self.thread = threading.Thread(target=self._serve, daemon=True)
        self.thread.start()

    def _serve(self):
        conn, _ = self.sock.accept()
        with conn:
            self.handler(conn)

    def close(self):
        self.sock.close()
        self.thread.join(timeout=2)


def read_request(conn):
    header = b""
    while len(header) < 4 + 12:
        chunk = conn.recv(4 + 12 - len(header))
        if not chunk:
            raise ConnectionError("client closed")
        header += chunk
    index, width, height = struct.unpack_from("<QHH", header, 4)
    remaining = width * height * 3
    payload = b""
    while len(payload) < remaining:
        payload += conn.recv(remaining - len(payload))
    return header[:4], index, width, height, payload


class TestRemote:
    def test_echo_round_trip(self):
        def handler(conn):
            magic, index, w, h, payload = read_request(conn)
            assert magic == WIRE_MAGIC
            conn.sendall(encode_response(index, (1.0, 2.0, 3.0, 4.0)))

        server = MockModelServer(handler)
        provider = RemoteProvider("127.0.0.1", server.port, timeout_s=2.0)
        frame = solid_frame(4, 4, (10, 20, 30), index=5)
        assert provider.infer(frame) == (1.0, 2.0, 3.0, 4.0)
        provider.close()
        server.close()

    def test_short_response_is_protocol_error(self):
        def handler(conn):
            read_request(conn)
            # three float32 values instead of four, then close
            conn.sendall(WIRE_MAGIC + struct.pack("<Q3f", 0, 1.0, 2.0, 3.0))

        server = MockModelServer(handler)
        provider = RemoteProvider("127.0.0.1", server.port, timeout_s=2.0)
        with pytest.raises(ProtocolError):
            provider.infer(solid_frame(2, 2, (0, 0, 0), index=0))
        server.close()

    def test_bad_magic_is_protocol_error(self):
        def handler(conn):
            _, index, *_ = read_request(conn)
            conn.sendall(b"XXXX" + struct.pack("<Q4f", index, 0.0, 0.0, 0.0, 0.0))

        server = MockModelServer(handler)
        provider = RemoteProvider("127.0.0.1", server.port, timeout_s=2.0)
        with pytest.raises(ProtocolError):
            provider.infer(solid_frame(2, 2, (0, 0, 0)))
        server.close()

    def test_wrong_frame_index_is_protocol_error(self):
        def handler(conn):
            read_request(conn)
            conn.sendall(encode_response(999, (0.0, 0.0, 0.0, 0.0)))

        server = MockModelServer(handler)
        provider = RemoteProvider("127.0.0.1", server.port, timeout_s=2.0)
        with pytest.raises(ProtocolError):
            provider.infer(solid_frame(2, 2, (0, 0, 0), index=1))
        server.close()

    def test_slow_server_is_transport_error(self):
        def handler(conn):
            read_request(conn)
            time.sleep(0.5)

        server = MockModelServer(handler)
        provider = RemoteProvider("127.0.0.1", server.port, timeout_s=0.05)
        with pytest.raises(TransportError):
            provider.infer(solid_frame(2, 2, (0, 0, 0)))
        server.close()

    def test_unreachable_server_is_transport_error(self):
        provider = RemoteProvider("127.0.0.1", 1, timeout_s=0.05)
        with pytest.raises(TransportError):
            provider.infer(solid_frame(2, 2, (0, 0, 0)))

    def test_decode_request_round_trip(self):
        frame = solid_frame(3, 2, (9, 8, 7), index=12)
        from hector.inference import encode_request

        index, width, height, pixels = decode_request(encode_request(frame))
        assert (index, width, height) == (12, 3, 2)
        assert pixels == frame.pixels

    def test_logs_responses_for_replay(self):
        logged = []

        def handler(conn):
            magic, index, *_ = read_request(conn)
            conn.sendall(encode_response(index, (0.5, 1.5, -2.0, 0.25)))

        server = MockModelServer(handler)
        provider = RemoteProvider(
            "127.0.0.1", server.port, timeout_s=2.0, log=lambda i, l: logged.append((i, l))
        )
        provider.infer(solid_frame(2, 2, (1, 1, 1), index=3))
        assert logged == [(3, (0.5, 1.5, -2.0, 0.25))]
        server.close()


class TestReplay:
    def test_round_trip_through_log_file(self, tmp_path, rng):
        path = str(tmp_path / "sess1.infer.jsonl")
        logits = {i: tuple(rng.normal(size=4).tolist()) for i in range(5)}
        with open(path, "w") as fh:
            for i, l in logits.items():
                write_inference_log_entry(fh, i, l)
        provider = ReplayProvider.from_log(path)
        for i, expected in logits.items():
            assert provider.infer(solid_frame(2, 2, (0, 0, 0), index=i)) == expected

    def test_missing_frame_is_transport_error(self):
        provider = ReplayProvider({})
        with pytest.raises(TransportError):
            provider.infer(solid_frame(2, 2, (0, 0, 0), index=9))
