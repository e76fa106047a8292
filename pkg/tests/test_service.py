from __future__ import annotations

import json
import os
import queue
import time

import numpy as np
import pytest

from hector.domain import DiscardReason, PipelineConfig
from hector.service import (
    AlreadyRunning,
    ConfigInvalid,
    ControlService,
    FramePipe,
    Lifecycle,
    NotInReview,
    NotRunning,
    VerdictEvent,
    _EOS,
    make_provider,
)
from hector.sources import NpzSource, SourceUnavailable, open_source
from hector.store import UnknownFrame

from support import solid_frame

SYNTH_64 = "synth:seed=1,width=64,height=64"
CFG = PipelineConfig(osr_tau=3.0)


@pytest.fixture
def service(tmp_path):
    svc = ControlService(str(tmp_path / "data"), default_config=CFG)
    yield svc
    svc.close()


def drain(q: queue.Queue) -> list[dict]:
    events = []
    while True:
        try:
            events.append(q.get_nowait())
        except queue.Empty:
            return events


class TestVerdictEvent:
    def test_suitable_mirrors_kind(self):
        e = VerdictEvent(0, 0.0, "scored", mes=1, suitable=True)
        assert e.to_obj()["suitable"] is True
        with pytest.raises(ValueError):
            VerdictEvent(0, 0.0, "scored", mes=1, suitable=False)

    def test_discarded_event_has_no_mes_key(self):
        e = VerdictEvent(4, 1.0, "discarded", mes=None, suitable=False)
        assert "mes" not in e.to_obj()


class TestFramePipe:
    def test_drop_oldest_preserves_order_and_identity(self):
        pipe = FramePipe(capacity=2, drop_oldest=True)
        for i in range(5):
            assert pipe.put(solid_frame(2, 2, (0, 0, 0), index=i))
        got = []
        while True:
            item = pipe.get(timeout=0.01)
            if item is None:
                break
            got.append((item.index, item.frame is None))
        # 5 puts, capacity 2: frames 0..2 became drop markers
        assert [g[0] for g in got] == [0, 1, 2, 3, 4]
        assert [g[1] for g in got] == [True, True, True, False, False]

    def test_blocking_mode_blocks_until_consumed(self):
        pipe = FramePipe(capacity=1, drop_oldest=False)
        assert pipe.put(solid_frame(2, 2, (0, 0, 0), index=0))
        start = time.perf_counter()
        import threading

        def consume_later():
            time.sleep(0.15)
            pipe.get(timeout=1)

        t = threading.Thread(target=consume_later)
        t.start()
        assert pipe.put(solid_frame(2, 2, (0, 0, 0), index=1))
        assert time.perf_counter() - start >= 0.1
        t.join()

    def test_closed_pipe_rejects_puts(self):
        pipe = FramePipe(capacity=1, drop_oldest=False)
        pipe.put(solid_frame(2, 2, (0, 0, 0), index=0))
        pipe.close()
        assert not pipe.put(solid_frame(2, 2, (0, 0, 0), index=1))


class TestLifecycle:
    def test_full_run_produces_one_verdict_per_frame(self, service):
        sid = service.start_session(SYNTH_64, session_id="s1")
        bundle = service.wait_until_review(timeout=30)
        assert service.lifecycle is Lifecycle.REVIEW
        record = service.store.load(sid)
        assert len(record.verdicts) == 220
        assert bundle.summary["total"] == 220

    def test_start_while_running_rejected(self, service):
        service.start_session(SYNTH_64, session_id="s1")
        with pytest.raises(AlreadyRunning):
            service.start_session(SYNTH_64, session_id="s2")
        service.wait_until_review(timeout=30)

    def test_start_on_missing_file_leaves_idle(self, service):
        with pytest.raises(SourceUnavailable):
            service.start_session("/nonexistent/video.npz")
        assert service.lifecycle is Lifecycle.IDLE

    def test_invalid_config_rejected(self, service):
        with pytest.raises(ConfigInvalid):
            service.start_session(SYNTH_64, config=PipelineConfig(window=0))

    def test_stop_not_running(self, service):
        with pytest.raises(NotRunning):
            service.stop_session("nope")

    def test_submit_closes_to_idle(self, service):
        sid = service.start_session(SYNTH_64, session_id="s1")
        service.wait_until_review(timeout=30)
        service.submit_review(sid, edits=[], journal=[])
        assert service.lifecycle is Lifecycle.IDLE

    def test_review_bundle_requires_review_state(self, service):
        with pytest.raises(NotInReview):
            service.review_bundle()

    def test_stop_mid_stream_counts_ingested_frames(self, service, tmp_path):
        # paced slow source so stop lands mid-stream
        sid = service.start_session(
            "synth:seed=1,width=64,height=64,fps=60,paced=1", session_id="s1"
        )
        time.sleep(0.5)
        bundle = service.stop_session(sid)
        record = service.store.load(sid)
        assert 0 < len(record.verdicts) < 220
        assert bundle.summary["total"] == len(record.verdicts)
        indices = [v.frame_index for v in record.verdicts]
        assert indices == sorted(indices)


class TestEvents:
    def test_events_ordered_and_conserved(self, service):
        q = service.subscribe_events()
        service.start_session(SYNTH_64, session_id="s1")
        service.wait_until_review(timeout=30)
        time.sleep(0.1)
        events = drain(q)
        verdicts = [e for e in events if e["evt"] == "verdict"]
        # slow-subscriber drop policy may lose events, but order must hold
        frames = [e["frame"] for e in verdicts]
        assert frames == sorted(frames)
        states = [e["state"] for e in events if e["evt"] == "lifecycle"]
        assert states[0] == "running" and states[-1] == "review"
        for e in verdicts:
            assert e["suitable"] == (e["kind"] == "scored")
            if e["kind"] == "discarded":
                assert "mes" not in e

    def test_subscriber_overflow_does_not_block_pipeline(self, service):
        q = service.subscribe_events()  # never drained: fills and drops
        service.start_session("synth:seed=2,width=64,height=64", session_id="s1")
        service.wait_until_review(timeout=30)
        assert q.qsize() <= 256


class TestReview:
    def test_edit_batch_applied(self, service):
        sid = service.start_session(SYNTH_64, session_id="s1")
        bundle = service.wait_until_review(timeout=30)
        target = bundle.selection[0].frame_index
        journal_pick = bundle.selection[1].frame_index
        service.submit_review(sid, edits=[(target, 3)], journal=[journal_pick])
        record = service.store.load(sid)
        assert record.edits[target].corrected_mes == 3
        assert record.edits[journal_pick].keep_in_journal

    def test_batch_with_unknown_frame_rejected_atomically(self, service):
        sid = service.start_session(SYNTH_64, session_id="s1")
        bundle = service.wait_until_review(timeout=30)
        good = bundle.selection[0].frame_index
        with pytest.raises(UnknownFrame):
            service.submit_review(sid, edits=[(good, 2), (99999, 1)])
        assert service.lifecycle is Lifecycle.REVIEW
        assert service.store.load(sid).edits == {}
        service.submit_review(sid, edits=[])

    def test_unscorable_all_noise_stream(self, service):
        sid = service.start_session("synth:seed=1,width=64,height=64,plan=n30", session_id="s1")
        bundle = service.wait_until_review(timeout=30)
        assert bundle.unscorable and bundle.video is None
        assert bundle.selection == ()
        record = service.store.load(sid)
        assert record.video_score is None

    def test_selection_covers_video_score_peak(self, tmp_path):
        """Some retained frame lies within min_gap of the smoothed peak."""
        for seed in range(4):
            svc = ControlService(str(tmp_path / f"pk{seed}"), default_config=CFG)
            sid = svc.start_session(
                f"synth:seed={seed},width=64,height=64", session_id="pk"
            )
            bundle = svc.wait_until_review(timeout=30)
            peak = bundle.video.peak_frame_index
            gaps = [abs(e.frame_index - peak) for e in bundle.selection]
            assert min(gaps) < CFG.min_gap
            svc.close()


class TestSources:
    def test_npz_source_round_trip(self, tmp_path, rng):
        frames = rng.integers(0, 255, size=(5, 8, 8, 3), dtype=np.uint8)
        path = str(tmp_path / "clip.npz")
        np.savez(path, frames=frames, fps=25.0)
        source = NpzSource(path)
        out = list(source.frames())
        assert len(out) == 5
        assert out[0].pixels == frames[0].tobytes()
        assert out[2].timestamp_ms == pytest.approx(2 * 40.0)

    def test_npz_requires_uint8_stack(self, tmp_path):
        path = str(tmp_path / "bad.npz")
        np.savez(path, frames=np.zeros((2, 4, 4), dtype=np.uint8))
        with pytest.raises(SourceUnavailable):
            NpzSource(path)

    def test_open_source_dispatch(self, tmp_path):
        src = open_source("synth:seed=1,width=64,height=64,paced=1")
        assert src.paced
        with pytest.raises(SourceUnavailable):
            open_source(str(tmp_path / "missing.npz"))

    def test_video_file_source_if_opencv_present(self, tmp_path):
        cv2 = pytest.importorskip("cv2")
        path = str(tmp_path / "clip.avi")
        writer = cv2.VideoWriter(path, cv2.VideoWriter_fourcc(*"MJPG"), 10.0, (32, 32))
        if not writer.isOpened():
            pytest.skip("no MJPG encoder available")
        for i in range(6):
            writer.write(np.full((32, 32, 3), i * 30, dtype=np.uint8))
        writer.release()
        from hector.sources import VideoFileSource

        source = VideoFileSource(path)
        frames = list(source.frames())
        assert len(frames) == 6
        assert frames[0].width == 32 and frames[0].height == 32


class TestProviders:
    def test_make_provider_stub(self):
        provider = make_provider("stub:42")
        assert provider.info.name == "stub:42"

    def test_make_provider_remote(self):
        provider = make_provider("remote:localhost:9000")
        assert provider.info.name == "remote:localhost:9000"

    def test_unknown_descriptor(self):
        with pytest.raises(ValueError):
            make_provider("magic:1")

    def test_inference_failure_discards_frame_and_continues(self, service):
        class FailingProvider:
            from hector.inference import ProviderInfo

            info = ProviderInfo(name="failing")
            calls = 0

            def infer(self, frame):
                from hector.inference import TransportError

                self.calls += 1
                if self.calls % 2 == 0:
                    raise TransportError("backend down")
                from hector.inference import stub_infer, StubModelSpec

                return stub_infer(frame, StubModelSpec(seed=0))

        sid = service.start_session(SYNTH_64, model=FailingProvider(), session_id="s1")
        service.wait_until_review(timeout=60)
        record = service.store.load(sid)
        assert len(record.verdicts) == 220
        reasons = {v.reason for v in record.verdicts if not v.is_scored}
        assert DiscardReason.INFERENCE_UNAVAILABLE in reasons


class TestReplayDeterminism:
    def test_rerun_from_inference_log_reproduces_verdicts(self, tmp_path):
        svc1 = ControlService(str(tmp_path / "d1"), default_config=CFG)
        sid = svc1.start_session(SYNTH_64, model="stub:5", session_id="r1")
        svc1.wait_until_review(timeout=30)
        svc1.submit_review(sid, edits=[])
        log_path = svc1.store.inference_log_path("r1")
        assert os.path.getsize(log_path) > 0

        svc2 = ControlService(str(tmp_path / "d2"), default_config=CFG)
        svc2.start_session(SYNTH_64, model=f"replay:{log_path}", session_id="r1")
        svc2.wait_until_review(timeout=30)
        svc2.submit_review("r1", edits=[])

        rec1 = svc1.store.load("r1")
        rec2 = svc2.store.load("r1")
        assert rec1.verdicts == rec2.verdicts
        assert rec1.smoothed == rec2.smoothed
        assert rec1.video_score == rec2.video_score
        svc1.close()
        svc2.close()
