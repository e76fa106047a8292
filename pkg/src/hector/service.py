"""Live session orchestration: the start/stop control around the pipeline.

One session at a time moves through Idle -> Running -> Review -> Idle.
While running, an ingest thread feeds frames through a small bounded
queue to a worker thread that runs prefilter -> inference -> gate ->
smoothing -> selection, appends every verdict to the session store
(write-ahead) and then broadcasts it to event subscribers. Paced (live)
sources drop the oldest queued frame when the worker falls behind;
dropped frames still produce a discarded verdict so every ingested
frame yields exactly one verdict, in index order.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .domain import (
    DiscardReason,
    Frame,
    FrameVerdict,
    PipelineConfig,
    validate_config,
)
from .inference import (
    InferenceError,
    LogitProvider,
    RemoteProvider,
    ReplayProvider,
    StubModelSpec,
    StubProvider,
    write_inference_log_entry,
)
from .osr import CalibrationModel, gate_and_classify
from .prefilter import prefilter
from .selection import SelectionEntry, SelectionState, save_selection_pngs
from .smoothing import SmootherState, VideoScore, finalize_video_score
from .sources import FrameSource, SourceUnavailable, open_source
from .store import ReviewEdit, SelectionMeta, SessionStore, UnknownFrame

logger = logging.getLogger(__name__)

INGEST_QUEUE_CAPACITY = 2
EVENT_QUEUE_CAPACITY = 256
DRAIN_TIMEOUT_S = 30.0


class ServiceError(Exception):
    pass


class AlreadyRunning(ServiceError):
    pass


class NotRunning(ServiceError):
    pass


class NotInReview(ServiceError):
    pass


class ConfigInvalid(ServiceError):
    def __init__(self, violations: list[str]) -> None:
        super().__init__("; ".join(violations))
        self.violations = violations


class Lifecycle(str, Enum):
    IDLE = "idle"
    RUNNING = "running"
    REVIEW = "review"


@dataclass(frozen=True)
class VerdictEvent:
    """What the live badge needs to know about one frame."""

    frame_index: int
    timestamp_ms: float
    kind: str  # scored | discarded
    mes: int | None
    suitable: bool

    def __post_init__(self) -> None:
        if self.suitable != (self.kind == "scored"):
            raise ValueError("suitable must mirror kind == scored")

    def to_obj(self) -> dict:
        obj = {
            "evt": "verdict",
            "frame": self.frame_index,
            "ts": self.timestamp_ms,
            "kind": self.kind,
            "suitable": self.suitable,
        }
        if self.mes is not None:
            obj["mes"] = self.mes
        return obj


@dataclass(frozen=True)
class ReviewBundle:
    """Everything the post-procedure screen shows; computed once at stop."""

    session_id: str
    unscorable: bool
    video: VideoScore | None
    selection: tuple[SelectionMeta, ...]
    summary: dict[str, int]

    def to_obj(self) -> dict:
        return {
            "session": self.session_id,
            "unscorable": self.unscorable,
            "video": None
            if self.video is None
            else {
                "overall_mes": self.video.overall_mes,
                "peak_frame": self.video.peak_frame_index,
                "peak_probs": list(self.video.peak_probs),
            },
            "selection": [
                {
                    "frame": e.frame_index,
                    "mes": e.mes,
                    "certainty": e.certainty,
                    "probs": list(e.probs),
                    "image": e.image,
                }
                for e in self.selection
            ],
            "summary": dict(sorted(self.summary.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_obj(), sort_keys=True)


class EventBroadcaster:
    """Fan-out to subscriber queues; slow subscribers lose events, never block."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._queues: list[queue.Queue] = []

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=EVENT_QUEUE_CAPACITY)
        with self._lock:
            self._queues.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            try:
                self._queues.remove(q)
            except ValueError:
                pass

    def publish(self, obj: dict) -> None:
        with self._lock:
            targets = list(self._queues)
        for q in targets:
            try:
                q.put_nowait(obj)
            except queue.Full:
                pass


class _Slot:
    """One queue entry; a slot whose frame was dropped keeps only identity."""

    __slots__ = ("frame", "index", "timestamp_ms", "ingest_t")

    def __init__(self, frame: Frame, ingest_t: float) -> None:
        self.frame: Frame | None = frame
        self.index = frame.index
        self.timestamp_ms = frame.timestamp_ms
        self.ingest_t = ingest_t


_EOS = object()


class FramePipe:
    """Bounded ingest queue.

    Live (drop_oldest) mode never blocks the producer: when the live
    frame count reaches capacity the oldest undropped slot is turned
    into a drop marker in place, preserving index order. Batch mode
    blocks the producer instead so nothing is lost.
    """

    def __init__(self, capacity: int = INGEST_QUEUE_CAPACITY, drop_oldest: bool = False) -> None:
        self.capacity = capacity
        self.drop_oldest = drop_oldest
        self._items: deque = deque()
        self._cond = threading.Condition()
        self._closed = False

    def _live_count(self) -> int:
        return sum(1 for s in self._items if s is not _EOS and s.frame is not None)

    def put(self, frame: Frame) -> bool:
        """Enqueue one frame; False if the pipe was closed while waiting."""
        slot = _Slot(frame, time.perf_counter())
        with self._cond:
            if self.drop_oldest:
                if self._live_count() >= self.capacity:
                    for s in self._items:
                        if s is not _EOS and s.frame is not None:
                            s.frame = None  # becomes a drop marker
                            break
                self._items.append(slot)
                self._cond.notify()
                return True
            while not self._closed and self._live_count() >= self.capacity:
                self._cond.wait(timeout=0.05)
            if self._closed:
                return False
            self._items.append(slot)
            self._cond.notify()
            return True

    def put_eos(self) -> None:
        with self._cond:
            self._items.append(_EOS)
            self._cond.notify()

    def get(self, timeout: float = 0.1):
        """Next slot, _EOS, or None on timeout."""
        with self._cond:
            if not self._items:
                self._cond.wait(timeout=timeout)
            if not self._items:
                return None
            item = self._items.popleft()
            self._cond.notify()
            return item

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()


def make_provider(descriptor: str) -> LogitProvider:
    """Build a logit provider from ``stub:SEED``, ``remote:HOST:PORT`` or ``replay:PATH``."""
    kind, _, rest = descriptor.partition(":")
    if kind == "stub":
        return StubProvider(StubModelSpec(seed=int(rest or "0")))
    if kind == "remote":
        host, _, port = rest.rpartition(":")
        if not host:
            raise ValueError(f"remote descriptor needs HOST:PORT, got {descriptor!r}")
        return RemoteProvider(host, int(port))
    if kind == "replay":
        return ReplayProvider.from_log(rest)
    raise ValueError(f"unknown model descriptor {descriptor!r}")


class _SessionContext:
    """Mutable state for the one active session."""

    def __init__(
        self,
        session_id: str,
        source: FrameSource,
        config: PipelineConfig,
        provider: LogitProvider,
        store: SessionStore,
        score_all: bool = False,
    ) -> None:
        self.session_id = session_id
        self.source = source
        self.config = config
        self.provider = provider
        self.score_all = score_all
        self.writer = store.create(session_id, config, started_at=time.time())
        self.infer_log = open(store.inference_log_path(session_id), "w", encoding="utf-8")
        self.smoother = SmootherState(config.window)
        self.selection = SelectionState(config.k, config.min_gap)
        self.points = []
        self.summary: dict[str, int] = {"total": 0, "scored": 0}
        self.latencies: list[tuple[int, float, float]] = []  # (index, ingest_t, emit_t)
        self.pipe = FramePipe(drop_oldest=source.paced)
        self.stop_flag = threading.Event()
        self.review_ready = threading.Event()
        self.bundle: ReviewBundle | None = None
        self.ingest_thread: threading.Thread | None = None
        self.work_thread: threading.Thread | None = None
        self.calibration = CalibrationModel(config.temperature)


class ControlService:
    """Serialized control operations around the per-session pipeline threads."""

    def __init__(self, data_dir: str, default_config: PipelineConfig | None = None) -> None:
        self.store = SessionStore(data_dir)
        self.default_config = default_config or PipelineConfig()
        self.events = EventBroadcaster()
        self._lock = threading.RLock()
        self._lifecycle = Lifecycle.IDLE
        self._ctx: _SessionContext | None = None
        self._review_session: str | None = None

    # -- lifecycle ---------------------------------------------------------

    @property
    def lifecycle(self) -> Lifecycle:
        with self._lock:
            return self._lifecycle

    @property
    def active_session(self) -> str | None:
        with self._lock:
            return self._ctx.session_id if self._ctx else None

    def start_session(
        self,
        source: str | FrameSource,
        config: PipelineConfig | None = None,
        model: str | LogitProvider = "stub:0",
        session_id: str | None = None,
        score_all: bool = False,
    ) -> str:
        """Open a session and run the pipeline over the source.

        ``score_all`` forces inference even on prefilter-discarded
        frames so evaluation runs get a max-logit score for every
        frame; verdicts are unaffected.
        """
        with self._lock:
            if self._lifecycle is not Lifecycle.IDLE:
                raise AlreadyRunning(f"lifecycle is {self._lifecycle.value}")
            cfg = config or self.default_config
            violations = validate_config(cfg)
            if violations:
                raise ConfigInvalid(violations)
            src = open_source(source) if isinstance(source, str) else source
            provider = make_provider(model) if isinstance(model, str) else model
            sid = session_id or uuid.uuid4().hex[:12]
            ctx = _SessionContext(sid, src, cfg, provider, self.store, score_all=score_all)
            self._ctx = ctx
            self._lifecycle = Lifecycle.RUNNING
        self._publish_lifecycle()
        ctx.ingest_thread = threading.Thread(
            target=self._ingest_loop, args=(ctx,), name=f"ingest-{sid}", daemon=True
        )
        ctx.work_thread = threading.Thread(
            target=self._work_loop, args=(ctx,), name=f"work-{sid}", daemon=True
        )
        ctx.ingest_thread.start()
        ctx.work_thread.start()
        logger.info("session %s started on %s", sid, ctx.source.name)
        return sid

    def stop_session(self, session_id: str) -> ReviewBundle:
        """Stop ingesting, drain in-flight frames and move to Review."""
        with self._lock:
            ctx = self._ctx
            if self._lifecycle is not Lifecycle.RUNNING or ctx is None or ctx.session_id != session_id:
                raise NotRunning(f"session {session_id} is not running")
            ctx.stop_flag.set()
            ctx.pipe.close()
        if not ctx.review_ready.wait(timeout=DRAIN_TIMEOUT_S):
            raise ServiceError(f"session {session_id} failed to drain")
        assert ctx.bundle is not None
        return ctx.bundle

    def wait_until_review(self, timeout: float | None = None) -> ReviewBundle:
        """Block until the active session finishes its source (batch runs)."""
        with self._lock:
            ctx = self._ctx
            if ctx is None:
                raise NotRunning("no active session")
        if not ctx.review_ready.wait(timeout=timeout):
            raise ServiceError("session did not reach review in time")
        assert ctx.bundle is not None
        return ctx.bundle

    def review_bundle(self, session_id: str | None = None) -> ReviewBundle:
        with self._lock:
            ctx = self._ctx
            if self._lifecycle is not Lifecycle.REVIEW or ctx is None:
                raise NotInReview(f"lifecycle is {self._lifecycle.value}")
            if session_id is not None and ctx.session_id != session_id:
                raise NotInReview(f"session {session_id} is not in review")
            assert ctx.bundle is not None
            return ctx.bundle

    def submit_review(
        self,
        session_id: str,
        edits: list[tuple[int, int]],
        journal: list[int] | None = None,
    ) -> None:
        """Apply the whole edit batch atomically, then close out to Idle.

        ``edits`` holds (frame_index, corrected_mes) pairs; ``journal``
        lists frames picked for the medical journal. A batch touching
        any frame outside the selection is rejected as a whole.
        """
        journal = journal or []
        with self._lock:
            ctx = self._ctx
            if self._lifecycle is not Lifecycle.REVIEW or ctx is None or ctx.session_id != session_id:
                raise NotInReview(f"session {session_id} is not in review")
            selected = {e.frame_index: e for e in (ctx.bundle.selection if ctx.bundle else ())}
            merged: dict[int, ReviewEdit] = {}
            now = time.time()
            for frame_index, mes in edits:
                if frame_index not in selected:
                    raise UnknownFrame(f"frame {frame_index} is not in the selection")
                merged[frame_index] = ReviewEdit(
                    frame_index=frame_index,
                    corrected_mes=mes,
                    keep_in_journal=frame_index in journal,
                    edited_at=now,
                )
            for frame_index in journal:
                if frame_index not in selected:
                    raise UnknownFrame(f"frame {frame_index} is not in the selection")
                if frame_index not in merged:
                    merged[frame_index] = ReviewEdit(
                        frame_index=frame_index,
                        corrected_mes=selected[frame_index].mes,
                        keep_in_journal=True,
                        edited_at=now,
                    )
            for edit in merged.values():
                self.store.apply_edit(session_id, edit)
            self._ctx = None
            self._lifecycle = Lifecycle.IDLE
        self._publish_lifecycle()
        logger.info("session %s closed with %d edits", session_id, len(merged))

    def subscribe_events(self) -> queue.Queue:
        return self.events.subscribe()

    def unsubscribe_events(self, q: queue.Queue) -> None:
        self.events.unsubscribe(q)

    def latency_stats(self, session_id: str) -> list[tuple[int, float, float]]:
        with self._lock:
            ctx = self._ctx
        if ctx is not None and ctx.session_id == session_id:
            return list(ctx.latencies)
        raise ServiceError(f"no latency stats for session {session_id}")

    def close(self) -> None:
        with self._lock:
            ctx = self._ctx
        if ctx is not None and not ctx.review_ready.is_set():
            ctx.stop_flag.set()
            ctx.pipe.close()
            ctx.review_ready.wait(timeout=DRAIN_TIMEOUT_S)
        with self._lock:
            self._ctx = None
            self._lifecycle = Lifecycle.IDLE

    # -- pipeline threads ----------------------------------------------------

    def _publish_lifecycle(self) -> None:
        self.events.publish({"evt": "lifecycle", "state": self.lifecycle.value, "session": self.active_session})

    def _ingest_loop(self, ctx: _SessionContext) -> None:
        paced = ctx.source.paced and ctx.source.fps
        start_t = time.perf_counter()
        try:
            for frame in ctx.source.frames():
                if ctx.stop_flag.is_set():
                    break
                if paced:
                    target = start_t + frame.index / ctx.source.fps
                    delay = target - time.perf_counter()
                    if delay > 0:
                        time.sleep(delay)
                if not ctx.pipe.put(frame):
                    break
        except Exception:
            logger.exception("source %s failed; draining session", ctx.source.name)
        finally:
            ctx.pipe.put_eos()

    def _process_slot(self, ctx: _SessionContext, slot: _Slot) -> None:
        ctx.summary["total"] += 1
        if slot.frame is None:
            verdict = FrameVerdict.discarded(slot.index, slot.timestamp_ms, DiscardReason.QUEUE_DROP)
        else:
            verdict = self._score_frame(ctx, slot.frame)
        ctx.writer.append_verdict(verdict)
        if verdict.is_scored:
            ctx.summary["scored"] += 1
        else:
            key = f"discarded_{verdict.reason.value}"
            ctx.summary[key] = ctx.summary.get(key, 0) + 1
        event = VerdictEvent(
            frame_index=verdict.frame_index,
            timestamp_ms=verdict.timestamp_ms,
            kind="scored" if verdict.is_scored else "discarded",
            mes=verdict.mes,
            suitable=verdict.is_scored,
        )
        self.events.publish(event.to_obj())
        ctx.latencies.append((slot.index, slot.ingest_t, time.perf_counter()))

    def _score_frame(self, ctx: _SessionContext, frame: Frame) -> FrameVerdict:
        pf = prefilter(frame, ctx.config)
        logits = None
        if pf.passed or ctx.score_all:
            try:
                logits = ctx.provider.infer(frame)
                write_inference_log_entry(ctx.infer_log, frame.index, logits)
            except InferenceError as exc:
                logger.warning("inference failed for frame %d: %s", frame.index, exc)
        if not pf.passed:
            return FrameVerdict.discarded(frame.index, frame.timestamp_ms, pf.fail_reason)
        if logits is None:
            return FrameVerdict.discarded(
                frame.index, frame.timestamp_ms, DiscardReason.INFERENCE_UNAVAILABLE
            )
        decision = gate_and_classify(logits, ctx.calibration, ctx.config.osr_tau)
        if not decision.in_distribution:
            return FrameVerdict.discarded(
                frame.index, frame.timestamp_ms, DiscardReason.BELOW_OSR_THRESHOLD
            )
        point = ctx.smoother.push_scored(decision.probs, frame.index)
        ctx.points.append(point)
        ctx.writer.append_smoothed(point)
        ctx.selection.offer(
            SelectionEntry(
                frame_index=frame.index,
                mes=decision.mes,
                certainty=decision.certainty,
                probs=decision.probs,
                width=frame.width,
                height=frame.height,
                pixels=frame.pixels,
            )
        )
        return FrameVerdict.scored(
            frame.index,
            frame.timestamp_ms,
            mes=decision.mes,
            probs=decision.probs,
            max_logit=decision.max_logit,
            certainty=decision.certainty,
        )

    def _work_loop(self, ctx: _SessionContext) -> None:
        try:
            while True:
                item = ctx.pipe.get(timeout=0.1)
                if item is None:
                    continue
                if item is _EOS:
                    break
                self._process_slot(ctx, item)
        except Exception:
            logger.exception("pipeline failed for session %s", ctx.session_id)
        finally:
            self._finalize(ctx)

    def _finalize(self, ctx: _SessionContext) -> None:
        video: VideoScore | None = None
        if ctx.points:
            video = finalize_video_score(ctx.points)
            ctx.writer.set_video_score(video)
        entries = ctx.selection.final_selection()
        names = save_selection_pngs(entries, ctx.session_id, self.store.root)
        metas = tuple(
            SelectionMeta(
                frame_index=e.frame_index,
                mes=e.mes,
                certainty=e.certainty,
                probs=e.probs,
                image=name,
            )
            for e, name in zip(entries, names)
        )
        ctx.writer.set_selection(metas)
        ctx.writer.end(ended_at=time.time())
        ctx.infer_log.close()
        stream = getattr(ctx.source, "stream", None)
        if stream is not None and hasattr(stream, "usable"):
            with open(self.store.labels_path(ctx.session_id), "w", encoding="utf-8") as fh:
                json.dump({"usable": list(stream.usable), "true_mes": list(stream.true_mes)}, fh)
        ctx.bundle = ReviewBundle(
            session_id=ctx.session_id,
            unscorable=video is None,
            video=video,
            selection=metas,
            summary=dict(ctx.summary),
        )
        with self._lock:
            self._lifecycle = Lifecycle.REVIEW
        ctx.review_ready.set()
        self._publish_lifecycle()
        logger.info(
            "session %s in review: %d frames, %d scored",
            ctx.session_id,
            ctx.summary.get("total", 0),
            ctx.summary.get("scored", 0),
        )
