"""Crash-safe session persistence and retraining-data export.

A session file is a sequence of length-prefixed records, each one a
single-line JSON object with a ``type`` field in {meta, verdict,
smoothed, videoscore, selection, edit}. Records are appended and
flushed before the write is acknowledged, so a file truncated at any
record boundary still parses to a valid prefix of the session.

Inference request/response pairs and synthetic ground-truth labels are
kept in sidecar files next to the session log; the record type set
above is fixed.
"""

from __future__ import annotations

import csv
import io
import json
import os
import re
import shutil
import struct
from dataclasses import dataclass, field, fields
from typing import Iterable, Sequence

from .domain import DiscardReason, FrameVerdict, PipelineConfig, as_probs, check_mes
from .smoothing import SmoothedPoint, VideoScore

LENGTH_PREFIX = struct.Struct("<I")

_SESSION_ID_RE = re.compile(r"^[A-Za-z0-9_-]+$")


class StoreError(Exception):
    """Corrupt session data (not mere truncation)."""


class IoFailure(StoreError):
    """Filesystem error while persisting or exporting."""


class SessionClosed(StoreError):
    """Append attempted after end_session."""


class SessionStillOpen(StoreError):
    """Edit attempted before the session was closed."""


class NonMonotonicIndex(StoreError):
    """Verdict indices must be strictly increasing within a session."""


class UnknownFrame(StoreError):
    """Edit references a frame outside the selection."""


class OpenSessionInBatch(StoreError):
    """Dataset export requires every session to be closed."""


class EmptyLabelList(ValueError):
    """majority_vote was handed no labels."""


@dataclass(frozen=True)
class ReviewEdit:
    """One clinician correction for a selected frame."""

    frame_index: int
    corrected_mes: int
    keep_in_journal: bool
    edited_at: float

    def __post_init__(self) -> None:
        check_mes(self.corrected_mes)


@dataclass(frozen=True)
class SelectionMeta:
    """Selection entry as persisted: scores plus the image file name."""

    frame_index: int
    mes: int
    certainty: float
    probs: tuple[float, float, float, float]
    image: str


@dataclass(frozen=True)
class LabeledExample:
    """One exported training example."""

    image_path: str
    label: int
    source: str  # ModelAccepted | ClinicianCorrected
    session_id: str
    frame_index: int


@dataclass
class SessionRecord:
    """Everything persisted for one procedure."""

    session_id: str
    started_at: float
    config: PipelineConfig
    ended_at: float | None = None
    verdicts: list[FrameVerdict] = field(default_factory=list)
    smoothed: list[SmoothedPoint] = field(default_factory=list)
    video_score: VideoScore | None = None
    selection: list[SelectionMeta] = field(default_factory=list)
    edits: dict[int, ReviewEdit] = field(default_factory=dict)
    edit_audit: list[ReviewEdit] = field(default_factory=list)
    source_dir: str | None = None  # where the session file and images live

    @property
    def closed(self) -> bool:
        return self.ended_at is not None


# ---------------------------------------------------------------------------
# Record encoding
# ---------------------------------------------------------------------------

def _verdict_to_obj(v: FrameVerdict) -> dict:
    obj: dict = {"type": "verdict", "frame": v.frame_index, "ts": v.timestamp_ms}
    if v.is_scored:
        obj.update(
            status="scored",
            mes=v.mes,
            probs=list(v.probs),
            max_logit=v.max_logit,
            certainty=v.certainty,
        )
    else:
        obj.update(status="discarded", reason=v.reason.value)
    return obj


def _verdict_from_obj(obj: dict) -> FrameVerdict:
    if obj["status"] == "scored":
        return FrameVerdict.scored(
            frame_index=obj["frame"],
            timestamp_ms=obj["ts"],
            mes=obj["mes"],
            probs=obj["probs"],
            max_logit=obj["max_logit"],
            certainty=obj["certainty"],
        )
    return FrameVerdict.discarded(
        frame_index=obj["frame"],
        timestamp_ms=obj["ts"],
        reason=DiscardReason(obj["reason"]),
    )


def append_record(fh, obj: dict) -> None:
    """Write one length-prefixed JSON record and flush it to the file."""
    line = json.dumps(obj, separators=(",", ":"), sort_keys=True).encode("utf-8") + b"\n"
    fh.write(LENGTH_PREFIX.pack(len(line)) + line)
    fh.flush()


def read_records(fh) -> Iterable[dict]:
    """Yield complete records; stop silently at a truncated tail."""
    while True:
        head = fh.read(LENGTH_PREFIX.size)
        if len(head) < LENGTH_PREFIX.size:
            return
        (size,) = LENGTH_PREFIX.unpack(head)
        payload = fh.read(size)
        if len(payload) < size:
            return
        try:
            yield json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise StoreError(f"corrupt session record: {exc}") from exc


# ---------------------------------------------------------------------------
# Writer
# ---------------------------------------------------------------------------

class SessionWriter:
    """Single writer for one open session; all appends are write-ahead."""

    def __init__(self, path: str, session_id: str, config: PipelineConfig, started_at: float) -> None:
        self.path = path
        self.session_id = session_id
        self._last_index: int | None = None
        self._closed = False
        self._fh = open(path, "xb")
        append_record(
            self._fh,
            {
                "type": "meta",
                "session_id": session_id,
                "started_at": started_at,
                "config": {f.name: getattr(config, f.name) for f in fields(PipelineConfig)},
            },
        )

    def _require_open(self) -> None:
        if self._closed:
            raise SessionClosed(f"session {self.session_id} is closed")

    def append_verdict(self, verdict: FrameVerdict) -> None:
        self._require_open()
        if self._last_index is not None and verdict.frame_index <= self._last_index:
            raise NonMonotonicIndex(
                f"verdict index {verdict.frame_index} not above {self._last_index}"
            )
        append_record(self._fh, _verdict_to_obj(verdict))
        self._last_index = verdict.frame_index

    def append_smoothed(self, point: SmoothedPoint) -> None:
        self._require_open()
        append_record(
            self._fh,
            {
                "type": "smoothed",
                "frame": point.frame_index,
                "fill": point.window_fill,
                "mean_probs": list(point.mean_probs),
                "mes": point.smoothed_mes,
            },
        )

    def set_video_score(self, score: VideoScore) -> None:
        self._require_open()
        append_record(
            self._fh,
            {
                "type": "videoscore",
                "overall_mes": score.overall_mes,
                "peak_frame": score.peak_frame_index,
                "peak_probs": list(score.peak_probs),
            },
        )

    def set_selection(self, entries: Sequence[SelectionMeta]) -> None:
        self._require_open()
        append_record(
            self._fh,
            {
                "type": "selection",
                "entries": [
                    {
                        "frame": e.frame_index,
                        "mes": e.mes,
                        "certainty": e.certainty,
                        "probs": list(e.probs),
                        "image": e.image,
                    }
                    for e in entries
                ],
            },
        )

    def end(self, ended_at: float) -> None:
        self._require_open()
        append_record(self._fh, {"type": "meta", "ended_at": ended_at})
        self._fh.flush()
        os.fsync(self._fh.fileno())
        self._fh.close()
        self._closed = True

    def abort(self) -> None:
        if not self._closed:
            self._fh.close()
            self._closed = True


# ---------------------------------------------------------------------------
# Reader
# ---------------------------------------------------------------------------

def read_session(path: str) -> SessionRecord:
    """Parse a session file; tolerates a truncated tail."""
    record: SessionRecord | None = None
    with open(path, "rb") as fh:
        for obj in read_records(fh):
            kind = obj.get("type")
            if kind == "meta":
                if record is None:
                    record = SessionRecord(
                        session_id=obj["session_id"],
                        started_at=obj["started_at"],
                        config=PipelineConfig(**obj["config"]),
                    )
                else:
                    record.ended_at = obj.get("ended_at", record.ended_at)
            elif record is None:
                raise StoreError("session file does not start with a meta record")
            elif kind == "verdict":
                record.verdicts.append(_verdict_from_obj(obj))
            elif kind == "smoothed":
                record.smoothed.append(
                    SmoothedPoint(
                        frame_index=obj["frame"],
                        window_fill=obj["fill"],
                        mean_probs=as_probs(obj["mean_probs"]),
                        smoothed_mes=obj["mes"],
                    )
                )
            elif kind == "videoscore":
                record.video_score = VideoScore(
                    overall_mes=obj["overall_mes"],
                    peak_frame_index=obj["peak_frame"],
                    peak_probs=as_probs(obj["peak_probs"]),
                )
            elif kind == "selection":
                record.selection = [
                    SelectionMeta(
                        frame_index=e["frame"],
                        mes=e["mes"],
                        certainty=e["certainty"],
                        probs=tuple(e["probs"]),
                        image=e["image"],
                    )
                    for e in obj["entries"]
                ]
            elif kind == "edit":
                edit = ReviewEdit(
                    frame_index=obj["frame"],
                    corrected_mes=obj["corrected_mes"],
                    keep_in_journal=obj["keep_in_journal"],
                    edited_at=obj["edited_at"],
                )
                prior = record.edits.get(edit.frame_index)
                if prior is not None:
                    record.edit_audit.append(prior)
                record.edits[edit.frame_index] = edit
            else:
                raise StoreError(f"unknown record type {kind!r}")
    if record is None:
        raise StoreError(f"session file {path} holds no complete records")
    record.source_dir = os.path.dirname(os.path.abspath(path))
    return record


# ---------------------------------------------------------------------------
# Store: a directory of sessions
# ---------------------------------------------------------------------------

class SessionStore:
    """All sessions under one data directory.

    Layout: ``sess<id>.log`` (records), ``sess<id>.infer.jsonl``
    (replayable inference pairs), ``sess<id>.labels.json`` (synthetic
    ground truth, when the source provides it) and the selected-frame
    PNGs.
    """

    def __init__(self, root: str) -> None:
        self.root = root
        os.makedirs(root, exist_ok=True)

    def session_path(self, session_id: str) -> str:
        return os.path.join(self.root, f"sess{session_id}.log")

    def inference_log_path(self, session_id: str) -> str:
        return os.path.join(self.root, f"sess{session_id}.infer.jsonl")

    def labels_path(self, session_id: str) -> str:
        return os.path.join(self.root, f"sess{session_id}.labels.json")

    def create(self, session_id: str, config: PipelineConfig, started_at: float) -> SessionWriter:
        if not _SESSION_ID_RE.match(session_id):
            raise ValueError(f"session id {session_id!r} must match {_SESSION_ID_RE.pattern}")
        try:
            return SessionWriter(self.session_path(session_id), session_id, config, started_at)
        except FileExistsError:
            raise IoFailure(f"session {session_id} already exists") from None

    def load(self, session_id: str) -> SessionRecord:
        return read_session(self.session_path(session_id))

    def session_ids(self) -> list[str]:
        ids = []
        for name in os.listdir(self.root):
            if name.startswith("sess") and name.endswith(".log"):
                ids.append(name[len("sess"):-len(".log")])
        return sorted(ids)

    def apply_edit(self, session_id: str, edit: ReviewEdit) -> SessionRecord:
        """Record one correction on a closed session; latest edit wins."""
        record = self.load(session_id)
        if not record.closed:
            raise SessionStillOpen(f"session {session_id} is still open")
        if edit.frame_index not in {e.frame_index for e in record.selection}:
            raise UnknownFrame(
                f"frame {edit.frame_index} is not in the selection of session {session_id}"
            )
        with open(self.session_path(session_id), "ab") as fh:
            append_record(
                fh,
                {
                    "type": "edit",
                    "frame": edit.frame_index,
                    "corrected_mes": edit.corrected_mes,
                    "keep_in_journal": edit.keep_in_journal,
                    "edited_at": edit.edited_at,
                },
            )
        prior = record.edits.get(edit.frame_index)
        if prior is not None:
            record.edit_audit.append(prior)
        record.edits[edit.frame_index] = edit
        return record


# ---------------------------------------------------------------------------
# Label aggregation and export
# ---------------------------------------------------------------------------

def majority_vote(labels: Sequence[int]) -> int:
    """Modal label; ties break toward the highest tied class."""
    if not labels:
        raise EmptyLabelList("majority_vote needs at least one label")
    counts = [0, 0, 0, 0]
    for label in labels:
        counts[check_mes(label)] += 1
    return max(range(4), key=lambda c: (counts[c], c))


MANIFEST_HEADER = ["image_path", "label", "source", "session_id", "frame_index"]


def export_dataset(sessions: Sequence[SessionRecord], out_dir: str) -> list[LabeledExample]:
    """Write the labelled images plus a manifest CSV.

    Labels come from the latest clinician edit when one exists,
    otherwise from the model. Output ordering is (session_id,
    frame_index), so repeated exports are byte-identical.
    """
    for record in sessions:
        if not record.closed:
            raise OpenSessionInBatch(f"session {record.session_id} is still open")

    images_dir = os.path.join(out_dir, "images")
    os.makedirs(images_dir, exist_ok=True)
    examples: list[LabeledExample] = []
    for record in sorted(sessions, key=lambda r: r.session_id):
        for entry in sorted(record.selection, key=lambda e: e.frame_index):
            edit = record.edits.get(entry.frame_index)
            if edit is not None:
                label = edit.corrected_mes
                # journal picks re-record the model's score; only a real
                # change counts as a correction
                source = "ClinicianCorrected" if label != entry.mes else "ModelAccepted"
            else:
                label, source = entry.mes, "ModelAccepted"
            src = os.path.join(record.source_dir or ".", entry.image)
            dst = os.path.join(images_dir, entry.image)
            try:
                shutil.copyfile(src, dst)
            except OSError as exc:
                raise IoFailure(f"cannot copy {src}: {exc}") from exc
            examples.append(
                LabeledExample(
                    image_path=os.path.join("images", entry.image),
                    label=label,
                    source=source,
                    session_id=record.session_id,
                    frame_index=entry.frame_index,
                )
            )

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for ex in examples:
        writer.writerow([ex.image_path, ex.label, ex.source, ex.session_id, ex.frame_index])
    manifest_path = os.path.join(out_dir, "manifest.csv")
    try:
        with open(manifest_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    except OSError as exc:
        raise IoFailure(f"cannot write manifest: {exc}") from exc
    return examples
