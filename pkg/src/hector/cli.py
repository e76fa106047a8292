"""Command line entry points: run, eval, export, calibrate."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

from .domain import PipelineConfig, load_config
from .evaluation import SingleClassInput, auroc, macro_auroc, roc_sweep
from .osr import fit_temperature
from .service import ControlService, Lifecycle
from .server import ProtocolServer
from .store import SessionStore, export_dataset

logger = logging.getLogger(__name__)

DEFAULT_DATA_DIR = "hector-data"


def data_dir(args) -> str:
    return args.data_dir or os.environ.get("HECTOR_DATA_DIR", DEFAULT_DATA_DIR)


def cmd_run(args) -> int:
    config = load_config(args.config) if args.config else PipelineConfig()
    service = ControlService(data_dir(args), default_config=config)
    server = None
    if args.listen:
        host, _, port = args.listen.rpartition(":")
        server = ProtocolServer(service, host or "127.0.0.1", int(port))
        server.start()
        print(f"control on {server.host}:{server.port}, events on port {server.event_port}")
    session_id = service.start_session(
        source=args.source,
        model=args.model,
        session_id=args.session_id,
        score_all=args.score_all,
    )
    print(f"session {session_id} running on {args.source}")
    bundle = service.wait_until_review(timeout=args.timeout)
    print(json.dumps(bundle.to_obj(), indent=2, sort_keys=True))
    if server is not None:
        # stay up for the review UI until the session is closed remotely
        print("waiting for review submission (ctrl-c to abandon)")
        try:
            while service.lifecycle is not Lifecycle.IDLE:
                time.sleep(0.2)
        except KeyboardInterrupt:
            pass
        server.stop()
    else:
        service.submit_review(session_id, edits=[], journal=[])
    service.close()
    return 0


def cmd_eval(args) -> int:
    store = SessionStore(args.sessions)
    out_dir = args.out or os.path.join(args.sessions, "eval")
    os.makedirs(out_dir, exist_ok=True)
    per_video: list[tuple[str, list[float], list[bool]]] = []
    for session_id in store.session_ids():
        labels_path = store.labels_path(session_id)
        infer_path = store.inference_log_path(session_id)
        if not (os.path.exists(labels_path) and os.path.exists(infer_path)):
            print(f"session {session_id}: no ground-truth labels, skipped")
            continue
        with open(labels_path, "r", encoding="utf-8") as fh:
            usable = json.load(fh)["usable"]
        scores_by_frame: dict[int, float] = {}
        with open(infer_path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    scores_by_frame[rec["frame"]] = max(rec["logits"])
        pairs = [(scores_by_frame[i], bool(u)) for i, u in enumerate(usable) if i in scores_by_frame]
        if not pairs:
            print(f"session {session_id}: no inferred frames, skipped")
            continue
        scores = [s for s, _ in pairs]
        labels = [u for _, u in pairs]
        per_video.append((session_id, scores, labels))

    if not per_video:
        print("nothing to evaluate")
        return 1
    try:
        macro, values = macro_auroc([(s, l) for _, s, l in per_video])
    except SingleClassInput as exc:
        print(f"cannot evaluate: {exc}")
        return 1
    print(f"{'video':<16} {'auroc':>8}")
    for (session_id, _, _), value in zip(per_video, values):
        print(f"{session_id:<16} {value:>8.4f}")
    print(f"{'macro':<16} {macro:>8.4f}")

    with open(os.path.join(out_dir, "auroc.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["video_id", "auroc"])
        for (session_id, _, _), value in zip(per_video, values):
            writer.writerow([session_id, f"{value:.6f}"])

    all_scores = [s for _, scores, _ in per_video for s in scores]
    all_labels = [l for _, _, labels in per_video for l in labels]
    points = roc_sweep(all_scores, all_labels)
    with open(os.path.join(out_dir, "roc.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["tau", "tpr", "fpr"])
        for tau, tpr, fpr in points:
            writer.writerow([f"{tau:.6g}", f"{tpr:.6f}", f"{fpr:.6f}"])
    print(f"pooled auroc {auroc(all_scores, all_labels):.4f}; curves in {out_dir}")
    return 0


def cmd_export(args) -> int:
    store = SessionStore(args.sessions)
    sessions = [store.load(session_id) for session_id in store.session_ids()]
    examples = export_dataset(sessions, args.out)
    corrected = sum(1 for e in examples if e.source == "ClinicianCorrected")
    print(f"exported {len(examples)} examples ({corrected} clinician-corrected) to {args.out}")
    return 0


def cmd_calibrate(args) -> int:
    samples = []
    with open(args.validation, "r", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            logits = tuple(float(row[f"logit{i}"]) for i in range(4))
            samples.append((logits, int(row["label"])))
    calib = fit_temperature(samples)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(f"temperature = {calib.temperature!r}\n")
    print(f"fitted temperature {calib.temperature:.4f} on {len(samples)} samples -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hector", description=__doc__)
    parser.add_argument("--data-dir", help="session directory root (or $HECTOR_DATA_DIR)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scoring session over a frame source")
    run.add_argument("--source", required=True, help="video path, .npz archive or synth:...")
    run.add_argument("--config", help="pipeline config file")
    run.add_argument("--model", default="stub:0", help="stub:SEED | remote:HOST:PORT | replay:PATH")
    run.add_argument("--listen", help="HOST:PORT for the control protocol (events on PORT+1)")
    run.add_argument("--session-id", help="explicit session id (default: generated)")
    run.add_argument("--timeout", type=float, default=None, help="max seconds to wait for the source")
    run.add_argument(
        "--score-all",
        action="store_true",
        help="run inference even on prefilter-discarded frames (evaluation runs)",
    )
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="usability AUROC report over stored sessions")
    ev.add_argument("--sessions", required=True, help="session directory")
    ev.add_argument("--out", help="report output directory (default <sessions>/eval)")
    ev.set_defaults(func=cmd_eval)

    ex = sub.add_parser("export", help="export corrected labels as a retraining dataset")
    ex.add_argument("--sessions", required=True, help="session directory")
    ex.add_argument("--out", required=True, help="dataset output directory")
    ex.set_defaults(func=cmd_export)

    cal = sub.add_parser("calibrate", help="fit the softmax temperature on a validation CSV")
    cal.add_argument("--validation", required=True, help="CSV with logit0..logit3,label columns")
    cal.add_argument("--out", required=True, help="where to write the calibration line")
    cal.set_defaults(func=cmd_calibrate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
