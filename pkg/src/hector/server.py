"""Newline-delimited JSON control protocol and event stream.

Two listeners: the control socket takes one JSON request per line
({"cmd": "start" | "stop" | "review_get" | "review_submit", ...}) and
answers one JSON line per request; the event socket (control port + 1)
streams verdict and lifecycle events to any number of subscribers.
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import threading

from .domain import PipelineConfig, load_config, parse_config
from .service import ControlService, ServiceError
from .sources import SourceUnavailable
from .store import StoreError

logger = logging.getLogger(__name__)


def config_from_payload(payload) -> PipelineConfig | None:
    """Config from a request: a mapping of fields or a config file path."""
    if payload is None:
        return None
    if isinstance(payload, str):
        return load_config(payload)
    if isinstance(payload, dict):
        text = "\n".join(f"{k} = {v}" for k, v in payload.items())
        return parse_config(text)
    raise ValueError(f"config must be a mapping or a path, got {type(payload).__name__}")


class ProtocolServer:
    """Socket front-end for one ControlService."""

    def __init__(self, service: ControlService, host: str = "127.0.0.1", port: int = 0) -> None:
        self.service = service
        self._control = socket.socket()
        self._control.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._control.bind((host, port))
        self._control.listen(8)
        self.host, self.port = self._control.getsockname()[:2]
        self._events = socket.socket()
        self._events.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._events.bind((host, self.port + 1))
        self._events.listen(8)
        self.event_port = self._events.getsockname()[1]
        self._running = False
        self._threads: list[threading.Thread] = []

    def start(self) -> None:
        self._running = True
        for sock, handler, name in (
            (self._control, self._handle_control, "control-accept"),
            (self._events, self._handle_events, "event-accept"),
        ):
            t = threading.Thread(target=self._accept_loop, args=(sock, handler), name=name, daemon=True)
            t.start()
            self._threads.append(t)
        logger.info("control on port %d, events on port %d", self.port, self.event_port)

    def stop(self) -> None:
        self._running = False
        for sock in (self._control, self._events):
            try:
                sock.close()
            except OSError:
                pass

    def _accept_loop(self, listener: socket.socket, handler) -> None:
        while self._running:
            try:
                conn, _ = listener.accept()
            except OSError:
                return
            t = threading.Thread(target=handler, args=(conn,), daemon=True)
            t.start()

    # -- control connections -------------------------------------------------

    def _handle_control(self, conn: socket.socket) -> None:
        with conn:
            buf = conn.makefile("rwb")
            for line in buf:
                line = line.strip()
                if not line:
                    continue
                try:
                    request = json.loads(line.decode("utf-8"))
                    response = self._dispatch(request)
                except (ValueError, KeyError) as exc:
                    response = {"ok": False, "error": type(exc).__name__, "message": str(exc)}
                except (ServiceError, SourceUnavailable, StoreError) as exc:
                    response = {"ok": False, "error": type(exc).__name__, "message": str(exc)}
                try:
                    buf.write((json.dumps(response) + "\n").encode("utf-8"))
                    buf.flush()
                except OSError:
                    return

    def _dispatch(self, request: dict) -> dict:
        cmd = request.get("cmd")
        if cmd == "start":
            session_id = self.service.start_session(
                source=request["source"],
                config=config_from_payload(request.get("config")),
                model=request.get("model", "stub:0"),
                session_id=request.get("session_id"),
            )
            return {"ok": True, "session": session_id}
        if cmd == "stop":
            session_id = request.get("session") or self.service.active_session
            if session_id is None:
                return {"ok": False, "error": "NotRunning", "message": "no active session"}
            bundle = self.service.stop_session(session_id)
            return {"ok": True, "bundle": bundle.to_obj()}
        if cmd == "review_get":
            bundle = self.service.review_bundle(request.get("session"))
            return {"ok": True, "bundle": bundle.to_obj()}
        if cmd == "review_submit":
            session_id = request.get("session") or self.service.active_session
            edits = [(e["frame"], e["mes"]) for e in request.get("edits", [])]
            self.service.submit_review(session_id, edits, request.get("journal", []))
            return {"ok": True}
        return {"ok": False, "error": "UnknownCommand", "message": f"unknown cmd {cmd!r}"}

    # -- event connections -----------------------------------------------------

    def _handle_events(self, conn: socket.socket) -> None:
        q = self.service.subscribe_events()
        try:
            with conn:
                while self._running:
                    try:
                        event = q.get(timeout=0.25)
                    except queue.Empty:
                        continue
                    conn.sendall((json.dumps(event) + "\n").encode("utf-8"))
        except OSError:
            pass
        finally:
            self.service.unsubscribe_events(q)
