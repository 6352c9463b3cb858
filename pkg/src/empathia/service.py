"""HTTP inference service for turn-by-turn conversation.

JSON over HTTP, stdlib server:

  * ``POST /v1/message`` ``{session_id?, text, include_distribution?}``
    -> TurnResponse (response text, emotion name + probability, optionally
    the full distribution, session id)
  * ``GET /v1/session/<id>`` -> full transcript with per-agent-turn emotion
    annotations
  * ``GET /v1/health`` -> model/checkpoint status

Sessions live in memory with TTL eviction. Requests within one session
serialize on a per-session lock; distinct sessions run concurrently against
the read-only model parameters. Serving-time context construction goes
through the same code path as training-time example construction.
"""

import json
import re
import threading
import time
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .corpus import LISTENER, SPEAKER, encode_context_pair
from .errors import InputError

DEFAULT_TTL_SECONDS = 3600.0

_SESSION_PATH = re.compile(r"^/v1/session/([^/]+)$")


class ServiceError(Exception):
    def __init__(self, status, message):
        super().__init__(message)
        self.status = status
        self.message = message


class Session:
    def __init__(self, session_id):
        self.session_id = session_id
        self.lock = threading.Lock()
        now = time.time()
        self.created = now
        self.last_used = now
        self.turns: list[dict] = []  # append-only transcript

    def transcript(self):
        return {"session_id": self.session_id,
                "created": self.created,
                "last_used": self.last_used,
                "turns": list(self.turns)}


class InferenceService:
    """Model wrapper with session bookkeeping; independent of HTTP."""

    def __init__(self, checkpoint=None, ttl=DEFAULT_TTL_SECONDS):
        self._lock = threading.Lock()
        self._sessions: dict[str, Session] = {}
        self.ttl = ttl
        self.checkpoint = checkpoint

    @property
    def loaded(self):
        return self.checkpoint is not None

    def _evict_expired(self):
        now = time.time()
        with self._lock:
            dead = [sid for sid, s in self._sessions.items()
                    if now - s.last_used > self.ttl]
            for sid in dead:
                del self._sessions[sid]

    def _get_or_create(self, session_id):
        with self._lock:
            if session_id is not None and session_id in self._sessions:
                return self._sessions[session_id], False
            # unknown or absent id: a fresh session with a fresh id
            sid = uuid.uuid4().hex
            session = Session(sid)
            self._sessions[sid] = session
            return session, True

    def post_message(self, session_id, text, include_distribution=True):
        """Run one conversation turn; returns a TurnResponse dict."""
        if not self.loaded:
            raise ServiceError(503, "model not loaded")
        if text is None or not str(text).strip():
            raise ServiceError(400, "text must be non-empty")
        text = str(text).strip()
        self._evict_expired()
        session, _ = self._get_or_create(session_id)
        ckpt = self.checkpoint
        with session.lock:
            session.turns.append({"role": SPEAKER, "text": text})
            history = [t["text"] for t in session.turns]
            ctx_ids, cls_ids, _ = encode_context_pair(
                history, ckpt.gen_vocab, ckpt.cls_vocab, ckpt.config.max_len)
            try:
                token_ids, emo_probs = ckpt.model.predict_single(ctx_ids, cls_ids)
            except InputError as e:
                session.turns.pop()
                raise ServiceError(400, str(e)) from e
            response_text = " ".join(ckpt.gen_vocab.decode(token_ids))
            emo_id = int(np.argmax(emo_probs))
            emo_name = ckpt.labels.name(emo_id)
            emo_prob = float(emo_probs[emo_id])
            turn = {"role": LISTENER, "text": response_text,
                    "emotion_name": emo_name, "emotion_probability": emo_prob}
            session.turns.append(turn)
            session.last_used = time.time()
            out = {"session_id": session.session_id,
                   "response_text": response_text,
                   "emotion_name": emo_name,
                   "emotion_probability": emo_prob}
            if include_distribution:
                out["emotion_distribution"] = {
                    ckpt.labels.name(i): float(p)
                    for i, p in enumerate(emo_probs)}
            return out

    def get_session(self, session_id):
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise ServiceError(404, f"unknown session id: {session_id}")
        with session.lock:
            return session.transcript()

    def health(self):
        out = {"model_loaded": self.loaded,
               "checkpoint_path": getattr(self.checkpoint, "path", None),
               "label_count": len(self.checkpoint.labels) if self.loaded else 0,
               "vocab_size": len(self.checkpoint.gen_vocab) if self.loaded else 0}
        return out


class ChatHTTPServer(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 128  # default 5 drops connections under parallel load


def make_handler(service: InferenceService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send(self, status, payload):
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self._cors()
            self.end_headers()
            self.wfile.write(body)

        def _cors(self):
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods",
                             "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")

        def do_OPTIONS(self):
            self.send_response(204)
            self._cors()
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_GET(self):
            try:
                if self.path == "/v1/health":
                    self._send(200, service.health())
                    return
                m = _SESSION_PATH.match(self.path)
                if m:
                    self._send(200, service.get_session(m.group(1)))
                    return
                self._send(404, {"error": f"no route for {self.path}"})
            except ServiceError as e:
                self._send(e.status, {"error": e.message})
            except Exception as e:  # pragma: no cover - defensive
                self._send(500, {"error": str(e)})

        def do_POST(self):
            try:
                if self.path != "/v1/message":
                    self._send(404, {"error": f"no route for {self.path}"})
                    return
                length = int(self.headers.get("Content-Length") or 0)
                raw = self.rfile.read(length) if length else b"{}"
                try:
                    payload = json.loads(raw.decode("utf-8") or "{}")
                except json.JSONDecodeError:
                    self._send(400, {"error": "request body must be JSON"})
                    return
                out = service.post_message(
                    payload.get("session_id"), payload.get("text"),
                    include_distribution=payload.get("include_distribution", True))
                self._send(200, out)
            except ServiceError as e:
                self._send(e.status, {"error": e.message})
            except Exception as e:  # pragma: no cover - defensive
                self._send(500, {"error": str(e)})

    return Handler


def start_server(service: InferenceService, host="127.0.0.1", port=0):
    """Start the HTTP server on a background thread; returns the server."""
    server = ChatHTTPServer((host, port), make_handler(service))
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server


def serve(checkpoint, host="127.0.0.1", port=8080, ttl=DEFAULT_TTL_SECONDS):
    """Blocking entry point used by the CLI."""
    service = InferenceService(checkpoint, ttl=ttl)
    server = ChatHTTPServer((host, port), make_handler(service))
    try:
        server.serve_forever()
    finally:
        server.server_close()
