"""HTTP service exposing locate / generate / polish over one immutable
checkpoint, plus optional static-asset serving for the UI.

All payloads are JSON over HTTP/1.1 in UTF-8. Responses are pure functions
of (checkpoint, request body); no cross-request state exists.
"""

from __future__ import annotations

import json
import mimetypes
import signal
import threading
import uuid
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .checkpoint import checkpoint_id, load_checkpoint
from .model import LocateGenModel

MAX_BODY_BYTES = 1 << 20


class RequestError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class ServiceConfig:
    checkpoint_path: str
    host: str = "127.0.0.1"
    port: int = 8321
    beam_size: int = 20
    max_request_chars: int | None = None  # default: model context budget
    static_dir: str | None = None

    def __post_init__(self):
        if not 0 <= self.port < 65536:
            raise ValueError("invalid port")


class PolishService:
    """Request handling logic, separated from HTTP plumbing for testing."""

    def __init__(self, model: LocateGenModel, ckpt_id: str,
                 default_beam: int, max_chars: int | None):
        self.model = model
        self.ckpt_id = ckpt_id
        self.default_beam = default_beam
        self.max_chars = max_chars or (model.config.max_context_len - 1)

    def _text(self, body: dict) -> str:
        if "text" not in body:
            raise RequestError(400, "missing_field", "field 'text' is required")
        text = body["text"]
        if not isinstance(text, str):
            raise RequestError(400, "bad_type", "'text' must be a string")
        if len(text) > self.max_chars:
            raise RequestError(413, "text_too_long",
                               f"text exceeds {self.max_chars} characters")
        if not text:
            raise RequestError(400, "empty_text", "'text' must be non-empty")
        return text

    def _position(self, body: dict, text: str, required: bool) -> int | None:
        if "position" not in body or body["position"] is None:
            if required:
                raise RequestError(400, "missing_field", "field 'position' is required")
            return None
        pos = body["position"]
        if not isinstance(pos, int) or isinstance(pos, bool):
            raise RequestError(400, "bad_type", "'position' must be an integer")
        if not 0 <= pos <= len(text):
            raise RequestError(400, "bad_position",
                               f"position must lie in [0, {len(text)}]")
        return pos

    def _beam(self, body: dict) -> int:
        beam = body.get("beam_size", self.default_beam)
        if not isinstance(beam, int) or isinstance(beam, bool) or not 1 <= beam <= 64:
            raise RequestError(400, "bad_beam_size", "'beam_size' must be in [1, 64]")
        return beam

    def health(self) -> dict:
        return {"status": "ok", "checkpoint_id": self.ckpt_id}

    def locate(self, body: dict) -> dict:
        text = self._text(body)
        result = self.model.polish_automatic(text, beam_size=1)
        return {
            "positions": [
                {"index": i, "probability": p}
                for i, p in enumerate(result.pointer_probs)
            ]
        }

    def generate(self, body: dict) -> dict:
        text = self._text(body)
        position = self._position(body, text, required=True)
        beam = self._beam(body)
        result = self.model.polish_semi_automatic(text, position, beam_size=beam)
        return {
            "candidates": [
                {"simile": simile, "log_prob": score}
                for simile, score in result.candidates
            ]
        }

    def polish(self, body: dict) -> dict:
        text = self._text(body)
        position = self._position(body, text, required=False)
        beam = self._beam(body)
        if position is None:
            result = self.model.polish_automatic(text, beam_size=beam)
        else:
            result = self.model.polish_semi_automatic(text, position, beam_size=beam)
        return {
            "position": result.position,
            "simile": result.simile_text,
            "polished_text": result.polished_text,
            "candidates": [
                {"simile": simile, "log_prob": score}
                for simile, score in result.candidates
            ],
        }


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    service: PolishService = None
    static_dir: Path | None = None

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send_json(self, status: int, payload: dict):
        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self._cors()
        self.end_headers()
        self.wfile.write(body)

    def _cors(self):
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length", 0) or 0)
        if length > MAX_BODY_BYTES:
            raise RequestError(413, "body_too_large", "request body too large")
        raw = self.rfile.read(length) if length else b""
        try:
            body = json.loads(raw.decode("utf-8")) if raw else {}
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise RequestError(400, "invalid_json", "request body must be JSON") from None
        if not isinstance(body, dict):
            raise RequestError(400, "invalid_json", "request body must be a JSON object")
        return body

    def do_OPTIONS(self):
        self.send_response(204)
        self._cors()
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self):
        if self.path == "/api/health":
            self._send_json(200, self.service.health())
            return
        self._serve_static()

    def do_POST(self):
        routes = {
            "/api/locate": self.service.locate,
            "/api/generate": self.service.generate,
            "/api/polish": self.service.polish,
        }
        handler = routes.get(self.path)
        if handler is None:
            self._send_json(404, {"error": {"code": "not_found", "message": self.path}})
            return
        try:
            body = self._read_body()
            self._send_json(200, handler(body))
        except RequestError as e:
            self._send_json(e.status, {"error": {"code": e.code, "message": e.message}})
        except Exception:
            fault_id = uuid.uuid4().hex[:12]
            self._send_json(500, {"error": {"code": "internal", "id": fault_id}})

    def _serve_static(self):
        if self.static_dir is None:
            self._send_json(404, {"error": {"code": "not_found", "message": self.path}})
            return
        rel = self.path.lstrip("/") or "index.html"
        target = (self.static_dir / rel).resolve()
        if not str(target).startswith(str(self.static_dir.resolve())) or not target.is_file():
            self._send_json(404, {"error": {"code": "not_found", "message": self.path}})
            return
        data = target.read_bytes()
        ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self._cors()
        self.end_headers()
        self.wfile.write(data)


def make_server(config: ServiceConfig) -> ThreadingHTTPServer:
    """Load the checkpoint, then bind; traffic is only accepted with a
    working model behind it."""
    model = load_checkpoint(config.checkpoint_path)
    service = PolishService(
        model=model,
        ckpt_id=checkpoint_id(config.checkpoint_path),
        default_beam=config.beam_size,
        max_chars=config.max_request_chars,
    )
    handler = type("BoundHandler", (_Handler,), {
        "service": service,
        "static_dir": Path(config.static_dir) if config.static_dir else None,
    })
    return ThreadingHTTPServer((config.host, config.port), handler)


def serve(config: ServiceConfig) -> None:
    """Run until SIGINT/SIGTERM; in-flight requests finish before exit."""
    server = make_server(config)
    stop = threading.Event()

    def _shutdown(signum, frame):
        stop.set()
        threading.Thread(target=server.shutdown, daemon=True).start()

    signal.signal(signal.SIGINT, _shutdown)
    signal.signal(signal.SIGTERM, _shutdown)
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port} "
          f"(checkpoint {config.checkpoint_path})")
    server.serve_forever()
    server.server_close()
