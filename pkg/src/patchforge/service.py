"""HTTP inference service.

GET  /health      -> {"status": "ok", ...} once the checkpoint is loaded
GET  /meta        -> source dims + checkpoint metadata (constant per process)
POST /synthesize  -> PNG bytes for a JSON SynthesisRequest body

Requests are handled concurrently; after the one-time load completes the
loaded weights are never mutated, so handlers share them without locks.
Until loading finishes every route answers 503.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .checkpoint import load_checkpoint
from .errors import DegenerateTransform, PatchforgeError
from .image_io import encode_png
from .inference import OutputTooLarge, RequestError, SynthesisEngine, SynthesisRequest


class InferenceService:
    """Owns the server socket and the background checkpoint load."""

    def __init__(self, checkpoint_path, host: str = "127.0.0.1", port: int = 0,
                 load_gate: threading.Event | None = None):
        self.checkpoint_path = checkpoint_path
        self.engine: SynthesisEngine | None = None
        self.ready = threading.Event()
        self.load_error: str | None = None
        self._load_gate = load_gate
        service = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):  # quiet by default
                pass

            def _reply(self, code: int, body: bytes, ctype: str):
                self.send_response(code)
                self.send_header("Content-Type", ctype)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def _json(self, code: int, obj):
                self._reply(code, json.dumps(obj).encode("utf-8"), "application/json")

            def _unavailable(self):
                self._json(503, {"status": "loading",
                                 "error": service.load_error})

            def do_GET(self):
                if self.path == "/health":
                    if service.ready.is_set():
                        self._json(200, {"status": "ok",
                                         "iteration": service.engine.iteration})
                    else:
                        self._unavailable()
                elif self.path == "/meta":
                    if service.ready.is_set():
                        self._json(200, service.engine.meta())
                    else:
                        self._unavailable()
                else:
                    self._json(404, {"error": f"no such path {self.path}"})

            def do_POST(self):
                if self.path != "/synthesize":
                    self._json(404, {"error": f"no such path {self.path}"})
                    return
                if not service.ready.is_set():
                    self._unavailable()
                    return
                try:
                    length = int(self.headers.get("Content-Length", "0"))
                    raw = self.rfile.read(length)
                    body = json.loads(raw.decode("utf-8"))
                    req = SynthesisRequest.from_dict(body)
                    img = service.engine.synthesize(req)
                except OutputTooLarge as exc:
                    self._json(413, {"error": str(exc)})
                    return
                except RequestError as exc:
                    self._json(400, {"error": str(exc)})
                    return
                except (json.JSONDecodeError, UnicodeDecodeError) as exc:
                    self._json(400, {"error": f"invalid JSON body: {exc}"})
                    return
                except DegenerateTransform as exc:
                    self._json(422, {"error": str(exc)})
                    return
                except PatchforgeError as exc:
                    self._json(422, {"error": str(exc)})
                    return
                self._reply(200, encode_png(img), "image/png")

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._server.daemon_threads = True
        self._threads: list[threading.Thread] = []

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def _load(self):
        if self._load_gate is not None:
            self._load_gate.wait()
        try:
            self.engine = SynthesisEngine(load_checkpoint(self.checkpoint_path))
            self.ready.set()
        except Exception as exc:  # surfaced via /health
            self.load_error = f"{type(exc).__name__}: {exc}"

    def start(self):
        """Bind immediately; load in the background; serve until shutdown()."""
        loader = threading.Thread(target=self._load, daemon=True)
        loader.start()
        server_thread = threading.Thread(target=self._server.serve_forever,
                                         daemon=True)
        server_thread.start()
        self._threads = [loader, server_thread]
        return self

    def serve_forever(self):
        self.start()
        try:
            self._threads[1].join()
        except KeyboardInterrupt:
            self.shutdown()

    def shutdown(self):
        self._server.shutdown()
        self._server.server_close()
