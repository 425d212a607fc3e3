"""Conformance stub for the inpainting wire protocol.

A tiny threaded HTTP server used by tests and available from the CLI.  It
validates incoming requests strictly (bad protocol input gets a 400), then
answers according to a scripted behavior sequence:

  echo       return the input image unchanged
  fill       return a solid-color image, deliberately repainting context
  error      respond 500 with an error body
  wrong_dims return an image of the wrong size
  malformed  respond 200 with a non-JSON body

When the script is exhausted (or absent) the default mode applies.
"""

from __future__ import annotations

import base64
import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from ..imgio import decode_png, encode_png

log = logging.getLogger("latent_atlas.renderer.stub")

FILL_COLOR = (250, 40, 160, 255)
BEHAVIORS = {"echo", "fill", "error", "wrong_dims", "malformed"}


class StubProtocolViolation(Exception):
    pass


def _validate_payload(raw: bytes) -> tuple[dict, np.ndarray, np.ndarray]:
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise StubProtocolViolation(f"body is not JSON: {exc}") from exc
    for field in ("image", "mask", "prompts", "seed"):
        if field not in doc:
            raise StubProtocolViolation(f"missing field {field!r}")
    try:
        image = decode_png(base64.b64decode(doc["image"], validate=True))
        mask = decode_png(base64.b64decode(doc["mask"], validate=True), mode="L")
    except Exception as exc:
        raise StubProtocolViolation(f"undecodable image payload: {exc}") from exc
    if image.shape[:2] != mask.shape[:2]:
        raise StubProtocolViolation("image and mask dimensions disagree")
    if not isinstance(doc["prompts"], list) or not doc["prompts"]:
        raise StubProtocolViolation("prompts must be a nonempty list")
    total = 0.0
    for item in doc["prompts"]:
        if not isinstance(item, dict) or "text" not in item or "weight" not in item:
            raise StubProtocolViolation("each prompt needs text and weight")
        total += float(item["weight"])
    if abs(total - 1.0) > 1e-6:
        raise StubProtocolViolation(f"prompt weights sum to {total}, expected 1")
    return doc, image, mask


class ConformanceStub:
    """Threaded stub server; start() binds, stop() tears down."""

    def __init__(self, port: int = 0, mode: str = "echo", script: list[str] | None = None):
        if mode not in BEHAVIORS:
            raise ValueError(f"unknown stub mode {mode!r}")
        for entry in script or []:
            if entry not in BEHAVIORS:
                raise ValueError(f"unknown scripted behavior {entry!r}")
        self.mode = mode
        self.script = list(script or [])
        self.request_log: list[dict] = []
        self._lock = threading.Lock()
        self._server = ThreadingHTTPServer(("127.0.0.1", port), self._make_handler())
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def endpoint(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def _next_behavior(self) -> str:
        with self._lock:
            if self.script:
                return self.script.pop(0)
            return self.mode

    def _record(self, entry: dict) -> None:
        with self._lock:
            self.request_log.append(entry)

    def _make_handler(self):
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, fmt, *args):
                log.debug("stub: " + fmt, *args)

            def _send(self, status: int, body: bytes, content_type: str = "application/json"):
                self.send_response(status)
                self.send_header("Content-Type", content_type)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                if self.path == "/health":
                    self._send(200, b'{"status": "ok"}')
                else:
                    self._send(404, b'{"error": "not found"}')

            def do_POST(self):
                if self.path != "/v1/inpaint":
                    self._send(404, b'{"error": "not found"}')
                    return
                length = int(self.headers.get("Content-Length", "0"))
                raw = self.rfile.read(length)
                try:
                    doc, image, mask = _validate_payload(raw)
                except StubProtocolViolation as exc:
                    stub._record({"behavior": "reject", "error": str(exc)})
                    self._send(400, json.dumps({"error": str(exc)}).encode())
                    return
                behavior = stub._next_behavior()
                stub._record({
                    "behavior": behavior,
                    "seed": doc["seed"],
                    "size": [image.shape[1], image.shape[0]],
                    "prompts": len(doc["prompts"]),
                })
                if behavior == "error":
                    self._send(500, b'{"error": "scripted failure"}')
                    return
                if behavior == "malformed":
                    self._send(200, b"this is not json", content_type="text/plain")
                    return
                if behavior == "wrong_dims":
                    wrong = np.zeros((image.shape[0] + 16, image.shape[1], 4), dtype=np.uint8)
                    out = wrong
                elif behavior == "fill":
                    out = np.empty_like(image)
                    out[:, :] = FILL_COLOR
                else:  # echo
                    out = image
                body = json.dumps(
                    {"image": base64.b64encode(encode_png(out)).decode("ascii")}
                ).encode()
                self._send(200, body)

        return Handler

    def start(self) -> "ConformanceStub":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        log.info("conformance stub listening on %s", self.endpoint)
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
