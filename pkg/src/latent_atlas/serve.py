"""Read-mostly HTTP service exposing a finished atlas to the viewer.

Endpoints: /manifest.json, /tiles/{z}/{x}/{y}.png, /probe?x=&y=,
POST /restyle + GET /jobs/{id}, and /audio/<path> for source samples.
Reads never mutate state; restyles run on a single worker (one at a time,
409 otherwise) and re-export tiles via temp-file + atomic rename, so a
concurrent tile read always sees a consistent file.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np

from . import atlas as atlas_mod
from .dataset import load as load_dataset
from .errors import AtlasError
from .output import export_tiles, load_manifest
from .projection.model import inverse_transform, load_model
from .prompt import keyword_weights, load_style
from .renderer.procedural import ProceduralBackend

log = logging.getLogger("latent_atlas.serve")

PROBE_NEIGHBORS = 5
TILE_PATH_RE = re.compile(r"^/tiles/(\d+)/(\d+)/(\d+)\.png$")
JOB_PATH_RE = re.compile(r"^/jobs/([A-Za-z0-9_-]+)$")


@dataclass
class RestyleJob:
    id: str
    state: str  # queued -> running -> done | failed
    rect_world: tuple[float, float, float, float]
    style: str
    completed: int = 0
    total: int = 0
    error: str | None = None
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def snapshot(self) -> dict:
        with self.lock:
            doc = {
                "id": self.id,
                "state": self.state,
                "rect_world": list(self.rect_world),
                "style": self.style,
                "progress": {"completed": self.completed, "total": self.total},
            }
            if self.error is not None:
                doc["error"] = self.error
            return doc


class AtlasServer:
    """Serves one atlas directory; see module docstring for the endpoints."""

    def __init__(self, atlas_dir, styles_dir, port: int = 0, cors_origin: str = "*"):
        self.atlas_dir = Path(atlas_dir)
        self.styles_dir = Path(styles_dir)
        self.tiles_dir = self.atlas_dir / "tiles"
        self.cors_origin = cors_origin
        self.dataset = load_dataset(self.atlas_dir / "dataset.latds")
        self.model = load_model(self.atlas_dir / "model.latmodel")
        self.run = atlas_mod.load_run_state(
            self.atlas_dir / "state.latrun", self.dataset, self.model
        )
        self.manifest_path = self.tiles_dir / "manifest.json"
        self._mutate_lock = threading.Lock()
        self._jobs: dict[str, RestyleJob] = {}
        self._active_job: str | None = None
        self._job_counter = 0
        self._server = ThreadingHTTPServer(("127.0.0.1", port), self._make_handler())
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    # ---- read endpoints ----

    def manifest_bytes(self) -> bytes | None:
        if not self.manifest_path.exists():
            return None
        return self.manifest_path.read_bytes()

    def tile_bytes(self, z: int, x: int, y: int) -> bytes | None:
        path = self.tiles_dir / str(z) / str(x) / f"{y}.png"
        if not path.exists():
            return None
        return path.read_bytes()

    def probe(self, x: float, y: float) -> dict:
        point = np.asarray([x, y], dtype=np.float64)
        d = np.sqrt(((self.model.coords - point) ** 2).sum(axis=1))
        order = np.argsort(d, kind="stable")[:PROBE_NEIGHBORS]
        nearest = [
            {
                "id": self.dataset.records[i].id,
                "family": self.dataset.records[i].family,
                "distance": float(d[i]),
            }
            for i in order.tolist()
        ]
        embedding = inverse_transform(self.model, self.dataset, point)
        weights = keyword_weights(self.run.style, embedding)
        ranked = sorted(
            zip(self.run.style.keywords, weights.weights.tolist()),
            key=lambda kw: -kw[1],
        )
        return {
            "x": x,
            "y": y,
            "nearest": nearest,
            "keyword_weights": [{"keyword": k, "weight": w} for k, w in ranked],
        }

    def audio_bytes(self, rel: str) -> bytes | None:
        base = self.atlas_dir.resolve()
        target = (base / rel).resolve()
        if not str(target).startswith(str(base)) or not target.is_file():
            return None
        return target.read_bytes()

    # ---- restyle ----

    def _resolve_style(self, name: str):
        path = self.styles_dir / f"{name}.style"
        if not path.is_file():
            return None
        return load_style(path, embeddings_dim=self.dataset.dimension)

    def submit_restyle(self, rect_world, style_name: str) -> tuple[int, dict]:
        style = self._resolve_style(style_name)
        if style is None:
            return 404, {"error": f"unknown style {style_name!r}"}
        try:
            atlas_mod.world_rect_to_pixels(self.run.canvas, *rect_world)
        except AtlasError as exc:
            return 400, {"error": str(exc)}
        with self._mutate_lock:
            if self._active_job is not None and self._jobs[self._active_job].state in (
                "queued", "running",
            ):
                return 409, {"error": f"restyle {self._active_job} already in flight"}
            self._job_counter += 1
            job = RestyleJob(
                id=f"job-{self._job_counter}",
                state="queued",
                rect_world=tuple(rect_world),
                style=style_name,
            )
            self._jobs[job.id] = job
            self._active_job = job.id
        worker = threading.Thread(target=self._run_restyle, args=(job, style), daemon=True)
        worker.start()
        return 200, {"id": job.id}

    def _run_restyle(self, job: RestyleJob, style) -> None:
        with job.lock:
            job.state = "running"

        def progress(completed, total):
            with job.lock:
                job.completed = completed
                job.total = total

        try:
            backend = ProceduralBackend(seed=self.run.seed)
            atlas_mod.restyle_region(self.run, job.rect_world, style, backend,
                                     progress=progress)
            manifest = load_manifest(self.manifest_path)
            export_tiles(
                self.run.canvas,
                self.tiles_dir,
                model=self.model,
                dataset=self.dataset,
                style_name=manifest.style,
                version=manifest.version + 1,
            )
            atlas_mod.save_run_state(self.run, self.atlas_dir / "state.latrun")
            with job.lock:
                job.state = "done"
            log.info("restyle %s finished; manifest version -> %d",
                     job.id, manifest.version + 1)
        except Exception as exc:  # worker thread: record, never propagate
            log.error("restyle %s failed: %s", job.id, exc)
            with job.lock:
                job.state = "failed"
                job.error = str(exc)

    def job_snapshot(self, job_id: str) -> dict | None:
        job = self._jobs.get(job_id)
        return None if job is None else job.snapshot()

    # ---- plumbing ----

    def _make_handler(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, fmt, *args):
                log.debug("http: " + fmt, *args)

            def _headers(self, status: int, content_type: str, length: int):
                self.send_response(status)
                self.send_header("Content-Type", content_type)
                self.send_header("Content-Length", str(length))
                self.send_header("Access-Control-Allow-Origin", server.cors_origin)
                self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
                self.send_header("Access-Control-Allow-Headers", "Content-Type")
                self.end_headers()

            def _json(self, status: int, doc: dict):
                body = json.dumps(doc).encode("utf-8")
                self._headers(status, "application/json", len(body))
                self.wfile.write(body)

            def _bytes(self, body: bytes, content_type: str):
                self._headers(200, content_type, len(body))
                self.wfile.write(body)

            def do_OPTIONS(self):
                self._headers(204, "text/plain", 0)

            def do_GET(self):
                parsed = urlparse(self.path)
                path = parsed.path
                if path == "/manifest.json":
                    body = server.manifest_bytes()
                    if body is None:
                        self._json(404, {"error": "no manifest; export tiles first"})
                    else:
                        self._bytes(body, "application/json")
                    return
                m = TILE_PATH_RE.match(path)
                if m:
                    body = server.tile_bytes(*(int(g) for g in m.groups()))
                    if body is None:
                        self._json(404, {"error": "tile out of range"})
                    else:
                        self._bytes(body, "image/png")
                    return
                if path == "/probe":
                    query = parse_qs(parsed.query)
                    try:
                        x = float(query["x"][0])
                        y = float(query["y"][0])
                        if not (np.isfinite(x) and np.isfinite(y)):
                            raise ValueError("non-finite coordinate")
                    except (KeyError, ValueError, IndexError) as exc:
                        self._json(400, {"error": f"probe needs numeric x and y: {exc}"})
                        return
                    self._json(200, server.probe(x, y))
                    return
                m = JOB_PATH_RE.match(path)
                if m:
                    doc = server.job_snapshot(m.group(1))
                    if doc is None:
                        self._json(404, {"error": f"unknown job {m.group(1)!r}"})
                    else:
                        self._json(200, doc)
                    return
                if path.startswith("/audio/"):
                    body = server.audio_bytes(path[len("/audio/"):])
                    if body is None:
                        self._json(404, {"error": "no such audio file"})
                    else:
                        self._bytes(body, "application/octet-stream")
                    return
                if path == "/":
                    self._json(200, {"service": "latent-atlas", "samples": len(server.dataset)})
                    return
                self._json(404, {"error": "not found"})

            def do_POST(self):
                if urlparse(self.path).path != "/restyle":
                    self._json(404, {"error": "not found"})
                    return
                length = int(self.headers.get("Content-Length", "0"))
                try:
                    doc = json.loads(self.rfile.read(length))
                    rect = doc["rect_world"]
                    if isinstance(rect, dict):
                        rect = [rect["min_x"], rect["min_y"], rect["max_x"], rect["max_y"]]
                    rect = [float(v) for v in rect]
                    if len(rect) != 4:
                        raise ValueError("rect_world needs 4 numbers")
                    style_name = str(doc["style"])
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    self._json(400, {"error": f"bad restyle request: {exc}"})
                    return
                status, body = server.submit_restyle(tuple(rect), style_name)
                self._json(status, body)

        return Handler

    def start(self) -> "AtlasServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        log.info("atlas server on http://127.0.0.1:%d (atlas=%s)", self.port, self.atlas_dir)
        return self

    def join(self) -> None:
        if self._thread is not None:
            self._thread.join()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
