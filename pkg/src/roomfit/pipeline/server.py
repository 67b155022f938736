"""JSON-over-HTTP serve mode driving the semi-automatic loop.

One optimization job at a time runs in a background thread; request handlers
stay non-blocking. User choices invalidate from the object stage onward, crop
edits invalidate only the final stage.
"""

from __future__ import annotations

import json
import threading
import traceback
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np

from ..errors import RoomfitError
from ..imaging import ImageF, Rect, save_png
from ..retrieval import KIND_MATERIAL, KIND_MODEL
from .bundle import UserCrop
from .fit import FitConfig, FitSession, write_outputs

SNAPSHOT_EVERY = 25


class RunManager:
    """Serialized access to the fit session plus the single background job."""

    def __init__(self, session: FitSession, out_dir):
        self.session = session
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.lock = threading.Lock()
        self.running_stage: str | None = None
        self.cancel_event = threading.Event()
        self.live_trace: list[tuple[int, float]] = []
        self.last_error: str | None = None
        self._thread: threading.Thread | None = None

    # -- job control --

    def start(self, stage: str) -> bool:
        with self.lock:
            if self.running_stage is not None:
                return False
            self.running_stage = stage
            self.cancel_event.clear()
            self.live_trace = []
            self.last_error = None
            self._thread = threading.Thread(target=self._run, args=(stage,), daemon=True)
            self._thread.start()
            return True

    def _observer(self, iteration, result, scene):
        with self.lock:
            self.live_trace.append((iteration, result.total))
        if SNAPSHOT_EVERY and iteration % SNAPSHOT_EVERY == 0:
            self._write_snapshot(scene)

    def _write_snapshot(self, scene):
        try:
            from ..render import RenderConfig, render
            cam = self.session.camera
            cfg = RenderConfig(width=max(32, cam.width // 4),
                               height=max(32, cam.height // 4), spp=4,
                               seed=self.session.config.seed)
            out = render(scene, cfg, self.session.graphs)
            depth = out.depth
            rng_span = depth.max() - depth.min()
            plane = (depth - depth.min()) / rng_span if rng_span > 0 else depth * 0
            save_png(self.out_dir / "snapshot.png", ImageF(plane))
        except Exception:
            pass  # snapshots are best-effort

    def _run(self, stage: str):
        s = self.session
        cancel = self.cancel_event.is_set
        try:
            if stage in ("room", "all") or (stage == "object" and s.scene_room is None) \
                    or (stage == "final" and s.scene_room is None):
                s.run_room(self._observer, cancel)
            if stage in ("object", "all") or (stage == "final" and s.scene_object is None):
                if stage != "room":
                    s.run_object(self._observer, cancel)
            if stage in ("final", "all"):
                s.run_final(self._observer, cancel)
            write_outputs(s, self.out_dir, render_spp=s.config.render_spp)
        except Exception as exc:  # surfaced via /state
            self.last_error = f"{type(exc).__name__}: {exc}"
            traceback.print_exc()
        finally:
            with self.lock:
                self.running_stage = None

    def stop(self):
        self.cancel_event.set()
        t = self._thread
        if t is not None:
            t.join(timeout=30)

    # -- state --

    def state(self) -> dict:
        s = self.session
        with self.lock:
            live = list(self.live_trace)
            running = self.running_stage
        traces = {name: [[row.iteration, row.total] for row in rows]
                  for name, rows in s.traces.items()}
        snapshot = "/image/snapshot.png" if (self.out_dir / "snapshot.png").exists() else None
        return {
            "stage_done": s.stage_done(),
            "running": running is not None,
            "running_stage": running,
            "live_trace": live,
            "traces": traces,
            "choices": dict(s.choices),
            "crops": [{"owner": c.owner, "group": c.group,
                       "target_rect": [c.target_rect.x, c.target_rect.y,
                                       c.target_rect.w, c.target_rect.h],
                       "render_rect": [c.render_rect.x, c.render_rect.y,
                                       c.render_rect.w, c.render_rect.h]}
                      for c in s.user_crops],
            "segments": [{"id": seg.id, "label": seg.label}
                         for seg in s.bundle.segments],
            "objects": [{"id": o.id, "asset_id": o.asset_id,
                         "groups": o.mesh.group_names()}
                        for o in (s.current_scene().objects if s.current_scene() else [])],
            "radiance_multiplier": s.radiance_multiplier,
            "snapshot": snapshot,
            "error": self.last_error,
            "image_size": [s.camera.width, s.camera.height],
        }


class _Handler(BaseHTTPRequestHandler):
    manager: RunManager = None
    ui_dir: Path | None = None

    # -- plumbing --

    def log_message(self, fmt, *args):
        pass

    def _json(self, code: int, payload) -> None:
        body = json.dumps(payload).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _read_body(self):
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length) if length else b"{}"
        try:
            return json.loads(raw)
        except json.JSONDecodeError:
            return None

    def _file(self, path: Path, content_type: str) -> None:
        if not path.is_file():
            self._json(404, {"error": "not found"})
            return
        data = path.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    # -- routes --

    def do_GET(self):
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        m = self.manager
        if url.path == "/state":
            self._json(200, m.state())
        elif parts[:1] == ["candidates"] and len(parts) == 2:
            self._candidates(parts[1], parse_qs(url.query))
        elif parts[:1] == ["image"] and len(parts) == 2:
            self._file(m.out_dir / parts[1], "image/png")
        elif parts[:1] == ["target"]:
            self._file(m.session.bundle.directory / "input.png", "image/png")
        elif self.ui_dir is not None:
            rel = url.path.lstrip("/") or "index.html"
            target = (self.ui_dir / rel).resolve()
            if not str(target).startswith(str(self.ui_dir.resolve())):
                self._json(404, {"error": "not found"})
                return
            ctype = {"html": "text/html", "js": "text/javascript",
                     "css": "text/css", "png": "image/png",
                     "map": "application/json"}.get(target.suffix.lstrip("."),
                                                    "application/octet-stream")
            self._file(target, ctype)
        else:
            self._json(404, {"error": "not found"})

    def _candidates(self, segment: str, query):
        m = self.manager
        s = m.session
        k = int(query.get("k", ["5"])[0])
        k = max(1, min(k, 50))
        try:
            seg = s.bundle.segment_by_id(segment)
        except KeyError:
            self._json(404, {"error": f"unknown segment {segment!r}"})
            return
        try:
            if seg.is_object:
                ranked = s.retrieve_candidates(segment, k)
                kind = "model"
            else:
                from ..retrieval import query_topk
                q = s._material_query(segment)
                if q is None or s.index is None:
                    self._json(404, {"error": "no material query for segment"})
                    return
                ranked = query_topk(s.index, q, k, kind=KIND_MATERIAL)
                kind = "material"
        except RoomfitError as exc:
            self._json(404, {"error": str(exc)})
            return
        from .assets import thumbnail_path
        out = []
        for asset_id, cosine in ranked:
            thumb = thumbnail_path(s.assets_dir, asset_id, kind)
            out.append({"id": asset_id, "cosine": cosine,
                        "thumbnail": f"/thumb/{kind}/{asset_id}" if thumb else None})
        self._json(200, {"segment": segment, "kind": kind, "candidates": out})

    def do_POST(self):
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        m = self.manager
        body = self._read_body()
        if body is None:
            self._json(400, {"error": "malformed JSON body"})
            return
        if parts[:1] == ["choices"]:
            choices = body.get("choices")
            if not isinstance(choices, dict) or not choices:
                self._json(400, {"error": "need {'choices': {segment: asset_id}}"})
                return
            with m.lock:
                if m.running_stage is not None:
                    self._json(409, {"error": "job running"})
                    return
                for seg, asset in choices.items():
                    m.session.apply_choice(str(seg), str(asset))
            self._json(200, {"ok": True})
        elif parts[:1] == ["crops"]:
            try:
                crops = self._parse_crops(body)
            except (KeyError, TypeError, ValueError) as exc:
                self._json(400, {"error": str(exc)})
                return
            with m.lock:
                if m.running_stage is not None:
                    self._json(409, {"error": "job running"})
                    return
                m.session.apply_crops(crops)
            self._json(200, {"ok": True, "count": len(crops)})
        elif parts[:1] == ["run"] and len(parts) == 2:
            stage = parts[1]
            if stage not in ("room", "object", "final", "all"):
                self._json(400, {"error": f"unknown stage {stage!r}"})
                return
            if not m.start(stage):
                self._json(409, {"error": "job already running"})
                return
            self._json(200, {"ok": True, "stage": stage})
        else:
            self._json(404, {"error": "not found"})

    def _parse_crops(self, body) -> list[UserCrop]:
        cam = self.manager.session.camera
        crops = []
        for entry in body.get("crops", []):
            t = Rect(*[int(v) for v in entry["target_rect"]])
            r = Rect(*[int(v) for v in entry["render_rect"]])
            for rect in (t, r):
                if not rect.clipped_to(cam.width, cam.height):
                    raise ValueError(f"rect {rect} outside image bounds")
                if rect.w < 16 or rect.h < 16:
                    raise ValueError("crops must be at least 16x16")
            crops.append(UserCrop(str(entry["owner"]), str(entry.get("group", "")), t, r))
        return crops


def make_server(bundle_dir, assets_dir, out_dir, port: int = 0,
                config: FitConfig | None = None, ui_dir=None):
    """ThreadingHTTPServer bound to localhost; port 0 picks a free port."""
    session = FitSession(bundle_dir, assets_dir, config)
    manager = RunManager(session, out_dir)

    class Handler(_Handler):
        pass

    Handler.manager = manager
    Handler.ui_dir = Path(ui_dir) if ui_dir else None
    server = ThreadingHTTPServer(("127.0.0.1", port), Handler)
    return server, manager


def serve(bundle_dir, assets_dir, out_dir, port: int = 8080,
          config: FitConfig | None = None, ui_dir=None):
    server, manager = make_server(bundle_dir, assets_dir, out_dir, port, config, ui_dir)
    print(f"serving on http://127.0.0.1:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        manager.stop()
        server.server_close()
