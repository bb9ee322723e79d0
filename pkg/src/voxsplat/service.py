"""HTTP/WebSocket render-and-edit service for a loaded composed scene.

One writer (the edit state, guarded by a lock and a monotonically
increasing revision number), many readers: every render works on an
immutable snapshot taken under the lock, so frames always reflect
exactly one revision.  Inverse-fitting jobs run on a background thread
and publish polling snapshots; on success the fitted transform becomes
the live edit state.
"""

import json
import struct
import threading
import uuid

import numpy as np
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi import FastAPI, Form, HTTPException, Request, Response, UploadFile, WebSocket
from fastapi.websockets import WebSocketDisconnect
from PIL import Image

from .errors import VoxSplatError
from .gaussians import Camera, orbit_camera
from .inverse import init_transform, optimize_to_reference, render_with_transform
from .metrics import psnr
from .render_modes import RENDER_MODES, as_composed, png_bytes, render_mode_image, to_uint8
from .scene import EditState, load_model
from .shading import LightConfig


class SceneState:
    """Mutable service state: the scene, its revision, and invert jobs."""

    def __init__(self, scene=None):
        self.scene = scene
        self.revision = 0
        self.lock = threading.Lock()
        self.jobs = {}

    def snapshot(self):
        with self.lock:
            if self.scene is None:
                raise HTTPException(503, "no model loaded")
            return self.scene.copy(), self.revision


def _scene_center(scene):
    mu = np.concatenate([m.geometry.mu for m in scene.models], axis=0)
    if mu.shape[0] == 0:
        return np.zeros(3)
    return 0.5 * (mu.min(axis=0) + mu.max(axis=0))


def _orbit_from_query(scene, polar, azimuth, radius, width, height, fov):
    try:
        return orbit_camera(_scene_center(scene), float(radius), float(polar),
                            float(azimuth), float(fov), int(width), int(height))
    except (TypeError, ValueError) as exc:
        raise HTTPException(400, f"bad camera parameters: {exc}")


def _camera_from_dict(d):
    try:
        return Camera.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise HTTPException(400, f"bad camera json: {exc}")


def create_app(model_path=None):
    """Build the FastAPI app, optionally preloading a model file."""
    state = SceneState(as_composed(load_model(model_path)) if model_path else None)
    app = FastAPI(title="voxsplat render service")
    app.state.scene_state = state

    @app.exception_handler(RequestValidationError)
    async def malformed_request(_req, exc):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    # ------------------------------------------------------------ scene

    @app.get("/api/scene")
    def get_scene():
        scene, revision = state.snapshot()
        scenes = []
        for i, (m, e) in enumerate(zip(scene.models, scene.edits)):
            palette = e.palette_override if e.palette_override is not None \
                else m.palette.c_p
            scenes.append({
                "index": i,
                "transfer_function": m.metadata.get("transfer_function"),
                "palette": [float(v) for v in palette],
                "opacity_scale": e.opacity_scale,
                "count": len(m),
            })
        return {
            "revision": revision,
            "scenes": scenes,
            "light": scene.light.to_dict(),
            "total_primitives": scene.count,
            "render_modes": list(RENDER_MODES),
        }

    # ------------------------------------------------------------- edit

    def _apply_edit(body):
        if not isinstance(body, dict):
            raise HTTPException(400, "edit payload must be a JSON object")
        known = {"scene", "palette", "opacity_scale", "term_scales", "light",
                 "revision"}
        unknown = set(body) - known
        if unknown:
            raise HTTPException(400, f"unknown edit fields: {sorted(unknown)}")
        with state.lock:
            if state.scene is None:
                raise HTTPException(503, "no model loaded")
            if "revision" in body and body["revision"] != state.revision:
                raise HTTPException(
                    409, f"stale revision {body['revision']} != {state.revision}")
            scene = state.scene
            try:
                if "palette" in body or "opacity_scale" in body:
                    idx = body.get("scene", 0)
                    if not isinstance(idx, int) or not 0 <= idx < len(scene.models):
                        raise HTTPException(400, f"bad scene index {idx!r}")
                    old = scene.edits[idx]
                    palette = body.get(
                        "palette",
                        None if old.palette_override is None
                        else old.palette_override.tolist())
                    scale = body.get("opacity_scale", old.opacity_scale)
                    scene.edits[idx] = EditState(palette, scale)
                if "light" in body or "term_scales" in body:
                    cur = scene.light
                    light = body.get("light", {})
                    if not isinstance(light, dict):
                        raise HTTPException(400, "light must be an object")
                    scene.light = LightConfig(
                        light.get("mode", cur.mode),
                        light.get("polar", cur.polar),
                        light.get("azimuth", cur.azimuth),
                        body.get("term_scales", cur.term_scales),
                    )
            except HTTPException:
                raise
            except (VoxSplatError, TypeError, ValueError) as exc:
                raise HTTPException(400, str(exc))
            state.revision += 1
            return {"revision": state.revision}

    @app.post("/api/edit")
    async def post_edit(request: Request):
        try:
            body = await request.json()
        except Exception:
            raise HTTPException(400, "body is not valid JSON")
        return _apply_edit(body)

    # ------------------------------------------------------------ render

    def _render_frame(scene, cam, mode):
        if mode not in RENDER_MODES:
            raise HTTPException(400, f"unknown render mode {mode!r}")
        try:
            return render_mode_image(scene, cam, mode)
        except VoxSplatError as exc:
            raise HTTPException(400, str(exc))

    @app.get("/api/render")
    def get_render(polar: float = 0.0, azimuth: float = 0.0,
                   radius: float = 3.0, width: int = 256, height: int = 256,
                   mode: str = "shaded", fov: float = 0.8,
                   format: str = "png"):
        scene, revision = state.snapshot()
        cam = _orbit_from_query(scene, polar, azimuth, radius, width, height, fov)
        img = _render_frame(scene, cam, mode)
        headers = {"X-Revision": str(revision)}
        if format == "raw":
            raw = to_uint8(img)
            headers["X-Width"] = str(raw.shape[1])
            headers["X-Height"] = str(raw.shape[0])
            headers["X-Channels"] = str(1 if raw.ndim == 2 else raw.shape[2])
            return Response(raw.tobytes(), headers=headers,
                            media_type="application/octet-stream")
        if format != "png":
            raise HTTPException(400, f"unknown format {format!r}")
        return Response(png_bytes(img), headers=headers, media_type="image/png")

    # ------------------------------------------------------------ invert

    def _run_invert(job_id, scene, ref, cam, iters, lr):
        job = state.jobs[job_id]

        def progress(it, loss, _params):
            job["iteration"] = it
            job["loss"] = float(loss)

        try:
            fitted, _losses = optimize_to_reference(
                scene, init_transform(scene), ref, cam,
                iters=iters, lr=lr, callback=progress)
            final = render_with_transform(scene, fitted, cam, dtype=np.float64)
            job["psnr"] = float(psnr(final, ref))
            with state.lock:
                if state.scene is not None:
                    state.scene.transform = fitted.to_dict()
                    for i in range(len(state.scene.models)):
                        state.scene.edits[i] = EditState(
                            np.clip(fitted.c_p[i], 0.0, 1.0),
                            float(fitted.opacity_scale[i]))
                    state.revision += 1
                    job["revision"] = state.revision
            job["status"] = "done"
        except VoxSplatError as exc:
            job["status"] = "error"
            job["error"] = f"{type(exc).__name__}: {exc}"

    @app.post("/api/invert")
    async def post_invert(reference: UploadFile, camera: str = Form(...),
                          iters: int = Form(1000), lr: float = Form(0.01)):
        scene, _ = state.snapshot()
        cam = _camera_from_dict(_parse_json(camera, "camera"))
        if iters < 1 or lr <= 0:
            raise HTTPException(400, "iters must be >= 1 and lr > 0")
        try:
            img = Image.open(reference.file)
        except Exception:
            raise HTTPException(400, "reference is not a decodable image")
        ref = np.asarray(img).astype(np.float64) / 255.0
        if ref.ndim != 3 or ref.shape[-1] not in (3, 4):
            raise HTTPException(400, "reference must be an RGB or RGBA image")
        if ref.shape[-1] == 3:
            ref = np.concatenate([ref, np.ones(ref.shape[:2] + (1,))], axis=-1)
        if ref.shape[:2] != (cam.height, cam.width):
            raise HTTPException(400, "reference size does not match the camera")

        job_id = uuid.uuid4().hex
        state.jobs[job_id] = {"status": "running", "iteration": 0,
                              "loss": None, "psnr": None}
        worker = threading.Thread(target=_run_invert,
                                  args=(job_id, scene, ref, cam, iters, lr),
                                  daemon=True)
        worker.start()
        return {"job_id": job_id}

    @app.get("/api/invert/{job_id}")
    def get_invert(job_id: str):
        job = state.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"unknown job {job_id!r}")
        return job

    # ------------------------------------------------------------ stream

    @app.websocket("/api/stream")
    async def stream(ws: WebSocket):
        await ws.accept()
        try:
            while True:
                msg = await ws.receive_json()
                try:
                    scene, revision = state.snapshot()
                    c = msg.get("camera", {})
                    cam = _orbit_from_query(
                        scene, c.get("polar", 0.0), c.get("azimuth", 0.0),
                        c.get("radius", 3.0), c.get("width", 256),
                        c.get("height", 256), c.get("fov", 0.8))
                    img = _render_frame(scene, cam, msg.get("mode", "shaded"))
                except HTTPException as exc:
                    await ws.send_json({"error": exc.detail})
                    continue
                # frame = little-endian uint32 revision tag + PNG bytes
                await ws.send_bytes(struct.pack("<I", revision) + png_bytes(img))
        except WebSocketDisconnect:
            pass

    return app


def _parse_json(text, what):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise HTTPException(400, f"bad {what} json: {exc}")
