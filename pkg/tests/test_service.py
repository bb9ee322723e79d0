"""Tests for the HTTP/WebSocket render-and-edit service."""

import io
import json
import struct
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from oracles import random_editable_model

from voxsplat.gaussians import orbit_camera
from voxsplat.render_modes import png_bytes, render_mode_image
from voxsplat.scene import ComposedScene, EditState, save_model
from voxsplat.service import create_app
from voxsplat.shading import LightConfig


def _make_scene(seed=0, n=40):
    rng = np.random.default_rng(seed)
    models = [random_editable_model(rng, n, spread=0.5) for _ in range(2)]
    return ComposedScene.compose(models, LightConfig())


@pytest.fixture()
def client(tmp_path):
    scene = _make_scene()
    path = tmp_path / "scene.ivrg"
    save_model(scene, str(path))
    return TestClient(create_app(str(path)))


@pytest.fixture()
def empty_client():
    return TestClient(create_app(None))


RENDER_Q = {"polar": 0.3, "azimuth": 0.8, "radius": 2.5,
            "width": 32, "height": 32}


# ------------------------------------------------------------- no model


def test_503_when_no_model_loaded(empty_client):
    assert empty_client.get("/api/scene").status_code == 503
    assert empty_client.get("/api/render").status_code == 503
    assert empty_client.post("/api/edit", json={}).status_code == 503


# ---------------------------------------------------------------- scene


def test_scene_summary(client):
    doc = client.get("/api/scene").json()
    assert doc["revision"] == 0
    assert len(doc["scenes"]) == 2
    for i, entry in enumerate(doc["scenes"]):
        assert entry["index"] == i
        assert len(entry["palette"]) == 3
        assert entry["opacity_scale"] == 1.0
        assert entry["count"] == 40
    assert doc["total_primitives"] == 80
    assert "shaded" in doc["render_modes"]
    assert doc["light"]["mode"] == "headlight"


# ----------------------------------------------------------------- edit


def test_identity_edit_increments_revision_and_keeps_frame(client):
    before = client.get("/api/render", params=RENDER_Q)
    assert before.headers["X-Revision"] == "0"
    r = client.post("/api/edit", json={})
    assert r.json() == {"revision": 1}
    after = client.get("/api/render", params=RENDER_Q)
    assert after.headers["X-Revision"] == "1"
    assert after.content == before.content


def test_palette_edit_changes_frame(client):
    before = client.get("/api/render", params=RENDER_Q).content
    r = client.post("/api/edit",
                    json={"scene": 0, "palette": [0.9, 0.05, 0.05]})
    assert r.status_code == 200
    doc = client.get("/api/scene").json()
    assert doc["scenes"][0]["palette"] == [0.9, 0.05, 0.05]
    assert client.get("/api/render", params=RENDER_Q).content != before


def test_opacity_zero_hides_scene(client):
    client.post("/api/edit", json={"scene": 1, "opacity_scale": 0.0})
    got = client.get("/api/render", params=RENDER_Q).content

    solo = _make_scene()
    solo.edits[1] = EditState(opacity_scale=0.0)
    cam = orbit_camera(_center(solo), 2.5, 0.3, 0.8, 0.8, 32, 32)
    assert got == png_bytes(render_mode_image(solo, cam, "shaded"))


def _center(scene):
    mu = np.concatenate([m.geometry.mu for m in scene.models])
    return 0.5 * (mu.min(axis=0) + mu.max(axis=0))


def test_light_edit(client):
    r = client.post("/api/edit", json={
        "light": {"mode": "orbital", "polar": 0.4, "azimuth": 1.0},
        "term_scales": [1.0, 2.0, 0.5, 1.0]})
    assert r.status_code == 200
    doc = client.get("/api/scene").json()
    assert doc["light"]["mode"] == "orbital"
    assert doc["light"]["polar"] == pytest.approx(0.4)
    assert doc["light"]["term_scales"] == [1.0, 2.0, 0.5, 1.0]


def test_stale_revision_conflict(client):
    assert client.post("/api/edit", json={"revision": 0}).status_code == 200
    r = client.post("/api/edit", json={"revision": 0})
    assert r.status_code == 409


@pytest.mark.parametrize("body", [
    {"bogus_field": 1},
    {"scene": 99, "palette": [1, 0, 0]},
    {"scene": 0, "palette": [2.0, 0, 0]},
    {"scene": 0, "opacity_scale": -1},
    {"light": "not an object"},
    {"light": {"mode": "nonsense"}},
])
def test_malformed_edit_rejected(client, body):
    assert client.post("/api/edit", json=body).status_code == 400


def test_non_json_edit_body_rejected(client):
    r = client.post("/api/edit", content=b"garbage",
                    headers={"content-type": "application/json"})
    assert r.status_code == 400


# ---------------------------------------------------------------- render


def test_render_deterministic_and_decodable(client):
    a = client.get("/api/render", params=RENDER_Q)
    b = client.get("/api/render", params=RENDER_Q)
    assert a.content == b.content
    assert a.headers["content-type"] == "image/png"
    img = Image.open(io.BytesIO(a.content))
    assert img.size == (32, 32)


def test_render_modes_and_errors(client):
    for mode in ("normal", "depth", "alpha", "ambient"):
        r = client.get("/api/render", params={**RENDER_Q, "mode": mode})
        assert r.status_code == 200
    assert client.get("/api/render",
                      params={**RENDER_Q, "mode": "xray"}).status_code == 400
    assert client.get("/api/render",
                      params={**RENDER_Q, "format": "bmp"}).status_code == 400
    assert client.get("/api/render",
                      params={**RENDER_Q, "radius": "soup"}).status_code == 400


def test_render_raw_format(client):
    r = client.get("/api/render", params={**RENDER_Q, "format": "raw"})
    assert r.status_code == 200
    w = int(r.headers["X-Width"])
    h = int(r.headers["X-Height"])
    c = int(r.headers["X-Channels"])
    assert (w, h, c) == (32, 32, 4)
    assert len(r.content) == w * h * c


# ---------------------------------------------------------------- invert


def test_unknown_job_404(client):
    assert client.get("/api/invert/deadbeef").status_code == 404


def _poll_until_done(client, job_id, timeout=120.0):
    samples = []
    t0 = time.time()
    while time.time() - t0 < timeout:
        doc = client.get(f"/api/invert/{job_id}").json()
        samples.append(doc)
        if doc["status"] != "running":
            return doc, samples
        time.sleep(0.02)
    raise AssertionError(f"invert job timed out: {samples[-1]}")


def test_invert_job_recovers_edit_and_reports_progress(client):
    # reference: the same scene with a known recolor of basic scene 0
    target = _make_scene()
    target.edits[0] = EditState(palette_override=np.array([0.2, 0.6, 0.9]))
    cam = orbit_camera(_center(target), 2.5, 0.3, 0.8, 0.8, 40, 40)
    ref_png = png_bytes(render_mode_image(target, cam, "shaded"))

    r = client.post("/api/invert",
                    files={"reference": ("ref.png", ref_png, "image/png")},
                    data={"camera": json.dumps(cam.to_dict()),
                          "iters": "400", "lr": "0.01"})
    assert r.status_code == 200
    job_id = r.json()["job_id"]

    final, samples = _poll_until_done(client, job_id)
    assert final["status"] == "done"
    assert final["iteration"] == 400
    assert final["psnr"] >= 35.0

    # smoothed (median-filtered) polled loss decreases overall
    losses = [s["loss"] for s in samples if s["loss"] is not None]
    assert len(losses) >= 4
    half = len(losses) // 2
    assert np.median(losses[half:]) <= np.median(losses[:half])

    # the fitted transform became the live edit state, bumping the revision
    doc = client.get("/api/scene").json()
    assert doc["revision"] == final["revision"] == 1
    assert np.abs(np.array(doc["scenes"][0]["palette"]) -
                  [0.2, 0.6, 0.9]).max() < 0.05


def test_invert_rejects_bad_inputs(client):
    cam = orbit_camera(np.zeros(3), 2.5, 0.3, 0.8, 0.8, 40, 40)
    png = png_bytes(np.zeros((40, 40, 4)))
    ok = {"files": {"reference": ("r.png", png, "image/png")},
          "data": {"camera": json.dumps(cam.to_dict())}}
    # non-image reference
    r = client.post("/api/invert",
                    files={"reference": ("r.png", b"junk", "image/png")},
                    data=ok["data"])
    assert r.status_code == 400
    # malformed camera json
    r = client.post("/api/invert", files=ok["files"],
                    data={"camera": "{broken"})
    assert r.status_code == 400
    # size mismatch
    small = png_bytes(np.zeros((8, 8, 4)))
    r = client.post("/api/invert",
                    files={"reference": ("r.png", small, "image/png")},
                    data=ok["data"])
    assert r.status_code == 400
    # bad hyperparameters
    r = client.post("/api/invert", files=ok["files"],
                    data={**ok["data"], "iters": "0"})
    assert r.status_code == 400


# ---------------------------------------------------------------- stream


def test_websocket_frames_tagged_with_revision(client):
    msg = {"camera": {**RENDER_Q}, "mode": "shaded"}
    with client.websocket_connect("/api/stream") as ws:
        ws.send_json(msg)
        frame = ws.receive_bytes()
        (rev,) = struct.unpack_from("<I", frame)
        assert rev == 0
        png = frame[4:]
        assert client.get("/api/render", params=RENDER_Q).content == png

        client.post("/api/edit", json={"scene": 0, "palette": [0.1, 0.9, 0.1]})
        ws.send_json(msg)
        frame2 = ws.receive_bytes()
        (rev2,) = struct.unpack_from("<I", frame2)
        assert rev2 == 1
        assert frame2[4:] != png

        ws.send_json({"camera": {"radius": "soup"}})
        assert "error" in ws.receive_json()
