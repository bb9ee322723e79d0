"""Display rendering shared by the CLI and the HTTP service.

Turns a loaded model (basic or composed) plus a camera and a mode name
into a float image in [0, 1]: the shaded composite, the lighting-term
maps, or display-normalized depth/normal/alpha maps.
"""

import io

import numpy as np
from PIL import Image

from .errors import MixedStage
from .rasterizer import rasterize_forward
from .scene import STAGE_EDITABLE, ComposedScene, apply_edits
from .shading import LightConfig, shade_gaussians
from .trainer import render_model

RENDER_MODES = ("shaded", "normal", "ambient", "diffuse", "specular", "depth", "alpha")


def as_composed(model):
    """View any loaded model as a composed scene for edit-aware rendering."""
    if isinstance(model, ComposedScene):
        return model
    light = LightConfig.from_dict(model.metadata["light"]) \
        if model.metadata.get("light") else LightConfig()
    return ComposedScene.compose([model], light)


def render_mode_image(model, cam, mode):
    """Float image in [0, 1] (rgb, rgba, or grayscale) for one render mode."""
    if not isinstance(model, ComposedScene) and model.stage != STAGE_EDITABLE:
        if mode in ("ambient", "diffuse", "specular"):
            raise MixedStage(f"mode {mode!r} needs an editable-stage model")
        rgba = render_model(model, cam, dtype=np.float64)
        if mode == "shaded":
            return rgba
        if mode == "alpha":
            return rgba[..., 3]
        out, _ = rasterize_forward(
            model.geometry, np.zeros((len(model.geometry), 3)), cam,
            channels=("alpha", "depth", "normal"), dtype=np.float64)
        return _display_map(out, mode)

    scene = as_composed(model)
    if scene.transform is not None and mode == "shaded":
        from .inverse import TransformParams, render_with_transform

        params = TransformParams.from_dict(scene.transform)
        return render_with_transform(scene, params, cam, dtype=np.float64)
    eff = apply_edits(scene)
    rgb, terms, _ = shade_gaussians(
        eff.geometry, eff.shading, eff.palette_rgb, eff.light, cam)
    if mode in ("ambient", "diffuse", "specular"):
        out, _ = rasterize_forward(eff.geometry, terms[mode], cam,
                                   channels=("color", "alpha"), dtype=np.float64)
        return np.concatenate([np.clip(out.color, 0, 1),
                               out.alpha[..., None]], axis=-1)
    out, _ = rasterize_forward(eff.geometry, rgb, cam,
                               channels=("color", "alpha", "depth", "normal"),
                               dtype=np.float64)
    if mode == "shaded":
        return np.concatenate([np.clip(out.color, 0, 1),
                               out.alpha[..., None]], axis=-1)
    if mode == "alpha":
        return out.alpha
    return _display_map(out, mode)


def _display_map(out, mode):
    if mode == "alpha":
        return out.alpha
    if mode == "normal":
        n = np.asarray(out.normal, dtype=np.float64)
        norm = np.linalg.norm(n, axis=-1, keepdims=True)
        unit = np.where(norm > 1e-8, n / np.maximum(norm, 1e-8), 0.0)
        return 0.5 * (unit + 1.0)
    # depth: mean depth per covered pixel, min-max normalized for display
    alpha = np.asarray(out.alpha, dtype=np.float64)
    covered = alpha > 1e-6
    d = np.zeros_like(alpha)
    d[covered] = out.depth[covered] / alpha[covered]
    if covered.any():
        lo, hi = d[covered].min(), d[covered].max()
        if hi > lo:
            d[covered] = (d[covered] - lo) / (hi - lo)
        else:
            d[covered] = 1.0
    return d


def to_uint8(img):
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0),
                   0, 255).astype(np.uint8)


def to_pil(img):
    img8 = to_uint8(img)
    if img8.ndim == 2:
        return Image.fromarray(img8, mode="L")
    return Image.fromarray(img8, mode="RGBA" if img8.shape[-1] == 4 else "RGB")


def png_bytes(img):
    buf = io.BytesIO()
    to_pil(img).save(buf, format="PNG")
    return buf.getvalue()
