"""Inverse appearance fitting against a single reference image.

All primitive attributes stay frozen; only a small transform is
optimized: per-scene palette colors and opacity scales, a global affine
transform (lam, b) on the mapped reflection coefficients, and — for
orbital lighting — the two light angles.
"""

from dataclasses import dataclass

import numpy as np

from ._mathutil import inv_sigmoid, sigmoid
from .errors import DivergedLoss, OutOfRange, ShapeMismatch
from .gaussians import GaussianGeometry
from .losses import photometric_loss
from .rasterizer import rasterize_backward, rasterize_forward
from .scene import ComposedScene
from .shading import ORBITAL, LightConfig, shade_backward, shade_gaussians
from .trainer import Adam


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def inv_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0.0):
        raise OutOfRange("softplus output must be positive")
    return y + np.log1p(-np.exp(-y))


@dataclass
class TransformParams:
    """Learnable appearance transform for a composed scene.

    c_p           (S, 3) palette color per basic scene.
    opacity_raw   (S,) softplus pre-image of each scene's opacity scale.
    lam, b        (4,) affine transform on mapped (k_a, k_d, k_s, beta).
    polar/azimuth orbital light angles, optimized only in orbital mode.
    """

    c_p: np.ndarray
    opacity_raw: np.ndarray
    lam: np.ndarray
    b: np.ndarray
    polar: float = 0.0
    azimuth: float = 0.0
    light_mode: str = "headlight"

    def __post_init__(self):
        self.c_p = np.atleast_2d(np.asarray(self.c_p, dtype=np.float64))
        s = self.c_p.shape[0]
        if self.c_p.shape != (s, 3):
            raise ShapeMismatch(f"c_p must be (S, 3), got {self.c_p.shape}")
        self.opacity_raw = np.asarray(self.opacity_raw, dtype=np.float64).reshape(s)
        self.lam = np.asarray(self.lam, dtype=np.float64).reshape(4)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(4)
        self.polar = float(self.polar)
        self.azimuth = float(self.azimuth)

    @property
    def opacity_scale(self):
        return softplus(self.opacity_raw)

    def copy(self):
        return TransformParams(self.c_p.copy(), self.opacity_raw.copy(),
                               self.lam.copy(), self.b.copy(),
                               self.polar, self.azimuth, self.light_mode)

    def to_dict(self):
        return {
            "c_p": self.c_p.tolist(),
            "opacity_scale": self.opacity_scale.tolist(),
            "lam": self.lam.tolist(),
            "b": self.b.tolist(),
            "polar": self.polar,
            "azimuth": self.azimuth,
            "light_mode": self.light_mode,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["c_p"]), inv_softplus(np.asarray(d["opacity_scale"])),
                   np.asarray(d["lam"]), np.asarray(d["b"]),
                   d["polar"], d["azimuth"], d["light_mode"])


def init_transform(scene: ComposedScene) -> TransformParams:
    """Identity transform for the scene's current effective appearance."""
    c_p = np.stack([
        e.palette_override if e.palette_override is not None else m.palette.c_p
        for m, e in zip(scene.models, scene.edits)
    ])
    scales = np.array([max(e.opacity_scale, 1e-6) for e in scene.edits])
    return TransformParams(
        c_p, inv_softplus(scales), np.ones(4), np.zeros(4),
        scene.light.polar, scene.light.azimuth, scene.light.mode,
    )


# ---------------------------------------------------------------------------
# transformed forward/backward


def _frozen_parts(scene):
    """One-time concatenation of the frozen primitive attributes."""
    from .gaussians import GaussianGeometry as _G  # local alias for clarity
    from .shading import ShadingAttributes

    geometry = _G.concat([m.geometry for m in scene.models])
    shading = ShadingAttributes.concat([m.shading for m in scene.models])
    return geometry, shading, scene.scene_ids


def _transformed_geometry(geometry, params, scene_ids):
    """Geometry with per-scene opacity scaling applied (shared arrays when
    every scale is exactly one, so identity transforms render bit-identically)."""
    scale = params.opacity_scale[scene_ids]
    o_base = sigmoid(geometry.o_logit)
    if np.all(scale == 1.0):
        return geometry, o_base, o_base, np.ones_like(o_base, dtype=bool)
    p = np.clip(scale * o_base, 1e-12, 1.0 - 1e-9)
    open_gate = (scale * o_base > 1e-12) & (scale * o_base < 1.0 - 1e-9)
    geom = GaussianGeometry(geometry.mu, geometry.q_raw, geometry.log_s,
                            inv_sigmoid(p), geometry.n_raw)
    return geom, o_base, p, open_gate


def _transform_light(scene_light, params):
    return LightConfig(scene_light.mode, params.polar, params.azimuth,
                       term_scales=scene_light.term_scales.copy())


def _forward(parts, scene_light, params, cam, dtype=np.float64):
    geometry, shading, scene_ids = parts
    geom, o_base, p_eff, open_gate = _transformed_geometry(geometry, params, scene_ids)
    light = _transform_light(scene_light, params)
    palette_rgb = params.c_p[scene_ids]
    rgb, _, cache = shade_gaussians(geom, shading, palette_rgb, light, cam,
                                    coeff_transform=(params.lam, params.b))
    out, state = rasterize_forward(geom, rgb, cam, channels=("color", "alpha"),
                                   dtype=dtype)
    rgba = np.concatenate([np.asarray(out.color, dtype=np.float64),
                           np.asarray(out.alpha, dtype=np.float64)[..., None]],
                          axis=-1)
    aux = {"o_base": o_base, "p_eff": p_eff, "open_gate": open_gate,
           "scene_ids": scene_ids, "n_scenes": params.c_p.shape[0]}
    return rgba, cache, state, aux


def render_with_transform(scene, params, cam, dtype=np.float32):
    """RGBA render of a composed scene under an appearance transform."""
    rgba, _, _, _ = _forward(_frozen_parts(scene), scene.light, params, cam,
                             dtype=dtype)
    return rgba


def _step(parts, scene_light, params, cam, reference):
    rgba, cache, state, aux = _forward(parts, scene_light, params, cam)
    loss, d_rgba = photometric_loss(rgba, reference)
    if not np.isfinite(loss):
        raise DivergedLoss(f"loss became {loss}")
    g = rasterize_backward(state, {"color": d_rgba[..., :3],
                                   "alpha": d_rgba[..., 3]})
    sg = shade_backward(cache, g["d_colors"])

    ids, s = aux["scene_ids"], aux["n_scenes"]
    d_c_p = np.zeros((s, 3))
    np.add.at(d_c_p, ids, sg["d_c_p"])

    # o_logit_eff = logit(clip(scale * o_base)); invert the logit chain to
    # reach the per-scene scale, gated where the clip is active
    p = aux["p_eff"]
    d_p = g["d_o_logit"] / (p * (1.0 - p))
    d_scale_splat = np.where(aux["open_gate"], d_p * aux["o_base"], 0.0)
    d_scale = np.zeros(s)
    np.add.at(d_scale, ids, d_scale_splat)
    d_opacity_raw = d_scale * sigmoid(params.opacity_raw)

    grads = {
        "c_p": d_c_p,
        "opacity_raw": d_opacity_raw,
        "lam": sg["d_lam"],
        "b": sg["d_b"],
        "angles": np.array([sg["d_polar"], sg["d_azimuth"]]),
    }
    return loss, grads


def _model_fingerprint(scene):
    import hashlib
    h = hashlib.sha256()
    for m in scene.models:
        for arr in (m.geometry.mu, m.geometry.q_raw, m.geometry.log_s,
                    m.geometry.o_logit, m.geometry.n_raw,
                    m.shading.delta_c, m.shading.k_a_raw, m.shading.k_d_raw,
                    m.shading.k_s_raw, m.shading.log_beta, m.palette.c_p):
            h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def optimize_to_reference(scene, params, reference_rgba, reference_cam,
                          iters=1000, lr=0.01, callback=None, learnable=None):
    """Fit the transform to one reference image with Adam on L1 + SSIM.

    Returns (fitted params, per-iteration loss list).  The scene's
    primitive attributes are byte-compared before and after to guarantee
    they were never touched.  ``callback(iteration, loss, params)`` is
    invoked after every iteration when given (used for progress polling).
    ``learnable`` restricts the update to a subset of
    {"c_p", "opacity_raw", "lam", "b", "angles"}; default is all of them.
    """
    reference = np.asarray(reference_rgba, dtype=np.float64)
    params = params.copy()
    parts = _frozen_parts(scene)
    before = _model_fingerprint(scene)
    if learnable is None:
        learnable = ("c_p", "opacity_raw", "lam", "b", "angles")

    adam = Adam(eps=1e-15)
    angles = np.array([params.polar, params.azimuth])
    fit_light = params.light_mode == ORBITAL and "angles" in learnable
    losses = []
    for it in range(1, iters + 1):
        loss, grads = _step(parts, scene.light, params, reference_cam, reference)
        losses.append(float(loss))
        # Adam rescales any nonzero gradient to a near-full step, so pure
        # floating-point residue (reference == render) must not move params
        floor = 1e-12
        for name in ("c_p", "opacity_raw", "lam", "b"):
            if name in learnable and np.abs(grads[name]).max() > floor:
                adam.step(name, getattr(params, name), grads[name], lr)
        if fit_light and np.abs(grads["angles"]).max() > floor:
            adam.step("angles", angles, grads["angles"], lr)
            params.polar, params.azimuth = float(angles[0]), float(angles[1])
        if callback is not None:
            callback(it, float(loss), params)

    after = _model_fingerprint(scene)
    assert before == after, "primitive attributes changed during inverse fitting"
    return params, losses
