"""Reference CPU direct-volume renderer.

Ray-marches synthetic scalar volumes through piecewise-linear 1D transfer
functions with Blinn-Phong shading, producing the ground-truth multi-view
RGBA datasets the splat models are trained against.  Every pixel is
independent, so output is deterministic regardless of worker count.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import OutOfRange, ShapeMismatch
from .gaussians import Camera
from .shading import HEADLIGHT, LightConfig, light_direction_from_angles
from ._accel import njit, prange

T_STOP = 1e-4
FLAT_GRADIENT = 1e-6


# --------------------------------------------------------------- volume


@dataclass
class VolumeGrid:
    """Scalar field on a regular grid, centered on the world origin.

    ``values[i, j, k]`` sits at world position ``origin + (i, j, k) * spacing``
    with values normalized to [0, 1].
    """

    values: np.ndarray
    spacing: np.ndarray = field(default_factory=lambda: np.ones(3))
    kind: str = "custom"

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or min(self.values.shape) < 2:
            raise ShapeMismatch(
                f"volume must be 3-d with dims >= 2, got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise OutOfRange("volume contains non-finite values")
        self.spacing = np.asarray(self.spacing, dtype=np.float64).reshape(3)
        if np.any(self.spacing <= 0):
            raise OutOfRange("voxel spacing must be positive")

    @property
    def dims(self):
        return self.values.shape

    @property
    def origin(self):
        return -(np.array(self.dims) - 1) * self.spacing / 2.0

    @property
    def bbox(self):
        lo = self.origin
        return lo, lo + (np.array(self.dims) - 1) * self.spacing

    def descriptor(self):
        return {"kind": self.kind, "dims": list(self.dims), "spacing": self.spacing.tolist()}


def _grid_coords(dims):
    """Normalized coordinates in [-1, 1] per axis."""
    axes = [np.linspace(-1.0, 1.0, d) for d in dims]
    return np.meshgrid(*axes, indexing="ij")


def make_shells_volume(dims=(64, 64, 64)):
    """Radial ramp: each opacity bump of a transfer function selects one
    spherical shell, so disjoint bumps give nested shells."""
    x, y, z = _grid_coords(dims)
    r = np.sqrt(x * x + y * y + z * z) / np.sqrt(3.0)
    return VolumeGrid(np.clip(r, 0.0, 1.0), kind="shells")


def make_lobes_volume(dims=(64, 64, 64), lobes=4.0, alpha=0.25):
    """High-frequency sinusoidal test field with concentric ripple lobes."""
    x, y, z = _grid_coords(dims)
    rho_r = np.cos(2.0 * np.pi * lobes * np.cos(np.pi * np.sqrt(x * x + y * y) / 2.0))
    v = (1.0 - np.sin(np.pi * z / 2.0) + alpha * (1.0 + rho_r)) / (2.0 * (1.0 + alpha))
    return VolumeGrid(np.clip(v, 0.0, 1.0), kind="lobes")


def make_swirl_volume(dims=(64, 64, 64)):
    """Smooth periodic swirl field (a sum of coupled sinusoids)."""
    x, y, z = _grid_coords(dims)
    v = (
        np.sin(np.pi * x) * np.cos(np.pi * y)
        + np.sin(np.pi * y) * np.cos(np.pi * z)
        + np.sin(np.pi * z) * np.cos(np.pi * x)
    )
    return VolumeGrid((v + 3.0) / 6.0, kind="swirl")


VOLUME_GENERATORS = {
    "shells": make_shells_volume,
    "lobes": make_lobes_volume,
    "swirl": make_swirl_volume,
}


def make_volume(kind, dims=(64, 64, 64)):
    if kind not in VOLUME_GENERATORS:
        raise OutOfRange(f"unknown volume kind {kind!r}; choose from {sorted(VOLUME_GENERATORS)}")
    return VOLUME_GENERATORS[kind](tuple(dims))


# --------------------------------------------------- transfer functions


@dataclass
class TransferFunction1D:
    """Piecewise-linear map from scalar value to (rgb, opacity).

    Control points are sorted by value; lookups clamp to the endpoints.
    """

    values: np.ndarray
    colors: np.ndarray
    opacities: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(-1)
        n = self.values.size
        if n < 2 or self.colors.shape[0] != n or self.opacities.size != n:
            raise ShapeMismatch("transfer function needs >= 2 aligned control points")
        if np.any(np.diff(self.values) < 0):
            raise OutOfRange("transfer function control values must be sorted")
        if np.any((self.opacities < 0) | (self.opacities > 1)):
            raise OutOfRange("transfer function opacities must lie in [0, 1]")

    @classmethod
    def basic_bump(cls, v_lo, v_hi, color, max_opacity):
        """Single triangular opacity bump over [v_lo, v_hi] with one color."""
        if not v_lo < v_hi:
            raise OutOfRange("bump needs v_lo < v_hi")
        mid = 0.5 * (v_lo + v_hi)
        color = np.asarray(color, dtype=np.float64)
        return cls(
            values=[v_lo, mid, v_hi],
            colors=[color, color, color],
            opacities=[0.0, float(max_opacity), 0.0],
        )

    def support(self):
        """Value interval outside which opacity is identically zero."""
        nz = np.flatnonzero(self.opacities > 0)
        if nz.size == 0:
            return None
        lo = self.values[max(nz[0] - 1, 0)]
        hi = self.values[min(nz[-1] + 1, self.values.size - 1)]
        return lo, hi

    def lookup(self, v):
        """Piecewise-linear (rgb, opacity) at scalar value(s) ``v``."""
        v = np.clip(np.asarray(v, dtype=np.float64), self.values[0], self.values[-1])
        rgb = np.stack(
            [np.interp(v, self.values, self.colors[:, c]) for c in range(3)], axis=-1
        )
        return rgb, np.interp(v, self.values, self.opacities)

    def to_dict(self):
        return {
            "values": self.values.tolist(),
            "colors": self.colors.tolist(),
            "opacities": self.opacities.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["values"], d["colors"], d["opacities"])


def transfer_functions_disjoint(tfs):
    """True when no two transfer functions have overlapping opacity support."""
    supports = sorted(s for s in (tf.support() for tf in tfs) if s is not None)
    return all(a[1] <= b[0] for a, b in zip(supports, supports[1:]))


def union_transfer_functions(tfs):
    """Merge disjoint transfer functions into one by concatenating points."""
    if not transfer_functions_disjoint(tfs):
        raise OutOfRange("transfer function supports overlap; union is undefined")
    order = np.argsort([tf.values[0] for tf in tfs], kind="stable")
    parts = [tfs[i] for i in order]
    return TransferFunction1D(
        np.concatenate([p.values for p in parts]),
        np.concatenate([p.colors for p in parts], axis=0),
        np.concatenate([p.opacities for p in parts]),
    )


# -------------------------------------------------------------- shading


@dataclass
class Material:
    """Global Blinn-Phong coefficients used when rendering a volume."""

    k_a: float = 0.4
    k_d: float = 0.6
    k_s: float = 0.3
    beta: float = 16.0


@njit(cache=True)
def shade_sample(c_v, n, l, v, k_a, k_d, k_s, beta):
    """Blinn-Phong color of one shaded sample (same formula as the splat
    shading module: ambient + diffuse * |n.l| + white specular |n.h|^beta)."""
    out = np.empty(3)
    ndl = abs(n[0] * l[0] + n[1] * l[1] + n[2] * l[2])
    hx, hy, hz = v[0] + l[0], v[1] + l[1], v[2] + l[2]
    hn = np.sqrt(hx * hx + hy * hy + hz * hz)
    if hn > 1e-12:
        hx, hy, hz = hx / hn, hy / hn, hz / hn
    ndh = abs(n[0] * hx + n[1] * hy + n[2] * hz)
    spec = 0.0
    if ndl > 0.0 and ndh > 0.0:
        spec = k_s * ndh**beta
    for c in range(3):
        out[c] = k_a * c_v[c] + k_d * c_v[c] * ndl + spec
    return out


@njit(cache=True)
def _trilinear(values, origin, spacing, p):
    """Trilinear sample at world point p, clamped to the grid."""
    d0, d1, d2 = values.shape
    fx = (p[0] - origin[0]) / spacing[0]
    fy = (p[1] - origin[1]) / spacing[1]
    fz = (p[2] - origin[2]) / spacing[2]
    fx = min(max(fx, 0.0), d0 - 1.000001)
    fy = min(max(fy, 0.0), d1 - 1.000001)
    fz = min(max(fz, 0.0), d2 - 1.000001)
    i0, j0, k0 = int(fx), int(fy), int(fz)
    tx, ty, tz = fx - i0, fy - j0, fz - k0
    c00 = values[i0, j0, k0] * (1 - tx) + values[i0 + 1, j0, k0] * tx
    c10 = values[i0, j0 + 1, k0] * (1 - tx) + values[i0 + 1, j0 + 1, k0] * tx
    c01 = values[i0, j0, k0 + 1] * (1 - tx) + values[i0 + 1, j0, k0 + 1] * tx
    c11 = values[i0, j0 + 1, k0 + 1] * (1 - tx) + values[i0 + 1, j0 + 1, k0 + 1] * tx
    c0 = c00 * (1 - ty) + c10 * ty
    c1 = c01 * (1 - ty) + c11 * ty
    return c0 * (1 - tz) + c1 * tz


@njit(cache=True)
def _tf_lookup(tf_v, tf_rgb, tf_o, v, out_rgb):
    """Piecewise-linear transfer function evaluation; returns opacity."""
    n = tf_v.shape[0]
    if v <= tf_v[0]:
        for c in range(3):
            out_rgb[c] = tf_rgb[0, c]
        return tf_o[0]
    if v >= tf_v[n - 1]:
        for c in range(3):
            out_rgb[c] = tf_rgb[n - 1, c]
        return tf_o[n - 1]
    for i in range(1, n):
        if v <= tf_v[i]:
            span = tf_v[i] - tf_v[i - 1]
            t = 0.0 if span <= 0.0 else (v - tf_v[i - 1]) / span
            for c in range(3):
                out_rgb[c] = tf_rgb[i - 1, c] * (1 - t) + tf_rgb[i, c] * t
            return tf_o[i - 1] * (1 - t) + tf_o[i] * t
    return 0.0


@njit(cache=True)
def _raymarch_ray(
    values, origin, spacing, bbox_lo, bbox_hi,
    tf_v, tf_rgb, tf_o,
    ro, rd, dt, step_ref,
    headlight, light_dir,
    k_a, k_d, k_s, beta,
    out_rgba,
):
    for c in range(4):
        out_rgba[c] = 0.0
    # slab intersection with the volume bounding box
    tmin = 0.0
    tmax = 1e30
    for a in range(3):
        if abs(rd[a]) < 1e-12:
            if ro[a] < bbox_lo[a] or ro[a] > bbox_hi[a]:
                return
        else:
            t0 = (bbox_lo[a] - ro[a]) / rd[a]
            t1 = (bbox_hi[a] - ro[a]) / rd[a]
            if t0 > t1:
                t0, t1 = t1, t0
            if t0 > tmin:
                tmin = t0
            if t1 < tmax:
                tmax = t1
    if tmax <= tmin:
        return

    p = np.empty(3)
    pg = np.empty(3)
    c_v = np.empty(3)
    n = np.empty(3)
    l = np.empty(3)
    v_dir = np.empty(3)
    transmittance = 1.0
    t = tmin + 0.5 * dt
    while t < tmax:
        for a in range(3):
            p[a] = ro[a] + t * rd[a]
        value = _trilinear(values, origin, spacing, p)
        alpha_ref = _tf_lookup(tf_v, tf_rgb, tf_o, value, c_v)
        if alpha_ref > 0.0:
            alpha = 1.0 - (1.0 - alpha_ref) ** (dt / step_ref)
            # gradient normal by central differences, one voxel apart
            gn = 0.0
            for a in range(3):
                h = spacing[a]
                for b in range(3):
                    pg[b] = p[b]
                pg[a] = p[a] + h
                vp = _trilinear(values, origin, spacing, pg)
                pg[a] = p[a] - h
                vm = _trilinear(values, origin, spacing, pg)
                n[a] = (vp - vm) / (2.0 * h)
                gn += n[a] * n[a]
            gn = np.sqrt(gn)
            for a in range(3):
                v_dir[a] = -rd[a]
            if gn < FLAT_GRADIENT:
                for a in range(3):
                    n[a] = v_dir[a]
            else:
                for a in range(3):
                    n[a] = -n[a] / gn
            if headlight:
                for a in range(3):
                    l[a] = v_dir[a]
            else:
                for a in range(3):
                    l[a] = light_dir[a]
            shaded = shade_sample(c_v, n, l, v_dir, k_a, k_d, k_s, beta)
            w = transmittance * alpha
            for c in range(3):
                out_rgba[c] += w * shaded[c]
            out_rgba[3] += w
            transmittance *= 1.0 - alpha
            if transmittance < T_STOP:
                break
        t += dt


@njit(cache=True, parallel=True)
def _raymarch_image(
    values, origin, spacing, bbox_lo, bbox_hi,
    tf_v, tf_rgb, tf_o,
    cam_pos, rot_t, focal, cx, cy, width, height,
    dt, step_ref, headlight, light_dir,
    k_a, k_d, k_s, beta,
    out,
):
    for py in prange(height):
        rd = np.empty(3)
        rgba = np.empty(4)
        for px in range(width):
            dx = (px - cx) / focal
            dy = (py - cy) / focal
            norm = np.sqrt(dx * dx + dy * dy + 1.0)
            for a in range(3):
                rd[a] = (rot_t[a, 0] * dx + rot_t[a, 1] * dy + rot_t[a, 2]) / norm
            _raymarch_ray(
                values, origin, spacing, bbox_lo, bbox_hi,
                tf_v, tf_rgb, tf_o,
                cam_pos, rd, dt, step_ref, headlight, light_dir,
                k_a, k_d, k_s, beta, rgba,
            )
            for c in range(4):
                out[py, px, c] = rgba[c]


# ------------------------------------------------------------ rendering


def _march_args(volume, tf, light, material, step_scale):
    lo, hi = volume.bbox
    dt = step_scale * float(volume.spacing.min())
    step_ref = float(volume.spacing.min())
    headlight = light.mode == HEADLIGHT
    light_dir = (
        np.zeros(3)
        if headlight
        else light_direction_from_angles(light.polar, light.azimuth)
    )
    return (
        volume.values, volume.origin, volume.spacing, lo, hi,
        tf.values, tf.colors, tf.opacities,
        dt, step_ref, headlight, light_dir,
        float(material.k_a), float(material.k_d), float(material.k_s), float(material.beta),
    )


def raymarch_pixel(volume, tf, cam, light, pixel, material=None, step_scale=0.5):
    """RGBA of a single pixel (premultiplied color, resolved alpha)."""
    material = material or Material()
    (vals, origin, spacing, lo, hi, tf_v, tf_rgb, tf_o,
     dt, step_ref, headlight, light_dir, ka, kd, ks, beta) = _march_args(
        volume, tf, light, material, step_scale
    )
    px, py = pixel
    cx, cy = cam.center_px
    d_cam = np.array([(px - cx) / cam.focal, (py - cy) / cam.focal, 1.0])
    rd = cam.rotation.T @ d_cam
    rd /= np.linalg.norm(rd)
    out = np.empty(4)
    _raymarch_ray(
        vals, origin, spacing, lo, hi, tf_v, tf_rgb, tf_o,
        cam.position, rd, dt, step_ref, headlight, light_dir,
        ka, kd, ks, beta, out,
    )
    return out


def render_view(volume, tf, cam, light, material=None, step_scale=0.5):
    """Ray-march a full RGBA image for one camera.

    ``tf`` may be a single transfer function or a list of disjoint ones,
    which are merged before marching.
    """
    if isinstance(tf, (list, tuple)):
        tf = union_transfer_functions(list(tf))
    material = material or Material()
    (vals, origin, spacing, lo, hi, tf_v, tf_rgb, tf_o,
     dt, step_ref, headlight, light_dir, ka, kd, ks, beta) = _march_args(
        volume, tf, light, material, step_scale
    )
    out = np.empty((cam.height, cam.width, 4))
    _raymarch_image(
        vals, origin, spacing, lo, hi, tf_v, tf_rgb, tf_o,
        cam.position, np.ascontiguousarray(cam.rotation.T),
        cam.focal, cam.center_px[0], cam.center_px[1], cam.width, cam.height,
        dt, step_ref, headlight, light_dir, ka, kd, ks, beta, out,
    )
    return out


# -------------------------------------------------------------- dataset


MANIFEST_VERSION = 1


@dataclass
class VolumeDataset:
    """Multi-view RGBA images with their cameras and render settings."""

    cameras: list
    images: list
    light: LightConfig
    manifest: dict

    def __len__(self):
        return len(self.cameras)

    def bbox(self):
        """Axis-aligned bounds of the rendered volume (lo, hi)."""
        vol = self.manifest.get("volume")
        if vol is not None:
            half = (np.asarray(vol["dims"], dtype=np.float64) - 1.0) \
                * np.asarray(vol["spacing"], dtype=np.float64) / 2.0
            return -half, half
        # without a volume descriptor, a cube inside the camera orbit
        pos = np.array([c.position for c in self.cameras])
        r = 0.5 * float(np.min(np.linalg.norm(pos, axis=1)))
        half = np.full(3, max(r, 1e-6))
        return -half, half


def generate_dataset(volume, tf, cameras, light, out_dir, material=None, step_scale=0.5):
    """Render every camera and write PNGs plus ``manifest.json``."""
    material = material or Material()
    os.makedirs(out_dir, exist_ok=True)
    images = []
    cam_entries = []
    for i, cam in enumerate(cameras):
        rgba = render_view(volume, tf, cam, light, material, step_scale)
        img8 = np.clip(np.round(rgba * 255.0), 0, 255).astype(np.uint8)
        fname = f"view_{i:04d}.png"
        Image.fromarray(img8, mode="RGBA").save(os.path.join(out_dir, fname))
        images.append(img8.astype(np.float64) / 255.0)
        entry = cam.to_dict()
        entry["file"] = fname
        cam_entries.append(entry)

    manifest = {
        "version": MANIFEST_VERSION,
        "volume": volume.descriptor(),
        "transfer_function": tf.to_dict(),
        "light": {"mode": light.mode, "polar": light.polar, "azimuth": light.azimuth},
        "material": {
            "k_a": material.k_a,
            "k_d": material.k_d,
            "k_s": material.k_s,
            "beta": material.beta,
        },
        "cameras": cam_entries,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return VolumeDataset(list(cameras), images, light.copy(), manifest)


def load_dataset(dataset_dir):
    """Load a dataset directory written by :func:`generate_dataset`."""
    with open(os.path.join(dataset_dir, "manifest.json")) as f:
        manifest = json.load(f)
    cameras = [Camera.from_dict(e) for e in manifest["cameras"]]
    images = []
    for e in manifest["cameras"]:
        img = np.asarray(Image.open(os.path.join(dataset_dir, e["file"])))
        images.append(img.astype(np.float64) / 255.0)
    light = LightConfig(
        mode=manifest["light"]["mode"],
        polar=manifest["light"]["polar"],
        azimuth=manifest["light"]["azimuth"],
    )
    return VolumeDataset(cameras, images, light, manifest)
