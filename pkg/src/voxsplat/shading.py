"""Blinn-Phong color resolution for editable splats.

Each editable splat carries an offset color and ambient/diffuse/specular
coefficients plus a shininess exponent.  Given a palette color, a light
configuration, and a camera, this module resolves a per-splat rgb color
(and the individual lighting terms) together with an exact backward pass
for every learnable quantity.

Coefficients are stored unconstrained: the ambient/diffuse/specular
weights live as logits (sigmoid-mapped to [0, 1]) and the shininess as a
log value (exp-mapped, then offset by +1 so the exponent stays >= 1).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteGradient, OutOfRange, ShapeMismatch
from ._mathutil import inv_sigmoid, normalize_rows, normalize_rows_backward, sigmoid

WHITE = np.ones(3)

HEADLIGHT = "headlight"
ORBITAL = "orbital"


@dataclass
class Palette:
    """Shared base color for every splat in one basic scene."""

    c_p: np.ndarray

    def __post_init__(self):
        self.c_p = np.asarray(self.c_p, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(self.c_p)):
            raise OutOfRange("palette color must be finite")

    def copy(self):
        return Palette(self.c_p.copy())


@dataclass
class LightConfig:
    """Scene light: camera-attached headlight or fixed-direction orbital light.

    ``term_scales`` multiplies (ambient, diffuse, specular, shininess)
    globally at edit time; the default of all ones leaves shading untouched.
    """

    mode: str = HEADLIGHT
    polar: float = 0.0
    azimuth: float = 0.0
    term_scales: np.ndarray = field(default_factory=lambda: np.ones(4))

    def __post_init__(self):
        if self.mode not in (HEADLIGHT, ORBITAL):
            raise OutOfRange(f"unknown light mode: {self.mode!r}")
        self.polar = float(self.polar)
        self.azimuth = float(self.azimuth)
        if not -np.pi / 2 <= self.polar <= np.pi / 2:
            raise OutOfRange(f"polar angle {self.polar} outside [-pi/2, pi/2]")
        if not -np.pi <= self.azimuth <= np.pi:
            raise OutOfRange(f"azimuth angle {self.azimuth} outside [-pi, pi]")
        self.term_scales = np.asarray(self.term_scales, dtype=np.float64).reshape(4)
        if not np.all(self.term_scales > 0):
            raise OutOfRange("term_scales must be strictly positive")

    def copy(self):
        return LightConfig(self.mode, self.polar, self.azimuth, self.term_scales.copy())

    def to_dict(self):
        return {
            "mode": self.mode,
            "polar": self.polar,
            "azimuth": self.azimuth,
            "term_scales": self.term_scales.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            mode=d.get("mode", HEADLIGHT),
            polar=d.get("polar", 0.0),
            azimuth=d.get("azimuth", 0.0),
            term_scales=np.asarray(d.get("term_scales", [1.0, 1.0, 1.0, 1.0])),
        )


@dataclass
class ShadingAttributes:
    """Per-splat material parameters in unconstrained storage form.

    delta_c     (N, 3) additive color offset on top of the palette color.
    k_a_raw     (N,)   ambient weight logit.
    k_d_raw     (N,)   diffuse weight logit.
    k_s_raw     (N,)   specular weight logit.
    log_beta    (N,)   shininess stored as log(beta - 1).
    """

    delta_c: np.ndarray
    k_a_raw: np.ndarray
    k_d_raw: np.ndarray
    k_s_raw: np.ndarray
    log_beta: np.ndarray

    def __post_init__(self):
        self.delta_c = np.atleast_2d(np.asarray(self.delta_c, dtype=np.float64))
        n = self.delta_c.shape[0]
        for name in ("k_a_raw", "k_d_raw", "k_s_raw", "log_beta"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64))
            if arr.shape != (n,):
                raise ShapeMismatch(f"{name} must have shape ({n},), got {arr.shape}")
            setattr(self, name, arr)
        if self.delta_c.shape[1] != 3:
            raise ShapeMismatch(f"delta_c must be (N, 3), got {self.delta_c.shape}")

    def __len__(self):
        return self.delta_c.shape[0]

    @property
    def k_a(self):
        return sigmoid(self.k_a_raw)

    @property
    def k_d(self):
        return sigmoid(self.k_d_raw)

    @property
    def k_s(self):
        return sigmoid(self.k_s_raw)

    @property
    def beta(self):
        return np.exp(self.log_beta) + 1.0

    @classmethod
    def from_natural(cls, delta_c, k_a, k_d, k_s, beta):
        """Build storage-form attributes from already-mapped values."""
        beta = np.atleast_1d(np.asarray(beta, dtype=np.float64))
        if np.any(beta <= 1.0):
            raise OutOfRange("shininess must be > 1 to admit a log parameterization")
        return cls(
            delta_c=delta_c,
            k_a_raw=inv_sigmoid(k_a),
            k_d_raw=inv_sigmoid(k_d),
            k_s_raw=inv_sigmoid(k_s),
            log_beta=np.log(beta - 1.0),
        )

    def copy(self):
        return ShadingAttributes(
            self.delta_c.copy(),
            self.k_a_raw.copy(),
            self.k_d_raw.copy(),
            self.k_s_raw.copy(),
            self.log_beta.copy(),
        )

    def select(self, idx):
        return ShadingAttributes(
            self.delta_c[idx],
            self.k_a_raw[idx],
            self.k_d_raw[idx],
            self.k_s_raw[idx],
            self.log_beta[idx],
        )

    @staticmethod
    def concat(parts):
        return ShadingAttributes(
            np.concatenate([p.delta_c for p in parts], axis=0),
            np.concatenate([p.k_a_raw for p in parts]),
            np.concatenate([p.k_d_raw for p in parts]),
            np.concatenate([p.k_s_raw for p in parts]),
            np.concatenate([p.log_beta for p in parts]),
        )


def light_direction_from_angles(polar, azimuth):
    """Unit direction for an orbital light: x = cos·cos, y = cos·sin, z = sin."""
    cp, sp = np.cos(polar), np.sin(polar)
    ca, sa = np.cos(azimuth), np.sin(azimuth)
    return np.array([cp * ca, cp * sa, sp])


def resolve_light_direction(light, cam, mu):
    """Per-point unit light direction.

    A headlight shines from the camera position toward each point; an
    orbital light is a constant world-space direction from its angles.
    """
    mu = np.asarray(mu, dtype=np.float64)
    if light.mode == HEADLIGHT:
        return normalize_rows(np.asarray(cam.position) - mu, eps=1e-12)
    l = light_direction_from_angles(light.polar, light.azimuth)
    return np.broadcast_to(l, mu.shape).copy() if mu.ndim > 1 else l


def blinn_phong(c_v, n, l, v, k_a, k_d, k_s, beta):
    """Core reflection formula shared by splat shading and the volume renderer.

    ambient  = k_a * c_v
    diffuse  = k_d * c_v * |n.l|
    specular = k_s * white * |n.h|^beta   (only where |n.l| > 0)

    All direction inputs must be unit vectors; broadcasting follows numpy
    rules over the leading axes.  Returns (rgb, ambient, diffuse, specular).
    """
    c_v = np.asarray(c_v, dtype=np.float64)
    ndl = np.sum(n * l, axis=-1)
    h = normalize_rows(v + l, eps=1e-12)
    ndh = np.sum(n * h, axis=-1)
    a_ndl = np.abs(ndl)
    a_ndh = np.abs(ndh)
    gate = a_ndl > 0.0

    ambient = k_a[..., None] * c_v
    diffuse = (k_d * a_ndl)[..., None] * c_v
    spow = np.where(a_ndh > 0.0, np.power(np.maximum(a_ndh, 1e-300), beta), 0.0)
    spow = np.where(gate, spow, 0.0)
    specular = (k_s * spow)[..., None] * WHITE
    return ambient + diffuse + specular, ambient, diffuse, specular


def shade_gaussians(geom, attrs, palette, light, cam, coeff_transform=None):
    """Resolve per-splat rgb colors under the reflection model.

    ``coeff_transform``, if given, is a pair of 4-vectors (lam, b) applied
    to the mapped (k_a, k_d, k_s, beta) as lam*k + b before the global
    ``light.term_scales`` multiplier — the hook used when fitting a global
    shading transform against a reference image.

    Returns (rgb (N,3), terms dict with ambient/diffuse/specular maps,
    cache for :func:`shade_backward`).
    """
    mu = geom.mu
    n = geom.normals
    w_cam = np.asarray(cam.position) - mu
    v = normalize_rows(w_cam, eps=1e-12)
    headlight = light.mode == HEADLIGHT
    if headlight:
        l = v
        h = v
        u = None
    else:
        l = np.broadcast_to(
            light_direction_from_angles(light.polar, light.azimuth), mu.shape
        )
        u = v + l
        h = normalize_rows(u, eps=1e-12)

    sig_a = sigmoid(attrs.k_a_raw)
    sig_d = sigmoid(attrs.k_d_raw)
    sig_s = sigmoid(attrs.k_s_raw)
    beta1 = np.exp(attrs.log_beta) + 1.0
    if coeff_transform is None:
        lam = np.ones(4)
        b = np.zeros(4)
    else:
        lam = np.asarray(coeff_transform[0], dtype=np.float64).reshape(4)
        b = np.asarray(coeff_transform[1], dtype=np.float64).reshape(4)
    ts = light.term_scales
    # affine-transformed coefficients stay in their physical ranges: the
    # weights are clamped to [0, 1] and the shininess floor is 1 before the
    # edit-time term scales multiply in
    t_a = lam[0] * sig_a + b[0]
    t_d = lam[1] * sig_d + b[1]
    t_s = lam[2] * sig_s + b[2]
    t_beta = lam[3] * beta1 + b[3]
    coeff_gates = (
        (t_a > 0.0) & (t_a < 1.0),
        (t_d > 0.0) & (t_d < 1.0),
        (t_s > 0.0) & (t_s < 1.0),
        t_beta > 1.0,
    )
    k_a = ts[0] * np.clip(t_a, 0.0, 1.0)
    k_d = ts[1] * np.clip(t_d, 0.0, 1.0)
    k_s = ts[2] * np.clip(t_s, 0.0, 1.0)
    beta = ts[3] * np.maximum(t_beta, 1.0)

    c_p = palette.c_p if isinstance(palette, Palette) else np.asarray(palette, dtype=np.float64)
    per_splat_palette = c_p.ndim == 2
    c_v_pre = (c_p if per_splat_palette else c_p[None, :]) + attrs.delta_c
    c_v = np.clip(c_v_pre, 0.0, 1.0)

    ndl = np.sum(n * l, axis=-1)
    ndh = np.sum(n * h, axis=-1)
    a_ndl = np.abs(ndl)
    a_ndh = np.abs(ndh)
    gate = a_ndl > 0.0
    spow = np.where(a_ndh > 0.0, np.power(np.maximum(a_ndh, 1e-300), beta), 0.0)
    spow = np.where(gate, spow, 0.0)

    ambient = k_a[:, None] * c_v
    diffuse = (k_d * a_ndl)[:, None] * c_v
    specular = (k_s * spow)[:, None] * WHITE
    rgb = ambient + diffuse + specular

    cache = {
        "geom": geom,
        "attrs": attrs,
        "headlight": headlight,
        "n": n,
        "l": l,
        "v": v,
        "h": h,
        "u": u,
        "w_cam": w_cam,
        "sig": (sig_a, sig_d, sig_s),
        "beta1": beta1,
        "lam": lam,
        "b": b,
        "ts": ts,
        "coeff_gates": coeff_gates,
        "k": (k_a, k_d, k_s, beta),
        "c_v": c_v,
        "per_splat_palette": per_splat_palette,
        "clamp_open": (c_v_pre > 0.0) & (c_v_pre < 1.0),
        "ndl": ndl,
        "ndh": ndh,
        "a_ndl": a_ndl,
        "a_ndh": a_ndh,
        "gate": gate,
        "spow": spow,
        "polar": light.polar,
        "azimuth": light.azimuth,
    }
    terms = {"ambient": ambient, "diffuse": diffuse, "specular": specular}
    return rgb, terms, cache


def shade_backward(cache, d_rgb):
    """Exact gradients of the shaded color w.r.t. every learnable input.

    The absolute values |n.l| and |n.h| use sign(x) as derivative with
    subgradient 0 at x = 0; the specular visibility gate contributes no
    gradient.  Returns a dict with per-splat gradients for the raw storage
    parameters, the palette, positions, the coefficient transform (lam, b),
    and the orbital light angles (zero for a headlight).
    """
    d_rgb = np.asarray(d_rgb, dtype=np.float64)
    attrs = cache["attrs"]
    geom = cache["geom"]
    n, l, v, h = cache["n"], cache["l"], cache["v"], cache["h"]
    sig_a, sig_d, sig_s = cache["sig"]
    beta1 = cache["beta1"]
    lam, b, ts = cache["lam"], cache["b"], cache["ts"]
    k_a, k_d, k_s, beta = cache["k"]
    c_v = cache["c_v"]
    a_ndl, a_ndh = cache["a_ndl"], cache["a_ndh"]
    gate, spow = cache["gate"], cache["spow"]

    s3 = d_rgb.sum(axis=-1)
    dot_cv = np.sum(d_rgb * c_v, axis=-1)

    d_c_v = (k_a + k_d * a_ndl)[:, None] * d_rgb
    d_k_a = dot_cv
    d_k_d = a_ndl * dot_cv
    d_k_s = spow * s3
    d_spow = k_s * s3
    safe = a_ndh > 0.0
    log_andh = np.log(np.where(safe, a_ndh, 1.0))
    d_a_ndh = np.where(
        gate & safe, d_spow * beta * np.exp((beta - 1.0) * log_andh), 0.0
    )
    d_beta = np.where(gate & safe, d_spow * spow * log_andh, 0.0)
    d_a_ndl = k_d * dot_cv

    d_ndl = np.sign(cache["ndl"]) * d_a_ndl
    d_ndh = np.sign(cache["ndh"]) * d_a_ndh
    d_n_unit = d_ndl[:, None] * l + d_ndh[:, None] * h
    d_l = d_ndl[:, None] * n
    d_h = d_ndh[:, None] * n

    if cache["headlight"]:
        # l = h = v exactly, so both extra paths fold into the view vector.
        d_v = d_h + d_l
    else:
        d_u = normalize_rows_backward(cache["u"], d_h)
        d_v = d_u
        d_l = d_l + d_u

    d_w = normalize_rows_backward(cache["w_cam"], d_v)
    d_mu = -d_w

    if cache["headlight"]:
        d_polar = 0.0
        d_azimuth = 0.0
    else:
        p, a = cache["polar"], cache["azimuth"]
        dl_dp = np.array([-np.sin(p) * np.cos(a), -np.sin(p) * np.sin(a), np.cos(p)])
        dl_da = np.array([-np.cos(p) * np.sin(a), np.cos(p) * np.cos(a), 0.0])
        d_polar = float(np.sum(d_l * dl_dp))
        d_azimuth = float(np.sum(d_l * dl_da))

    # chain through the edit-time scales and the optional affine transform;
    # the range clamps contribute no gradient outside their open intervals
    g_a, g_d, g_s, g_beta = cache["coeff_gates"]
    d_ka_eff = d_k_a * ts[0] * g_a
    d_kd_eff = d_k_d * ts[1] * g_d
    d_ks_eff = d_k_s * ts[2] * g_s
    d_beta_eff = d_beta * ts[3] * g_beta
    d_lam = np.array(
        [
            np.sum(d_ka_eff * sig_a),
            np.sum(d_kd_eff * sig_d),
            np.sum(d_ks_eff * sig_s),
            np.sum(d_beta_eff * beta1),
        ]
    )
    d_b = np.array(
        [np.sum(d_ka_eff), np.sum(d_kd_eff), np.sum(d_ks_eff), np.sum(d_beta_eff)]
    )
    d_k_a_raw = d_ka_eff * lam[0] * sig_a * (1.0 - sig_a)
    d_k_d_raw = d_kd_eff * lam[1] * sig_d * (1.0 - sig_d)
    d_k_s_raw = d_ks_eff * lam[2] * sig_s * (1.0 - sig_s)
    d_log_beta = d_beta_eff * lam[3] * (beta1 - 1.0)

    d_c_v_open = np.where(cache["clamp_open"], d_c_v, 0.0)
    d_delta_c = d_c_v_open
    # per-splat palettes (composed scenes) keep per-splat gradients
    d_c_p = d_c_v_open if cache["per_splat_palette"] else d_c_v_open.sum(axis=0)

    d_n_raw = normalize_rows_backward(geom.n_raw, d_n_unit)

    grads = {
        "d_delta_c": d_delta_c,
        "d_k_a_raw": d_k_a_raw,
        "d_k_d_raw": d_k_d_raw,
        "d_k_s_raw": d_k_s_raw,
        "d_log_beta": d_log_beta,
        "d_n_raw": d_n_raw,
        "d_c_p": d_c_p,
        "d_mu": d_mu,
        "d_lam": d_lam,
        "d_b": d_b,
        "d_polar": d_polar,
        "d_azimuth": d_azimuth,
    }
    for name, g in grads.items():
        g = np.atleast_1d(np.asarray(g))
        if not np.all(np.isfinite(g)):
            bad = int(np.flatnonzero(~np.isfinite(g).reshape(g.shape[0], -1).all(axis=1))[0])
            raise NonFiniteGradient(name, bad)
    return grads
