"""Scene models: persistence, composition, and edit application.

A basic scene model is one trained splat set (base stage with spherical-
harmonic colors, or editable stage with shading attributes and a palette).
Editable models compose by primitive concatenation into a composed scene
carrying per-scene edit state and a global light; ``apply_edits`` resolves
edits into an effective primitive view without mutating the originals.

Models persist in the chunked little-endian ``IVRG`` binary format
(magic, version, flags, tagged chunks, trailing CRC32).
"""

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagic,
    ChecksumMismatch,
    MixedStage,
    OutOfRange,
    ShapeMismatch,
    VersionUnsupported,
)
from .gaussians import GaussianGeometry, ShColor
from .rasterizer import rasterize_forward
from .shading import LightConfig, Palette, ShadingAttributes, shade_gaussians
from .vq import QUANTIZED_ATTRIBUTES, Codebook, dequantize_model
from ._mathutil import inv_sigmoid, sigmoid

STAGE_BASE = "base"
STAGE_EDITABLE = "editable"

MAGIC = b"IVRG"
FORMAT_VERSION = 1
FLAG_QUANTIZED = 1
FLAG_COMPOSED = 2

_GEOMETRY_ATTRS = ("q_raw", "log_s", "o_logit")
_SHADING_ATTRS = ("delta_c", "k_a_raw", "k_d_raw", "k_s_raw", "log_beta")
_ATTR_COMPONENTS = {
    "q_raw": 4,
    "log_s": 3,
    "o_logit": 1,
    "delta_c": 3,
    "k_a_raw": 1,
    "k_d_raw": 1,
    "k_s_raw": 1,
    "log_beta": 1,
}


@dataclass
class BasicSceneModel:
    """One trained basic scene: geometry plus stage-dependent color data."""

    stage: str
    geometry: GaussianGeometry
    sh: ShColor = None
    shading: ShadingAttributes = None
    palette: Palette = None
    quantized: dict = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stage not in (STAGE_BASE, STAGE_EDITABLE):
            raise OutOfRange(f"unknown stage {self.stage!r}")
        n = len(self.geometry)
        if self.stage == STAGE_BASE:
            if self.sh is None or self.shading is not None:
                raise MixedStage("base stage carries SH colors only")
            if self.sh.coefficients.shape[0] != n:
                raise ShapeMismatch("SH coefficient count != primitive count")
        else:
            if self.sh is not None:
                raise MixedStage("editable stage must not carry SH data")
            if self.palette is None:
                raise MixedStage("editable stage requires a palette")
            if self.quantized is None:
                if self.shading is None or len(self.shading) != n:
                    raise ShapeMismatch("shading attribute count != primitive count")

    def __len__(self):
        return len(self.geometry)

    @property
    def is_quantized(self):
        return self.quantized is not None

    def copy(self):
        return BasicSceneModel(
            stage=self.stage,
            geometry=self.geometry.copy(),
            sh=ShColor(self.sh.coefficients.copy(), self.sh.degree)
            if self.sh is not None
            else None,
            shading=self.shading.copy() if self.shading is not None else None,
            palette=self.palette.copy() if self.palette is not None else None,
            quantized={k: (Codebook(cb.name, cb.centroids.copy()), idx.copy())
                       for k, (cb, idx) in self.quantized.items()}
            if self.quantized is not None
            else None,
            metadata=dict(self.metadata),
        )


@dataclass
class EditState:
    """Per-scene edits: optional palette recolor and an opacity scale."""

    palette_override: np.ndarray = None
    opacity_scale: float = 1.0

    def __post_init__(self):
        if self.palette_override is not None:
            self.palette_override = np.asarray(
                self.palette_override, dtype=np.float64
            ).reshape(3)
            if np.any((self.palette_override < 0) | (self.palette_override > 1)):
                raise OutOfRange("palette override components must lie in [0, 1]")
        self.opacity_scale = float(self.opacity_scale)
        if self.opacity_scale < 0:
            raise OutOfRange("opacity scale must be >= 0")

    def copy(self):
        return EditState(
            None if self.palette_override is None else self.palette_override.copy(),
            self.opacity_scale,
        )

    def to_dict(self):
        return {
            "palette_override": None
            if self.palette_override is None
            else self.palette_override.tolist(),
            "opacity_scale": self.opacity_scale,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("palette_override"), d.get("opacity_scale", 1.0))


@dataclass
class ComposedScene:
    """Ordered basic models with per-scene edits and a global light."""

    models: list
    edits: list
    light: LightConfig
    transform: dict = None  # fitted appearance-transform parameters, if any

    def __post_init__(self):
        if len(self.edits) != len(self.models):
            raise ShapeMismatch("one edit state per basic model required")

    @classmethod
    def compose(cls, models, light=None):
        """Concatenate editable basic models; quantized inputs are
        dequantized first.  No re-optimization happens."""
        if any(m.stage != STAGE_EDITABLE for m in models):
            raise MixedStage("only editable-stage models compose")
        models = [dequantize_model(m) if m.is_quantized else m.copy() for m in models]
        return cls(models, [EditState() for _ in models], light or LightConfig())

    @property
    def count(self):
        return sum(len(m) for m in self.models)

    @property
    def scene_ids(self):
        return np.concatenate(
            [np.full(len(m), i, dtype=np.int64) for i, m in enumerate(self.models)]
        )

    def copy(self):
        return ComposedScene(
            [m.copy() for m in self.models],
            [e.copy() for e in self.edits],
            self.light.copy(),
            dict(self.transform) if self.transform is not None else None,
        )


@dataclass
class EffectiveScene:
    """Immutable edit-resolved snapshot ready for rendering."""

    geometry: GaussianGeometry
    shading: ShadingAttributes
    palette_rgb: np.ndarray  # (N, 3) per-splat palette color
    light: LightConfig
    scene_ids: np.ndarray


def apply_edits(scene):
    """Resolve a composed scene's edits into effective primitives.

    Effective palette = per-scene override or original; effective opacity =
    clamp01(opacity_scale * mapped opacity); term scales and light come from
    the scene's LightConfig.  Pure: the stored models are never touched.
    """
    geometry = GaussianGeometry.concat([m.geometry for m in scene.models])
    shading = ShadingAttributes.concat([m.shading for m in scene.models])
    palette_rows = []
    for m, e in zip(scene.models, scene.edits):
        c_p = e.palette_override if e.palette_override is not None else m.palette.c_p
        palette_rows.append(np.broadcast_to(c_p, (len(m), 3)))
    palette_rgb = np.concatenate(palette_rows, axis=0)

    scales = np.concatenate(
        [np.full(len(m), e.opacity_scale) for m, e in zip(scene.models, scene.edits)]
    )
    if not np.all(scales == 1.0):
        geometry = geometry.copy()
        opacity = np.clip(scales * sigmoid(geometry.o_logit), 1e-12, 1.0 - 1e-9)
        geometry.o_logit = inv_sigmoid(opacity)

    return EffectiveScene(
        geometry=geometry,
        shading=shading,
        palette_rgb=palette_rgb,
        light=scene.light.copy(),
        scene_ids=scene.scene_ids,
    )


def render_composed(scene, cam, channels=("color", "alpha"), attrs=None, dtype=np.float32, sequential=False):
    """Shade and rasterize a composed scene for one camera."""
    eff = apply_edits(scene)
    rgb, _, _ = shade_gaussians(eff.geometry, eff.shading, eff.palette_rgb, eff.light, cam)
    out, _ = rasterize_forward(
        eff.geometry, rgb, cam, channels=channels, attrs=attrs,
        dtype=dtype, sequential=sequential,
    )
    return out


# ------------------------------------------------------------ IVRG file


def _f32_bytes(arr):
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _chunk(tag, payload):
    return tag + struct.pack("<Q", len(payload)) + payload


def _json_bytes(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _model_meta(model):
    meta = {"stage": model.stage, "count": len(model), "metadata": model.metadata}
    if model.stage == STAGE_BASE:
        meta["sh_degree"] = int(model.sh.degree)
    meta["has_palette"] = model.palette is not None
    return meta


def _raw_attribute_payload(model):
    parts = [
        _f32_bytes(getattr(model.geometry, a)) for a in _GEOMETRY_ATTRS
    ]
    if model.stage == STAGE_BASE:
        parts.append(_f32_bytes(model.sh.coefficients))
    else:
        parts += [_f32_bytes(getattr(model.shading, a)) for a in _SHADING_ATTRS]
    return b"".join(parts)


def _quantized_payload(model):
    parts = []
    for name, _ in QUANTIZED_ATTRIBUTES:
        cb, idx = model.quantized[name]
        parts.append(struct.pack("<I", cb.k))
        parts.append(_f32_bytes(cb.centroids))
        dtype = "<u1" if cb.k <= 256 else "<u2"
        parts.append(np.ascontiguousarray(idx, dtype=dtype).tobytes())
    return b"".join(parts)


def save_model(obj, path):
    """Serialize a basic model or composed scene to the IVRG format."""
    if isinstance(obj, ComposedScene):
        flags = FLAG_COMPOSED
        models = obj.models
        meta = {
            "kind": "composed",
            "models": [_model_meta(m) for m in models],
            "light": obj.light.to_dict(),
        }
        edit_doc = [e.to_dict() for e in obj.edits]
        if obj.transform is not None:
            edit_doc = {"edits": edit_doc, "transform": obj.transform}
        edit_payload = _json_bytes(edit_doc)
    else:
        flags = FLAG_QUANTIZED if obj.is_quantized else 0
        models = [obj]
        meta = {"kind": "basic", "models": [_model_meta(obj)]}
        edit_payload = None

    geom_parts = []
    for m in models:
        geom_parts.append(_f32_bytes(m.geometry.mu))
        geom_parts.append(_f32_bytes(m.geometry.n_raw))
    palt = b"".join(
        _f32_bytes(m.palette.c_p if m.palette is not None else np.zeros(3))
        for m in models
    )

    body = MAGIC + struct.pack("<HH", FORMAT_VERSION, flags)
    body += _chunk(b"META", _json_bytes(meta))
    body += _chunk(b"PALT", palt)
    body += _chunk(b"GEOM", b"".join(geom_parts))
    if flags & FLAG_QUANTIZED:
        body += _chunk(b"QATT", _quantized_payload(obj))
    else:
        body += _chunk(b"RAWA", b"".join(_raw_attribute_payload(m) for m in models))
    if edit_payload is not None:
        body += _chunk(b"EDIT", edit_payload)
    body += struct.pack("<I", zlib.crc32(body))
    with open(path, "wb") as f:
        f.write(body)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise ChecksumMismatch("file truncated inside a chunk")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def f32(self, shape):
        n = int(np.prod(shape))
        return (
            np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float64).reshape(shape)
        )


def load_model(path):
    """Load an IVRG file into a BasicSceneModel or ComposedScene."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 12 or data[:4] != MAGIC:
        raise BadMagic("not an IVRG file")
    version, flags = struct.unpack_from("<HH", data, 4)
    if version != FORMAT_VERSION:
        raise VersionUnsupported(f"IVRG version {version} not supported")
    stored_crc = struct.unpack_from("<I", data, len(data) - 4)[0]
    if zlib.crc32(data[:-4]) != stored_crc:
        raise ChecksumMismatch("CRC32 mismatch: file corrupt or truncated")

    chunks = {}
    r = _Reader(data[8:-4])
    while r.pos < len(r.buf):
        tag = r.take(4)
        (length,) = struct.unpack("<Q", r.take(8))
        chunks[bytes(tag)] = r.take(length)

    meta = json.loads(chunks[b"META"].decode("utf-8"))
    model_metas = meta["models"]
    palt = _Reader(chunks[b"PALT"])
    geom_r = _Reader(chunks[b"GEOM"])

    models = []
    raw_r = _Reader(chunks[b"RAWA"]) if b"RAWA" in chunks else None
    for mm in model_metas:
        n = mm["count"]
        palette_rgb = palt.f32((3,))
        mu = geom_r.f32((n, 3))
        n_raw = geom_r.f32((n, 3))
        palette = Palette(palette_rgb) if mm["has_palette"] else None
        stage = mm["stage"]
        if flags & FLAG_QUANTIZED:
            q_r = _Reader(chunks[b"QATT"])
            quant = {}
            for name, _ in QUANTIZED_ATTRIBUTES:
                (k,) = struct.unpack("<I", q_r.take(4))
                centroids = np.frombuffer(q_r.take(4 * k), dtype="<f4").astype(np.float64)
                comp = _ATTR_COMPONENTS[name]
                dtype = "<u1" if k <= 256 else "<u2"
                width = 1 if k <= 256 else 2
                idx = np.frombuffer(q_r.take(width * n * comp), dtype=dtype)
                idx = idx.reshape((n, comp) if comp > 1 else (n,))
                quant[name] = (Codebook(name, centroids), idx.copy())
            geom = GaussianGeometry(
                mu,
                quant["q_raw"][0].decode(quant["q_raw"][1]),
                quant["log_s"][0].decode(quant["log_s"][1]),
                quant["o_logit"][0].decode(quant["o_logit"][1]),
                n_raw,
            )
            models.append(
                BasicSceneModel(stage, geom, palette=palette, quantized=quant, metadata=mm["metadata"])
            )
            continue
        q_raw = raw_r.f32((n, 4))
        log_s = raw_r.f32((n, 3))
        o_logit = raw_r.f32((n,))
        geom = GaussianGeometry(mu, q_raw, log_s, o_logit, n_raw)
        if stage == STAGE_BASE:
            b = (mm["sh_degree"] + 1) ** 2
            sh = ShColor(raw_r.f32((n, b, 3)), mm["sh_degree"])
            models.append(BasicSceneModel(stage, geom, sh=sh, metadata=mm["metadata"]))
        else:
            shading = ShadingAttributes(
                delta_c=raw_r.f32((n, 3)),
                k_a_raw=raw_r.f32((n,)),
                k_d_raw=raw_r.f32((n,)),
                k_s_raw=raw_r.f32((n,)),
                log_beta=raw_r.f32((n,)),
            )
            models.append(
                BasicSceneModel(stage, geom, shading=shading, palette=palette, metadata=mm["metadata"])
            )

    if flags & FLAG_COMPOSED:
        edit_doc = json.loads(chunks[b"EDIT"].decode("utf-8"))
        transform = None
        if isinstance(edit_doc, dict):
            transform = edit_doc.get("transform")
            edit_doc = edit_doc["edits"]
        edits = [EditState.from_dict(d) for d in edit_doc]
        light = LightConfig.from_dict(meta["light"])
        return ComposedScene(models, edits, light, transform)
    return models[0]
