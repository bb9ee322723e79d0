"""Tile-based forward rasterization and its exact analytic backward pass.

Splats are projected (``gaussians.project_gaussians``), binned into 16x16
pixel tiles, depth-sorted per tile by the projected mean depth, and
alpha-composited front to back.  Every requested channel (color, alpha,
depth, normal, named attributes) is accumulated with the same T_i*alpha_i
weights; alpha itself is composited as a constant-1 channel.

The backward pass replays each pixel's contributor list in reverse,
reconstructing transmittance, and produces exact gradients for all splat
parameters in their unconstrained storage domain.
"""

from dataclasses import dataclass, field

import numpy as np

from voxsplat import _kernels
from voxsplat._kernels import ALPHA_SKIP
from voxsplat._mathutil import normalize_rows_backward, sigmoid
from voxsplat.errors import NonFiniteGradient, ShapeMismatch
from voxsplat.gaussians import Camera, GaussianGeometry, project_backward, project_gaussians

TILE_SIZE = 16


@dataclass
class RenderOutput:
    """Per-pixel maps of one rasterization (all H x W [x k])."""

    color: np.ndarray | None
    alpha: np.ndarray
    depth: np.ndarray | None
    normal: np.ndarray | None
    attr: dict = field(default_factory=dict)
    per_pixel_contrib_count: np.ndarray | None = None


def _channel_layout(channels, attrs):
    """Ordered (name, width) pairs for the packed value matrix."""
    widths = {"color": 3, "alpha": 1, "depth": 1, "normal": 3}
    layout = []
    for name in ("color", "alpha", "depth", "normal"):
        if name in channels:
            layout.append((name, widths[name]))
    if attrs:
        for name, vals in attrs.items():
            vals = np.asarray(vals)
            layout.append((name, 1 if vals.ndim == 1 else vals.shape[1]))
    return layout


def rasterize_forward(geom: GaussianGeometry, colors, cam: Camera,
                      channels=("color", "alpha"), attrs=None,
                      dtype=np.float32, sequential=False):
    """Rasterize and return (RenderOutput, state-for-backward).

    ``colors`` are per-splat rgb already resolved for this camera (SH or
    shading); ``attrs`` maps names to per-splat (N,) or (N,k) values.
    The result is deterministic for any thread count; ``sequential`` is
    accepted for contract parity and does not change the output.
    """
    del sequential  # output is bit-identical either way
    H, W = cam.height, cam.width
    layout = _channel_layout(channels, attrs)
    K = sum(w for _, w in layout)
    n = len(geom)

    out = np.zeros((H, W, K), dtype=dtype)
    contrib = np.zeros((H, W), dtype=np.int32)
    last_pos = np.zeros((H, W), dtype=np.int64)
    t_final = np.ones((H, W), dtype=np.float64)

    state = {
        "geom": geom, "cam": cam, "layout": layout, "dtype": dtype,
        "colors": colors, "attrs": attrs or {}, "n": n,
        "out": out, "contrib": contrib, "last_pos": last_pos, "t_final": t_final,
    }

    if n == 0:
        state["empty"] = True
        return _unpack(out, layout, contrib), state

    proj = project_gaussians(geom, cam)
    opacity = geom.opacity
    mean2d, conic, depth = proj["mean2d"], proj["conic"], proj["depth"]

    # conservative per-splat pixel radius: beyond it alpha < 1/255 for sure
    cov = proj["cov2d"]
    half_tr = 0.5 * (cov[:, 0, 0] + cov[:, 1, 1])
    lam_max = half_tr + np.sqrt(
        np.maximum(0.25 * (cov[:, 0, 0] - cov[:, 1, 1]) ** 2 + cov[:, 0, 1] ** 2, 0.0)
    )
    with np.errstate(invalid="ignore", divide="ignore"):
        cut = np.sqrt(2.0 * np.log(np.maximum(opacity / ALPHA_SKIP, 1.0)))
    radius = np.ceil(np.sqrt(np.maximum(lam_max, 0.0)) * cut) + 1

    visible = proj["valid"] & (opacity >= ALPHA_SKIP) & (radius > 0)

    ntx = (W + TILE_SIZE - 1) // TILE_SIZE
    nty = (H + TILE_SIZE - 1) // TILE_SIZE
    tx0 = np.clip(np.floor((mean2d[:, 0] - radius) / TILE_SIZE), 0, ntx - 1).astype(np.int64)
    tx1 = np.clip(np.floor((mean2d[:, 0] + radius) / TILE_SIZE), 0, ntx - 1).astype(np.int64)
    ty0 = np.clip(np.floor((mean2d[:, 1] - radius) / TILE_SIZE), 0, nty - 1).astype(np.int64)
    ty1 = np.clip(np.floor((mean2d[:, 1] + radius) / TILE_SIZE), 0, nty - 1).astype(np.int64)
    on_screen = (
        (mean2d[:, 0] + radius >= 0) & (mean2d[:, 0] - radius < W)
        & (mean2d[:, 1] + radius >= 0) & (mean2d[:, 1] - radius < H)
    )
    visible &= on_screen

    vis = np.nonzero(visible)[0]
    state.update({"proj": proj, "vis": vis, "ntx": ntx})
    if vis.size == 0:
        state["empty"] = True
        return _unpack(out, layout, contrib), state

    counts = np.where(visible, (tx1 - tx0 + 1) * (ty1 - ty0 + 1), 0)
    offsets = np.zeros(n, dtype=np.int64)
    np.cumsum(counts[:-1], out=offsets[1:])
    total = int(offsets[-1] + counts[-1])
    pair_tile = np.empty(total, dtype=np.int64)
    pair_splat = np.empty(total, dtype=np.int64)
    # invisible splats get zero-count ranges; fill only visible ones
    tx0f, tx1f, ty0f, ty1f = tx0.copy(), tx1.copy(), ty0.copy(), ty1.copy()
    tx1f[~visible] = tx0f[~visible] - 1  # empty loop
    _kernels.fill_pairs(offsets, tx0f, tx1f, ty0f, ty1f, ntx, pair_tile, pair_splat)

    order = np.lexsort((depth[pair_splat], pair_tile))
    pair_tile = pair_tile[order]
    pair_splat = pair_splat[order]
    tile_ranges = np.searchsorted(pair_tile, np.arange(ntx * nty + 1)).astype(np.int64)

    # packed per-splat channel values
    values = np.zeros((n, K), dtype=dtype)
    col = 0
    for name, w in layout:
        if name == "color":
            values[:, col:col + 3] = np.asarray(colors, dtype=dtype)
        elif name == "alpha":
            values[:, col] = 1.0
        elif name == "depth":
            values[:, col] = depth.astype(dtype)
        elif name == "normal":
            values[:, col:col + 3] = geom.normals.astype(dtype)
        else:
            v = np.asarray(state["attrs"][name], dtype=dtype)
            values[:, col:col + w] = v.reshape(n, w)
        col += w

    kmean2d = mean2d.astype(dtype)
    kconic = conic.astype(dtype)
    kopacity = opacity.astype(dtype)
    _kernels.composite_forward(
        tile_ranges, pair_splat, kmean2d, kconic, kopacity, values,
        W, H, TILE_SIZE, ntx, out, contrib, last_pos, t_final,
    )

    state.update({
        "pair_splat": pair_splat, "tile_ranges": tile_ranges,
        "values": values, "kmean2d": kmean2d, "kconic": kconic,
        "kopacity": kopacity, "empty": False,
    })
    return _unpack(out, layout, contrib), state


def _unpack(out, layout, contrib):
    maps = {}
    col = 0
    for name, w in layout:
        m = out[:, :, col:col + w]
        maps[name] = m[:, :, 0] if w == 1 else m
        col += w
    return RenderOutput(
        color=maps.get("color"),
        alpha=maps.get("alpha", np.zeros(out.shape[:2], dtype=out.dtype)),
        depth=maps.get("depth"),
        normal=maps.get("normal"),
        attr={k: v for k, v in maps.items()
              if k not in ("color", "alpha", "depth", "normal")},
        per_pixel_contrib_count=contrib,
    )


def rasterize_backward(state, d_maps):
    """Exact gradients of the forward pass.

    ``d_maps`` maps channel names (as in the forward) to upstream gradient
    arrays.  Returns a dict with gradients in the unconstrained storage
    domain: d_mu, d_q_raw, d_log_s, d_o_logit, d_n_raw, plus d_colors and
    d_attrs for the caller's color/attribute chain rules.
    """
    geom = state["geom"]
    cam = state["cam"]
    n = state["n"]
    layout = state["layout"]
    H, W = cam.height, cam.width

    grads = {
        "d_mean2d": np.zeros((n, 2)),
        "d_mu": np.zeros((n, 3)), "d_q_raw": np.zeros((n, 4)),
        "d_log_s": np.zeros((n, 3)), "d_o_logit": np.zeros(n),
        "d_n_raw": np.zeros((n, 3)), "d_colors": np.zeros((n, 3)),
        "d_attrs": {name: np.zeros(np.asarray(v).shape)
                    for name, v in state["attrs"].items()},
    }
    if state.get("empty"):
        return grads

    K = state["values"].shape[1]
    d_out = np.zeros((H, W, K), dtype=np.float64)
    col = 0
    for name, w in layout:
        if name in d_maps and d_maps[name] is not None:
            g = np.asarray(d_maps[name], dtype=np.float64)
            want = (H, W) if w == 1 else (H, W, w)
            if g.shape != want:
                raise ShapeMismatch(f"gradient for {name}: {g.shape} != {want}")
            d_out[:, :, col:col + w] = g.reshape(H, W, w)
        col += w

    pair_splat = state["pair_splat"]
    P = pair_splat.shape[0]
    pair_dv = np.zeros((P, K), dtype=np.float64)
    pair_dmean = np.zeros((P, 2), dtype=np.float64)
    pair_dconic = np.zeros((P, 3), dtype=np.float64)
    pair_dopac = np.zeros(P, dtype=np.float64)

    _kernels.composite_backward(
        state["tile_ranges"], pair_splat, state["kmean2d"], state["kconic"],
        state["kopacity"], state["values"], W, H, TILE_SIZE, state["ntx"],
        d_out, state["last_pos"], state["t_final"],
        pair_dv, pair_dmean, pair_dconic, pair_dopac,
    )

    d_values = np.zeros((n, K), dtype=np.float64)
    d_mean2d = np.zeros((n, 2), dtype=np.float64)
    d_conic = np.zeros((n, 3), dtype=np.float64)
    d_opacity = np.zeros(n, dtype=np.float64)
    np.add.at(d_values, pair_splat, pair_dv)
    np.add.at(d_mean2d, pair_splat, pair_dmean)
    np.add.at(d_conic, pair_splat, pair_dconic)
    np.add.at(d_opacity, pair_splat, pair_dopac)

    # conic (a,b,c) -> cov2d: Q = C^-1, dL/dC = -Q (dL/dQ) Q
    proj = state["proj"]
    conic = proj["conic"]
    Q = np.empty((n, 2, 2))
    Q[:, 0, 0], Q[:, 0, 1] = conic[:, 0], conic[:, 1]
    Q[:, 1, 0], Q[:, 1, 1] = conic[:, 1], conic[:, 2]
    dQ = np.empty((n, 2, 2))
    dQ[:, 0, 0] = d_conic[:, 0]
    dQ[:, 0, 1] = dQ[:, 1, 0] = 0.5 * d_conic[:, 1]
    dQ[:, 1, 1] = d_conic[:, 2]
    d_cov2d = -Q @ dQ @ Q

    # depth channel feeds the projection depth gradient
    d_depth = np.zeros(n, dtype=np.float64)
    col = 0
    for name, w in layout:
        sl = d_values[:, col:col + w]
        if name == "color":
            grads["d_colors"] = sl.copy()
        elif name == "depth":
            d_depth = sl[:, 0].copy()
        elif name == "normal":
            grads["d_n_raw"] += normalize_rows_backward(geom.n_raw, sl)
        elif name != "alpha":
            v = state["attrs"][name]
            grads["d_attrs"][name] = sl.reshape(np.asarray(v).shape).copy()
        col += w

    grads["d_mean2d"] = d_mean2d
    pg = project_backward(proj, d_mean2d, d_cov2d, d_depth)
    grads["d_mu"] += pg["d_mu"]
    grads["d_q_raw"] += pg["d_q_raw"]
    grads["d_log_s"] += pg["d_log_s"]
    o = sigmoid(geom.o_logit)
    grads["d_o_logit"] += d_opacity * o * (1.0 - o)

    for key in ("d_mu", "d_q_raw", "d_log_s", "d_o_logit", "d_n_raw", "d_colors"):
        arr = grads[key]
        if not np.all(np.isfinite(arr)):
            bad = int(np.nonzero(~np.isfinite(arr.reshape(len(geom), -1)).all(axis=1))[0][0])
            raise NonFiniteGradient(key, bad)
    return grads


def render_attribute_map(geom: GaussianGeometry, attr_values, cam: Camera,
                         dtype=np.float32):
    """Composite a per-splat scalar/vector attribute with the same
    transmittance-times-alpha weights as the color channels."""
    out, _ = rasterize_forward(
        geom, None, cam, channels=("alpha",), attrs={"attr": np.asarray(attr_values)},
        dtype=dtype,
    )
    return out.attr["attr"]
