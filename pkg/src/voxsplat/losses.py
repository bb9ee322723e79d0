"""Training objectives and regularizers, each with analytic gradients.

The photometric objective is a weighted sum of L1 and structural
similarity on the RGBA stack.  Supporting regularizers: a normal
consistency term against a pseudo-normal derived from the depth map, a
bilateral smoothness penalty on rendered attribute maps, an L1 sparsity
penalty on the rendered color-offset map, and an L1 opacity penalty.
"""

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve

from .errors import ShapeMismatch
from ._mathutil import sigmoid

SSIM_SIGMA = 1.5
SSIM_RADIUS = 5  # 11x11 window
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

_offsets = np.arange(-SSIM_RADIUS, SSIM_RADIUS + 1, dtype=np.float64)
_KERNEL_1D = np.exp(-(_offsets**2) / (2.0 * SSIM_SIGMA**2))
_KERNEL_1D /= _KERNEL_1D.sum()


@dataclass
class LossWeights:
    """Default weighting of the total training objective."""

    l1_weight: float = 0.8
    ssim_weight: float = 0.2
    normal_consistency: float = 0.01
    opacity_l1: float = 0.1
    offset_sparsity: float = 0.01
    bilateral_smoothness: float = 0.01

    def __post_init__(self):
        for f in self.__dataclass_fields__:
            if getattr(self, f) < 0:
                raise ValueError(f"loss weight {f} must be >= 0")


def _filter_valid(img):
    """Gaussian-window local mean, keeping only fully-supported pixels."""
    t = convolve(img, _KERNEL_1D[:, None], mode="valid")
    return convolve(t, _KERNEL_1D[None, :], mode="valid")


def _filter_adjoint(d):
    """Adjoint of :func:`_filter_valid`: scatter back to full resolution."""
    t = convolve(d, _KERNEL_1D[:, None], mode="full")
    return convolve(t, _KERNEL_1D[None, :], mode="full")


def ssim(x, y):
    """Mean structural similarity over channels, with gradient w.r.t. ``x``.

    Uses an 11x11 Gaussian window (sigma 1.5) evaluated only where the
    window fits entirely inside the image, population statistics, and
    stabilizers C1 = 0.01^2, C2 = 0.03^2 on a [0, 1] dynamic range.
    Inputs are (H, W) or (H, W, C); returns (value, d_value/d_x).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatch(f"ssim inputs differ: {x.shape} vs {y.shape}")
    squeeze = x.ndim == 2
    if squeeze:
        x, y = x[..., None], y[..., None]
    h, w, nc = x.shape
    win = 2 * SSIM_RADIUS + 1
    if h < win or w < win:
        raise ShapeMismatch(f"image {h}x{w} smaller than the {win}x{win} ssim window")

    total = 0.0
    d_x = np.zeros_like(x)
    n_valid = (h - win + 1) * (w - win + 1)
    for c in range(nc):
        xc, yc = x[..., c], y[..., c]
        ux = _filter_valid(xc)
        uy = _filter_valid(yc)
        uxx = _filter_valid(xc * xc)
        uyy = _filter_valid(yc * yc)
        uxy = _filter_valid(xc * yc)
        vx = uxx - ux * ux
        vy = uyy - uy * uy
        vxy = uxy - ux * uy

        a1 = 2.0 * ux * uy + SSIM_C1
        a2 = 2.0 * vxy + SSIM_C2
        b1 = ux * ux + uy * uy + SSIM_C1
        b2 = vx + vy + SSIM_C2
        s = (a1 * a2) / (b1 * b2)
        total += s.mean()

        up = 1.0 / (n_valid * nc)
        ds_da1 = a2 / (b1 * b2) * up
        ds_da2 = a1 / (b1 * b2) * up
        ds_db1 = -s / b1 * up
        ds_db2 = -s / b2 * up
        d_uxy = 2.0 * ds_da2
        d_uxx = ds_db2
        d_ux = 2.0 * uy * ds_da1 + 2.0 * ux * ds_db1 - 2.0 * ux * ds_db2 - uy * d_uxy
        d_x[..., c] = (
            _filter_adjoint(d_ux)
            + 2.0 * xc * _filter_adjoint(d_uxx)
            + yc * _filter_adjoint(d_uxy)
        )

    value = total / nc
    if squeeze:
        d_x = d_x[..., 0]
    return value, d_x


def photometric_loss(pred_rgba, gt_rgba, weights=None):
    """w_l1 * L1 + w_ssim * (1 - SSIM) over the 4-channel RGBA stack.

    Returns (loss, gradient w.r.t. ``pred_rgba``).
    """
    if weights is None:
        weights = LossWeights()
    pred = np.asarray(pred_rgba, dtype=np.float64)
    gt = np.asarray(gt_rgba, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")

    diff = pred - gt
    l1 = np.mean(np.abs(diff))
    d_pred = weights.l1_weight * np.sign(diff) / diff.size
    loss = weights.l1_weight * l1
    if weights.ssim_weight > 0.0:
        s, d_s = ssim(pred, gt)
        loss += weights.ssim_weight * (1.0 - s)
        d_pred = d_pred - weights.ssim_weight * d_s
    return loss, d_pred


def pseudo_normal_from_depth(depth, alpha, cam, alpha_threshold=1e-3):
    """World-space pseudo-normals from a depth map under local planarity.

    Each pixel and its +x/+y neighbors are back-projected to camera space;
    the cross product of the two in-plane differences gives the normal,
    oriented toward the camera.  Border pixels fall back to backward
    differences.  Returns (normals (H, W, 3), mask (H, W) bool) where the
    mask excludes pixels with alpha at or below ``alpha_threshold``.
    """
    depth = np.asarray(depth, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if depth.shape != alpha.shape:
        raise ShapeMismatch(f"depth {depth.shape} vs alpha {alpha.shape}")
    h, w = depth.shape
    px, py = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    cx, cy = cam.center_px
    f = cam.focal
    pts = np.stack(
        [(px - cx) * depth / f, (py - cy) * depth / f, depth], axis=-1
    )

    # forward differences with a backward fallback on the last row/column
    dx = np.empty_like(pts)
    dx[:, :-1] = pts[:, 1:] - pts[:, :-1]
    dx[:, -1] = pts[:, -1] - pts[:, -2]
    dy = np.empty_like(pts)
    dy[:-1] = pts[1:] - pts[:-1]
    dy[-1] = pts[-1] - pts[-2]

    n = np.cross(dx, dy)
    norms = np.linalg.norm(n, axis=-1, keepdims=True)
    good = norms[..., 0] > 1e-12
    n = np.where(good[..., None], n / np.maximum(norms, 1e-12), 0.0)
    # orient toward the camera (camera sits at the origin of camera space)
    facing_away = np.sum(n * pts, axis=-1) > 0.0
    n[facing_away] = -n[facing_away]

    n_world = n @ cam.rotation  # row vectors times R == R^T applied per pixel
    mask = (alpha > alpha_threshold) & good
    n_world[~mask] = 0.0
    return n_world, mask


def normal_consistency_loss(normal_map, target, mask):
    """Mean per-pixel L2 distance between normal maps over masked-in pixels.

    The target is treated as a constant; the gradient flows only to
    ``normal_map``.  Returns (loss, d/d normal_map).
    """
    n = np.asarray(normal_map, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if n.shape != t.shape:
        raise ShapeMismatch(f"normal maps differ: {n.shape} vs {t.shape}")
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    d_n = np.zeros_like(n)
    if count == 0:
        return 0.0, d_n
    diff = (n - t)[mask]
    norms = np.linalg.norm(diff, axis=-1)
    loss = norms.sum() / count
    safe = norms > 1e-12
    g = np.zeros_like(diff)
    g[safe] = diff[safe] / norms[safe, None] / count
    d_n[mask] = g
    return loss, d_n


def _forward_diff_abs(img):
    """Per-pixel L1 magnitude of forward differences, summed over channels."""
    img = img if img.ndim == 3 else img[..., None]
    gx = np.zeros(img.shape[:2])
    gy = np.zeros(img.shape[:2])
    gx[:, :-1] = np.sum(np.abs(img[:, 1:] - img[:, :-1]), axis=-1)
    gy[:-1] = np.sum(np.abs(img[1:] - img[:-1]), axis=-1)
    return gx + gy


def bilateral_smoothness(attr_map, gt_color, mask=None):
    """Edge-aware smoothness: mean over pixels of |grad K| * exp(-|grad c_gt|).

    Gradients in x and y are forward differences; both magnitudes are L1
    over components and directions.  Returns (loss, d/d attr_map).
    """
    k = np.asarray(attr_map, dtype=np.float64)
    c = np.asarray(gt_color, dtype=np.float64)
    if k.shape[:2] != c.shape[:2]:
        raise ShapeMismatch(f"attribute {k.shape} vs color {c.shape}")
    if mask is None:
        mask = np.ones(k.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    d_k = np.zeros_like(k)
    if count == 0:
        return 0.0, d_k

    weight = np.exp(-_forward_diff_abs(c)) * mask / count
    k3 = k if k.ndim == 3 else k[..., None]
    d3 = d_k if d_k.ndim == 3 else d_k[..., None]

    gx = k3[:, 1:] - k3[:, :-1]
    gy = k3[1:] - k3[:-1]
    loss = float(
        np.sum(np.abs(gx).sum(-1) * weight[:, :-1])
        + np.sum(np.abs(gy).sum(-1) * weight[:-1])
    )
    sx = np.sign(gx) * weight[:, :-1, None]
    sy = np.sign(gy) * weight[:-1, :, None]
    d3[:, 1:] += sx
    d3[:, :-1] -= sx
    d3[1:] += sy
    d3[:-1] -= sy
    return loss, d_k


def offset_sparsity_loss(offset_map):
    """Mean absolute value of the rendered color-offset map, with gradient."""
    m = np.asarray(offset_map, dtype=np.float64)
    loss = float(np.mean(np.abs(m)))
    return loss, np.sign(m) / m.size


def opacity_l1_loss(o_logit):
    """Mean mapped opacity over primitives; gradient w.r.t. the logits."""
    o_logit = np.asarray(o_logit, dtype=np.float64)
    o = sigmoid(o_logit)
    loss = float(o.mean())
    return loss, o * (1.0 - o) / o.size
