"""Image-quality metrics: PSNR and CIE-LUV perceptual difference maps."""

import numpy as np

from .errors import ShapeMismatch

PSNR_CAP = 99.0

# sRGB -> XYZ (D65 reference white), IEC 61966-2-1
_SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_WHITE_XYZ = _SRGB_TO_XYZ @ np.ones(3)


def psnr(a, b):
    """10*log10(1/MSE) over the rgb channels, capped at 99 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"psnr inputs differ: {a.shape} vs {b.shape}")
    if a.ndim == 3 and a.shape[2] >= 3:
        a, b = a[..., :3], b[..., :3]
    mse = np.mean((a - b) ** 2)
    if mse <= 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def _srgb_to_linear(c):
    c = np.clip(np.asarray(c, dtype=np.float64), 0.0, 1.0)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def srgb_to_luv(rgb):
    """Convert (..., 3) sRGB in [0,1] to CIE 1976 L*u*v* (D65 white)."""
    lin = _srgb_to_linear(rgb)
    xyz = lin @ _SRGB_TO_XYZ.T
    X, Y, Z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    Xn, Yn, Zn = _WHITE_XYZ

    yr = Y / Yn
    eps, kappa = (6.0 / 29.0) ** 3, (29.0 / 3.0) ** 3
    L = np.where(yr > eps, 116.0 * np.cbrt(yr) - 16.0, kappa * yr)

    denom = X + 15.0 * Y + 3.0 * Z
    denom_n = Xn + 15.0 * Yn + 3.0 * Zn
    safe = np.where(denom > 0.0, denom, 1.0)
    up = np.where(denom > 0.0, 4.0 * X / safe, 4.0 * Xn / denom_n)
    vp = np.where(denom > 0.0, 9.0 * Y / safe, 9.0 * Yn / denom_n)
    upn = 4.0 * Xn / denom_n
    vpn = 9.0 * Yn / denom_n

    u = 13.0 * L * (up - upn)
    v = 13.0 * L * (vp - vpn)
    return np.stack([L, u, v], axis=-1)


def luv_distance(a, b):
    """Per-pixel Euclidean distance between two sRGB images in LUV space."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"luv inputs differ: {a.shape} vs {b.shape}")
    if a.ndim >= 1 and a.shape[-1] >= 3:
        a, b = a[..., :3], b[..., :3]
    return np.linalg.norm(srgb_to_luv(a) - srgb_to_luv(b), axis=-1)


# Low-to-high difference ramp: purple -> green -> red (sRGB anchors).
_RAMP = np.array([
    [0.5, 0.0, 0.5],
    [0.0, 0.8, 0.0],
    [1.0, 0.0, 0.0],
])


def difference_colormap(values):
    """Map values in [0, 1] through the purple->green->red ramp."""
    t = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    low = (t < 0.5)[..., None]
    lo = np.where(low, _RAMP[0], _RAMP[1])
    hi = np.where(low, _RAMP[1], _RAMP[2])
    f = np.where(t < 0.5, 2.0 * t, 2.0 * t - 1.0)[..., None]
    return lo + f * (hi - lo)


def luv_difference_image(a, b, max_distance=100.0):
    """Color-mapped per-pixel LUV distance heatmap (H, W, 3) in [0,1].

    Distances are normalized by ``max_distance`` before the ramp; 100 is
    the L* span of the space, so only gross differences saturate to red.
    """
    d = luv_distance(a, b)
    return difference_colormap(d / max_distance)
