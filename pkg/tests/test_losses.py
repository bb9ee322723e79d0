"""Tests for the loss functions: closed-form examples, independent
oracles (reference SSIM implementation, brute-force loops), and
finite-difference gradient checks."""

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from voxsplat.errors import ShapeMismatch
from voxsplat.gaussians import Camera
from voxsplat.losses import (
    LossWeights,
    bilateral_smoothness,
    normal_consistency_loss,
    offset_sparsity_loss,
    opacity_l1_loss,
    photometric_loss,
    pseudo_normal_from_depth,
    ssim,
)


def _reference_ssim(x, y):
    return structural_similarity(
        x,
        y,
        channel_axis=-1 if x.ndim == 3 else None,
        gaussian_weights=True,
        sigma=1.5,
        use_sample_covariance=False,
        data_range=1.0,
    )


def _fd_check(loss_fn, x, d_x, eps=1e-6, rel=1e-3, samples=40, seed=0):
    """Spot-check an analytic gradient against central differences."""
    rng = np.random.default_rng(seed)
    flat = x.reshape(-1)
    g = d_x.reshape(-1)
    idx = rng.choice(flat.size, size=min(samples, flat.size), replace=False)
    for i in idx:
        saved = flat[i]
        flat[i] = saved + eps
        f1 = loss_fn(x)
        flat[i] = saved - eps
        f0 = loss_fn(x)
        flat[i] = saved
        numeric = (f1 - f0) / (2 * eps)
        assert abs(g[i] - numeric) <= rel * max(1.0, abs(numeric)), (i, g[i], numeric)


# ---------------------------------------------------------------- ssim


def test_ssim_of_identical_images_is_one():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (20, 24, 3))
    v, d = ssim(x, x)
    assert np.isclose(v, 1.0)


def test_ssim_matches_reference_implementation():
    rng = np.random.default_rng(1)
    for shape in [(16, 16), (24, 20, 3), (32, 32, 4)]:
        x = rng.uniform(0, 1, shape)
        y = np.clip(x + rng.normal(0, 0.1, shape), 0, 1)
        v, _ = ssim(x, y)
        assert abs(v - _reference_ssim(x, y)) < 1e-6


def test_ssim_is_symmetric():
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 1, (18, 18, 3))
    y = rng.uniform(0, 1, (18, 18, 3))
    assert abs(ssim(x, y)[0] - ssim(y, x)[0]) < 1e-9


def test_ssim_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    x = rng.uniform(0.2, 0.8, (14, 13, 2))
    y = rng.uniform(0.2, 0.8, (14, 13, 2))
    _, d = ssim(x, y)
    _fd_check(lambda a: ssim(a, y)[0], x, d)


def test_ssim_rejects_small_or_mismatched_images():
    with pytest.raises(ShapeMismatch):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))
    with pytest.raises(ShapeMismatch):
        ssim(np.zeros((16, 16)), np.zeros((16, 17)))


# ---------------------------------------------------------- photometric


def test_photometric_zero_for_identical_inputs():
    rng = np.random.default_rng(4)
    img = rng.uniform(0, 1, (16, 16, 4))
    loss, d = photometric_loss(img, img)
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(d, 0.0)


def test_photometric_constant_offset_closed_form():
    gt = np.full((16, 16, 4), 0.4)
    pred = gt.copy()
    pred[..., 1] += 0.1
    loss, _ = photometric_loss(pred, gt, LossWeights(ssim_weight=0.0))
    assert loss == pytest.approx(0.8 * 0.1 * 0.25, rel=1e-12)


def test_photometric_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    gt = rng.uniform(0.2, 0.8, (14, 14, 4))
    pred = gt + rng.normal(0, 0.05, gt.shape)
    _, d = photometric_loss(pred, gt)
    _fd_check(lambda a: photometric_loss(a, gt)[0], pred, d)


def test_zero_weight_removes_term_gradient_exactly():
    rng = np.random.default_rng(6)
    gt = rng.uniform(0, 1, (16, 16, 4))
    pred = rng.uniform(0, 1, (16, 16, 4))
    _, d_l1_only = photometric_loss(pred, gt, LossWeights(ssim_weight=0.0))
    expected = 0.8 * np.sign(pred - gt) / pred.size
    assert np.array_equal(d_l1_only, expected)


# -------------------------------------------------------- pseudo normal


def _identity_camera(w=32, h=32):
    return Camera(np.zeros(3), np.eye(3), fov_y=0.9, width=w, height=h)


def _plane_depth(cam, plane_normal, plane_dist):
    """Depth of the plane n.P = dist along each pixel ray (camera space)."""
    w, h = cam.width, cam.height
    px, py = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    cx, cy = cam.center_px
    d = np.stack([(px - cx) / cam.focal, (py - cy) / cam.focal, np.ones((h, w))], -1)
    return plane_dist / (d @ plane_normal)


def test_frontoparallel_plane_normal_points_at_camera():
    cam = _identity_camera()
    depth = np.full((32, 32), 3.0)
    n, mask = pseudo_normal_from_depth(depth, np.ones((32, 32)), cam)
    assert mask.all()
    assert np.allclose(n, np.array([0.0, 0.0, -1.0]), atol=1e-9)


def test_slanted_plane_normal_matches_analytic():
    cam = _identity_camera()
    m = np.array([0.3, -0.2, 1.0])
    m /= np.linalg.norm(m)
    depth = _plane_depth(cam, m, 2.5)
    n, _ = pseudo_normal_from_depth(depth, np.ones_like(depth), cam)
    # oriented toward the camera: the plane faces the origin along -m
    assert np.allclose(n, -m, atol=1e-4)


def test_zero_alpha_pixels_are_masked_with_zero_normal():
    cam = _identity_camera()
    depth = np.full((32, 32), 2.0)
    alpha = np.ones((32, 32))
    alpha[:8] = 0.0
    n, mask = pseudo_normal_from_depth(depth, alpha, cam)
    assert not mask[:8].any() and mask[8:].all()
    assert np.all(n[:8] == 0.0)
    loss, _ = normal_consistency_loss(np.zeros_like(n), n, mask)
    loss_full, _ = normal_consistency_loss(
        np.zeros_like(n)[8:], n[8:], mask[8:]
    )
    assert loss == pytest.approx(loss_full)


def test_world_frame_conversion_uses_camera_rotation():
    cam = Camera.look_at((0.0, -4.0, 0.0), (0.0, 0.0, 0.0), 0.9, 32, 32)
    depth = np.full((32, 32), 4.0)
    n, _ = pseudo_normal_from_depth(depth, np.ones((32, 32)), cam)
    # plane faces the camera: world-space normal is the backward axis
    assert np.allclose(n[16, 16], np.array([0.0, -1.0, 0.0]), atol=1e-9)


# --------------------------------------------------- normal consistency


def test_normal_consistency_examples_and_gradient():
    n = np.zeros((4, 4, 3))
    t = np.zeros((4, 4, 3))
    mask = np.zeros((4, 4), bool)
    mask[1, 2] = True
    loss, _ = normal_consistency_loss(n, t, mask)
    assert loss == 0.0
    n[1, 2] = [0.3, 0.0, 0.4]
    loss, _ = normal_consistency_loss(n, t, mask)
    assert loss == pytest.approx(0.5)

    rng = np.random.default_rng(7)
    n = rng.normal(size=(10, 10, 3))
    t = rng.normal(size=(10, 10, 3))
    mask = rng.uniform(size=(10, 10)) > 0.3
    _, d = normal_consistency_loss(n, t, mask)
    _fd_check(lambda a: normal_consistency_loss(a, t, mask)[0], n, d)


# ------------------------------------------------- bilateral smoothness


def _bilateral_oracle(k, c):
    """Direct double-loop evaluation of the edge-aware smoothness term."""
    h, w = k.shape[:2]
    k3 = k if k.ndim == 3 else k[..., None]
    total = 0.0
    for i in range(h):
        for j in range(w):
            gk = 0.0
            gc = 0.0
            if j + 1 < w:
                gk += np.sum(np.abs(k3[i, j + 1] - k3[i, j]))
                gc += np.sum(np.abs(c[i, j + 1] - c[i, j]))
            if i + 1 < h:
                gk += np.sum(np.abs(k3[i + 1, j] - k3[i, j]))
                gc += np.sum(np.abs(c[i + 1, j] - c[i, j]))
            total += gk * np.exp(-gc)
    return total / (h * w)


def test_bilateral_constant_map_is_zero():
    c = np.random.default_rng(8).uniform(0, 1, (10, 10, 3))
    loss, d = bilateral_smoothness(np.full((10, 10), 0.7), c)
    assert loss == 0.0
    assert np.all(d == 0.0)


def test_bilateral_step_edge_closed_form():
    h = w = 10
    k = np.zeros((h, w))
    k[:, 5:] = 1.0  # unit step between columns 4 and 5
    c = np.full((h, w, 3), 0.5)
    loss, _ = bilateral_smoothness(k, c)
    assert loss == pytest.approx(h * 1.0 / (h * w))


def test_bilateral_matches_double_loop_oracle():
    rng = np.random.default_rng(9)
    k = rng.uniform(0, 1, (9, 11))
    c = rng.uniform(0, 1, (9, 11, 3))
    loss, d = bilateral_smoothness(k, c)
    assert loss == pytest.approx(_bilateral_oracle(k, c), abs=1e-6)
    _fd_check(lambda a: bilateral_smoothness(a, c)[0], k, d)


# ------------------------------------------------------- regularizers


def test_offset_sparsity_and_opacity_regularizers():
    loss, d = offset_sparsity_loss(np.zeros((8, 8, 3)))
    assert loss == 0.0

    loss, _ = opacity_l1_loss(np.full(50, -100.0))
    assert loss == pytest.approx(0.0, abs=1e-30)

    rng = np.random.default_rng(10)
    m = rng.normal(size=(6, 7, 3))
    loss, d = offset_sparsity_loss(m)
    assert loss == pytest.approx(np.abs(m).mean())
    _fd_check(lambda a: offset_sparsity_loss(a)[0], m, d)

    logits = rng.normal(size=30)
    loss, d = opacity_l1_loss(logits)
    assert loss == pytest.approx(np.mean(1 / (1 + np.exp(-logits))))
    _fd_check(lambda a: opacity_l1_loss(a)[0], logits, d)
