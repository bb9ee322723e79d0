"""Tests for Blinn-Phong splat shading: worked examples, symmetry
properties, the image-level term decomposition, and finite-difference
validation of the analytic backward pass."""

import numpy as np
import pytest

from voxsplat.errors import OutOfRange
from voxsplat.gaussians import Camera, GaussianGeometry
from voxsplat.rasterizer import rasterize_forward
from voxsplat.shading import (
    LightConfig,
    Palette,
    ShadingAttributes,
    blinn_phong,
    light_direction_from_angles,
    resolve_light_direction,
    shade_backward,
    shade_gaussians,
)

from oracles import random_scene


def _camera(position=(0.0, 0.0, 5.0), target=(0.0, 0.0, 0.0)):
    return Camera.look_at(position, target, fov_y=0.8, width=32, height=32)


def _random_attrs(rng, n):
    return ShadingAttributes(
        delta_c=rng.uniform(-0.2, 0.2, (n, 3)),
        k_a_raw=rng.normal(0.0, 1.0, n),
        k_d_raw=rng.normal(0.0, 1.0, n),
        k_s_raw=rng.normal(0.0, 1.0, n),
        log_beta=rng.uniform(0.5, 2.5, n),
    )


def test_headlight_direction_points_at_camera():
    cam = _camera(position=(0.0, 0.0, 5.0))
    light = LightConfig(mode="headlight")
    l = resolve_light_direction(light, cam, np.zeros(3))
    assert np.allclose(l, [0.0, 0.0, 1.0])


def test_orbital_direction_convention():
    cam = _camera()
    assert np.allclose(
        resolve_light_direction(LightConfig("orbital", 0.0, 0.0), cam, np.zeros(3)),
        [1.0, 0.0, 0.0],
    )
    for polar, azimuth in [(0.3, -1.2), (-0.7, 2.0), (1.2, 0.4)]:
        l = light_direction_from_angles(polar, azimuth)
        expected = [
            np.cos(polar) * np.cos(azimuth),
            np.cos(polar) * np.sin(azimuth),
            np.sin(polar),
        ]
        assert np.allclose(l, expected)
        assert np.isclose(np.linalg.norm(l), 1.0)


def test_headlight_light_equals_view_equals_halfway():
    rng = np.random.default_rng(0)
    geom = random_scene(rng, 20)
    attrs = _random_attrs(rng, 20)
    cam = _camera(position=(1.0, -2.0, 4.0))
    _, _, cache = shade_gaussians(geom, attrs, Palette((0.5, 0.5, 0.5)), LightConfig(), cam)
    assert np.array_equal(cache["l"], cache["v"])
    assert np.array_equal(cache["h"], cache["v"])


def test_worked_scalar_example():
    # Arrange unit vectors with n.l = 0.5 and n.h = 0.9, where h is the
    # normalized halfway vector the formula derives from (v, l).
    n = np.array([0.0, 0.0, 1.0])
    l = np.array([np.sqrt(3) / 2, 0.0, 0.5])
    h = np.array([np.sqrt(0.19), 0.0, 0.9])
    c = 2.0 * np.dot(h, l)
    v = c * h - l
    assert np.isclose(np.linalg.norm(v), 1.0)

    c_v = np.array([0.5, 0.0, 0.0]) + np.array([0.1, 0.0, 0.0])
    rgb, amb, dif, spec = blinn_phong(
        c_v, n, l, v, np.array(0.2), np.array(0.5), np.array(0.3), np.array(8.0)
    )
    expected = (
        0.2 * np.array([0.6, 0.0, 0.0])
        + 0.5 * np.array([0.6, 0.0, 0.0]) * 0.5
        + 0.3 * np.ones(3) * 0.9**8
    )
    assert np.allclose(rgb, expected, atol=1e-12)
    assert np.allclose(amb, [0.12, 0.0, 0.0])
    assert np.isclose(0.9**8, 0.43046721)


def test_normal_perpendicular_to_light_leaves_only_ambient():
    n = np.array([0.0, 0.0, 1.0])
    l = np.array([1.0, 0.0, 0.0])
    v = np.array([0.0, 1.0, 0.0])
    c_v = np.array([0.3, 0.6, 0.9])
    rgb, amb, dif, spec = blinn_phong(
        c_v, n, l, v, np.array(0.4), np.array(0.7), np.array(0.8), np.array(5.0)
    )
    assert np.allclose(dif, 0.0)
    assert np.allclose(spec, 0.0)
    assert np.allclose(rgb, 0.4 * c_v)


def test_headlight_normal_parallel_to_view_gives_pure_specular_weight():
    n = np.array([0.0, 0.0, 1.0])
    v = n
    rgb, _, _, spec = blinn_phong(
        np.zeros(3), n, v, v, np.array(0.0), np.array(0.0), np.array(0.25), np.array(17.0)
    )
    assert np.allclose(spec, 0.25 * np.ones(3))
    assert np.allclose(rgb, 0.25 * np.ones(3))


def test_negating_normals_leaves_color_unchanged():
    rng = np.random.default_rng(1)
    geom = random_scene(rng, 30)
    attrs = _random_attrs(rng, 30)
    palette = Palette((0.4, 0.5, 0.6))
    light = LightConfig("orbital", 0.4, -1.0)
    cam = _camera(position=(3.0, 1.0, 2.0))
    rgb, _, _ = shade_gaussians(geom, attrs, palette, light, cam)
    flipped = geom.copy()
    flipped.n_raw = -flipped.n_raw
    rgb2, _, _ = shade_gaussians(flipped, attrs, palette, light, cam)
    assert np.allclose(rgb, rgb2, atol=1e-12)


def test_recolor_scales_color_linearly_without_specular():
    rng = np.random.default_rng(2)
    geom = random_scene(rng, 25)
    attrs = _random_attrs(rng, 25)
    attrs.delta_c[:] = 0.0
    attrs.k_s_raw[:] = -50.0  # specular weight vanishes
    cam = _camera()
    light = LightConfig()
    rgb1, _, _ = shade_gaussians(geom, attrs, Palette((0.8, 0.4, 0.2)), light, cam)
    rgb2, _, _ = shade_gaussians(geom, attrs, Palette((0.4, 0.2, 0.1)), light, cam)
    assert np.allclose(rgb2, 0.5 * rgb1, atol=1e-12)


def test_term_scales_multiply_individual_terms():
    rng = np.random.default_rng(3)
    geom = random_scene(rng, 15)
    attrs = _random_attrs(rng, 15)
    palette = Palette((0.5, 0.3, 0.7))
    cam = _camera()
    _, base, _ = shade_gaussians(geom, attrs, palette, LightConfig(), cam)
    _, scaled, _ = shade_gaussians(
        geom, attrs, palette, LightConfig(term_scales=(2.0, 1.0, 1.0, 1.0)), cam
    )
    assert np.allclose(scaled["ambient"], 2.0 * base["ambient"])
    assert np.allclose(scaled["diffuse"], base["diffuse"])
    assert np.allclose(scaled["specular"], base["specular"])


def test_shade_matches_core_formula_on_identical_inputs():
    rng = np.random.default_rng(4)
    geom = random_scene(rng, 20)
    attrs = _random_attrs(rng, 20)
    palette = Palette((0.4, 0.5, 0.6))
    cam = _camera(position=(2.0, 2.0, 3.0))
    light = LightConfig("orbital", 0.2, 0.9)
    rgb, _, cache = shade_gaussians(geom, attrs, palette, light, cam)
    c_v = np.clip(palette.c_p[None, :] + attrs.delta_c, 0.0, 1.0)
    rgb_core, _, _, _ = blinn_phong(
        c_v, cache["n"], cache["l"], cache["v"], attrs.k_a, attrs.k_d, attrs.k_s, attrs.beta
    )
    assert np.allclose(rgb, rgb_core, atol=1e-12)


def test_rendered_image_decomposes_into_term_images():
    rng = np.random.default_rng(5)
    geom = random_scene(rng, 60)
    attrs = _random_attrs(rng, 60)
    cam = _camera(position=(0.0, -4.0, 2.0))
    rgb, terms, _ = shade_gaussians(geom, attrs, Palette((0.6, 0.4, 0.5)), LightConfig(), cam)
    full, _ = rasterize_forward(geom, rgb, cam, dtype=np.float64)
    parts = [
        rasterize_forward(geom, terms[t], cam, dtype=np.float64)[0].color
        for t in ("ambient", "diffuse", "specular")
    ]
    assert np.allclose(full.color, parts[0] + parts[1] + parts[2], atol=1e-12)


def test_light_config_validation():
    with pytest.raises(OutOfRange):
        LightConfig(mode="spotlight")
    with pytest.raises(OutOfRange):
        LightConfig("orbital", polar=2.0)
    with pytest.raises(OutOfRange):
        LightConfig("orbital", azimuth=4.0)
    with pytest.raises(OutOfRange):
        LightConfig(term_scales=(1.0, 0.0, 1.0, 1.0))


def test_zero_upstream_gives_zero_gradients():
    rng = np.random.default_rng(6)
    geom = random_scene(rng, 10)
    attrs = _random_attrs(rng, 10)
    _, _, cache = shade_gaussians(geom, attrs, Palette((0.5, 0.5, 0.5)), LightConfig(), _camera())
    grads = shade_backward(cache, np.zeros((10, 3)))
    for g in grads.values():
        assert np.all(np.asarray(g) == 0.0)


def test_specular_weight_gradient_is_highlight_power():
    rng = np.random.default_rng(7)
    geom = random_scene(rng, 1)
    attrs = _random_attrs(rng, 1)
    cam = _camera()
    _, _, cache = shade_gaussians(geom, attrs, Palette((0.5, 0.5, 0.5)), LightConfig(), cam)
    d_rgb = rng.normal(size=(1, 3))
    grads = shade_backward(cache, d_rgb)
    # d rgb / d (effective specular weight) = white * |n.h|^beta, summed
    # against the upstream signal; d_b[2] exposes exactly that sum.
    assert np.isclose(grads["d_b"][2], cache["spow"][0] * d_rgb.sum())


@pytest.mark.parametrize("mode", ["headlight", "orbital"])
def test_gradients_match_finite_differences(mode):
    rng = np.random.default_rng(8)
    n = 8
    geom = random_scene(rng, n)
    attrs = _random_attrs(rng, n)
    palette = Palette((0.45, 0.55, 0.35))
    lam = np.array([1.1, 0.9, 1.2, 0.95])
    b = np.array([0.02, -0.03, 0.05, 0.5])
    light = LightConfig(mode, 0.3, 0.7, term_scales=(1.2, 0.8, 1.1, 0.9))
    cam = _camera(position=(1.0, -3.0, 2.5))
    w = rng.normal(size=(n, 3))

    def loss(geom_, attrs_, palette_, light_, lam_, b_):
        rgb, _, _ = shade_gaussians(
            geom_, attrs_, palette_, light_, cam, coeff_transform=(lam_, b_)
        )
        return float(np.sum(w * rgb))

    _, _, cache = shade_gaussians(geom, attrs, palette, light, cam, coeff_transform=(lam, b))
    grads = shade_backward(cache, w)

    eps = 1e-6

    def check(analytic, bump):
        analytic = float(analytic)
        f0 = bump(-eps)
        f1 = bump(+eps)
        numeric = (f1 - f0) / (2 * eps)
        assert abs(analytic - numeric) <= 1e-3 * max(1.0, abs(numeric)), (
            analytic,
            numeric,
        )

    # per-splat array parameters
    flat_params = [
        ("d_k_a_raw", lambda a: a.k_a_raw),
        ("d_k_d_raw", lambda a: a.k_d_raw),
        ("d_k_s_raw", lambda a: a.k_s_raw),
        ("d_log_beta", lambda a: a.log_beta),
    ]
    for gname, get in flat_params:
        for i in range(n):
            def bump(h, i=i, get=get):
                a2 = attrs.copy()
                get(a2)[i] += h
                return loss(geom, a2, palette, light, lam, b)

            check(grads[gname][i], bump)

    for i in range(n):
        for j in range(3):
            def bump_dc(h, i=i, j=j):
                a2 = attrs.copy()
                a2.delta_c[i, j] += h
                return loss(geom, a2, palette, light, lam, b)

            check(grads["d_delta_c"][i, j], bump_dc)

            def bump_mu(h, i=i, j=j):
                g2 = geom.copy()
                g2.mu[i, j] += h
                return loss(g2, attrs, palette, light, lam, b)

            check(grads["d_mu"][i, j], bump_mu)

            def bump_n(h, i=i, j=j):
                g2 = geom.copy()
                g2.n_raw[i, j] += h
                return loss(g2, attrs, palette, light, lam, b)

            check(grads["d_n_raw"][i, j], bump_n)

    for j in range(3):
        def bump_cp(h, j=j):
            p2 = Palette(palette.c_p.copy())
            p2.c_p[j] += h
            return loss(geom, attrs, p2, light, lam, b)

        check(grads["d_c_p"][j], bump_cp)

    for j in range(4):
        def bump_lam(h, j=j):
            l2 = lam.copy()
            l2[j] += h
            return loss(geom, attrs, palette, light, l2, b)

        check(grads["d_lam"][j], bump_lam)

        def bump_b(h, j=j):
            b2 = b.copy()
            b2[j] += h
            return loss(geom, attrs, palette, light, lam, b2)

        check(grads["d_b"][j], bump_b)

    if mode == "orbital":
        def bump_polar(h):
            l2 = LightConfig(mode, 0.3 + h, 0.7, term_scales=light.term_scales)
            return loss(geom, attrs, palette, l2, lam, b)

        check(grads["d_polar"], bump_polar)

        def bump_azimuth(h):
            l2 = LightConfig(mode, 0.3, 0.7 + h, term_scales=light.term_scales)
            return loss(geom, attrs, palette, l2, lam, b)

        check(grads["d_azimuth"], bump_azimuth)
    else:
        assert grads["d_polar"] == 0.0 and grads["d_azimuth"] == 0.0


def test_transformed_coefficients_clamped_to_valid_ranges():
    rng = np.random.default_rng(11)
    geom = random_scene(rng, 4)
    attrs = _random_attrs(rng, 4)
    palette = Palette((0.5, 0.5, 0.5))
    light = LightConfig(term_scales=(1.5, 2.0, 0.5, 3.0))
    cam = _camera(position=(0.0, -3.0, 0.0))
    # lam = 0 makes each transformed value equal b: 2 -> clamp 1, -1 -> 0,
    # 0.5 stays, and a shininess of 0.2 hits the beta >= 1 floor
    lam = np.zeros(4)
    b = np.array([2.0, -1.0, 0.5, 0.2])
    _, _, cache = shade_gaussians(geom, attrs, palette, light, cam,
                                  coeff_transform=(lam, b))
    k_a, k_d, k_s, beta = cache["k"]
    assert np.allclose(k_a, 1.5 * 1.0)
    assert np.allclose(k_d, 0.0)
    assert np.allclose(k_s, 0.5 * 0.5)
    assert np.allclose(beta, 3.0 * 1.0)
    # clamped coefficients pass no gradient back through lam or b
    grads = shade_backward(cache, np.ones((4, 3)))
    assert grads["d_lam"][0] == 0.0 and grads["d_b"][0] == 0.0
    assert grads["d_lam"][1] == 0.0 and grads["d_b"][1] == 0.0
    assert grads["d_lam"][2] != 0.0
    assert grads["d_lam"][3] == 0.0 and grads["d_b"][3] == 0.0
