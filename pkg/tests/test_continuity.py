import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from normint.continuity import (
    WeightParams,
    bilateral_weight,
    bilateral_weights,
    build_edge_coefficients,
    continuity_residual,
    edge_residuals,
    edge_weights,
    log_ratio_bini,
    log_ratio_milano,
    outlier_weight,
    ray_alignment,
    total_edge_weight,
)
from normint.errors import DegenerateEdge
from normint.geometry import CameraIntrinsics, ray_at, subpixel_ray
from normint.graph import build_pixel_graph
from normint.synth import SceneSpec, render_scene
from normint.geometry import logdepth_from_depth

from conftest import random_normal_map

DOWN_Z = np.array([0.0, 0.0, -1.0])


def test_weight_params_validation():
    with pytest.raises(ValueError):
        WeightParams(k=0)
    with pytest.raises(ValueError):
        WeightParams(outlier_low=1e-3, outlier_high=1e-5)
    with pytest.raises(ValueError):
        WeightParams(reweighting_mode="sometimes")


def test_log_ratio_bini_fronto_parallel_is_zero():
    intr = CameraIntrinsics(500, 500, 320, 240)
    assert log_ratio_bini(DOWN_Z, (100, 80), (1, 0), intr) == 0.0
    assert log_ratio_bini(DOWN_Z, (100, 80), (0, -1), intr) == 0.0


def _pixel_surface_normal(z_of_u, dz_du, u, v, intr):
    """Normal of the surface z(u) * tau(u, v) from its tangent vectors."""
    z = z_of_u(u)
    tau = ray_at(intr, u, v)
    p_u = dz_du(u) * tau + z * np.array([1 / intr.fx, 0, 0])
    p_v = z * np.array([0, 1 / intr.fy, 0])
    n = np.cross(p_u, p_v)
    n /= np.linalg.norm(n)
    if np.dot(n, tau) > 0:
        n = -n
    return n


def test_log_ratio_bini_slanted_surface_matches_log_depth_difference():
    # Depth linear in the pixel coordinate: z = 1 + 0.001 (u - cx).
    intr = CameraIntrinsics(500, 500, 320, 240)
    eps = 1e-3
    z_of_u = lambda u: 1.0 + eps * (u - intr.cx)
    dz_du = lambda u: eps
    for u_a, v_a, direction in [(320, 240, (1, 0)), (400, 200, (1, 0)),
                                (250, 300, (-1, 0))]:
        n_a = _pixel_surface_normal(z_of_u, dz_du, u_a, v_a, intr)
        omega = log_ratio_bini(n_a, (u_a, v_a), direction, intr)
        u_b = u_a + direction[0]
        expected = math.log(z_of_u(u_a)) - math.log(z_of_u(u_b))
        assert omega == pytest.approx(expected, abs=1e-5)


def test_log_ratio_bini_degenerate_denominator():
    intr = CameraIntrinsics(500, 500, 320, 240)
    with pytest.raises(DegenerateEdge):
        log_ratio_bini(np.array([1.0, 0.0, 0.0]), (320, 240), (1, 0), intr)


def test_log_ratio_bini_requires_axis_direction():
    intr = CameraIntrinsics(500, 500, 320, 240)
    with pytest.raises(ValueError):
        log_ratio_bini(DOWN_Z, (0, 0), (1, 1), intr)


def test_log_ratio_milano_fronto_parallel_is_zero():
    unit_z = np.array([0.0, 0.0, 1.0])
    assert log_ratio_milano(DOWN_Z, DOWN_Z, unit_z, unit_z, unit_z) == 0.0


def test_log_ratio_milano_equal_products_is_zero():
    intr = CameraIntrinsics(100, 100, 0, 0)
    tau_a = ray_at(intr, 3, 4)
    tau_b = ray_at(intr, 4, 4)
    tau_m = subpixel_ray(intr, (3, 4), (4, 4))
    # identical normals make the argument exactly one on a plane-free check
    n = np.array([0.1, -0.2, -0.9])
    n /= np.linalg.norm(n)
    got = log_ratio_milano(n, n, tau_a, tau_a, tau_a)
    assert got == 0.0
    assert abs(log_ratio_milano(n, n, tau_a, tau_b, tau_m)) < 1e-2


def test_log_ratio_milano_degenerate():
    with pytest.raises(DegenerateEdge):
        log_ratio_milano(
            np.array([1.0, 0.0, 0.0]),
            DOWN_Z,
            np.array([0.0, 0.0, 1.0]),
            np.array([0.0, 0.0, 1.0]),
            np.array([0.0, 0.0, 1.0]),
        )


def test_milano_matches_analytic_plane_depth():
    # On an analytic slanted plane the central-camera ratio is exact.
    scene = render_scene(SceneSpec("slanted_plane", 32, 32))
    g = build_pixel_graph(scene.normal_map, 8)
    coeffs = build_edge_coefficients(scene.normal_map, g, scene.intrinsics)
    z = logdepth_from_depth(scene.depth, scene.mask).values.ravel()
    chi = edge_residuals(coeffs, z)
    assert coeffs.valid.all()
    assert np.abs(chi).max() < 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_milano_antisymmetry(seed):
    rng = np.random.default_rng(seed)
    nmap = random_normal_map(rng, 4, 4)
    intr = CameraIntrinsics(50, 60, 1.5, 2.0)
    g = build_pixel_graph(nmap, 8)
    co = build_edge_coefficients(nmap, g, intr)
    assert np.all(co.omega_to_a + co.omega_to_b == 0.0)
    # scalar evaluation in both directions agrees with the sign flip
    a, b = g.edges[0]
    ca = (a % 4, a // 4)
    cb = (b % 4, b // 4)
    n = nmap.normals.reshape(-1, 3)
    tau_a, tau_b = ray_at(intr, *ca), ray_at(intr, *cb)
    tau_m = subpixel_ray(intr, ca, cb)
    fwd = log_ratio_milano(n[a], n[b], tau_a, tau_b, tau_m)
    rev = log_ratio_milano(n[b], n[a], tau_b, tau_a, tau_m)
    assert fwd + rev == pytest.approx(0.0, abs=1e-12)


def test_vectorized_milano_matches_scalar(rng):
    nmap = random_normal_map(rng, 5, 6, mask_prob=0.9)
    intr = CameraIntrinsics(40, 55, 2.5, 2.0)
    g = build_pixel_graph(nmap, 8)
    co = build_edge_coefficients(nmap, g, intr)
    n = nmap.normals.reshape(-1, 3)
    w = g.width
    for i in range(g.edge_count):
        a, b = g.edges[i]
        ca, cb = (a % w, a // w), (b % w, b // w)
        tau_a, tau_b = ray_at(intr, *ca), ray_at(intr, *cb)
        tau_m = subpixel_ray(intr, ca, cb)
        try:
            expect = log_ratio_milano(n[a], n[b], tau_a, tau_b, tau_m)
            assert co.valid[i]
            assert co.omega_to_a[i] == pytest.approx(expect, rel=1e-12)
        except DegenerateEdge:
            assert not co.valid[i]


def test_vectorized_bini_matches_scalar(rng):
    nmap = random_normal_map(rng, 5, 6, mask_prob=0.9)
    intr = CameraIntrinsics(40, 55, 2.5, 2.0)
    g = build_pixel_graph(nmap, 4)
    co = build_edge_coefficients(nmap, g, intr, model="bini")
    n = nmap.normals.reshape(-1, 3)
    w = g.width
    for i in range(g.edge_count):
        a, b = g.edges[i]
        ca, cb = (a % w, a // w), (b % w, b // w)
        direction = (cb[0] - ca[0], cb[1] - ca[1])
        back = (-direction[0], -direction[1])
        try:
            exp_a = log_ratio_bini(n[a], ca, direction, intr)
            exp_b = log_ratio_bini(n[b], cb, back, intr)
            assert co.valid[i]
            assert co.omega_to_a[i] == pytest.approx(exp_a, rel=1e-12)
            assert co.omega_to_b[i] == pytest.approx(exp_b, rel=1e-12)
        except DegenerateEdge:
            assert not co.valid[i]


def test_bini_diagonal_edges_invalid(rng):
    nmap = random_normal_map(rng, 4, 4)
    intr = CameraIntrinsics(40, 40, 1.5, 1.5)
    g = build_pixel_graph(nmap, 8)
    co = build_edge_coefficients(nmap, g, intr, model="bini")
    du = (g.edges[:, 1] % 4) - (g.edges[:, 0] % 4)
    dv = (g.edges[:, 1] // 4) - (g.edges[:, 0] // 4)
    diagonal = (np.abs(du) + np.abs(dv)) == 2
    assert not co.valid[diagonal].any()


def test_ray_alignment_examples():
    assert ray_alignment(DOWN_Z, np.array([0, 0, 1.0]), 500) == pytest.approx(500)
    assert ray_alignment(np.array([1.0, 0, 0]), np.array([0, 0, 1.0]), 500) == 0
    sixty = np.deg2rad(60)
    n = np.array([np.sin(sixty), 0, -np.cos(sixty)])
    assert ray_alignment(n, np.array([0, 0, 1.0]), 100) == pytest.approx(50.0)


def test_ray_alignment_normalizes_ray():
    # non-unit ray: the cosine uses the unit direction
    got = ray_alignment(DOWN_Z, np.array([3.0, 0, 4.0]), 10)
    assert got == pytest.approx(10 * 4 / 5)


def test_bilateral_weight_balanced_is_half():
    assert bilateral_weight(0.0, 0.3, 0.3, gamma=2.0, k=2.0) == pytest.approx(0.5)


def test_bilateral_weight_example():
    # sigma_2 evaluated at (0.1^2 - 0.3^2) = -0.08
    expect = 1.0 / (1.0 + math.exp(2 * 0.08))
    got = bilateral_weight(0.0, 0.3, 0.1, gamma=1.0, k=2.0)
    assert got == pytest.approx(expect, abs=1e-12)
    assert got == pytest.approx(0.46007, abs=1e-4)


def test_bilateral_weight_missing_opposite():
    assert bilateral_weight(0.0, 0.3, None, gamma=1.0, k=2.0) == 0.5


def test_bilateral_weight_discontinuity_limit():
    w = bilateral_weight(0.0, 0.5, 0.001, gamma=100.0, k=2.0)
    assert w < 1e-9


@given(
    st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2),
    st.floats(0.01, 20), st.floats(0.1, 5),
)
def test_bilateral_weight_complement(z_a, z_b, z_opp, gamma, k):
    w1 = bilateral_weight(z_a, z_b, z_opp, gamma, k)
    w2 = bilateral_weight(z_a, z_opp, z_b, gamma, k)
    assert w1 + w2 == pytest.approx(1.0, abs=1e-12)


def test_total_edge_weight_examples():
    assert total_edge_weight(0.0, 0.9) == 0.0
    assert total_edge_weight(1.0, 0.5) == 0.5
    assert total_edge_weight(50.0, 0.46007) == pytest.approx(1150.2, abs=0.1)


def test_outlier_weight_endpoints():
    params = WeightParams(outlier_low=1e-5, outlier_high=1e-3)
    hi = outlier_weight(1e-3, params)
    lo = outlier_weight(1e-5, params)
    assert hi == pytest.approx(1.0 / (1.0 + math.exp(4.0)), abs=1e-12)
    assert hi == pytest.approx(0.0180, abs=1e-3)
    assert lo == pytest.approx(1.0 / (1.0 + math.exp(-4.0)), abs=1e-12)
    assert lo == pytest.approx(0.9820, abs=1e-3)
    assert outlier_weight(1e-4, params) == pytest.approx(0.5, abs=1e-12)


def test_outlier_weight_modes():
    params = WeightParams(reweighting_mode="hard")
    assert outlier_weight(1e-3, params) == 0.0
    assert outlier_weight(9.9e-4, params) == 1.0
    off = WeightParams(reweighting_mode="off")
    assert outlier_weight(123.0, off) == 1.0
    soft = WeightParams()
    assert np.isfinite(outlier_weight(0.0, soft))
    assert outlier_weight(0.0, soft) > 0.999


@given(st.floats(1e-12, 1e3), st.floats(1.0, 100.0))
def test_outlier_weight_monotone(chi, factor):
    params = WeightParams()
    assert outlier_weight(chi * factor, params) <= outlier_weight(chi, params) + 1e-15


def test_continuity_residual_examples():
    assert continuity_residual(0.0, 0.0, 0.0) == 0.0
    assert continuity_residual(1.0, 0.3, 0.7) == pytest.approx(0.0)
    assert continuity_residual(0.5, 0.1, 0.1) == pytest.approx(0.3)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-1, 1), st.floats(-10, 10))
def test_continuity_residual_gauge_invariant(z_a, z_b, omega, shift):
    base = continuity_residual(z_a, z_b, omega)
    shifted = continuity_residual(z_a + shift, z_b + shift, omega)
    assert shifted == pytest.approx(base, abs=1e-12)


def test_edge_weights_zero_on_invalid(rng):
    nmap = random_normal_map(rng, 4, 5)
    intr = CameraIntrinsics(30, 30, 2.0, 2.0)
    g = build_pixel_graph(nmap, 8)
    co = build_edge_coefficients(nmap, g, intr)
    z = rng.normal(size=g.width * g.height)
    w_a, w_b = edge_weights(co, z, k=2.0)
    assert np.all(w_a[~co.valid] == 0)
    assert np.all(w_b[~co.valid] == 0)
    assert np.all(w_a >= 0) and np.all(w_b >= 0)


def test_bilateral_weights_match_scalar(rng):
    nmap = random_normal_map(rng, 4, 5, mask_prob=0.85)
    intr = CameraIntrinsics(30, 30, 2.0, 2.0)
    g = build_pixel_graph(nmap, 8)
    co = build_edge_coefficients(nmap, g, intr)
    z = rng.normal(size=g.width * g.height)
    w_a, w_b = bilateral_weights(co, z, k=2.0)
    for i in range(g.edge_count):
        a, b = co.edges[i]
        opp = co.opp_a[i]
        expect = bilateral_weight(
            z[a], z[b], None if opp < 0 else z[opp], co.gamma_a[i], 2.0
        )
        assert w_a[i] == pytest.approx(expect, rel=1e-12)


def test_opposite_ids_are_point_reflections(rng):
    nmap = random_normal_map(rng, 5, 5, mask_prob=0.8)
    intr = CameraIntrinsics(30, 30, 2.0, 2.0)
    g = build_pixel_graph(nmap, 8)
    co = build_edge_coefficients(nmap, g, intr)
    w = g.width
    mask = nmap.mask.ravel()
    for i in range(g.edge_count):
        a, b = co.edges[i]
        ru = 2 * (a % w) - (b % w)
        rv = 2 * (a // w) - (b // w)
        if 0 <= ru < w and 0 <= rv < 5 and mask[rv * w + ru]:
            assert co.opp_a[i] == rv * w + ru
        else:
            assert co.opp_a[i] == -1
