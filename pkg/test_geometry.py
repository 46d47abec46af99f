#!/usr/bin/env python3
"""
Tests for the geometry kernels

Covariance construction, pose composition, object-to-world transforms, the
Fourier appearance series, SH color evaluation, EWA projection, and the
analytic reverse passes checked against central differences.
"""

import numpy as np
import pytest

from geometry.appearance import (SH_C0, SH_C1, COLOR_OFFSET, sh_basis, eval_fourier_sh,
                                 eval_sh_color, eval_sh_color_backward, fourier_weights)
from geometry.camera import Camera, look_at, project_gaussian, project_gaussians, \
    project_gaussians_backward, LOW_PASS_DILATION
from geometry.transforms import (build_covariance, build_covariances, build_covariances_backward,
                                 normalize_quaternions, quaternion_to_rotation, rotation_z,
                                 effective_pose, object_to_world, is_rotation)
from scene.pose import PoseTrack
from utils.errors import ValidationError


def random_quaternions(rng, n):
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def central_difference(fn, x, h=1e-4):
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        plus, minus = x.copy(), x.copy()
        plus[idx] += h
        minus[idx] -= h
        grad[idx] = (fn(plus) - fn(minus)) / (2 * h)
    return grad


def simple_camera(width=64, height=48, f=50.0):
    return Camera(f, f, width / 2, height / 2, np.eye(3), np.zeros(3), width, height)


# --- covariance -----------------------------------------------------------

def test_unit_scale_identity_quaternion_gives_identity():
    assert np.array_equal(build_covariance([0, 0, 0], [1, 0, 0, 0]), np.eye(3))


def test_axis_aligned_scale_squares():
    cov = build_covariance([np.log(2.0), 0, 0], [1, 0, 0, 0])
    assert np.allclose(cov, np.diag([4.0, 1.0, 1.0]), atol=1e-14)


def test_covariance_matches_dense_product_and_is_psd():
    rng = np.random.default_rng(0)
    log_scales = rng.normal(0, 1, (100, 3))
    quats = rng.standard_normal((100, 4))
    covs = build_covariances(log_scales, quats)
    for i in range(100):
        q = quats[i] / np.linalg.norm(quats[i])
        w, x, y, z = q
        rot = np.array([[1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)]])
        s = np.diag(np.exp(log_scales[i]))
        expected = rot @ s @ s.T @ rot.T
        assert np.allclose(covs[i], expected, rtol=0, atol=1e-12 * max(1.0, np.abs(expected).max()))
        assert np.allclose(covs[i], covs[i].T)
        assert np.linalg.eigvalsh(covs[i]).min() >= -1e-12 * max(1.0, np.abs(expected).max())


def test_zero_quaternion_rejected():
    with pytest.raises(ValidationError):
        normalize_quaternions(np.zeros((1, 4)))


def test_covariance_backward_matches_finite_differences():
    rng = np.random.default_rng(1)
    log_scales = rng.normal(0, 0.3, (3, 3))
    quats = rng.standard_normal((3, 4))
    upstream = rng.standard_normal((3, 3, 3))
    g_scales, g_quats = build_covariances_backward(log_scales, quats, upstream)

    num_scales = central_difference(lambda s: np.sum(build_covariances(s, quats) * upstream), log_scales)
    num_quats = central_difference(lambda q: np.sum(build_covariances(log_scales, q) * upstream), quats)
    assert np.allclose(g_scales, num_scales, rtol=1e-3, atol=1e-6)
    assert np.allclose(g_quats, num_quats, rtol=1e-3, atol=1e-6)


# --- poses ----------------------------------------------------------------

def make_track(rng, n=5):
    rotations = np.stack([rotation_z(a) for a in rng.uniform(-np.pi, np.pi, n)])
    return PoseTrack(rotations, rng.normal(0, 5, (n, 3)), [4.0, 2.0, 1.5], np.ones(n, dtype=bool))


def test_zero_delta_returns_tracked_pose_exactly():
    track = make_track(np.random.default_rng(2))
    rot, trans = effective_pose(track, 2)
    assert np.array_equal(rot, track.rotations[2])
    assert np.array_equal(trans, track.translations[2])


def test_quarter_turn_maps_x_to_y():
    track = PoseTrack(np.eye(3)[None], np.zeros((1, 3)), [1, 1, 1], [True],
                      delta_yaws=[np.pi / 2])
    rot, _ = effective_pose(track, 0)
    assert np.allclose(rot @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_effective_pose_matches_homogeneous_composition():
    rng = np.random.default_rng(3)
    track = make_track(rng)
    track.delta_translations = rng.normal(0, 0.5, (5, 3))
    track.delta_yaws = rng.normal(0, 0.2, 5)
    for t in range(5):
        pose = np.eye(4)
        pose[:3, :3], pose[:3, 3] = track.rotations[t], track.translations[t]
        shift = np.eye(4)
        shift[:3, 3] = track.delta_translations[t]
        yaw = np.eye(4)
        yaw[:3, :3] = rotation_z(track.delta_yaws[t])
        expected = shift @ pose @ yaw
        rot, trans = effective_pose(track, t)
        assert np.allclose(rot, expected[:3, :3], atol=1e-12)
        assert np.allclose(trans, expected[:3, 3], atol=1e-12)


def test_effective_pose_rejects_invalid_frame():
    track = PoseTrack(np.stack([np.eye(3)] * 2), np.zeros((2, 3)), [1, 1, 1], [True, False])
    with pytest.raises(ValidationError):
        effective_pose(track, 1)
    with pytest.raises(ValidationError):
        effective_pose(track, 2)


def test_track_rejects_reflection():
    with pytest.raises(ValidationError, match="invalid rotation"):
        PoseTrack(np.diag([1.0, 1.0, -1.0])[None], np.zeros((1, 3)), [1, 1, 1], [True])


def test_object_to_world_identity_and_quarter_turn():
    quat = np.array([[1.0, 0, 0, 0]])
    means = np.array([[1.0, 0, 0]])
    world, rot = object_to_world(means, quat, (np.eye(3), np.zeros(3)))
    assert np.array_equal(world, means)
    assert np.array_equal(rot[0], np.eye(3))
    world, _ = object_to_world(means, quat, (rotation_z(np.pi / 2), np.zeros(3)))
    assert np.allclose(world, [[0, 1, 0]], atol=1e-15)


def test_object_covariance_conjugates_by_pose_rotation():
    rng = np.random.default_rng(4)
    log_scales = rng.normal(0, 0.5, (10, 3))
    quats = random_quaternions(rng, 10)
    pose_rot = quaternion_to_rotation(random_quaternions(rng, 1))[0]
    _, world_rot = object_to_world(np.zeros((10, 3)), quats, (pose_rot, np.zeros(3)))
    scales = np.exp(log_scales)
    composed = (world_rot * scales[:, None, :]) @ np.swapaxes(world_rot * scales[:, None, :], 1, 2)
    oracle = pose_rot @ build_covariances(log_scales, quats) @ pose_rot.T
    assert np.allclose(composed, oracle, atol=1e-12)


def test_is_rotation_tolerance():
    assert is_rotation(rotation_z(0.3))
    assert not is_rotation(np.diag([1.0, 1.0, -1.0]))
    assert not is_rotation(np.eye(3) * 1.001)


# --- appearance -------------------------------------------------------------

def test_fourier_constant_term_only():
    rng = np.random.default_rng(5)
    coeffs = rng.normal(size=(1, 4, 3))
    for t in range(6):
        assert np.array_equal(eval_fourier_sh(coeffs, t, 6), coeffs[0])


def test_fourier_at_time_zero_sums_terms():
    coeffs = np.random.default_rng(6).normal(size=(5, 4, 3))
    assert np.allclose(eval_fourier_sh(coeffs, 0, 10), coeffs.sum(axis=0), atol=1e-12)


def test_fourier_matches_direct_summation_and_is_linear():
    rng = np.random.default_rng(7)
    f, g = rng.normal(size=(5, 4, 3)), rng.normal(size=(5, 4, 3))
    n_frames = 12
    for t in range(n_frames):
        direct = sum(f[i] * np.cos(i * np.pi * t / n_frames) for i in range(5))
        assert np.allclose(eval_fourier_sh(f, t, n_frames), direct, atol=1e-12)
        combined = eval_fourier_sh(2.0 * f - 0.5 * g, t, n_frames)
        separate = 2.0 * eval_fourier_sh(f, t, n_frames) - 0.5 * eval_fourier_sh(g, t, n_frames)
        assert np.allclose(combined, separate, atol=1e-12)


def test_fourier_rejects_bad_order():
    with pytest.raises(ValidationError):
        fourier_weights(0, 10, 0)


def test_degree_zero_reproduces_color_in_every_direction():
    color = np.array([0.2, 0.5, 0.9])
    z = ((color - COLOR_OFFSET) / SH_C0)[None]
    rng = np.random.default_rng(8)
    for d in rng.normal(size=(10, 3)):
        assert np.allclose(eval_sh_color(z, d, 0), color, atol=1e-12)


def test_degree_one_is_odd():
    rng = np.random.default_rng(9)
    z = np.zeros((4, 3))
    z[1:] = rng.normal(0, 0.1, (3, 3))
    d = rng.normal(size=3)
    up = eval_sh_color(z, d, 1) - COLOR_OFFSET
    down = eval_sh_color(z, -d, 1) - COLOR_OFFSET
    assert np.allclose(up, -down, atol=1e-12)


def test_sh_basis_matches_closed_forms():
    rng = np.random.default_rng(10)
    d = rng.normal(size=(64, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    x, y, z = d.T
    basis = sh_basis(d, 3)
    pi = np.pi
    assert np.allclose(basis[:, 0], 0.5 * np.sqrt(1 / pi), atol=1e-10)
    assert np.allclose(basis[:, 2], np.sqrt(3 / (4 * pi)) * z, atol=1e-10)
    assert np.allclose(basis[:, 1], -np.sqrt(3 / (4 * pi)) * y, atol=1e-10)
    assert np.allclose(basis[:, 6], 0.25 * np.sqrt(5 / pi) * (3 * z * z - 1), atol=1e-10)
    assert np.allclose(basis[:, 8], 0.25 * np.sqrt(15 / pi) * (x * x - y * y), atol=1e-10)
    assert np.allclose(np.abs(basis[:, 15]), np.abs(0.25 * np.sqrt(35 / (2 * pi)) * x * (x * x - 3 * y * y)),
                       atol=1e-10)
    assert np.allclose(np.abs(basis[:, 12]), np.abs(0.25 * np.sqrt(7 / pi) * z * (5 * z * z - 3)), atol=1e-10)
    assert SH_C1 == pytest.approx(np.sqrt(3 / (4 * pi)))


def test_zero_view_direction_rejected():
    with pytest.raises(ValidationError):
        eval_sh_color(np.zeros((4, 3)), np.zeros(3), 1)


def test_sh_color_backward_matches_finite_differences():
    rng = np.random.default_rng(11)
    z = rng.normal(0, 0.2, (3, 16, 3))
    dirs = rng.normal(size=(3, 3))
    upstream = rng.normal(size=(3, 3))
    g_z, g_dirs = eval_sh_color_backward(z, dirs, 3, upstream)
    num_z = central_difference(lambda v: np.sum(eval_sh_color(v, dirs, 3) * upstream), z)
    num_dirs = central_difference(lambda v: np.sum(eval_sh_color(z, v, 3) * upstream), dirs)
    assert np.allclose(g_z, num_z, rtol=1e-3, atol=1e-6)
    assert np.allclose(g_dirs, num_dirs, rtol=1e-3, atol=1e-6)


# --- projection ---------------------------------------------------------------

def test_camera_rejects_bad_intrinsics():
    with pytest.raises(ValidationError):
        Camera(50, 50, 70, 20, np.eye(3), np.zeros(3), 64, 48)
    with pytest.raises(ValidationError):
        Camera(-1, 50, 32, 24, np.eye(3), np.zeros(3), 64, 48)
    with pytest.raises(ValidationError):
        Camera(50, 50, 32, 24, np.diag([1.0, 1.0, -1.0]), np.zeros(3), 64, 48)


def test_optical_axis_projects_to_principal_point():
    camera = Camera(50, 60, 30.5, 20.25, np.eye(3), np.zeros(3), 64, 48)
    projected = project_gaussian([0, 0, 1.0], np.eye(3) * 1e-4, camera)
    assert np.allclose(projected.mean2d, [30.5, 20.25])
    assert projected.view_depth == 1.0


def test_small_isotropic_gaussian_matches_analytic_footprint():
    camera = simple_camera(f=80.0)
    sigma, depth = 0.05, 10.0
    projected = project_gaussian([0, 0, depth], np.eye(3) * sigma ** 2, camera)
    expected = (80.0 * sigma / depth) ** 2 + LOW_PASS_DILATION
    assert np.allclose(projected.cov2d, np.eye(2) * expected, rtol=1e-6)


def test_projection_behind_camera_is_culled():
    assert project_gaussian([0, 0, -1.0], np.eye(3), simple_camera()) is None
    assert project_gaussian([0, 0, 0.1], np.eye(3), simple_camera()) is None
    assert project_gaussian([100.0, 0, 1.0], np.eye(3), simple_camera()) is None


def test_projected_covariance_matches_numeric_jacobian():
    rng = np.random.default_rng(12)
    camera = Camera(60, 55, 32, 24, quaternion_to_rotation(random_quaternions(rng, 1))[0],
                    rng.normal(0, 0.5, 3), 64, 48)
    for _ in range(10):
        cam_point = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(3, 6)])
        mean = camera.rotation.T @ (cam_point - camera.translation)
        cov = build_covariance(rng.normal(-2, 0.3, 3), random_quaternions(rng, 1)[0])
        batch = project_gaussians(mean[None], cov[None], camera, dilation=0.0)

        def project(point):
            p = camera.world_to_camera(point[None])[0]
            return np.array([camera.fx * p[0] / p[2] + camera.cx, camera.fy * p[1] / p[2] + camera.cy])

        h = 1e-5
        jac = np.stack([(project(mean + h * e) - project(mean - h * e)) / (2 * h) for e in np.eye(3)],
                       axis=1)
        assert np.allclose(batch.cov2d[0], jac @ cov @ jac.T, rtol=1e-4)


def test_projection_invariant_to_rigid_world_transform():
    rng = np.random.default_rng(13)
    rot_c, trans_c = look_at([0, -5, 1.5], [0, 0, 0.5])
    camera = Camera(60, 60, 32, 24, rot_c, trans_c, 64, 48)
    means = rng.normal(0, 1, (20, 3))
    covs = build_covariances(rng.normal(-2, 0.3, (20, 3)), random_quaternions(rng, 20))
    g_rot = quaternion_to_rotation(random_quaternions(rng, 1))[0]
    g_trans = rng.normal(0, 3, 3)
    moved = Camera(60, 60, 32, 24, rot_c @ g_rot.T, trans_c - rot_c @ g_rot.T @ g_trans, 64, 48)
    a = project_gaussians(means, covs, camera)
    b = project_gaussians(means @ g_rot.T + g_trans, g_rot @ covs @ g_rot.T, moved)
    assert np.array_equal(a.visible, b.visible)
    assert np.allclose(a.mean2d, b.mean2d, atol=1e-9)
    assert np.allclose(a.cov2d, b.cov2d, atol=1e-9)


def test_projection_backward_matches_finite_differences():
    rng = np.random.default_rng(14)
    camera = simple_camera()
    means = np.column_stack([rng.uniform(-0.5, 0.5, 4), rng.uniform(-0.5, 0.5, 4), rng.uniform(3, 5, 4)])
    covs = build_covariances(rng.normal(-2, 0.2, (4, 3)), random_quaternions(rng, 4))
    g_mean = rng.normal(size=(4, 2))
    g_cov = rng.normal(size=(4, 2, 2))
    g_depth = rng.normal(size=4)

    def objective(m, c):
        batch = project_gaussians(m, c, camera)
        return np.sum(batch.mean2d * g_mean) + np.sum(batch.cov2d * g_cov) + np.sum(batch.view_depth * g_depth)

    batch = project_gaussians(means, covs, camera)
    grad_means, grad_covs = project_gaussians_backward(batch, camera, g_mean, g_cov, g_depth)
    assert np.allclose(grad_means, central_difference(lambda m: objective(m, covs), means),
                       rtol=1e-3, atol=1e-6)
    assert np.allclose(grad_covs, central_difference(lambda c: objective(means, c), covs),
                       rtol=1e-3, atol=1e-6)


def test_pixel_rays_pass_through_pixels():
    rot, trans = look_at([1.0, 2.0, 1.5], [5.0, 2.5, 0.5])
    camera = Camera(40, 40, 16, 12, rot, trans, 32, 24)
    rays = camera.pixel_rays()
    point = camera.center + 3.0 * rays[7, 11]
    p = camera.world_to_camera(point[None])[0]
    assert np.allclose([camera.fx * p[0] / p[2] + camera.cx, camera.fy * p[1] / p[2] + camera.cy],
                       [11, 7], atol=1e-9)
