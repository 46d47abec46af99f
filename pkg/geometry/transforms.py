#!/usr/bin/env python3
"""
Rigid Transform Kernels

This module provides quaternion handling, covariance construction, object pose
composition and the object-to-world transform, together with the analytic
reverse-mode derivatives the rasterizer backward pass chains through.

Quaternions are stored (w, x, y, z). All batched functions take a leading
point axis.
"""

import numpy as np

from utils.errors import ValidationError

ROTATION_TOLERANCE = 1e-5


def normalize_quaternions(quaternions):
    """
    Normalize quaternions to unit length.

    Args:
        quaternions (np.ndarray): [N, 4] or [4] quaternions

    Returns:
        np.ndarray: Unit quaternions of the same shape
    """
    q = np.asarray(quaternions, dtype=np.float64)
    norms = np.linalg.norm(q, axis=-1, keepdims=True)
    if not np.all(np.isfinite(q)) or np.any(norms == 0.0):
        raise ValidationError("quaternion must be finite and non-zero")
    return q / norms


def quaternion_to_rotation(quaternions):
    """
    Convert unit quaternions to rotation matrices.

    Args:
        quaternions (np.ndarray): [N, 4] unit quaternions (w, x, y, z)

    Returns:
        np.ndarray: [N, 3, 3] rotation matrices
    """
    q = np.asarray(quaternions, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rot = np.empty(q.shape[:-1] + (3, 3))
    rot[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    rot[..., 0, 1] = 2.0 * (x * y - w * z)
    rot[..., 0, 2] = 2.0 * (x * z + w * y)
    rot[..., 1, 0] = 2.0 * (x * y + w * z)
    rot[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    rot[..., 1, 2] = 2.0 * (y * z - w * x)
    rot[..., 2, 0] = 2.0 * (x * z - w * y)
    rot[..., 2, 1] = 2.0 * (y * z + w * x)
    rot[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return rot


def rotation_jacobian(quaternions):
    """
    Partial derivatives of quaternion_to_rotation.

    Args:
        quaternions (np.ndarray): [N, 4] unit quaternions

    Returns:
        np.ndarray: [N, 4, 3, 3] where [n, a] is dR/dq_a
    """
    q = np.asarray(quaternions, dtype=np.float64)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    zero = np.zeros_like(w)
    d_w = np.stack([zero, -2 * z, 2 * y,
                    2 * z, zero, -2 * x,
                    -2 * y, 2 * x, zero], axis=-1)
    d_x = np.stack([zero, 2 * y, 2 * z,
                    2 * y, -4 * x, -2 * w,
                    2 * z, 2 * w, -4 * x], axis=-1)
    d_y = np.stack([-4 * y, 2 * x, 2 * w,
                    2 * x, zero, 2 * z,
                    -2 * w, 2 * z, -4 * y], axis=-1)
    d_z = np.stack([-4 * z, -2 * w, 2 * x,
                    2 * w, -4 * z, 2 * y,
                    2 * x, 2 * y, zero], axis=-1)
    return np.stack([d_w, d_x, d_y, d_z], axis=1).reshape(-1, 4, 3, 3)


def normalization_backward(quaternions, grad_unit):
    """Chain a gradient w.r.t. normalized quaternions back to the raw ones."""
    q = np.asarray(quaternions, dtype=np.float64)
    norms = np.linalg.norm(q, axis=-1, keepdims=True)
    unit = q / norms
    radial = np.sum(unit * grad_unit, axis=-1, keepdims=True)
    return (grad_unit - unit * radial) / norms


def build_covariances(log_scales, quaternions):
    """
    Build world covariances R S S^T R^T for a batch of Gaussians.

    Args:
        log_scales (np.ndarray): [N, 3] log standard deviations
        quaternions (np.ndarray): [N, 4] quaternions (normalized here)

    Returns:
        np.ndarray: [N, 3, 3] symmetric PSD covariances
    """
    rot = quaternion_to_rotation(normalize_quaternions(quaternions))
    scaled = rot * np.exp(np.asarray(log_scales, dtype=np.float64))[:, None, :]
    return scaled @ np.swapaxes(scaled, -1, -2)


def build_covariance(log_scale, quaternion):
    """Single-Gaussian form of build_covariances."""
    return build_covariances(np.asarray(log_scale, dtype=np.float64)[None],
                             np.asarray(quaternion, dtype=np.float64)[None])[0]


def build_covariances_backward(log_scales, quaternions, grad_cov):
    """
    Reverse pass of build_covariances.

    Args:
        log_scales (np.ndarray): [N, 3]
        quaternions (np.ndarray): [N, 4] raw (possibly unnormalized) quaternions
        grad_cov (np.ndarray): [N, 3, 3] upstream gradient

    Returns:
        tuple: (grad_log_scales [N, 3], grad_quaternions [N, 4])
    """
    unit = normalize_quaternions(quaternions)
    rot = quaternion_to_rotation(unit)
    scales = np.exp(np.asarray(log_scales, dtype=np.float64))
    factor = rot * scales[:, None, :]
    grad_factor = (grad_cov + np.swapaxes(grad_cov, -1, -2)) @ factor
    grad_scales = np.sum(rot * grad_factor, axis=1)
    grad_rot = grad_factor * scales[:, None, :]
    grad_unit = np.einsum('nij,naij->na', grad_rot, rotation_jacobian(unit))
    return grad_scales * scales, normalization_backward(quaternions, grad_unit)


def rotation_z(theta):
    """Rotation about the local z (up) axis."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_z_derivative(theta):
    """d Rz / d theta."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def is_rotation(matrix, tolerance=ROTATION_TOLERANCE):
    """True when ``matrix`` is orthonormal with determinant +1."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    if np.max(np.abs(m @ m.T - np.eye(3))) > tolerance:
        return False
    return abs(np.linalg.det(m) - 1.0) <= tolerance


def effective_pose(track, t):
    """
    Compose a tracked pose with its learnable correction.

    Args:
        track (PoseTrack): Object pose track
        t (int): Frame index

    Returns:
        tuple: (R' [3, 3], T' [3]) with R' = R_t Rz(dtheta_t) and T' = T_t + dT_t
    """
    if not 0 <= t < track.frame_count:
        raise ValidationError(f"frame {t} out of range [0, {track.frame_count})")
    if not track.valid_mask[t]:
        raise ValidationError(f"frame {t} is not valid for this track")
    rot = track.rotations[t] @ rotation_z(track.delta_yaws[t])
    trans = track.translations[t] + track.delta_translations[t]
    return rot, trans


def object_to_world(means, quaternions, pose):
    """
    Transform object-local Gaussians into the world frame.

    Args:
        means (np.ndarray): [N, 3] or [3] object-local positions
        quaternions (np.ndarray): [N, 4] or [4] object-local rotations
        pose (tuple): (R' [3, 3], T' [3]) from effective_pose

    Returns:
        tuple: (world means, world rotation matrices)
    """
    rot, trans = pose
    mu = np.asarray(means, dtype=np.float64)
    local_rot = quaternion_to_rotation(normalize_quaternions(quaternions))
    return mu @ rot.T + trans, rot @ local_rot
