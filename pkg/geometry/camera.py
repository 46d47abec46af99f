#!/usr/bin/env python3
"""
Camera Model and Projection

Pinhole cameras and the local-affine (EWA) projection of 3D Gaussians to
screen-space 2D Gaussians, with its reverse pass.

Pixel (col, row) is sampled at image coordinates (col, row).
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from geometry.transforms import is_rotation
from utils.errors import ValidationError

logger = logging.getLogger(__name__)

LOW_PASS_DILATION = 0.3
GUARD_FRUSTUM = 1.3
DEFAULT_NEAR_CLIP = 0.2


@dataclass
class Camera:
    """Pinhole camera with a world-to-camera rigid extrinsic."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int
    near_clip: float = DEFAULT_NEAR_CLIP

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.width, self.height = int(self.width), int(self.height)
        if not is_rotation(self.rotation):
            raise ValidationError("camera extrinsic is not a valid rotation")
        if not np.all(np.isfinite(self.translation)):
            raise ValidationError("camera translation must be finite")
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"invalid image size {self.width}x{self.height}")
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError("principal point must lie inside the image")
        if not self.near_clip > 0:
            raise ValidationError("near_clip must be positive")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def center(self):
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points):
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def pixel_rays(self):
        """World-frame ray directions K^-1 [u, v, 1] rotated by R^T, [H, W, 3]."""
        cols, rows = np.meshgrid(np.arange(self.width, dtype=np.float64),
                                 np.arange(self.height, dtype=np.float64))
        local = np.stack([(cols - self.cx) / self.fx,
                          (rows - self.cy) / self.fy,
                          np.ones_like(cols)], axis=-1)
        return local @ self.rotation

    def to_dict(self):
        return {
            'fx': float(self.fx), 'fy': float(self.fy),
            'cx': float(self.cx), 'cy': float(self.cy),
            'rotation': [float(v) for v in self.rotation.reshape(-1)],
            'translation': [float(v) for v in self.translation],
            'width': self.width, 'height': self.height,
            'near_clip': float(self.near_clip),
        }

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(fx=float(data['fx']), fy=float(data['fy']),
                       cx=float(data['cx']), cy=float(data['cy']),
                       rotation=np.array(data['rotation'], dtype=np.float64),
                       translation=np.array(data['translation'], dtype=np.float64),
                       width=int(data['width']), height=int(data['height']),
                       near_clip=float(data.get('near_clip', DEFAULT_NEAR_CLIP)))
        except (KeyError, TypeError) as e:
            raise ValidationError(f"malformed camera record: {e}") from e


def look_at(eye, target, up=(0.0, 0.0, 1.0)):
    """
    World-to-camera rotation and translation for a camera at ``eye`` looking at
    ``target``. Camera axes: x right, y down, z forward.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    return rotation, -rotation @ eye


@dataclass
class ProjectedGaussian:
    mean2d: np.ndarray
    cov2d: np.ndarray
    view_depth: float
    source_index: int


@dataclass
class ProjectionBatch:
    """Projection results for a batch; rows with ``visible`` false are culled."""

    mean2d: np.ndarray
    cov2d: np.ndarray
    view_depth: np.ndarray
    visible: np.ndarray
    cam_points: np.ndarray = field(repr=False)
    jacobians: np.ndarray = field(repr=False)
    cam_covs: np.ndarray = field(repr=False)


def project_gaussians(means, covs, camera, dilation=LOW_PASS_DILATION):
    """
    Project world-frame Gaussians through a pinhole camera.

    Args:
        means (np.ndarray): [N, 3] world positions
        covs (np.ndarray): [N, 3, 3] world covariances
        camera (Camera): Target camera
        dilation (float): Low-pass term added to the 2D covariance diagonal

    Returns:
        ProjectionBatch: Screen means, dilated 2D covariances and culling mask
    """
    means = np.asarray(means, dtype=np.float64).reshape(-1, 3)
    covs = np.asarray(covs, dtype=np.float64).reshape(-1, 3, 3)
    p = camera.world_to_camera(means)
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    in_front = z > camera.near_clip
    safe_z = np.where(in_front, z, 1.0)
    u = camera.fx * x / safe_z + camera.cx
    v = camera.fy * y / safe_z + camera.cy
    margin = 0.5 * (GUARD_FRUSTUM - 1.0)
    in_guard = ((u >= -margin * camera.width) & (u <= (1.0 + margin) * camera.width)
                & (v >= -margin * camera.height) & (v <= (1.0 + margin) * camera.height))
    visible = in_front & in_guard

    jac = np.zeros((len(p), 2, 3))
    jac[:, 0, 0] = camera.fx / safe_z
    jac[:, 0, 2] = -camera.fx * x / safe_z ** 2
    jac[:, 1, 1] = camera.fy / safe_z
    jac[:, 1, 2] = -camera.fy * y / safe_z ** 2
    rot = camera.rotation
    cam_covs = rot @ covs @ rot.T
    cov2d = jac @ cam_covs @ np.swapaxes(jac, -1, -2)
    cov2d[:, 0, 0] += dilation
    cov2d[:, 1, 1] += dilation
    return ProjectionBatch(mean2d=np.stack([u, v], axis=-1), cov2d=cov2d,
                           view_depth=z, visible=visible, cam_points=p,
                           jacobians=jac, cam_covs=cam_covs)


def project_gaussian(mean, cov, camera, source_index=0) -> Optional[ProjectedGaussian]:
    """Project one Gaussian; returns None when it is culled."""
    batch = project_gaussians(np.asarray(mean)[None], np.asarray(cov)[None], camera)
    if not batch.visible[0]:
        return None
    return ProjectedGaussian(mean2d=batch.mean2d[0], cov2d=batch.cov2d[0],
                             view_depth=float(batch.view_depth[0]),
                             source_index=source_index)


def project_gaussians_backward(batch, camera, grad_mean2d, grad_cov2d, grad_depth):
    """
    Reverse pass of project_gaussians.

    Args:
        batch (ProjectionBatch): Forward results (intermediates retained)
        camera (Camera): Camera used in the forward pass
        grad_mean2d (np.ndarray): [N, 2]
        grad_cov2d (np.ndarray): [N, 2, 2]
        grad_depth (np.ndarray): [N]

    Returns:
        tuple: (grad_means [N, 3], grad_covs [N, 3, 3]) in world frame
    """
    p, jac, cam_covs = batch.cam_points, batch.jacobians, batch.cam_covs
    x, y = p[:, 0], p[:, 1]
    z = np.where(batch.visible, p[:, 2], 1.0)
    fx, fy = camera.fx, camera.fy
    g_sym = grad_cov2d + np.swapaxes(grad_cov2d, -1, -2)
    grad_jac = g_sym @ jac @ cam_covs
    grad_cam_cov = np.swapaxes(jac, -1, -2) @ grad_cov2d @ jac

    gu, gv = grad_mean2d[:, 0], grad_mean2d[:, 1]
    grad_p = np.empty_like(p)
    grad_p[:, 0] = gu * fx / z - grad_jac[:, 0, 2] * fx / z ** 2
    grad_p[:, 1] = gv * fy / z - grad_jac[:, 1, 2] * fy / z ** 2
    grad_p[:, 2] = (-gu * fx * x / z ** 2 - gv * fy * y / z ** 2 + grad_depth
                    - grad_jac[:, 0, 0] * fx / z ** 2
                    + grad_jac[:, 0, 2] * 2.0 * fx * x / z ** 3
                    - grad_jac[:, 1, 1] * fy / z ** 2
                    + grad_jac[:, 1, 2] * 2.0 * fy * y / z ** 3)
    mask = batch.visible[:, None]
    grad_p = np.where(mask, grad_p, 0.0)
    grad_cam_cov = np.where(mask[:, :, None], grad_cam_cov, 0.0)
    rot = camera.rotation
    return grad_p @ rot, rot.T @ grad_cam_cov @ rot
