#!/usr/bin/env python3
"""
Image Metrics

PSNR, SSIM, PSNR restricted to expanded object boxes, and semantic mIoU.
"""

import logging

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from training.losses import ssim_map
from utils.errors import ValidationError

logger = logging.getLogger(__name__)

BOX_EXPANSION = 1.5
IGNORE_LABEL = 255


def _check(img, ref):
    if np.shape(img) != np.shape(ref):
        raise ValidationError(f"image shapes differ: {np.shape(img)} vs {np.shape(ref)}")


def psnr(img, ref):
    """PSNR in dB for images in [0, 1]; identical images give +inf."""
    _check(img, ref)
    mse = float(np.mean((np.asarray(img, dtype=np.float64) - ref) ** 2))
    if mse == 0.0:
        return float('inf')
    return float(10.0 * np.log10(1.0 / mse))


def ssim(img, ref):
    """Mean SSIM with the 11x11 Gaussian window used by the color loss."""
    _check(img, ref)
    return float(np.mean(ssim_map(img, ref)))


def box_corners(dims, expansion=BOX_EXPANSION):
    """Eight box corners in the object frame; length and width are expanded."""
    half = 0.5 * np.asarray(dims, dtype=np.float64) * np.array([expansion, expansion, 1.0])
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    return signs * half


def box_mask(tracklets, camera, t, expansion=BOX_EXPANSION):
    """
    Union of the projected convex hulls of every visible expanded box.

    Args:
        tracklets (dict): object id -> PoseTrack
        camera (Camera): Image camera
        t (int): Frame index
        expansion (float): Length/width expansion factor

    Returns:
        np.ndarray: [H, W] boolean mask
    """
    mask = np.zeros((camera.height, camera.width), dtype=bool)
    cols, rows = np.meshgrid(np.arange(camera.width, dtype=np.float64),
                             np.arange(camera.height, dtype=np.float64))
    pixels = np.stack([cols.reshape(-1), rows.reshape(-1), np.ones(cols.size)], axis=1)
    for object_id, track in tracklets.items():
        if not (0 <= t < track.frame_count) or not track.valid_mask[t]:
            continue
        rot, trans = track.effective_pose(t)
        corners = box_corners(track.box_dims, expansion) @ rot.T + trans
        p = camera.world_to_camera(corners)
        front = p[:, 2] > camera.near_clip
        if front.sum() < 3:
            continue
        uv = np.stack([camera.fx * p[front, 0] / p[front, 2] + camera.cx,
                       camera.fy * p[front, 1] / p[front, 2] + camera.cy], axis=1)
        try:
            hull = ConvexHull(uv)
        except (QhullError, ValueError):
            logger.debug(f"Box {object_id} projects to a degenerate polygon at frame {t}")
            continue
        inside = np.all(pixels @ hull.equations.T <= 1e-9, axis=1)
        mask |= inside.reshape(camera.height, camera.width)
    return mask


def psnr_star(img, ref, tracklets, camera, t):
    """
    PSNR over pixels inside the projected, expanded object boxes.

    Returns:
        float or None: dB, +inf for an exact match, None when no box is visible
    """
    _check(img, ref)
    mask = box_mask(tracklets, camera, t)
    if not mask.any():
        return None
    diff = np.asarray(img, dtype=np.float64)[mask] - np.asarray(ref, dtype=np.float64)[mask]
    mse = float(np.mean(diff ** 2))
    if mse == 0.0:
        return float('inf')
    return float(10.0 * np.log10(1.0 / mse))


def miou(pred, ref, num_classes):
    """
    Mean IoU over the classes present in ``ref``.

    Returns:
        tuple: (mean IoU, {class index: IoU})
    """
    pred = np.asarray(pred).astype(np.int64).reshape(-1)
    ref = np.asarray(ref).astype(np.int64).reshape(-1)
    if pred.shape != ref.shape:
        raise ValidationError("label maps differ in size")
    keep = ref != IGNORE_LABEL
    pred, ref = pred[keep], ref[keep]
    if np.any((pred < 0) | (pred >= num_classes)) or np.any(ref >= num_classes):
        raise ValidationError(f"labels must lie in [0, {num_classes})")
    confusion = np.bincount(ref * num_classes + pred,
                            minlength=num_classes * num_classes).reshape(num_classes, num_classes)
    per_class = {}
    for c in np.flatnonzero(confusion.sum(axis=1)):
        union = confusion[c, :].sum() + confusion[:, c].sum() - confusion[c, c]
        per_class[int(c)] = float(confusion[c, c] / union)
    if not per_class:
        return float('nan'), per_class
    return float(np.mean(list(per_class.values()))), per_class
