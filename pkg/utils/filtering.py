#!/usr/bin/env python3
"""
Filtering Utilities

This module provides functions for filtering point clouds by voxel
occupancy, oriented boxes and camera visibility, and for splitting frames
into train/test sets.
"""

import logging

import numpy as np
import pandas as pd

from utils.errors import ValidationError

logger = logging.getLogger(__name__)


def voxel_downsample(points, voxel_size, colors=None):
    """
    Replace all points in each occupied voxel with their centroid.

    Args:
        points (np.ndarray): [N, 3] positions
        voxel_size (float): Voxel edge length in meters
        colors (np.ndarray, optional): [N, 3] colors averaged alongside

    Returns:
        tuple: (centroids [V, 3], colors [V, 3] or None), voxels in sorted key order
    """
    if voxel_size <= 0:
        raise ValidationError(f"voxel_size must be positive, got {voxel_size}")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        return points.copy(), None if colors is None else np.zeros((0, 3))
    keys = np.floor(points / voxel_size).astype(np.int64)
    df = pd.DataFrame({'kx': keys[:, 0], 'ky': keys[:, 1], 'kz': keys[:, 2],
                       'x': points[:, 0], 'y': points[:, 1], 'z': points[:, 2]})
    value_columns = ['x', 'y', 'z']
    if colors is not None:
        colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
        df['r'], df['g'], df['b'] = colors[:, 0], colors[:, 1], colors[:, 2]
        value_columns += ['r', 'g', 'b']
    grouped = df.groupby(['kx', 'ky', 'kz'], sort=True)[value_columns].mean()
    logger.debug(f"Voxel downsampling {len(points)} points to {len(grouped)} voxels")
    centroids = grouped[['x', 'y', 'z']].to_numpy()
    out_colors = grouped[['r', 'g', 'b']].to_numpy() if colors is not None else None
    return centroids, out_colors


def points_in_box(local_points, dims):
    """
    Closed box membership for points in the box frame.

    Args:
        local_points (np.ndarray): [N, 3] points relative to the box center
        dims (np.ndarray): (length, width, height)

    Returns:
        np.ndarray: [N] boolean mask (faces included)
    """
    half = 0.5 * np.asarray(dims, dtype=np.float64)
    return np.all(np.abs(np.asarray(local_points, dtype=np.float64)) <= half, axis=-1)


def world_to_box(points, rotation, translation):
    """Express world points in a box frame given its world <- box pose."""
    return (np.asarray(points, dtype=np.float64) - translation) @ rotation


def project_to_pixels(points, camera):
    """
    Project world points to pixel indices.

    Returns:
        tuple: (visible mask [N], cols [N], rows [N], depth [N]); a point maps to
        pixel floor(u + 0.5), floor(v + 0.5)
    """
    p = camera.world_to_camera(points)
    depth = p[:, 2]
    in_front = depth > camera.near_clip
    safe = np.where(in_front, depth, 1.0)
    cols = np.floor(camera.fx * p[:, 0] / safe + camera.cx + 0.5)
    rows = np.floor(camera.fy * p[:, 1] / safe + camera.cy + 0.5)
    visible = in_front & (cols >= 0) & (cols < camera.width) & (rows >= 0) & (rows < camera.height)
    cols = np.where(visible, cols, 0).astype(np.int64)
    rows = np.where(visible, rows, 0).astype(np.int64)
    return visible, cols, rows, depth


def visible_in_cameras(points, cameras):
    """True for points that land inside at least one camera's image."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    mask = np.zeros(len(points), dtype=bool)
    for camera in cameras:
        mask |= project_to_pixels(points, camera)[0]
    return mask


def split_frames(num_frames, split, waymo_split=False, test_every=4):
    """
    Frame indices for a train/test split.

    With ``waymo_split`` every 4th frame (index % 4 == 0) is a test frame;
    otherwise every ``test_every``-th frame starting at index test_every - 1 is.
    """
    if split not in ('train', 'test', 'all'):
        raise ValidationError(f"unknown split {split!r}")
    indices = np.arange(num_frames)
    if split == 'all':
        return indices.tolist()
    if waymo_split:
        is_test = indices % 4 == 0
    else:
        is_test = indices % test_every == test_every - 1
    return indices[is_test if split == 'test' else ~is_test].tolist()
