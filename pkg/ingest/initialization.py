#!/usr/bin/env python3
"""
Scene Initialization

Builds the initial SceneGraph from a dataset: object points collected from
LiDAR inside each tracked box, background points from the remaining LiDAR
(voxel-downsampled, visibility-filtered, merged with SfM), colors looked up
in the images and per-point parameters from nearest-neighbour spacing.
"""

import logging
from dataclasses import dataclass
from typing import Optional, List

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logit

from ingest.dataset import Dataset
from ingest.pointcloud import PointCloud
from scene.gaussians import GaussianSet, BACKGROUND_VECTOR, OBJECT_SCALAR
from scene.graph import SceneGraph, ObjectModel
from scene.sky import SkyCubemap
from utils.errors import DatasetError
from utils.filtering import (voxel_downsample, points_in_box, world_to_box,
                             project_to_pixels, visible_in_cameras)

logger = logging.getLogger(__name__)

MID_GRAY = 0.5


@dataclass
class InitConfig:
    voxel_size: float = 0.15
    sh_degree: int = 1
    object_fourier_k: int = 5
    initial_opacity: float = 0.1
    knn: int = 3
    min_object_points: int = 2000
    fallback_samples: int = 8000
    sky_resolution: int = 1024
    sky_value: float = 0.5
    seed: int = 0
    train_frames: Optional[List[int]] = None


def _frames_at(dataset, frame_indices=None):
    indices = range(len(dataset.frames)) if frame_indices is None else frame_indices
    return [dataset.frames[i] for i in indices]


def collect_object_points(dataset, object_id, min_points=2000, fallback_samples=8000, seed=0,
                          frame_indices=None):
    """
    Aggregate LiDAR points inside an object's box, in the object frame.

    Args:
        dataset (Dataset): Loaded dataset
        object_id (str): Tracklet id
        min_points (int): Below this count the uniform fallback is used
        fallback_samples (int): Uniform in-box sample count for the fallback
        seed (int): Fallback sampling seed

    Returns:
        PointCloud: Object-local points
    """
    object_id = str(object_id)
    if object_id not in dataset.tracklets:
        raise DatasetError(f"unknown object id {object_id!r}")
    track = dataset.tracklets[object_id]
    collected = []
    for frame in _frames_at(dataset, frame_indices):
        t = frame.timestep
        if frame.lidar is None or not track.valid_mask[t]:
            continue
        local = world_to_box(frame.lidar.positions, track.rotations[t], track.translations[t])
        collected.append(local[points_in_box(local, track.box_dims)])
    points = np.concatenate(collected) if collected else np.zeros((0, 3))
    if len(points) < min_points:
        object_index = list(dataset.tracklets).index(object_id)
        rng = np.random.default_rng([seed, object_index])
        half = 0.5 * track.box_dims
        points = rng.uniform(-half, half, size=(fallback_samples, 3))
        logger.info(f"Object {object_id}: {sum(len(c) for c in collected)} LiDAR points, "
                    f"sampled {fallback_samples} uniform points instead")
    else:
        logger.info(f"Object {object_id}: collected {len(points)} LiDAR points")
    return PointCloud(points)


def init_background(dataset, voxel_size=0.15, frame_indices=None):
    """
    Background point cloud: LiDAR outside every box, voxel centroids, kept
    only when some training camera sees them, plus SfM points.

    Args:
        dataset (Dataset): Loaded dataset
        voxel_size (float): Voxel edge length in meters
        frame_indices (list, optional): Training frames (default all)

    Returns:
        PointCloud: World-frame background points
    """
    frames = _frames_at(dataset, frame_indices)
    remaining = []
    for frame in frames:
        if frame.lidar is None:
            continue
        points = frame.lidar.positions
        outside = np.ones(len(points), dtype=bool)
        for track in dataset.tracklets.values():
            t = frame.timestep
            if track.valid_mask[t]:
                local = world_to_box(points, track.rotations[t], track.translations[t])
                outside &= ~points_in_box(local, track.box_dims)
        remaining.append(points[outside])
    lidar = np.concatenate(remaining) if remaining else np.zeros((0, 3))
    centroids, _ = voxel_downsample(lidar, voxel_size)
    visible = visible_in_cameras(centroids, [f.camera for f in frames])
    background = PointCloud(centroids[visible])
    logger.info(f"Background: {len(lidar)} LiDAR points -> {len(centroids)} voxels -> {len(background)} visible")
    if dataset.sfm_points is not None:
        background = PointCloud.concatenate([background, dataset.sfm_points]) \
            if dataset.sfm_points.colors is None else _merge_colored(background, dataset.sfm_points)
    if len(background) == 0:
        raise DatasetError("no background points")
    return background


def _merge_colored(lidar, sfm):
    # LiDAR rows get NaN colors so colorize fills them
    colors = np.full((len(lidar), 3), np.nan)
    return PointCloud(np.concatenate([lidar.positions, sfm.positions]),
                      np.concatenate([colors, sfm.colors])) if len(lidar) else sfm


def colorize(points, dataset, track=None, frame_indices=None):
    """
    Look up point colors in the first frame that sees each point.

    Args:
        points (PointCloud): World points, or object-local points when ``track`` is set
        dataset (Dataset): Dataset supplying images
        track (PoseTrack, optional): Pose used to place local points per frame
        frame_indices (list, optional): Frames to search (default all, in order)

    Returns:
        PointCloud: Same positions with colors; unseen points are mid-gray
    """
    n = len(points)
    colors = np.full((n, 3), np.nan)
    if points.colors is not None:
        colors = points.colors.copy()
    pending = np.isnan(colors).any(axis=1)
    for frame in _frames_at(dataset, frame_indices):
        if not pending.any():
            break
        world = points.positions
        if track is not None:
            t = frame.timestep
            if not track.valid_mask[t]:
                continue
            world = points.positions @ track.rotations[t].T + track.translations[t]
        visible, cols, rows, _ = project_to_pixels(world, frame.camera)
        hit = pending & visible
        colors[hit] = frame.image[rows[hit], cols[hit], :3]
        pending &= ~hit
    colors[pending] = MID_GRAY
    return PointCloud(points.positions, colors)


def knn_log_scales(positions, k=3, fallback=0.15):
    """Isotropic log-scales from the mean distance to the k nearest neighbours."""
    n = len(positions)
    if n == 0:
        return np.zeros((0, 3))
    if n == 1:
        return np.full((1, 3), np.log(fallback))
    neighbours = min(k, n - 1)
    distances, _ = cKDTree(positions).query(positions, k=neighbours + 1)
    mean_distance = np.maximum(distances[:, 1:].mean(axis=1), 1e-7)
    return np.repeat(np.log(mean_distance)[:, None], 3, axis=1)


def _gaussians_from_cloud(cloud, config, fourier_k, semantic_kind, num_classes):
    n = len(cloud)
    return GaussianSet.from_colors(cloud.positions,
                                   knn_log_scales(cloud.positions, config.knn, config.voxel_size),
                                   np.full(n, logit(config.initial_opacity)), cloud.colors,
                                   sh_degree=config.sh_degree, fourier_k=fourier_k,
                                   semantic_kind=semantic_kind, num_classes=num_classes)


def init_scene(dataset: Dataset, config: InitConfig = None):
    """
    Build the initial SceneGraph for a dataset.

    Args:
        dataset (Dataset): Loaded dataset
        config (InitConfig, optional): Initialization settings

    Returns:
        SceneGraph: Background, one object model per tracklet, constant gray sky
    """
    config = config or InitConfig()
    frames = config.train_frames
    background = colorize(init_background(dataset, config.voxel_size, frames), dataset,
                          frame_indices=frames)
    bg = _gaussians_from_cloud(background, config, 1, BACKGROUND_VECTOR, dataset.num_classes)
    objects = []
    for object_id, track in dataset.tracklets.items():
        local = collect_object_points(dataset, object_id, config.min_object_points,
                                      config.fallback_samples, config.seed, frames)
        local = colorize(local, dataset, track=track, frame_indices=frames)
        gaussians = _gaussians_from_cloud(local, config, config.object_fourier_k, OBJECT_SCALAR,
                                          dataset.num_classes)
        objects.append(ObjectModel(object_id, gaussians, track.copy()))
    cameras = {(f.timestep, f.camera_id): f.camera for f in dataset.frames}
    scene = SceneGraph(bg, objects, SkyCubemap.constant(config.sky_resolution, config.sky_value),
                       dataset.num_classes, dataset.vehicle_class_index, dataset.class_names,
                       cameras)
    logger.info(f"Initialized scene: {bg.count} background Gaussians, {len(objects)} objects")
    return scene
