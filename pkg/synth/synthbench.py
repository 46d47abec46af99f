#!/usr/bin/env python3
"""
Synthetic Benchmark Scenes

Generates ground-truth scenes (checkered ground plane, static box clusters,
moving box-shaped objects, gradient sky) and renders datasets from them with
the reference renderer. LiDAR is simulated by back-projecting the blended
depth on a sparse pixel grid.
"""

import os
import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.special import logit

from geometry.camera import Camera, look_at
from geometry.transforms import rotation_z
from ingest.dataset import Dataset, FrameRecord, write_dataset
from ingest.pointcloud import PointCloud
from renderer.rasterizer import RenderConfig
from renderer.reference import render_reference
from scene.checkpoint import save_checkpoint
from scene.gaussians import GaussianSet, OBJECT_SCALAR
from scene.graph import SceneGraph, ObjectModel, DEFAULT_CLASS_NAMES, DEFAULT_VEHICLE_CLASS
from scene.pose import PoseTrack
from scene.sky import SkyCubemap, texel_directions
from utils.config import dataclass_from_dict
from utils.errors import ValidationError
from utils.storage import save_json

logger = logging.getLogger(__name__)

ROAD, BUILDING, SKY = 1, 3, 0
SEMANTIC_CONFIDENCE = 4.0


@dataclass
class SynthSpec:
    seed: int = 0
    num_frames: int = 8
    width: int = 96
    height: int = 64
    focal: float = 70.0
    camera_path: str = 'ego_forward'
    cameras_per_frame: int = 1
    camera_height: float = 1.6
    ego_speed: float = 0.5
    orbit_radius: float = 12.0
    ground_extent: float = 12.0
    ground_spacing: float = 0.6
    checker_size: float = 2.0
    ground_colors: List[List[float]] = field(default_factory=lambda: [[0.35, 0.35, 0.38], [0.6, 0.58, 0.5]])
    static_boxes: int = 2
    static_box_points: int = 120
    num_objects: int = 1
    object_dims: List[float] = field(default_factory=lambda: [4.0, 1.8, 1.5])
    object_points: int = 200
    trajectory: str = 'linear'
    object_speed: float = 0.6
    fourier_k: int = 5
    dynamic_appearance: float = 0.0
    sh_degree: int = 1
    lidar_stride: int = 4
    sigma_t: float = 0.0
    sigma_theta: float = 0.0
    sigma_depth: float = 0.0
    sky_resolution: int = 16
    sky_horizon: List[float] = field(default_factory=lambda: [0.75, 0.82, 0.9])
    sky_zenith: List[float] = field(default_factory=lambda: [0.3, 0.45, 0.8])

    def __post_init__(self):
        if self.num_frames < 1 or self.width < 1 or self.height < 1:
            raise ValidationError("num_frames, width and height must be positive")
        if self.camera_path not in ('ego_forward', 'orbit'):
            raise ValidationError(f"unknown camera_path {self.camera_path!r}")
        if self.trajectory not in ('linear', 'arc'):
            raise ValidationError(f"unknown trajectory {self.trajectory!r}")
        if self.fourier_k < 1 or self.lidar_stride < 1 or self.cameras_per_frame < 1:
            raise ValidationError("fourier_k, lidar_stride and cameras_per_frame must be >= 1")

    @classmethod
    def from_dict(cls, data):
        return dataclass_from_dict(cls, data, 'synth')


def _one_hot_logits(n, cls_index, num_classes):
    logits = np.zeros((n, num_classes))
    logits[:, cls_index] = SEMANTIC_CONFIDENCE
    return logits


def _ground(spec, num_classes):
    e, s = spec.ground_extent, spec.ground_spacing
    coords = np.arange(-e, e + 1e-9, s)
    gx, gy = np.meshgrid(coords, coords)
    positions = np.stack([gx.reshape(-1), gy.reshape(-1), np.zeros(gx.size)], axis=1)
    checker = (np.floor(positions[:, 0] / spec.checker_size)
               + np.floor(positions[:, 1] / spec.checker_size)).astype(np.int64) % 2
    colors = np.asarray(spec.ground_colors, dtype=np.float64)[checker]
    log_scales = np.tile([np.log(0.6 * s), np.log(0.6 * s), -4.0], (len(positions), 1))
    return GaussianSet.from_colors(positions, log_scales, np.full(len(positions), logit(0.95)), colors,
                                   sh_degree=spec.sh_degree, num_classes=num_classes,
                                   semantic_logits=_one_hot_logits(len(positions), ROAD, num_classes))


def _random_quaternions(rng, n):
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def _static_boxes(spec, rng, num_classes):
    sets = []
    for i in range(spec.static_boxes):
        side = 1.0 if i % 2 == 0 else -1.0
        center = np.array([rng.uniform(-spec.ground_extent * 0.6, spec.ground_extent * 0.6),
                           side * rng.uniform(5.0, 8.0), 0.0])
        dims = rng.uniform([1.5, 1.5, 2.0], [3.0, 3.0, 4.0])
        center[2] = 0.5 * dims[2]
        n = spec.static_box_points
        positions = center + rng.uniform(-0.5, 0.5, (n, 3)) * dims
        colors = np.clip(rng.uniform(0.2, 0.8, 3) + rng.normal(0.0, 0.05, (n, 3)), 0.0, 1.0)
        log_scales = np.log(rng.uniform(0.15, 0.35, (n, 3)))
        sets.append(GaussianSet.from_colors(positions, log_scales, np.full(n, logit(0.7)), colors,
                                            sh_degree=spec.sh_degree, num_classes=num_classes,
                                            rotations=_random_quaternions(rng, n),
                                            semantic_logits=_one_hot_logits(n, BUILDING, num_classes)))
    return sets


def _object_track(spec, index):
    n = spec.num_frames
    dims = np.asarray(spec.object_dims, dtype=np.float64)
    rotations, translations = np.zeros((n, 3, 3)), np.zeros((n, 3))
    for t in range(n):
        if spec.trajectory == 'linear':
            lane = 2.0 if index % 2 == 0 else -2.0
            heading = 0.0
            position = np.array([2.0 + 4.0 * index + spec.object_speed * t, lane, 0.5 * dims[2]])
        else:
            radius = 5.0 + 3.0 * index
            angle = spec.object_speed * t / radius
            heading = angle + 0.5 * np.pi
            position = np.array([radius * np.cos(angle), radius * np.sin(angle), 0.5 * dims[2]])
        rotations[t] = rotation_z(heading)
        translations[t] = position
    return PoseTrack(rotations, translations, dims, np.ones(n, dtype=bool))


def _object_gaussians(spec, rng, num_classes):
    dims = np.asarray(spec.object_dims, dtype=np.float64)
    n = spec.object_points
    positions = rng.uniform(-0.45, 0.45, (n, 3)) * dims
    base = rng.uniform(0.3, 0.9, 3)
    # front-to-back shading gradient makes the heading observable
    colors = np.clip(base[None, :] * (0.7 + 0.6 * (positions[:, :1] / dims[0] + 0.5) * 0.5), 0.0, 1.0)
    log_scales = np.log(rng.uniform(0.12, 0.25, (n, 3)))
    gaussians = GaussianSet.from_colors(positions, log_scales, np.full(n, logit(0.8)), colors,
                                        sh_degree=spec.sh_degree, fourier_k=spec.fourier_k,
                                        semantic_kind=OBJECT_SCALAR, num_classes=num_classes,
                                        rotations=_random_quaternions(rng, n),
                                        semantic_logits=np.full(n, SEMANTIC_CONFIDENCE))
    if spec.dynamic_appearance > 0 and spec.fourier_k > 1:
        gaussians.appearance.coeffs[:, 1:, 0, :] = rng.normal(
            0.0, spec.dynamic_appearance, (n, spec.fourier_k - 1, 3))
    return gaussians


def _sky(spec):
    dirs = texel_directions(spec.sky_resolution)
    up = np.clip(dirs[..., 2] / np.linalg.norm(dirs, axis=-1), 0.0, 1.0)[..., None]
    horizon = np.asarray(spec.sky_horizon, dtype=np.float64)
    zenith = np.asarray(spec.sky_zenith, dtype=np.float64)
    return SkyCubemap(horizon + (zenith - horizon) * up)


def _cameras(spec, t):
    cameras = []
    for c in range(spec.cameras_per_frame):
        if spec.camera_path == 'ego_forward':
            x = -8.0 + spec.ego_speed * t
            eye = np.array([x, 0.0, spec.camera_height])
            target = np.array([x + 10.0, 3.0 * (c - 0.5 * (spec.cameras_per_frame - 1)), 0.5])
        else:
            angle = 2.0 * np.pi * (t + c / spec.cameras_per_frame) / spec.num_frames
            eye = np.array([spec.orbit_radius * np.cos(angle), spec.orbit_radius * np.sin(angle),
                            spec.camera_height + 2.0])
            target = np.array([0.0, 0.0, 0.5])
        rotation, translation = look_at(eye, target)
        cameras.append(Camera(spec.focal, spec.focal, 0.5 * spec.width, 0.5 * spec.height,
                              rotation, translation, spec.width, spec.height))
    return cameras


def build_scene(spec):
    """Ground-truth SceneGraph for a spec (no rendering)."""
    rng = np.random.default_rng(spec.seed)
    num_classes = len(DEFAULT_CLASS_NAMES)
    background = _ground(spec, num_classes)
    for box in _static_boxes(spec, rng, num_classes):
        background = background.concatenate(box)
    objects = [ObjectModel(str(i), _object_gaussians(spec, rng, num_classes), _object_track(spec, i))
               for i in range(spec.num_objects)]
    cameras = {(t, c): camera for t in range(spec.num_frames)
               for c, camera in enumerate(_cameras(spec, t))}
    return SceneGraph(background, objects, _sky(spec), num_classes, DEFAULT_VEHICLE_CLASS,
                      DEFAULT_CLASS_NAMES, cameras)


def simulate_lidar(outputs, camera, stride, rng=None, sigma_depth=0.0):
    """
    Back-project the blended depth on a sparse pixel grid where opacity > 0.5.

    Returns:
        PointCloud: World-frame points with float32-representable coordinates
    """
    rows, cols = np.meshgrid(np.arange(0, camera.height, stride), np.arange(0, camera.width, stride),
                             indexing='ij')
    rows, cols = rows.reshape(-1), cols.reshape(-1)
    hit = outputs.opacity[rows, cols] > 0.5
    rows, cols = rows[hit], cols[hit]
    depth = outputs.depth[rows, cols]
    if sigma_depth > 0 and rng is not None:
        depth = depth + rng.normal(0.0, sigma_depth, len(depth))
    local = np.stack([(cols - camera.cx) / camera.fx * depth,
                      (rows - camera.cy) / camera.fy * depth, depth], axis=1)
    world = (local - camera.translation) @ camera.rotation
    return PointCloud(world.astype(np.float32).astype(np.float64))


def generate(spec):
    """
    Build a ground-truth scene and render a clean dataset from it.

    Args:
        spec (SynthSpec): Generation settings

    Returns:
        tuple: (SceneGraph, Dataset) with exact float images held in memory
    """
    scene = build_scene(spec)
    rng = np.random.default_rng([spec.seed, 1])
    frames = []
    for (t, camera_id), camera in sorted(scene.cameras.items()):
        outputs = render_reference(scene, camera, RenderConfig(timestep=t))
        lidar = simulate_lidar(outputs, camera, spec.lidar_stride, rng, spec.sigma_depth)
        sky_mask = outputs.opacity < 0.5
        labels = np.where(sky_mask, SKY, np.argmax(outputs.semantic, axis=-1)).astype(np.int64)
        frames.append(FrameRecord(len(frames), t, camera_id, camera, outputs.color, lidar,
                                  sky_mask, labels))
    tracklets = {obj.object_id: PoseTrack(obj.track.rotations.copy(), obj.track.translations.copy(),
                                          obj.track.box_dims.copy(), obj.track.valid_mask.copy())
                 for obj in scene.objects}
    dataset = Dataset(frames, tracklets, spec.num_frames, scene.class_names,
                      scene.vehicle_class_index)
    logger.info(f"Generated synthetic scene: {scene.point_count()} Gaussians, {len(frames)} frames")
    return scene, dataset


def perturb(dataset, sigma_t, sigma_theta, seed=0, perturb_z=False):
    """
    Add Gaussian noise to every tracked pose.

    Translations get ``sigma_t`` per axis (xy only unless ``perturb_z``); yaw
    gets ``sigma_theta`` composed as R_t Rz(noise).

    Returns:
        tuple: (noisy Dataset, {object id: {'translation': noisy - clean, 'yaw': yaw noise}})
    """
    rng = np.random.default_rng(seed)
    tracklets, deltas = {}, {}
    for object_id, track in dataset.tracklets.items():
        n = track.frame_count
        rotations, translations = track.rotations.copy(), track.translations.copy()
        yaw = np.zeros(n)
        if sigma_t > 0:
            noise = rng.normal(0.0, sigma_t, (n, 3))
            if not perturb_z:
                noise[:, 2] = 0.0
            translations = translations + noise
        if sigma_theta > 0:
            yaw = rng.normal(0.0, sigma_theta, n)
            rotations = np.stack([rotations[t] @ rotation_z(yaw[t]) for t in range(n)])
        tracklets[object_id] = PoseTrack(rotations, translations, track.box_dims.copy(),
                                         track.valid_mask.copy())
        deltas[object_id] = {'translation': translations - track.translations, 'yaw': yaw}
    noisy = Dataset(dataset.frames, tracklets, dataset.num_frames, dataset.class_names,
                    dataset.vehicle_class_index, dataset.sfm_points, dataset.root)
    return noisy, deltas


def write_synth(spec, output_dir):
    """
    Generate, optionally perturb, and write dataset + ground-truth checkpoint.

    Returns:
        dict: Paths of the written artifacts
    """
    scene, dataset = generate(spec)
    paths = {'dataset': output_dir, 'ground_truth': os.path.join(output_dir, 'ground_truth')}
    if spec.sigma_t > 0 or spec.sigma_theta > 0:
        dataset, deltas = perturb(dataset, spec.sigma_t, spec.sigma_theta, seed=spec.seed + 1)
        paths['pose_noise'] = save_json(
            {k: {'translation': v['translation'].tolist(), 'yaw': v['yaw'].tolist()}
             for k, v in deltas.items()}, os.path.join(output_dir, 'pose_noise.json'))
    write_dataset(dataset, output_dir)
    save_checkpoint(scene, paths['ground_truth'])
    return paths
