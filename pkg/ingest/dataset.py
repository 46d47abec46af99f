#!/usr/bin/env python3
"""
Dataset Loader

Reads and writes the on-disk dataset layout:

    scene.json      frames (camera, timestep, file paths), num_frames,
                    class_map, tracklets
    images/NNNN.png RGB images
    lidar/NNNN.ply  world-frame LiDAR points (xyz float32)
    sky/NNNN.png    optional sky masks (non-zero = sky)
    sem/NNNN.png    optional class-index maps (255 = ignore)
    sfm.ply         optional SfM points

Rotations are row-major, units are meters and the world is z-up.
"""

import os
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from geometry.camera import Camera
from ingest.pointcloud import PointCloud, read_ply, write_ply
from scene.graph import DEFAULT_CLASS_NAMES, DEFAULT_VEHICLE_CLASS
from scene.pose import PoseTrack
from utils.errors import DatasetError, ValidationError
from utils.filtering import project_to_pixels
from utils.storage import load_json, save_json, read_png, read_png_raw, write_png, write_png_raw

logger = logging.getLogger(__name__)

IGNORE_LABEL = 255


@dataclass
class FrameRecord:
    index: int
    timestep: int
    camera_id: int
    camera: Camera
    image: np.ndarray = field(repr=False)
    lidar: Optional[PointCloud] = field(default=None, repr=False)
    sky_mask: Optional[np.ndarray] = field(default=None, repr=False)
    semantic: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class Dataset:
    frames: List[FrameRecord]
    tracklets: Dict[str, PoseTrack]
    num_frames: int
    class_names: tuple = DEFAULT_CLASS_NAMES
    vehicle_class_index: int = DEFAULT_VEHICLE_CLASS
    sfm_points: Optional[PointCloud] = None
    root: Optional[str] = None

    def __post_init__(self):
        self.class_names = tuple(self.class_names)
        self.validate()

    @property
    def num_classes(self):
        return len(self.class_names)

    def validate(self):
        if self.num_frames < 1:
            raise DatasetError("num_frames must be >= 1")
        keys = [(f.timestep, f.camera_id) for f in self.frames]
        if any(a >= b for a, b in zip(keys, keys[1:])):
            raise DatasetError("frame (timestep, camera_id) pairs must be strictly increasing")
        for frame in self.frames:
            if not 0 <= frame.timestep < self.num_frames:
                raise DatasetError(f"frame {frame.index}: timestep {frame.timestep} outside [0, {self.num_frames})")
            h, w = frame.camera.height, frame.camera.width
            if frame.image.shape[:2] != (h, w):
                raise DatasetError(f"frame {frame.index}: image size {frame.image.shape[:2]} != camera {(h, w)}")
            for name in ('sky_mask', 'semantic'):
                mask = getattr(frame, name)
                if mask is not None and mask.shape[:2] != (h, w):
                    raise DatasetError(f"frame {frame.index}: {name} size differs from image")
        for object_id, track in self.tracklets.items():
            if track.frame_count != self.num_frames:
                raise DatasetError(f"tracklet {object_id}: {track.frame_count} poses for {self.num_frames} frames")
        if not 0 <= self.vehicle_class_index < self.num_classes:
            raise DatasetError("vehicle class index outside the class map")

    def cameras(self, indices=None):
        frames = self.frames if indices is None else [self.frames[i] for i in indices]
        return [f.camera for f in frames]


def _parse_tracklet(entry, num_frames, where):
    object_id = str(entry['id'])
    rotations = np.tile(np.eye(3), (num_frames, 1, 1))
    translations = np.zeros((num_frames, 3))
    valid = np.zeros(num_frames, dtype=bool)
    for pose in entry['frames']:
        t = int(pose['frame'])
        if not 0 <= t < num_frames:
            raise DatasetError(f"{where}: tracklet {object_id} references frame {t} (num_frames {num_frames})")
        rotations[t] = np.array(pose['rotation'], dtype=np.float64).reshape(3, 3)
        translations[t] = np.array(pose['translation'], dtype=np.float64).reshape(3)
        valid[t] = bool(pose.get('valid', True))
    try:
        track = PoseTrack(rotations, translations, np.array(entry['dims'], dtype=np.float64), valid)
    except ValidationError as e:
        raise DatasetError(f"{where}: tracklet {object_id}: {e}") from e
    return object_id, track


def _load_frame(root, index, entry):
    where = os.path.join(root, 'scene.json')
    try:
        camera = Camera.from_dict(entry['camera'])
    except ValidationError as e:
        raise DatasetError(f"{where}: frame {index}: {e}") from e
    image = read_png(os.path.join(root, entry['image']))
    if image.ndim != 3:
        raise DatasetError(f"{entry['image']}: expected an RGB image")
    lidar = read_ply(os.path.join(root, entry['lidar'])) if entry.get('lidar') else None
    sky = None
    if entry.get('sky'):
        sky = read_png_raw(os.path.join(root, entry['sky']))
        sky = (sky[..., 0] if sky.ndim == 3 else sky) > 0
    semantic = None
    if entry.get('semantic'):
        semantic = read_png_raw(os.path.join(root, entry['semantic']))
        semantic = (semantic[..., 0] if semantic.ndim == 3 else semantic).astype(np.int64)
    return FrameRecord(index, int(entry['timestep']), int(entry.get('camera_id', 0)), camera,
                       image, lidar, sky, semantic)


def load_dataset(root, num_workers=4):
    """
    Load and validate a dataset directory.

    Args:
        root (str): Dataset directory containing scene.json
        num_workers (int): Threads used to read frames

    Returns:
        Dataset: Validated dataset
    """
    where = os.path.join(root, 'scene.json')
    meta = load_json(where)
    try:
        num_frames = int(meta['num_frames'])
        class_map = meta.get('class_map', {})
        class_names = tuple(class_map.get('names', DEFAULT_CLASS_NAMES))
        vehicle = int(class_map.get('vehicle_class_index', DEFAULT_VEHICLE_CLASS))
        entries = meta['frames']
        with ThreadPoolExecutor(max_workers=max(1, num_workers)) as pool:
            frames = list(pool.map(lambda item: _load_frame(root, *item), enumerate(entries)))
        tracklets = dict(_parse_tracklet(e, num_frames, where) for e in meta.get('tracklets', []))
    except KeyError as e:
        raise DatasetError(f"{where}: missing key {e}") from e
    if len(tracklets) != len(meta.get('tracklets', [])):
        raise DatasetError(f"{where}: duplicate tracklet ids")
    sfm_path = os.path.join(root, 'sfm.ply')
    sfm = read_ply(sfm_path) if os.path.exists(sfm_path) else None
    for frame in frames:
        if frame.semantic is not None:
            bad = (frame.semantic >= len(class_names)) & (frame.semantic != IGNORE_LABEL)
            if np.any(bad):
                raise DatasetError(f"{where}: frame {frame.index}: semantic label outside class map")
    dataset = Dataset(frames, tracklets, num_frames, class_names, vehicle, sfm, root)
    logger.info(f"Loaded dataset {root}: {len(frames)} frames, {len(tracklets)} tracklets, N_t={num_frames}")
    return dataset


def write_dataset(dataset, root):
    """
    Write a dataset in the documented layout (images as 8-bit PNG, LiDAR as
    binary PLY).

    Returns:
        str: Path of the written scene.json
    """
    os.makedirs(root, exist_ok=True)
    entries = []
    for frame in dataset.frames:
        name = f"{frame.index:04d}"
        entry = {'timestep': frame.timestep, 'camera_id': frame.camera_id,
                 'camera': frame.camera.to_dict(), 'image': f"images/{name}.png"}
        write_png(frame.image, os.path.join(root, entry['image']))
        if frame.lidar is not None:
            entry['lidar'] = f"lidar/{name}.ply"
            write_ply(frame.lidar, os.path.join(root, entry['lidar']))
        if frame.sky_mask is not None:
            entry['sky'] = f"sky/{name}.png"
            write_png_raw(frame.sky_mask.astype(np.uint8) * 255, os.path.join(root, entry['sky']))
        if frame.semantic is not None:
            entry['semantic'] = f"sem/{name}.png"
            write_png_raw(frame.semantic.astype(np.uint8), os.path.join(root, entry['semantic']))
        entries.append(entry)
    tracklets = []
    for object_id, track in dataset.tracklets.items():
        poses = [{'frame': t,
                  'rotation': [float(v) for v in track.rotations[t].reshape(-1)],
                  'translation': [float(v) for v in track.translations[t]]}
                 for t in range(track.frame_count) if track.valid_mask[t]]
        tracklets.append({'id': object_id, 'dims': [float(v) for v in track.box_dims],
                          'frames': poses})
    if dataset.sfm_points is not None:
        write_ply(dataset.sfm_points, os.path.join(root, 'sfm.ply'))
    meta = {'num_frames': dataset.num_frames,
            'class_map': {'names': list(dataset.class_names),
                          'vehicle_class_index': dataset.vehicle_class_index},
            'frames': entries, 'tracklets': tracklets}
    logger.info(f"Wrote dataset with {len(entries)} frames to {root}")
    return save_json(meta, os.path.join(root, 'scene.json'))


def project_lidar_depth(frame):
    """
    Sparse depth map from the frame's LiDAR points.

    Args:
        frame (FrameRecord): Frame with a LiDAR cloud

    Returns:
        np.ndarray: [H, W] camera-frame depth, nearest point per pixel, 0 = no hit
    """
    camera = frame.camera
    depth = np.full((camera.height, camera.width), np.inf)
    if frame.lidar is None or len(frame.lidar) == 0:
        return np.zeros_like(depth)
    visible, cols, rows, z = project_to_pixels(frame.lidar.positions, camera)
    np.minimum.at(depth, (rows[visible], cols[visible]), z[visible])
    depth[np.isinf(depth)] = 0.0
    return depth
