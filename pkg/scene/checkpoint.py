#!/usr/bin/env python3
"""
Checkpoint Storage

A checkpoint is a directory holding:

    background.bin        columnar little-endian float32 attributes
    object_<id>.bin       same layout, object-local frame; ids use [A-Za-z0-9_.-]
    meta.json             counts, layouts, pose tracks, cameras, class table
    sky_face_{0..5}.png   16-bit RGB cubemap faces

Each .bin file stores whole columns one after another in COLUMN_ORDER. A
column holds ``count * width`` float32 values, row-major.
"""

import os
import re
import logging

import numpy as np

from geometry.camera import Camera
from geometry.appearance import num_sh_bases
from scene.gaussians import (GaussianSet, AppearanceCoeffs, SemanticField,
                             BACKGROUND_VECTOR, OBJECT_SCALAR)
from scene.graph import SceneGraph, ObjectModel
from scene.pose import PoseTrack
from scene.sky import SkyCubemap
from utils.errors import CheckpointError, ValidationError
from utils.storage import save_json, load_json, write_png, read_png

logger = logging.getLogger(__name__)

SAFE_OBJECT_ID = re.compile(r"[A-Za-z0-9_-][A-Za-z0-9_.-]*")

SCHEMA_VERSION = 1
COLUMN_ORDER = ('position', 'log_scale', 'rotation', 'opacity', 'appearance', 'semantic')
QUATERNION_RENORM_TOLERANCE = 1e-6


def _column_widths(gaussians_meta):
    k, degree = gaussians_meta['fourier_k'], gaussians_meta['sh_degree']
    semantic = gaussians_meta['num_classes'] if gaussians_meta['semantic_kind'] == BACKGROUND_VECTOR else 1
    return {'position': 3, 'log_scale': 3, 'rotation': 4, 'opacity': 1,
            'appearance': k * num_sh_bases(degree) * 3, 'semantic': semantic}


def _set_meta(gaussians, filename):
    return {
        'file': filename,
        'count': gaussians.count,
        'appearance_mode': gaussians.appearance.mode,
        'sh_degree': gaussians.appearance.sh_degree,
        'fourier_k': gaussians.appearance.fourier_k,
        'semantic_kind': gaussians.semantic.kind,
        'num_classes': gaussians.semantic.num_classes,
    }


def _write_set(gaussians, path):
    n = gaussians.count
    columns = [gaussians.positions, gaussians.log_scales, gaussians.rotations,
               gaussians.opacity_logits, gaussians.appearance.coeffs, gaussians.semantic.logits]
    with open(path, 'wb') as f:
        for column in columns if n else []:
            f.write(np.ascontiguousarray(column.reshape(n, -1), dtype='<f4').tobytes())


def _read_set(path, meta):
    if not os.path.exists(path):
        raise FileNotFoundError(f"Checkpoint file not found: {path}")
    widths = _column_widths(meta)
    n = int(meta['count'])
    raw = np.fromfile(path, dtype='<f4')
    expected = n * sum(widths.values())
    if raw.size != expected:
        raise CheckpointError(
            f"{path}: shape mismatch, {raw.size} values for {n} points (expected {expected})")
    if not np.all(np.isfinite(raw)):
        raise CheckpointError(f"{path}: non-finite value")
    columns, offset = {}, 0
    for name in COLUMN_ORDER:
        size = n * widths[name]
        columns[name] = raw[offset:offset + size].astype(np.float64).reshape(n, widths[name])
        offset += size

    rotations = columns['rotation']
    norms = np.linalg.norm(rotations, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise CheckpointError(f"{path}: zero quaternion")
    drift = np.abs(norms - 1.0) > QUATERNION_RENORM_TOLERANCE
    if np.any(drift):
        logger.info(f"{path}: renormalizing {int(drift.sum())} quaternions")
        rotations = np.where(drift, rotations / norms, rotations)

    k, bases = meta['fourier_k'], num_sh_bases(meta['sh_degree'])
    semantic = columns['semantic']
    if meta['semantic_kind'] == OBJECT_SCALAR:
        semantic = semantic[:, 0]
    return GaussianSet(columns['position'], columns['log_scale'], rotations,
                       columns['opacity'][:, 0],
                       AppearanceCoeffs(meta['appearance_mode'], meta['sh_degree'], k,
                                        columns['appearance'].reshape(n, k, bases, 3)),
                       SemanticField(meta['semantic_kind'], meta['num_classes'], semantic))


def _object_filename(object_id):
    if not SAFE_OBJECT_ID.fullmatch(str(object_id)):
        raise CheckpointError(f"object id {object_id!r} cannot be used in a checkpoint file name")
    return f"object_{object_id}.bin"


def save_checkpoint(scene, path):
    """
    Save a SceneGraph to a checkpoint directory.

    Args:
        scene (SceneGraph): Scene to store
        path (str): Target directory (created if needed)

    Returns:
        str: The checkpoint directory
    """
    filenames = [_object_filename(obj.object_id) for obj in scene.objects]
    os.makedirs(path, exist_ok=True)
    _write_set(scene.background, os.path.join(path, 'background.bin'))
    objects = []
    for obj, filename in zip(scene.objects, filenames):
        _write_set(obj.gaussians, os.path.join(path, filename))
        entry = _set_meta(obj.gaussians, filename)
        entry['id'] = obj.object_id
        entry['track'] = obj.track.to_dict()
        objects.append(entry)
    for face in range(6):
        write_png(scene.sky.faces[face], os.path.join(path, f"sky_face_{face}.png"), bits=16)
    meta = {
        'schema_version': SCHEMA_VERSION,
        'columns': {'order': list(COLUMN_ORDER), 'dtype': '<f4',
                    'layout': 'column blocks, each [count, width] row-major'},
        'num_classes': scene.num_classes,
        'vehicle_class_index': scene.vehicle_class_index,
        'class_names': list(scene.class_names),
        'background': _set_meta(scene.background, 'background.bin'),
        'objects': objects,
        'sky': {'resolution': scene.sky.resolution,
                'files': [f"sky_face_{face}.png" for face in range(6)], 'bits': 16},
        'cameras': [{'timestep': t, 'camera_id': cam_id, 'camera': camera.to_dict()}
                    for (t, cam_id), camera in sorted(scene.cameras.items())],
    }
    save_json(meta, os.path.join(path, 'meta.json'))
    logger.info(f"Saved checkpoint with {scene.point_count()} Gaussians to {path}")
    return path


def load_checkpoint(path):
    """
    Load and validate a checkpoint directory.

    Args:
        path (str): Checkpoint directory

    Returns:
        SceneGraph: The stored scene
    """
    meta = load_json(os.path.join(path, 'meta.json'))
    if meta.get('schema_version') != SCHEMA_VERSION:
        raise CheckpointError(f"{path}: unsupported schema_version {meta.get('schema_version')!r}")
    try:
        if meta['background']['file'] != 'background.bin':
            raise CheckpointError(f"{path}: unexpected background file {meta['background']['file']!r}")
        background = _read_set(os.path.join(path, 'background.bin'), meta['background'])
        objects = []
        for entry in meta['objects']:
            if entry['file'] != _object_filename(entry['id']):
                raise CheckpointError(f"{path}: object {entry['id']!r} stored as {entry['file']!r}")
            gaussians = _read_set(os.path.join(path, entry['file']), entry)
            try:
                track = PoseTrack.from_dict(entry['track'])
            except ValidationError as e:
                raise CheckpointError(f"{path}: object {entry['id']}: {e}") from e
            objects.append(ObjectModel(str(entry['id']), gaussians, track))
        resolution = int(meta['sky']['resolution'])
        faces = np.stack([read_png(os.path.join(path, name)) for name in meta['sky']['files']])
        if faces.shape != (6, resolution, resolution, 3):
            raise CheckpointError(f"{path}: sky faces shape mismatch {faces.shape}")
        cameras = {(int(c['timestep']), int(c['camera_id'])): Camera.from_dict(c['camera'])
                   for c in meta.get('cameras', [])}
        scene = SceneGraph(background, objects, SkyCubemap(faces), int(meta['num_classes']),
                           int(meta['vehicle_class_index']), meta['class_names'], cameras)
    except KeyError as e:
        raise CheckpointError(f"{path}: meta.json missing key {e}") from e
    except CheckpointError:
        raise
    except ValidationError as e:
        raise CheckpointError(f"{path}: {e}") from e
    logger.info(f"Loaded checkpoint from {path} ({scene.point_count()} Gaussians)")
    return scene
