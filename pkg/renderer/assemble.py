#!/usr/bin/env python3
"""
World Set Assembly

Flattens a SceneGraph at one timestep into a single world-frame Gaussian
list: background points first, then each included object in scene order.
Every slice keeps the intermediates the backward pass needs.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from geometry.appearance import eval_fourier_sh, eval_sh_color, fourier_weights
from geometry.transforms import build_covariances, effective_pose

logger = logging.getLogger(__name__)

PLACEHOLDER_DIRECTION = (0.0, 0.0, 1.0)


@dataclass
class WorldSlice:
    """Rows [start, stop) of the world set that came from one model."""

    kind: str
    object_id: Optional[str]
    start: int
    stop: int
    sh_coeffs: np.ndarray = field(repr=False)
    view_dirs: np.ndarray = field(repr=False)
    local_covs: np.ndarray = field(repr=False)
    fourier_weights: np.ndarray = field(repr=False)
    pose: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)


@dataclass
class WorldGaussians:
    means: np.ndarray
    covs: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    semantics: np.ndarray
    slices: List[WorldSlice]

    @property
    def count(self):
        return len(self.means)


def _view_directions(offsets):
    # a mean on the camera center is culled by the near plane; any unit vector will do
    dirs = np.array(offsets, dtype=np.float64)
    dirs[np.all(dirs == 0.0, axis=1)] = PLACEHOLDER_DIRECTION
    return dirs


def _appearance(gaussians, t, n_frames, view_dirs):
    app = gaussians.appearance
    coeffs = eval_fourier_sh(app.coeffs, t, max(n_frames, 1), axis=1)
    if gaussians.count:
        colors = eval_sh_color(coeffs, view_dirs, app.sh_degree)
    else:
        colors = np.zeros((0, 3))
    return coeffs, colors


def assemble_world_set(scene, t, camera, include_background=True, include_object_ids=None):
    """
    Build the world-frame Gaussian list for frame ``t`` seen from ``camera``.

    Objects whose track is not valid at ``t`` are skipped.

    Args:
        scene (SceneGraph): Scene to flatten
        t (int): Frame index
        camera (Camera): Camera supplying the SH view directions
        include_background (bool): Keep background points
        include_object_ids (iterable, optional): Object ids to keep (None keeps all)

    Returns:
        WorldGaussians: Concatenated means, covariances, opacities, colors, semantic logits
    """
    center = camera.center
    wanted = None if include_object_ids is None else {str(i) for i in include_object_ids}
    means, covs, opacities, colors, semantics, slices = [], [], [], [], [], []
    offset = 0

    if include_background:
        bg = scene.background
        local_covs = build_covariances(bg.log_scales, bg.rotations) if bg.count else np.zeros((0, 3, 3))
        dirs = _view_directions(bg.positions - center)
        coeffs, rgb = _appearance(bg, t, 1, dirs)
        means.append(bg.positions)
        covs.append(local_covs)
        opacities.append(bg.opacities)
        colors.append(rgb)
        semantics.append(bg.semantic.expand(scene.vehicle_class_index))
        slices.append(WorldSlice('background', None, offset, offset + bg.count, coeffs, dirs,
                                 local_covs, fourier_weights(t, 1, bg.appearance.fourier_k)))
        offset += bg.count

    for obj in scene.objects:
        if wanted is not None and obj.object_id not in wanted:
            continue
        track = obj.track
        if not (0 <= t < track.frame_count) or not track.valid_mask[t]:
            continue
        rot, trans = effective_pose(track, t)
        g = obj.gaussians
        local_covs = build_covariances(g.log_scales, g.rotations) if g.count else np.zeros((0, 3, 3))
        world_means = g.positions @ rot.T + trans
        dirs = _view_directions((world_means - center) @ rot)
        coeffs, rgb = _appearance(g, t, track.frame_count, dirs)
        means.append(world_means)
        covs.append(rot @ local_covs @ rot.T)
        opacities.append(g.opacities)
        colors.append(rgb)
        semantics.append(g.semantic.expand(scene.vehicle_class_index))
        slices.append(WorldSlice('object', obj.object_id, offset, offset + g.count, coeffs, dirs,
                                 local_covs,
                                 fourier_weights(t, max(track.frame_count, 1), g.appearance.fourier_k),
                                 (rot, trans)))
        offset += g.count

    if not slices:
        return WorldGaussians(np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros(0),
                              np.zeros((0, 3)), np.zeros((0, scene.num_classes)), [])
    return WorldGaussians(np.concatenate(means), np.concatenate(covs), np.concatenate(opacities),
                          np.concatenate(colors), np.concatenate(semantics), slices)
