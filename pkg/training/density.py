#!/usr/bin/env python3
"""
Adaptive Density Control

Clone small and split large Gaussians with high screen-space position
gradients, prune transparent and oversized ones, and prune object Gaussians
whose sampled mass falls outside the object's box.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logit

from geometry.transforms import quaternion_to_rotation, normalize_quaternions, build_covariances
from scene.gaussians import PARAMETER_GROUPS
from utils.filtering import points_in_box

logger = logging.getLogger(__name__)

SPLIT_CHILDREN = 2
SPLIT_SCALE_FACTOR = 1.6
BACKGROUND_EXTENT = 20.0
RESET_OPACITY = 0.01


@dataclass
class DensityConfig:
    grad_threshold: float = 2e-4
    percent_dense: float = 0.01
    min_opacity: float = 0.005
    max_scale_fraction: float = 0.1
    box_samples: int = 32
    background_extent: float = BACKGROUND_EXTENT


class DensityStats:
    """Running per-Gaussian screen-gradient and blend-weight statistics."""

    def __init__(self, scene):
        self.grad_accum = {}
        self.denom = {}
        self.max_weight = {}
        for key, gaussians in model_items(scene):
            self.reset(key, gaussians.count)

    def reset(self, key, count):
        self.grad_accum[key] = np.zeros(count)
        self.denom[key] = np.zeros(count)
        self.max_weight[key] = np.zeros(count)

    def update(self, gradients):
        """Accumulate stats from one SceneGradients."""
        for key, stats in gradients.stats.items():
            visible = stats['visible']
            self.grad_accum[key][visible] += stats['ndc_grad_norm'][visible]
            self.denom[key][visible] += 1
            self.max_weight[key] = np.maximum(self.max_weight[key], stats['max_weight'])

    def mean_grad(self, key):
        denom = self.denom[key]
        return np.where(denom > 0, self.grad_accum[key] / np.maximum(denom, 1), 0.0)


def model_items(scene):
    """(key, GaussianSet) pairs: 'background' then each object id."""
    items = [('background', scene.background)]
    items += [(obj.object_id, obj.gaussians) for obj in scene.objects]
    return items


def _set_model(scene, key, gaussians):
    if key == 'background':
        scene.background = gaussians
    else:
        scene.get_object(key).gaussians = gaussians


def _append(gaussians, new, optimizer, key):
    if new.count == 0:
        return gaussians
    if optimizer is not None:
        for name in PARAMETER_GROUPS:
            optimizer.append_rows(f"{key}/{name}", new.count)
    return gaussians.concatenate(new)


def _keep(gaussians, mask, optimizer, key):
    if optimizer is not None:
        for name in PARAMETER_GROUPS:
            optimizer.keep_rows(f"{key}/{name}", mask)
    return gaussians.select(mask)


def box_prune_mask(gaussians, box_dims, samples, rng):
    """
    True for Gaussians whose mean of ``samples`` draws from their 3D density
    lies outside the closed object box.
    """
    if gaussians.count == 0:
        return np.zeros(0, dtype=bool)
    covs = build_covariances(gaussians.log_scales, gaussians.rotations)
    chol = np.linalg.cholesky(covs + 1e-12 * np.eye(3))
    draws = rng.standard_normal((gaussians.count, samples, 3))
    points = gaussians.positions[:, None, :] + np.einsum('nij,nsj->nsi', chol, draws)
    return ~points_in_box(points.mean(axis=1), box_dims)


def adaptive_control(scene, stats, iteration, config=None, optimizer=None, seed=0):
    """
    One densify-and-prune pass over every model in the scene (in place).

    Args:
        scene (SceneGraph): Scene to mutate
        stats (DensityStats): Accumulated statistics (reset afterwards)
        iteration (int): Current iteration (seeds the sampling)
        config (DensityConfig, optional): Thresholds
        optimizer (Adam, optional): Optimizer whose moments follow the rows
        seed (int): Base seed

    Returns:
        dict: Per-model counts of cloned, split and pruned Gaussians
    """
    config = config or DensityConfig()
    rng = np.random.default_rng([seed, iteration])
    summary = {}
    for key, gaussians in model_items(scene):
        if key == 'background':
            extent, track = config.background_extent, None
        else:
            track = scene.get_object(key).track
            extent = float(np.linalg.norm(track.box_dims))
        grads = stats.mean_grad(key)
        n0 = gaussians.count
        max_scale = gaussians.scales.max(axis=1) if n0 else np.zeros(0)
        high = grads >= config.grad_threshold

        clone = high & (max_scale <= config.percent_dense * extent)
        gaussians = _append(gaussians, gaussians.select(clone), optimizer, key)

        split = np.concatenate([high & (max_scale > config.percent_dense * extent),
                                np.zeros(gaussians.count - n0, dtype=bool)])
        parents = gaussians.select(split)
        if parents.count:
            children = parents.select(np.repeat(np.arange(parents.count), SPLIT_CHILDREN))
            offsets = rng.standard_normal((children.count, 3)) * children.scales
            rot = quaternion_to_rotation(normalize_quaternions(children.rotations))
            children.positions = children.positions + np.einsum('nij,nj->ni', rot, offsets)
            children.log_scales = children.log_scales - np.log(SPLIT_SCALE_FACTOR)
            gaussians = _append(gaussians, children, optimizer, key)
        split = np.concatenate([split, np.zeros(gaussians.count - len(split), dtype=bool)])

        prune = split | (gaussians.opacities < config.min_opacity)
        if gaussians.count:
            prune |= gaussians.scales.max(axis=1) > config.max_scale_fraction * extent
        if track is not None:
            prune |= box_prune_mask(gaussians, track.box_dims, config.box_samples, rng)
        gaussians = _keep(gaussians, ~prune, optimizer, key)
        gaussians.validate()
        _set_model(scene, key, gaussians)
        stats.reset(key, gaussians.count)
        summary[key] = {'cloned': int(clone.sum()), 'split': int(parents.count),
                        'pruned': int(prune.sum() - parents.count), 'count': gaussians.count}
    logger.debug(f"Adaptive control at iteration {iteration}: {summary}")
    return summary


def reset_opacity(scene, optimizer=None):
    """Clamp every opacity to at most RESET_OPACITY and clear its moments."""
    ceiling = logit(RESET_OPACITY)
    for key, gaussians in model_items(scene):
        gaussians.opacity_logits = np.minimum(gaussians.opacity_logits, ceiling)
        if optimizer is not None:
            optimizer.reset(f"{key}/opacity_logits")
