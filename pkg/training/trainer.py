#!/usr/bin/env python3
"""
Trainer

The optimization loop: render one training frame per iteration, assemble the
weighted loss, run the analytic backward pass, step Adam per parameter group
and periodically run adaptive density control.
"""

import os
import math
import logging
from dataclasses import dataclass, field, asdict
from typing import Optional, List

import numpy as np
from tqdm import tqdm

from ingest.dataset import project_lidar_depth
from renderer.backward import render_backward
from renderer.rasterizer import RenderConfig, render
from scene.checkpoint import save_checkpoint
from scene.gaussians import PARAMETER_GROUPS
from training.density import (DensityConfig, DensityStats, adaptive_control, reset_opacity,
                              model_items, BACKGROUND_EXTENT)
from training.losses import (LossWeights, loss_color, loss_depth, loss_sky, loss_semantic,
                             loss_reg)
from training.optimizer import Adam, get_expon_lr_func
from utils.config import dataclass_from_dict
from utils.errors import ValidationError, NonFiniteLossError
from utils.storage import append_jsonl, save_json

logger = logging.getLogger(__name__)


@dataclass
class LearningRates:
    position_init: float = 1.6e-4
    position_final: float = 1.6e-6
    opacity: float = 0.05
    scale: float = 5e-3
    rotation: float = 1e-3
    appearance: float = 2.5e-3
    semantic: float = 1e-2
    delta_translation_init: float = 5e-3
    delta_translation_final: float = 5e-5
    delta_yaw_init: float = 1e-3
    delta_yaw_final: float = 1e-5
    sky_init: float = 1e-2
    sky_final: float = 1e-4


@dataclass
class TrainConfig:
    iterations: int = 30000
    seed: int = 0
    lr: LearningRates = field(default_factory=LearningRates)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    density: DensityConfig = field(default_factory=DensityConfig)
    densify_from: int = 500
    densify_until: int = 15000
    densify_interval: int = 100
    opacity_reset_interval: int = 3000
    opacity_reset: bool = True
    reg_from: Optional[int] = None
    optimize_poses: bool = True
    use_sky: bool = True
    use_depth: bool = True
    use_semantic: bool = True
    use_reg: bool = True
    tile_size: int = 16
    num_threads: int = 1
    checkpoint_every: int = 0
    log_every: int = 1
    train_frames: Optional[List[int]] = None
    progress: bool = False

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValidationError("iterations must be positive")
        if isinstance(self.lr, dict):
            self.lr = dataclass_from_dict(LearningRates, self.lr, 'lr')
        if isinstance(self.loss_weights, dict):
            self.loss_weights = dataclass_from_dict(LossWeights, self.loss_weights, 'loss_weights')
        if isinstance(self.density, dict):
            self.density = dataclass_from_dict(DensityConfig, self.density, 'density')
        for name, value in asdict(self.lr).items():
            if not value > 0:
                raise ValidationError(f"learning rate {name} must be positive")
        for prefix in ('position', 'delta_translation', 'delta_yaw', 'sky'):
            if getattr(self.lr, f"{prefix}_final") > getattr(self.lr, f"{prefix}_init"):
                raise ValidationError(f"learning rate {prefix} must be non-increasing")

    @property
    def reg_start(self):
        return self.densify_until if self.reg_from is None else self.reg_from

    @classmethod
    def from_dict(cls, data):
        return dataclass_from_dict(cls, data, 'train')


@dataclass
class TrainResult:
    scene: object
    metrics: list
    log_path: Optional[str] = None


def _group_schedules(config, key, extent):
    lr = config.lr
    steps = config.iterations
    schedules = {
        'positions': get_expon_lr_func(lr.position_init * extent, lr.position_final * extent,
                                       max_steps=steps),
        'log_scales': lr.scale,
        'rotations': lr.rotation,
        'opacity_logits': lr.opacity,
        'appearance': lr.appearance,
        'semantic': lr.semantic,
    }
    return schedules


def build_optimizer(scene, config):
    """Adam with one group per (model, parameter), per pose delta, and the sky."""
    optimizer = Adam()
    for key, gaussians in model_items(scene):
        if key == 'background':
            extent = BACKGROUND_EXTENT
        else:
            extent = float(np.linalg.norm(scene.get_object(key).track.box_dims))
        params = gaussians.parameters()
        for name, schedule in _group_schedules(config, key, extent).items():
            optimizer.add_group(f"{key}/{name}", params[name], schedule)
    lr = config.lr
    for obj in scene.objects:
        optimizer.add_group(f"{obj.object_id}/delta_translations", obj.track.delta_translations,
                            get_expon_lr_func(lr.delta_translation_init, lr.delta_translation_final,
                                              max_steps=config.iterations))
        optimizer.add_group(f"{obj.object_id}/delta_yaws", obj.track.delta_yaws,
                            get_expon_lr_func(lr.delta_yaw_init, lr.delta_yaw_final,
                                              max_steps=config.iterations))
    optimizer.add_group('sky', scene.sky.faces,
                        get_expon_lr_func(lr.sky_init, lr.sky_final, max_steps=config.iterations))
    return optimizer


def frame_schedule(frame_indices, iterations, seed):
    """Round-robin over frames with a seeded shuffle per epoch."""
    rng = np.random.default_rng(seed)
    order = []
    while len(order) < iterations:
        order.extend(rng.permutation(frame_indices).tolist())
    return order[:iterations]


def pose_residuals(scene, true_deltas):
    """
    Residuals between learned pose corrections and the corrections that undo
    a known perturbation.

    Args:
        scene (SceneGraph): Scene with learned deltas
        true_deltas (dict): object id -> {'translation': [N_t, 3], 'yaw': [N_t]} of the
            perturbation that was applied (noisy - clean)

    Returns:
        dict: median / max translation (m) and yaw (deg) residuals
    """
    translation, yaw = [], []
    for obj in scene.objects:
        if obj.object_id not in true_deltas:
            continue
        truth = true_deltas[obj.object_id]
        track = obj.track
        valid = track.valid_mask
        # noisy R_t Rz(d) = R_clean  =>  d = -perturbation yaw
        err_t = (track.translations + track.delta_translations
                 - (track.translations - np.asarray(truth['translation'])))[valid]
        translation.append(np.linalg.norm(err_t, axis=1))
        yaw_err = track.delta_yaws + np.asarray(truth['yaw'])
        yaw.append(np.abs(np.arctan2(np.sin(yaw_err), np.cos(yaw_err)))[valid])
    if not translation:
        return {}
    translation = np.concatenate(translation)
    yaw = np.degrees(np.concatenate(yaw))
    return {'pose_translation_median': float(np.median(translation)),
            'pose_translation_max': float(np.max(translation)),
            'pose_yaw_median_deg': float(np.median(yaw)),
            'pose_yaw_max_deg': float(np.max(yaw))}


def _parameter_summary(scene):
    summary = {}
    for key, gaussians in model_items(scene):
        for name, value in gaussians.parameters().items():
            finite = np.isfinite(value)
            summary[f"{key}/{name}"] = {
                'non_finite': int(value.size - finite.sum()),
                'abs_max': float(np.max(np.abs(value[finite]))) if finite.any() else None,
            }
    return summary


def compute_loss(scene, frame, outputs, config, iteration, render_config):
    """
    Weighted loss terms and image-space gradients for one frame.

    Returns:
        tuple: (terms dict, grads dict for render_backward, reg gradient or None)
    """
    weights = config.loss_weights
    terms = {}
    color_loss, g_color = loss_color(outputs.color, frame.image[..., :3], weights.ssim)
    terms['color'] = color_loss
    g_depth = g_opacity = g_semantic = None
    if config.use_depth and weights.depth > 0 and frame.lidar is not None:
        value, grad = loss_depth(outputs.depth, project_lidar_depth(frame))
        terms['depth'] = value
        g_depth = weights.depth * grad
    if config.use_sky and weights.sky > 0 and frame.sky_mask is not None:
        value, grad = loss_sky(outputs.opacity, frame.sky_mask)
        terms['sky'] = value
        g_opacity = weights.sky * grad
    if config.use_semantic and weights.semantic > 0 and frame.semantic is not None:
        value, grad = loss_semantic(outputs.semantic, frame.semantic)
        terms['semantic'] = value
        g_semantic = weights.semantic * grad
    grads = {'grad_color': g_color, 'grad_opacity': g_opacity, 'grad_depth': g_depth,
             'grad_semantic': g_semantic}

    reg = None
    if config.use_reg and weights.reg > 0 and iteration >= config.reg_start and scene.objects:
        objects_only = render(scene, frame.camera, render_config.replace(
            include_background=False, include_object_ids=None, composite_sky=False))
        value, grad = loss_reg(objects_only.opacity)
        terms['reg'] = value
        reg = (objects_only, weights.reg * grad)

    scale = {'color': 1.0, 'depth': weights.depth, 'sky': weights.sky,
             'semantic': weights.semantic, 'reg': weights.reg}
    terms['total'] = float(sum(scale[k] * v for k, v in terms.items()))
    return terms, grads, reg


def _accumulate(total, extra):
    for key in ('background',) + tuple(total.objects):
        target, source = total.groups(key), extra.groups(key)
        for name in target:
            target[name] = target[name] + source[name]
    if extra.sky is not None:
        total.sky = extra.sky if total.sky is None else total.sky + extra.sky


def backward_loss(scene, outputs, grads, reg=None):
    """Scene gradients of the loss returned by compute_loss (frame render plus the object-only reg pass)."""
    gradients = render_backward(scene, outputs, **grads)
    if reg is not None:
        _accumulate(gradients, render_backward(scene, reg[0], grad_opacity=reg[1]))
    return gradients


def apply_gradients(scene, gradients, optimizer, config, iteration):
    """One Adam step for every parameter group."""
    for key, gaussians in model_items(scene):
        grads = gradients.groups(key)
        for name in PARAMETER_GROUPS:
            param = gaussians.parameters()[name]
            gaussians.set_parameter(name, optimizer.step(f"{key}/{name}", param, grads[name], iteration))
    if config.optimize_poses:
        for obj in scene.objects:
            grads = gradients.objects[obj.object_id]
            obj.track.delta_translations = optimizer.step(
                f"{obj.object_id}/delta_translations", obj.track.delta_translations,
                grads['delta_translations'], iteration)
            obj.track.delta_yaws = optimizer.step(f"{obj.object_id}/delta_yaws", obj.track.delta_yaws,
                                                  grads['delta_yaws'], iteration)
    if gradients.sky is not None and config.use_sky:
        scene.sky.faces = optimizer.step('sky', scene.sky.faces, gradients.sky, iteration)


def train(dataset, scene, config=None, output_dir=None, true_deltas=None):
    """
    Optimize ``scene`` (in place) against ``dataset``.

    Args:
        dataset (Dataset): Training data
        scene (SceneGraph): Initialized scene
        config (TrainConfig, optional): Loop settings
        output_dir (str, optional): Where metrics.jsonl and checkpoints go
        true_deltas (dict, optional): Perturbation ground truth for pose-residual metrics

    Returns:
        TrainResult: Trained scene and per-iteration metric records
    """
    config = config or TrainConfig()
    frames = config.train_frames if config.train_frames is not None else list(range(len(dataset.frames)))
    if not frames:
        raise ValidationError("no training frames")
    log_path = None
    if output_dir:
        os.makedirs(output_dir, exist_ok=True)
        log_path = os.path.join(output_dir, 'metrics.jsonl')
        open(log_path, 'w').close()
    optimizer = build_optimizer(scene, config)
    stats = DensityStats(scene)
    schedule = frame_schedule(frames, config.iterations, config.seed)
    metrics = []
    logger.info(f"Training {config.iterations} iterations on {len(frames)} frames, "
                f"{scene.point_count()} Gaussians")

    iterator = range(config.iterations)
    if config.progress:
        iterator = tqdm(iterator, desc='train')
    for iteration in iterator:
        frame = dataset.frames[schedule[iteration]]
        render_config = RenderConfig(tile_size=config.tile_size, timestep=frame.timestep,
                                     composite_sky=config.use_sky, num_threads=config.num_threads)
        outputs = render(scene, frame.camera, render_config)
        terms, grads, reg = compute_loss(scene, frame, outputs, config, iteration, render_config)
        if not all(math.isfinite(v) for v in terms.values()):
            path = None
            if output_dir:
                path = save_json({'iteration': iteration, 'terms': {k: repr(v) for k, v in terms.items()},
                                  'frame': schedule[iteration],
                                  'parameters': _parameter_summary(scene)},
                                 os.path.join(output_dir, 'diagnostics.json'))
            raise NonFiniteLossError(iteration, terms, path)

        gradients = backward_loss(scene, outputs, grads, reg)
        apply_gradients(scene, gradients, optimizer, config, iteration)

        record = {'iteration': iteration, 'frame': schedule[iteration]}
        record.update(terms)
        record['num_gaussians'] = scene.point_count()
        record['num_background'] = scene.background.count
        if true_deltas:
            record.update(pose_residuals(scene, true_deltas))
        metrics.append(record)
        if log_path and iteration % config.log_every == 0:
            append_jsonl(record, log_path)

        if iteration < config.densify_until:
            stats.update(gradients)
            if iteration >= config.densify_from and (iteration + 1) % config.densify_interval == 0:
                adaptive_control(scene, stats, iteration, config.density, optimizer, config.seed)
            if config.opacity_reset and (iteration + 1) % config.opacity_reset_interval == 0:
                reset_opacity(scene, optimizer)
        if output_dir and config.checkpoint_every and (iteration + 1) % config.checkpoint_every == 0:
            save_checkpoint(scene, os.path.join(output_dir, f"checkpoint_{iteration + 1:06d}"))

    if output_dir:
        save_checkpoint(scene, os.path.join(output_dir, 'checkpoint'))
    logger.info(f"Training finished: final loss {metrics[-1]['total']:.6f}, "
                f"{scene.point_count()} Gaussians")
    return TrainResult(scene, metrics, log_path)
