#!/usr/bin/env python3
"""
Analytic Backward Pass

Reverse-mode gradients of ``render`` w.r.t. every learnable scene parameter:
blending, projection, SH/Fourier appearance, pose composition, covariance
construction and the sky cubemap. Tile-private accumulators are merged in
tile order.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from geometry.appearance import eval_sh_color_backward
from geometry.camera import project_gaussians_backward
from geometry.transforms import build_covariances_backward, rotation_z_derivative
from renderer.rasterizer import blend_weights
from utils.errors import ValidationError

logger = logging.getLogger(__name__)


@dataclass
class SceneGradients:
    background: Dict[str, np.ndarray]
    objects: Dict[str, Dict[str, np.ndarray]]
    sky: Optional[np.ndarray]
    stats: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)

    def groups(self, key):
        return self.background if key == 'background' else self.objects[key]


def _zero_grads(gaussians):
    return {name: np.zeros_like(value) for name, value in gaussians.parameters().items()}


def _zero_stats(n):
    return {'ndc_grad_norm': np.zeros(n), 'visible': np.zeros(n, dtype=bool),
            'max_weight': np.zeros(n)}


def _upstream(value, shape, name):
    if value is None:
        return np.zeros(shape)
    value = np.asarray(value, dtype=np.float64)
    if value.shape != shape:
        raise ValidationError(f"upstream gradient {name} has shape {value.shape}, expected {shape}")
    return value


def _tile_backward(tile, ctx, upstream, geometry_width):
    x0, x1, y0, y1, ranks = tile
    if len(ranks) == 0:
        return None
    cols, rows = np.meshgrid(np.arange(x0, x1, dtype=np.float64),
                             np.arange(y0, y1, dtype=np.float64))
    px, py = cols.reshape(-1), rows.reshape(-1)
    g_pix = upstream[y0:y1, x0:x1].reshape(len(px), -1)
    conics = ctx.conics[ranks]
    features = ctx.features[ranks]
    b = blend_weights(px, py, ctx.means2d[ranks], conics, ctx.opacities[ranks], ctx.config)
    weights, alpha = b['weights'], b['alpha']

    grad_features = np.einsum('pg,pc->gc', weights, g_pix, optimize=False)
    v = np.einsum('pc,gc->pg', g_pix[:, :geometry_width], features[:, :geometry_width],
                  optimize=False)
    wv = weights * v
    suffix = np.cumsum(wv[:, ::-1], axis=1)[:, ::-1] - wv
    grad_alpha = b['trans_excl'] * v - suffix / (1.0 - alpha)
    unclamped = b['active'] & (b['alpha_raw'] < ctx.config.alpha_clamp)
    grad_alpha = np.where(unclamped, grad_alpha, 0.0)

    grad_opacity = np.sum(grad_alpha * b['gauss'], axis=0)
    grad_power = grad_alpha * b['alpha_raw']
    dx, dy = b['dx'], b['dy']
    grad_mean2d = np.stack([
        np.sum(grad_power * (conics[None, :, 0, 0] * dx + conics[None, :, 0, 1] * dy), axis=0),
        np.sum(grad_power * (conics[None, :, 0, 1] * dx + conics[None, :, 1, 1] * dy), axis=0),
    ], axis=-1)
    off_diag = -0.5 * np.sum(grad_power * dx * dy, axis=0)
    grad_conic = np.empty((len(ranks), 2, 2))
    grad_conic[:, 0, 0] = -0.5 * np.sum(grad_power * dx * dx, axis=0)
    grad_conic[:, 1, 1] = -0.5 * np.sum(grad_power * dy * dy, axis=0)
    grad_conic[:, 0, 1] = off_diag
    grad_conic[:, 1, 0] = off_diag
    return ranks, grad_features, grad_opacity, grad_mean2d, grad_conic, weights.max(axis=0)


def render_backward(scene, outputs, grad_color=None, grad_opacity=None, grad_depth=None,
                    grad_semantic=None):
    """
    Propagate image-space gradients back to scene parameters.

    Args:
        scene (SceneGraph): The scene passed to render
        outputs (RenderOutputs): Forward result with its context retained
        grad_color (np.ndarray, optional): [H, W, 3]
        grad_opacity (np.ndarray, optional): [H, W]
        grad_depth (np.ndarray, optional): [H, W]
        grad_semantic (np.ndarray, optional): [H, W, M]

    Returns:
        SceneGradients: Per-group gradients, sky texel gradients and densification stats
    """
    ctx = outputs.context
    if ctx is None:
        raise ValidationError("render outputs carry no backward context")
    camera, config, world = ctx.camera, ctx.config, ctx.world
    h, w = camera.height, camera.width
    m = scene.num_classes
    g_color = _upstream(grad_color, (h, w, 3), 'color')
    g_opacity = _upstream(grad_opacity, (h, w), 'opacity')
    g_depth = _upstream(grad_depth, (h, w), 'depth')
    g_semantic = _upstream(grad_semantic, (h, w, m), 'semantic')

    sky_grad = None
    if ctx.sky is not None:
        sky_grad = scene.sky.sample_backward(ctx.rays, g_color * (1.0 - ctx.opacity_image)[:, :, None])
        g_opacity = g_opacity - np.sum(g_color * ctx.sky, axis=-1)

    upstream = np.concatenate([g_color, g_depth[:, :, None], g_opacity[:, :, None], g_semantic],
                              axis=-1)
    geometry_width = 5 if config.detach_semantic_geometry else upstream.shape[-1]

    n_kept = len(ctx.kept)
    acc_features = np.zeros((n_kept, ctx.features.shape[1]))
    acc_opacity = np.zeros(n_kept)
    acc_mean2d = np.zeros((n_kept, 2))
    acc_conic = np.zeros((n_kept, 2, 2))
    acc_weight = np.zeros(n_kept)
    if n_kept:
        if config.num_threads > 1:
            with ThreadPoolExecutor(max_workers=int(config.num_threads)) as pool:
                results = list(pool.map(lambda t: _tile_backward(t, ctx, upstream, geometry_width),
                                        ctx.tiles))
        else:
            results = [_tile_backward(t, ctx, upstream, geometry_width) for t in ctx.tiles]
        for result in results:
            if result is None:
                continue
            ranks, g_feat, g_op, g_mu, g_con, max_w = result
            np.add.at(acc_features, ranks, g_feat)
            np.add.at(acc_opacity, ranks, g_op)
            np.add.at(acc_mean2d, ranks, g_mu)
            np.add.at(acc_conic, ranks, g_con)
            np.maximum.at(acc_weight, ranks, max_w)

    n = world.count
    kept = ctx.kept
    full_mean2d = np.zeros((n, 2))
    full_cov2d = np.zeros((n, 2, 2))
    full_depth = np.zeros(n)
    full_colors = np.zeros((n, 3))
    full_opacity = np.zeros(n)
    full_semantic = np.zeros((n, m))
    full_weight = np.zeros(n)
    full_mean2d[kept] = acc_mean2d
    full_cov2d[kept] = -ctx.conics @ acc_conic @ ctx.conics
    full_depth[kept] = acc_features[:, 3]
    full_colors[kept] = acc_features[:, 0:3]
    full_opacity[kept] = acc_opacity
    full_semantic[kept] = acc_features[:, 5:]
    full_weight[kept] = acc_weight
    g_means, g_covs = project_gaussians_backward(ctx.projection, camera, full_mean2d,
                                                 full_cov2d, full_depth)
    visible = np.zeros(n, dtype=bool)
    visible[kept] = True

    grads = SceneGradients(_zero_grads(scene.background),
                           {obj.object_id: dict(_zero_grads(obj.gaussians),
                                                delta_translations=np.zeros_like(obj.track.delta_translations),
                                                delta_yaws=np.zeros_like(obj.track.delta_yaws))
                            for obj in scene.objects},
                           sky_grad,
                           {'background': _zero_stats(scene.background.count)})
    for obj in scene.objects:
        grads.stats[obj.object_id] = _zero_stats(obj.gaussians.count)

    # pixel = ((ndc + 1) * size - 1) / 2, so d/d(ndc) = size / 2 * d/d(pixel)
    ndc_scale = np.array([0.5 * w, 0.5 * h])
    center = camera.center
    for sl in world.slices:
        s = slice(sl.start, sl.stop)
        if sl.stop == sl.start:
            continue
        key = 'background' if sl.kind == 'background' else sl.object_id
        gaussians = scene.background if sl.kind == 'background' else scene.get_object(sl.object_id).gaussians
        out = grads.groups(key)
        app = gaussians.appearance
        g_z, g_dirs = eval_sh_color_backward(sl.sh_coeffs, sl.view_dirs, app.sh_degree,
                                             full_colors[s])
        out['appearance'] = sl.fourier_weights[None, :, None, None] * g_z[:, None]
        opac = gaussians.opacities
        out['opacity_logits'] = full_opacity[s] * opac * (1.0 - opac)

        if sl.kind == 'background':
            g_mu = g_means[s] + g_dirs
            g_local_cov = g_covs[s]
            out['semantic'] = full_semantic[s]
            out['positions'] = g_mu
        else:
            rot, trans = sl.pose
            track = scene.get_object(sl.object_id).track
            t = config.timestep
            mu_o = gaussians.positions
            rel = mu_o @ rot.T + trans - center
            g_mu_w = g_means[s] + g_dirs @ rot.T
            g_cov_w = g_covs[s]
            g_rot = rel.T @ g_dirs + g_mu_w.T @ mu_o
            g_rot += np.sum((g_cov_w + np.swapaxes(g_cov_w, -1, -2)) @ rot @ sl.local_covs, axis=0)
            g_local_cov = rot.T @ g_cov_w @ rot
            out['positions'] = g_mu_w @ rot
            out['semantic'] = full_semantic[s][:, scene.vehicle_class_index]
            out['delta_translations'][t] = g_mu_w.sum(axis=0)
            out['delta_yaws'][t] = np.sum(g_rot * (track.rotations[t] @ rotation_z_derivative(track.delta_yaws[t])))

        g_log_scales, g_rotations = build_covariances_backward(gaussians.log_scales,
                                                               gaussians.rotations, g_local_cov)
        out['log_scales'] = g_log_scales
        out['rotations'] = g_rotations
        stats = grads.stats[key]
        stats['ndc_grad_norm'] = np.linalg.norm(full_mean2d[s] * ndc_scale, axis=1)
        stats['visible'] = visible[s]
        stats['max_weight'] = full_weight[s]
    return grads
