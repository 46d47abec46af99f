#!/usr/bin/env python3
"""
Reference Renderer

Untiled blending of every projected Gaussian in full depth order, without the
saturation stop. Slow; meant as the ground truth for small scenes.
"""

import numpy as np

from geometry.camera import project_gaussians
from renderer.assemble import assemble_world_set
from renderer.rasterizer import (RenderConfig, RenderOutputs, DEGENERATE_DETERMINANT,
                                 blend_weights, build_features, composite, object_visibility)


def render_reference(scene, camera, config=None):
    """
    Render like ``render`` but row by row over all Gaussians.

    Args:
        scene (SceneGraph): Scene to draw (intended for at most ~1e4 points)
        camera (Camera): Target camera
        config (RenderConfig, optional): Thresholds and include filters

    Returns:
        RenderOutputs: Images without backward bookkeeping
    """
    config = config or RenderConfig()
    world = assemble_world_set(scene, config.timestep, camera, config.include_background,
                               config.include_object_ids)
    projection = project_gaussians(world.means, world.covs, camera)
    cov2d = projection.cov2d
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    degenerate = projection.visible & (det <= DEGENERATE_DETERMINANT)
    kept = np.flatnonzero(projection.visible & ~degenerate)
    kept = kept[np.lexsort((kept, projection.view_depth[kept]))]
    conics = np.linalg.inv(cov2d[kept]) if len(kept) else np.zeros((0, 2, 2))
    means2d = projection.mean2d[kept]
    opacities = world.opacities[kept]
    features = build_features(world, kept, projection)

    accum = np.zeros((camera.height, camera.width, features.shape[1]))
    cols = np.arange(camera.width, dtype=np.float64)
    if len(kept):
        for row in range(camera.height):
            rows = np.full(camera.width, float(row))
            weights = blend_weights(cols, rows, means2d, conics, opacities, config,
                                    stop=False)['weights']
            accum[row] = np.einsum('pg,gc->pc', weights, features, optimize=False)

    color, opacity, depth, semantic, _, _ = composite(
        accum.reshape(-1, features.shape[1]), camera, scene, config)
    diagnostics = {'num_gaussians': int(world.count),
                   'culled': int(world.count - projection.visible.sum()),
                   'degenerate': int(degenerate.sum()), 'rendered': int(len(kept))}
    return RenderOutputs(color, opacity, depth, semantic, object_visibility(world, kept),
                         diagnostics)
