#!/usr/bin/env python3
"""
Tiled Rasterizer

Front-to-back alpha blending of projected Gaussians. Survivors of culling are
sorted once globally (view depth, then source index) and binned into square
tiles; each tile blends its own list independently, so tiles can run on a
thread pool and still give bitwise-identical images.

Blended features per pixel are color (3), depth (1), opacity (1) and the M
semantic logits, all with the same weights.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Dict, Any

import numpy as np

from geometry.camera import project_gaussians
from renderer.assemble import assemble_world_set
from utils.errors import ValidationError

logger = logging.getLogger(__name__)

DEGENERATE_DETERMINANT = 1e-12
FOOTPRINT_SIGMAS = 3.0


@dataclass
class RenderConfig:
    tile_size: int = 16
    alpha_threshold: float = 1.0 / 255.0
    alpha_clamp: float = 0.99
    saturation_stop: float = 1e-4
    include_background: bool = True
    include_object_ids: Optional[list] = None
    composite_sky: bool = True
    timestep: int = 0
    num_threads: int = 1
    detach_semantic_geometry: bool = True

    def __post_init__(self):
        if int(self.tile_size) < 1:
            raise ValidationError("tile_size must be >= 1")
        for name in ('alpha_threshold', 'alpha_clamp', 'saturation_stop'):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValidationError(f"{name} must lie in (0, 1), got {value}")
        if int(self.num_threads) < 1:
            raise ValidationError("num_threads must be >= 1")

    def replace(self, **changes):
        values = dict(self.__dict__)
        values.update(changes)
        return RenderConfig(**values)


@dataclass
class RenderOutputs:
    color: np.ndarray
    opacity: np.ndarray
    depth: np.ndarray
    semantic: np.ndarray
    object_visibility: Dict[str, int]
    diagnostics: Dict[str, int]
    context: Any = field(default=None, repr=False)


@dataclass
class RasterContext:
    """Forward bookkeeping retained for render_backward."""

    camera: Any
    config: RenderConfig
    world: Any
    projection: Any
    kept: np.ndarray
    means2d: np.ndarray
    conics: np.ndarray
    opacities: np.ndarray
    features: np.ndarray
    tiles: list
    sky: Optional[np.ndarray]
    rays: Optional[np.ndarray]
    opacity_image: np.ndarray


def _footprint_radius(cov2d, opacities, alpha_threshold):
    """
    Half-size of the screen square outside of which alpha < alpha_threshold.
    """
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - (a * c - b * b), 0.0))
    ratio = np.log(np.maximum(opacities, alpha_threshold) / alpha_threshold)
    return np.maximum(FOOTPRINT_SIGMAS * np.sqrt(lam_max), np.sqrt(2.0 * lam_max * ratio))


def _bin_tiles(means2d, radius, width, height, tile):
    """Per-tile lists of sorted ranks; list order follows the global sort."""
    x0 = np.clip(np.ceil(means2d[:, 0] - radius), 0, width - 1).astype(np.int64)
    x1 = np.clip(np.floor(means2d[:, 0] + radius), 0, width - 1).astype(np.int64)
    y0 = np.clip(np.ceil(means2d[:, 1] - radius), 0, height - 1).astype(np.int64)
    y1 = np.clip(np.floor(means2d[:, 1] + radius), 0, height - 1).astype(np.int64)
    # rects fully off-screen collapse onto the border; drop them
    on_screen = ((means2d[:, 0] + radius >= 0) & (means2d[:, 0] - radius <= width - 1)
                 & (means2d[:, 1] + radius >= 0) & (means2d[:, 1] - radius <= height - 1))
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    tx0, tx1, ty0, ty1 = x0 // tile, x1 // tile, y0 // tile, y1 // tile
    span_x = np.where(on_screen, tx1 - tx0 + 1, 0)
    span_y = np.where(on_screen, ty1 - ty0 + 1, 0)
    counts = span_x * span_y
    ranks = np.repeat(np.arange(len(means2d)), counts)
    local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    sx = np.repeat(span_x, counts)
    tile_ids = ((np.repeat(ty0, counts) + local // np.maximum(sx, 1)) * tiles_x
                + np.repeat(tx0, counts) + local % np.maximum(sx, 1))
    order = np.argsort(tile_ids, kind='stable')
    tile_ids, ranks = tile_ids[order], ranks[order]
    bounds = np.searchsorted(tile_ids, np.arange(tiles_x * tiles_y + 1))
    tiles = []
    for tile_id in range(tiles_x * tiles_y):
        ty, tx = divmod(tile_id, tiles_x)
        tiles.append((tx * tile, min((tx + 1) * tile, width),
                      ty * tile, min((ty + 1) * tile, height),
                      ranks[bounds[tile_id]:bounds[tile_id + 1]]))
    return tiles


def blend_weights(px, py, means2d, conics, opacities, config, stop=True):
    """
    Per-pixel blending weights for Gaussians listed in depth order.

    Args:
        px, py (np.ndarray): [P] pixel coordinates
        means2d (np.ndarray): [G, 2]
        conics (np.ndarray): [G, 2, 2] inverse 2D covariances
        opacities (np.ndarray): [G]
        config (RenderConfig): Thresholds
        stop (bool): Apply the saturation stop

    Returns:
        dict: dx, dy, power, gauss, alpha_raw, alpha, trans_excl, active, weights [P, G]
    """
    dx = px[:, None] - means2d[None, :, 0]
    dy = py[:, None] - means2d[None, :, 1]
    power = -0.5 * (conics[None, :, 0, 0] * dx * dx + conics[None, :, 1, 1] * dy * dy) \
        - conics[None, :, 0, 1] * dx * dy
    gauss = np.exp(np.minimum(power, 0.0))
    alpha_raw = opacities[None, :] * gauss
    alpha = np.minimum(config.alpha_clamp, alpha_raw)
    alpha = np.where(alpha >= config.alpha_threshold, alpha, 0.0)
    trans_incl = np.cumprod(1.0 - alpha, axis=1)
    trans_excl = np.concatenate([np.ones((len(px), 1)), trans_incl[:, :-1]], axis=1)
    active = alpha > 0.0
    if stop:
        active &= trans_incl >= config.saturation_stop
    weights = np.where(active, alpha * trans_excl, 0.0)
    return {'dx': dx, 'dy': dy, 'power': power, 'gauss': gauss, 'alpha_raw': alpha_raw,
            'alpha': alpha, 'trans_excl': trans_excl, 'active': active, 'weights': weights}


def _rasterize_tile(tile, ctx):
    x0, x1, y0, y1, ranks = tile
    cols, rows = np.meshgrid(np.arange(x0, x1, dtype=np.float64),
                             np.arange(y0, y1, dtype=np.float64))
    px, py = cols.reshape(-1), rows.reshape(-1)
    if len(ranks) == 0:
        return np.zeros((len(px), ctx.features.shape[1]))
    w = blend_weights(px, py, ctx.means2d[ranks], ctx.conics[ranks],
                      ctx.opacities[ranks], ctx.config)['weights']
    return np.einsum('pg,gc->pc', w, ctx.features[ranks], optimize=False)


def prepare(world, camera, config):
    """
    Project, cull and sort a world set.

    Returns:
        tuple: (projection, kept source indices in blend order, conics, diagnostics)
    """
    projection = project_gaussians(world.means, world.covs, camera)
    cov2d = projection.cov2d
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    degenerate = projection.visible & (det <= DEGENERATE_DETERMINANT)
    kept = np.flatnonzero(projection.visible & ~degenerate & (world.opacities >= config.alpha_threshold))
    order = np.lexsort((kept, projection.view_depth[kept]))
    kept = kept[order]
    conics = np.linalg.inv(cov2d[kept]) if len(kept) else np.zeros((0, 2, 2))
    diagnostics = {
        'num_gaussians': int(world.count),
        'culled': int(world.count - projection.visible.sum()),
        'degenerate': int(degenerate.sum()),
        'rendered': int(len(kept)),
    }
    if diagnostics['degenerate']:
        logger.debug(f"Skipped {diagnostics['degenerate']} degenerate 2D covariances")
    return projection, kept, conics, diagnostics


def build_features(world, kept, projection):
    """[G, 5 + M] blended features: color, depth, one (opacity), semantic logits."""
    return np.concatenate([world.colors[kept], projection.view_depth[kept, None],
                           np.ones((len(kept), 1)), world.semantics[kept]], axis=1)


def object_visibility(world, kept):
    visibility = {}
    for sl in world.slices:
        if sl.kind == 'object':
            visibility[sl.object_id] = int(np.count_nonzero((kept >= sl.start) & (kept < sl.stop)))
    return visibility


def composite(accum, camera, scene, config):
    """Split blended features into images and add the sky term."""
    h, w = camera.height, camera.width
    color = accum[:, 0:3].reshape(h, w, 3)
    depth = accum[:, 3].reshape(h, w)
    opacity = accum[:, 4].reshape(h, w)
    semantic = accum[:, 5:].reshape(h, w, -1)
    sky = rays = None
    if config.composite_sky:
        rays = camera.pixel_rays()
        sky = scene.sky.sample(rays)
        color = color + (1.0 - opacity)[:, :, None] * sky
    return color, opacity, depth, semantic, sky, rays


def render(scene, camera, config=None):
    """
    Render color, opacity, depth and semantic logits at ``config.timestep``.

    Args:
        scene (SceneGraph): Scene to draw
        camera (Camera): Target camera
        config (RenderConfig, optional): Rasterizer settings

    Returns:
        RenderOutputs: Images plus bookkeeping for render_backward
    """
    config = config or RenderConfig()
    world = assemble_world_set(scene, config.timestep, camera, config.include_background,
                               config.include_object_ids)
    projection, kept, conics, diagnostics = prepare(world, camera, config)
    means2d = projection.mean2d[kept]
    opacities = world.opacities[kept]
    radius = _footprint_radius(projection.cov2d[kept], opacities, config.alpha_threshold)
    tiles = _bin_tiles(means2d, radius, camera.width, camera.height, int(config.tile_size))
    features = build_features(world, kept, projection)
    ctx = RasterContext(camera, config, world, projection, kept, means2d, conics, opacities,
                        features, tiles, None, None, None)

    accum = np.zeros((camera.height, camera.width, features.shape[1]))
    if config.num_threads > 1:
        with ThreadPoolExecutor(max_workers=int(config.num_threads)) as pool:
            results = list(pool.map(lambda tile: _rasterize_tile(tile, ctx), tiles))
    else:
        results = [_rasterize_tile(tile, ctx) for tile in tiles]
    for (x0, x1, y0, y1, _), values in zip(tiles, results):
        accum[y0:y1, x0:x1] = values.reshape(y1 - y0, x1 - x0, -1)

    color, opacity, depth, semantic, sky, rays = composite(
        accum.reshape(-1, features.shape[1]), camera, scene, config)
    ctx.sky, ctx.rays, ctx.opacity_image = sky, rays, opacity
    return RenderOutputs(color, opacity, depth, semantic, object_visibility(world, kept),
                         diagnostics, ctx)


@dataclass
class DecomposedRender:
    outputs: RenderOutputs
    object_opacity: np.ndarray


def render_decomposed(scene, camera, config, target='all'):
    """
    Render one part of the scene and the accumulated alpha of all objects.

    Args:
        scene (SceneGraph): Scene to draw
        camera (Camera): Target camera
        config (RenderConfig): Base settings (its include filters are replaced)
        target (str): 'all', 'background', 'objects' or an object id

    Returns:
        DecomposedRender: Filtered outputs plus the objects-only opacity image
    """
    config = config or RenderConfig()
    target = str(target)
    if target == 'all':
        part = config.replace(include_background=True, include_object_ids=None)
    elif target == 'background':
        part = config.replace(include_background=True, include_object_ids=[])
    elif target == 'objects':
        part = config.replace(include_background=False, include_object_ids=None)
    else:
        scene.get_object(target)
        part = config.replace(include_background=False, include_object_ids=[target])
    outputs = render(scene, camera, part)
    objects_only = render(scene, camera, config.replace(include_background=False,
                                                        include_object_ids=None,
                                                        composite_sky=False))
    return DecomposedRender(outputs, objects_only.opacity)
