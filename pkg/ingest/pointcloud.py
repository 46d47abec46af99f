#!/usr/bin/env python3
"""
Point Clouds

World-frame point sets with optional RGB, stored as PLY (ASCII or binary
little-endian; xyz float32, optional red/green/blue uint8).
"""

import os
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from plyfile import PlyData, PlyElement

from utils.errors import DatasetError

logger = logging.getLogger(__name__)


@dataclass
class PointCloud:
    positions: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.positions)):
            raise DatasetError("point cloud contains non-finite coordinates")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
            if len(self.colors) != len(self.positions):
                raise DatasetError("point colors and positions differ in length")

    def __len__(self):
        return len(self.positions)

    def select(self, index):
        colors = None if self.colors is None else self.colors[index]
        return PointCloud(self.positions[index], colors)

    @staticmethod
    def concatenate(clouds):
        clouds = [c for c in clouds if c is not None]
        if not clouds:
            return PointCloud(np.zeros((0, 3)))
        positions = np.concatenate([c.positions for c in clouds])
        if all(c.colors is not None for c in clouds):
            return PointCloud(positions, np.concatenate([c.colors for c in clouds]))
        return PointCloud(positions)


def read_ply(path):
    """
    Read a PLY vertex element.

    Args:
        path (str): PLY file path

    Returns:
        PointCloud: Positions (and colors in [0, 1] when present)
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Point cloud not found: {path}")
    try:
        plydata = PlyData.read(path)
        vertices = plydata['vertex']
    except Exception as e:
        raise DatasetError(f"{path}: unreadable PLY: {e}") from e
    names = {p.name for p in vertices.properties}
    if not {'x', 'y', 'z'} <= names:
        raise DatasetError(f"{path}: vertex element lacks x/y/z")
    positions = np.vstack([vertices['x'], vertices['y'], vertices['z']]).T.astype(np.float64)
    colors = None
    if {'red', 'green', 'blue'} <= names:
        colors = np.vstack([vertices['red'], vertices['green'], vertices['blue']]).T / 255.0
    logger.debug(f"Read {len(positions)} points from {path}")
    try:
        return PointCloud(positions, colors)
    except DatasetError as e:
        raise DatasetError(f"{path}: {e}") from e


def write_ply(cloud, path, text=False):
    """Write a PointCloud as PLY with float32 coordinates."""
    dtype = [('x', 'f4'), ('y', 'f4'), ('z', 'f4')]
    if cloud.colors is not None:
        dtype += [('red', 'u1'), ('green', 'u1'), ('blue', 'u1')]
    elements = np.empty(len(cloud), dtype=dtype)
    for axis, name in enumerate('xyz'):
        elements[name] = cloud.positions[:, axis]
    if cloud.colors is not None:
        rgb = np.rint(np.clip(cloud.colors, 0.0, 1.0) * 255.0).astype(np.uint8)
        for channel, name in enumerate(('red', 'green', 'blue')):
            elements[name] = rgb[:, channel]
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    PlyData([PlyElement.describe(elements, 'vertex')], text=text, byte_order='<').write(path)
    logger.debug(f"Wrote {len(cloud)} points to {path}")
    return path
