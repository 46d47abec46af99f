#!/usr/bin/env python3
"""
Sky Cubemap

Six-face learnable RGB texture indexed by world ray direction. Faces follow
the +X, -X, +Y, -Y, +Z, -Z cube-map order with clamp-to-edge bilinear
filtering.
"""

import logging
from dataclasses import dataclass

import numpy as np

from utils.errors import ValidationError

logger = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 1024


@dataclass
class SkyCubemap:
    faces: np.ndarray

    def __post_init__(self):
        self.faces = np.asarray(self.faces, dtype=np.float64)
        if self.faces.ndim != 4 or self.faces.shape[0] != 6 or self.faces.shape[3] != 3 \
                or self.faces.shape[1] != self.faces.shape[2] or self.faces.shape[1] < 1:
            raise ValidationError(f"cubemap faces must be [6, R, R, 3], got {self.faces.shape}")
        if not np.all(np.isfinite(self.faces)):
            raise ValidationError("cubemap contains non-finite texels")

    @property
    def resolution(self):
        return self.faces.shape[1]

    @classmethod
    def constant(cls, resolution=DEFAULT_RESOLUTION, value=0.5):
        return cls(np.full((6, resolution, resolution, 3), float(value)))

    def copy(self):
        return SkyCubemap(self.faces.copy())

    def _lookup(self, directions):
        d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
        x, y, z = d[:, 0], d[:, 1], d[:, 2]
        ax, ay, az = np.abs(x), np.abs(y), np.abs(z)
        major = np.argmax(np.stack([ax, ay, az], axis=-1), axis=-1)
        face = np.where(major == 0, np.where(x >= 0, 0, 1),
                        np.where(major == 1, np.where(y >= 0, 2, 3), np.where(z >= 0, 4, 5)))
        ma = np.choose(major, [ax, ay, az])
        if np.any(ma == 0.0):
            raise ValidationError("sky lookup direction must be non-zero")
        sc = np.choose(face, [-z, z, x, x, x, -x])
        tc = np.choose(face, [-y, -y, z, -z, -y, -y])
        res = self.resolution
        fu = np.clip(0.5 * (sc / ma + 1.0) * res - 0.5, 0.0, res - 1)
        fv = np.clip(0.5 * (tc / ma + 1.0) * res - 0.5, 0.0, res - 1)
        u0 = np.floor(fu).astype(np.int64)
        v0 = np.floor(fv).astype(np.int64)
        u1 = np.minimum(u0 + 1, res - 1)
        v1 = np.minimum(v0 + 1, res - 1)
        wu = fu - u0
        wv = fv - v0
        taps = [(v0, u0, (1 - wu) * (1 - wv)), (v0, u1, wu * (1 - wv)),
                (v1, u0, (1 - wu) * wv), (v1, u1, wu * wv)]
        return face, taps

    def sample(self, directions):
        """
        Bilinear sky color along world directions.

        Args:
            directions (np.ndarray): [..., 3] non-zero directions

        Returns:
            np.ndarray: [..., 3] RGB
        """
        shape = np.shape(directions)[:-1]
        face, taps = self._lookup(directions)
        color = np.zeros((len(face), 3))
        for rows, cols, weight in taps:
            color += weight[:, None] * self.faces[face, rows, cols]
        return color.reshape(shape + (3,))

    def sample_backward(self, directions, grad_color):
        """Gradient w.r.t. texels, [6, R, R, 3], for an upstream [..., 3] gradient."""
        face, taps = self._lookup(directions)
        g = np.asarray(grad_color, dtype=np.float64).reshape(-1, 3)
        grad = np.zeros_like(self.faces)
        for rows, cols, weight in taps:
            np.add.at(grad, (face, rows, cols), weight[:, None] * g)
        return grad


def texel_directions(resolution):
    """Unnormalized world direction through each texel center, [6, R, R, 3]."""
    centers = 2.0 * (np.arange(resolution) + 0.5) / resolution - 1.0
    sc, tc = np.meshgrid(centers, centers)
    one = np.ones_like(sc)
    faces = [
        np.stack([one, -tc, -sc], axis=-1),
        np.stack([-one, -tc, sc], axis=-1),
        np.stack([sc, one, tc], axis=-1),
        np.stack([sc, -one, -tc], axis=-1),
        np.stack([sc, -tc, one], axis=-1),
        np.stack([-sc, -tc, -one], axis=-1),
    ]
    return np.stack(faces)
