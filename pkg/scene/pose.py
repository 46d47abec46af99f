#!/usr/bin/env python3
"""
Pose Tracks

Per-frame object poses (world <- object) with learnable yaw and translation
corrections.
"""

from dataclasses import dataclass

import numpy as np

from geometry.transforms import is_rotation, effective_pose
from utils.errors import ValidationError


@dataclass
class PoseTrack:
    rotations: np.ndarray
    translations: np.ndarray
    box_dims: np.ndarray
    valid_mask: np.ndarray
    delta_translations: np.ndarray = None
    delta_yaws: np.ndarray = None

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 3, 3)
        n = len(self.rotations)
        self.translations = np.asarray(self.translations, dtype=np.float64).reshape(-1, 3)
        self.box_dims = np.asarray(self.box_dims, dtype=np.float64).reshape(3)
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool).reshape(-1)
        if self.delta_translations is None:
            self.delta_translations = np.zeros((n, 3))
        if self.delta_yaws is None:
            self.delta_yaws = np.zeros(n)
        self.delta_translations = np.asarray(self.delta_translations, dtype=np.float64).reshape(-1, 3)
        self.delta_yaws = np.asarray(self.delta_yaws, dtype=np.float64).reshape(-1)
        self.validate()

    @property
    def frame_count(self):
        return len(self.rotations)

    def validate(self):
        n = self.frame_count
        for name in ('translations', 'valid_mask', 'delta_translations', 'delta_yaws'):
            if len(getattr(self, name)) != n:
                raise ValidationError(f"pose track column {name} has wrong length (expected {n})")
        for t, rot in enumerate(self.rotations):
            if not is_rotation(rot):
                raise ValidationError(f"invalid rotation at frame {t}")
        for name in ('translations', 'delta_translations', 'delta_yaws', 'box_dims'):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationError(f"pose track column {name} contains non-finite values")
        if np.any(self.box_dims <= 0.0):
            raise ValidationError("box dimensions must be positive")

    def effective_pose(self, t):
        return effective_pose(self, t)

    def copy(self):
        return PoseTrack(self.rotations.copy(), self.translations.copy(), self.box_dims.copy(),
                         self.valid_mask.copy(), self.delta_translations.copy(),
                         self.delta_yaws.copy())

    def to_dict(self):
        return {
            'rotations': [[float(v) for v in rot.reshape(-1)] for rot in self.rotations],
            'translations': [[float(v) for v in row] for row in self.translations],
            'delta_translations': [[float(v) for v in row] for row in self.delta_translations],
            'delta_yaws': [float(v) for v in self.delta_yaws],
            'box_dims': [float(v) for v in self.box_dims],
            'valid': [bool(v) for v in self.valid_mask],
        }

    @classmethod
    def from_dict(cls, data):
        n = len(data['rotations'])
        return cls(rotations=np.array(data['rotations'], dtype=np.float64).reshape(n, 3, 3),
                   translations=np.array(data['translations'], dtype=np.float64).reshape(n, 3),
                   box_dims=np.array(data['box_dims'], dtype=np.float64),
                   valid_mask=np.array(data.get('valid', [True] * n), dtype=bool),
                   delta_translations=np.array(data.get('delta_translations', np.zeros((n, 3))),
                                               dtype=np.float64).reshape(n, 3),
                   delta_yaws=np.array(data.get('delta_yaws', np.zeros(n)), dtype=np.float64))
