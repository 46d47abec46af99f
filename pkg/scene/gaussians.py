#!/usr/bin/env python3
"""
Gaussian Sets

Columnar storage for 3D Gaussians. Parameters are kept pre-activation
(log-scales, opacity logits) and in float64 while in memory.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from geometry.appearance import SH_C0, COLOR_OFFSET, num_sh_bases
from utils.errors import ValidationError

logger = logging.getLogger(__name__)

STATIC = 'static'
FOURIER4D = 'fourier4d'
BACKGROUND_VECTOR = 'background_vector'
OBJECT_SCALAR = 'object_scalar'

PARAMETER_GROUPS = ('positions', 'log_scales', 'rotations', 'opacity_logits',
                    'appearance', 'semantic')


@dataclass
class AppearanceCoeffs:
    """Per-point SH coefficients, optionally varying over time."""

    mode: str
    sh_degree: int
    fourier_k: int
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.mode not in (STATIC, FOURIER4D):
            raise ValidationError(f"unknown appearance mode {self.mode!r}")
        if (self.fourier_k == 1) != (self.mode == STATIC):
            raise ValidationError("fourier_k must be 1 exactly when the mode is static")
        expected = (self.fourier_k, num_sh_bases(self.sh_degree), 3)
        if self.coeffs.ndim != 4 or self.coeffs.shape[1:] != expected:
            raise ValidationError(
                f"appearance coeffs shape {self.coeffs.shape} does not match [N, {expected[0]}, {expected[1]}, 3]")

    @property
    def num_bases(self):
        return num_sh_bases(self.sh_degree)

    def select(self, index):
        return AppearanceCoeffs(self.mode, self.sh_degree, self.fourier_k, self.coeffs[index])


@dataclass
class SemanticField:
    """
    Semantic logits. Background points carry an M-vector; object points carry
    one scalar that expands to the vehicle class at render time.
    """

    kind: str
    num_classes: int
    logits: np.ndarray

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.kind == BACKGROUND_VECTOR:
            if self.logits.ndim != 2 or self.logits.shape[1] != self.num_classes:
                raise ValidationError(f"background semantic logits must be [N, {self.num_classes}]")
        elif self.kind == OBJECT_SCALAR:
            if self.logits.ndim != 1:
                raise ValidationError("object semantic logits must be [N]")
        else:
            raise ValidationError(f"unknown semantic kind {self.kind!r}")

    @property
    def width(self):
        return self.num_classes if self.kind == BACKGROUND_VECTOR else 1

    def expand(self, vehicle_class_index):
        """Render-time [N, M] logits."""
        if self.kind == BACKGROUND_VECTOR:
            return self.logits
        out = np.zeros((len(self.logits), self.num_classes))
        out[:, vehicle_class_index] = self.logits
        return out

    def select(self, index):
        return SemanticField(self.kind, self.num_classes, self.logits[index])


@dataclass
class GaussianSet:
    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    appearance: AppearanceCoeffs
    semantic: SemanticField

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(-1, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(-1)
        self.validate()

    @property
    def count(self):
        return len(self.positions)

    @property
    def scales(self):
        return np.exp(self.log_scales)

    @property
    def opacities(self):
        return expit(self.opacity_logits)

    def validate(self):
        """Check column lengths and finiteness; raises ValidationError."""
        n = self.count
        columns = {
            'log_scales': self.log_scales, 'rotations': self.rotations,
            'opacity_logits': self.opacity_logits,
            'appearance': self.appearance.coeffs, 'semantic': self.semantic.logits,
        }
        for name, column in columns.items():
            if len(column) != n:
                raise ValidationError(f"column {name} has {len(column)} rows, expected {n}")
        for name, column in dict(columns, positions=self.positions).items():
            if not np.all(np.isfinite(column)):
                raise ValidationError(f"column {name} contains non-finite values")
        if n and (not np.all(np.isfinite(self.scales)) or np.any(self.scales <= 0.0)):
            raise ValidationError("activated scales must be finite and positive")
        if n and np.any(np.linalg.norm(self.rotations, axis=1) == 0.0):
            raise ValidationError("zero quaternion")

    def parameters(self):
        """Mapping from optimizer group name to the live parameter array."""
        return {
            'positions': self.positions,
            'log_scales': self.log_scales,
            'rotations': self.rotations,
            'opacity_logits': self.opacity_logits,
            'appearance': self.appearance.coeffs,
            'semantic': self.semantic.logits,
        }

    def set_parameter(self, name, value):
        if name == 'appearance':
            self.appearance.coeffs = value
        elif name == 'semantic':
            self.semantic.logits = value
        elif name in PARAMETER_GROUPS:
            setattr(self, name, value)
        else:
            raise KeyError(name)

    def select(self, index):
        """New set holding the rows picked by a boolean mask or index array."""
        return GaussianSet(self.positions[index], self.log_scales[index],
                           self.rotations[index], self.opacity_logits[index],
                           self.appearance.select(index), self.semantic.select(index))

    def copy(self):
        return self.select(np.arange(self.count))

    def concatenate(self, other):
        if (other.appearance.mode, other.appearance.sh_degree, other.appearance.fourier_k) != \
                (self.appearance.mode, self.appearance.sh_degree, self.appearance.fourier_k):
            raise ValidationError("cannot concatenate sets with different appearance layouts")
        if other.semantic.kind != self.semantic.kind:
            raise ValidationError("cannot concatenate sets with different semantic kinds")
        return GaussianSet(
            np.concatenate([self.positions, other.positions]),
            np.concatenate([self.log_scales, other.log_scales]),
            np.concatenate([self.rotations, other.rotations]),
            np.concatenate([self.opacity_logits, other.opacity_logits]),
            AppearanceCoeffs(self.appearance.mode, self.appearance.sh_degree,
                             self.appearance.fourier_k,
                             np.concatenate([self.appearance.coeffs, other.appearance.coeffs])),
            SemanticField(self.semantic.kind, self.semantic.num_classes,
                          np.concatenate([self.semantic.logits, other.semantic.logits])))

    @classmethod
    def empty(cls, sh_degree=1, fourier_k=1, semantic_kind=BACKGROUND_VECTOR, num_classes=8):
        return cls.from_colors(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0),
                               np.zeros((0, 3)), sh_degree=sh_degree, fourier_k=fourier_k,
                               semantic_kind=semantic_kind, num_classes=num_classes)

    @classmethod
    def from_colors(cls, positions, log_scales, opacity_logits, colors, sh_degree=1,
                    fourier_k=1, semantic_kind=BACKGROUND_VECTOR, num_classes=8,
                    rotations=None, semantic_logits=None):
        """
        Build a set whose degree-0 SH term reproduces ``colors`` and whose
        higher bands and Fourier terms are zero.
        """
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        n = len(positions)
        coeffs = np.zeros((n, fourier_k, num_sh_bases(sh_degree), 3))
        coeffs[:, 0, 0, :] = (np.asarray(colors, dtype=np.float64).reshape(-1, 3) - COLOR_OFFSET) / SH_C0
        if rotations is None:
            rotations = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        if semantic_logits is None:
            shape = (n, num_classes) if semantic_kind == BACKGROUND_VECTOR else (n,)
            semantic_logits = np.zeros(shape)
        mode = STATIC if fourier_k == 1 else FOURIER4D
        return cls(positions, log_scales, rotations, opacity_logits,
                   AppearanceCoeffs(mode, sh_degree, fourier_k, coeffs),
                   SemanticField(semantic_kind, num_classes, semantic_logits))
