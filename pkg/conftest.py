"""Shared pytest fixtures: small random scenes and cameras."""

import numpy as np
import pytest

from geometry.camera import Camera, look_at
from geometry.transforms import rotation_z
from scene.gaussians import GaussianSet, AppearanceCoeffs, SemanticField, STATIC, FOURIER4D, \
    BACKGROUND_VECTOR, OBJECT_SCALAR
from scene.graph import SceneGraph, ObjectModel
from scene.pose import PoseTrack
from scene.sky import SkyCubemap


def _f32(values):
    return np.asarray(values, dtype=np.float32).astype(np.float64)


def random_gaussians(rng, n, kind=BACKGROUND_VECTOR, sh_degree=1, fourier_k=1, num_classes=8,
                     spread=1.0, center=(0.0, 0.0, 0.0)):
    """Random set whose values survive a float32 round trip unchanged."""
    quats = rng.standard_normal((n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    bases = (sh_degree + 1) ** 2
    semantic = rng.normal(0, 1, (n, num_classes)) if kind == BACKGROUND_VECTOR else rng.normal(0, 1, n)
    return GaussianSet(
        _f32(np.asarray(center) + rng.normal(0, spread, (n, 3))),
        _f32(rng.normal(-2.0, 0.3, (n, 3))),
        _f32(quats),
        _f32(rng.normal(0, 1, n)),
        AppearanceCoeffs(STATIC if fourier_k == 1 else FOURIER4D, sh_degree, fourier_k,
                         _f32(rng.normal(0, 0.3, (n, fourier_k, bases, 3)))),
        SemanticField(kind, num_classes, _f32(semantic)))


def random_track(rng, num_frames, dims=(4.0, 2.0, 1.5)):
    rotations = np.stack([rotation_z(a) for a in rng.uniform(-np.pi, np.pi, num_frames)])
    return PoseTrack(rotations, rng.normal(0, 3, (num_frames, 3)), dims,
                     np.ones(num_frames, dtype=bool))


def random_scene(rng, n_background=20, n_objects=1, object_points=8, num_frames=4, sky_resolution=2):
    background = random_gaussians(rng, n_background)
    objects = [ObjectModel(str(i), random_gaussians(rng, object_points, kind=OBJECT_SCALAR, fourier_k=3),
                           random_track(rng, num_frames)) for i in range(n_objects)]
    sky = SkyCubemap(rng.integers(0, 65536, (6, sky_resolution, sky_resolution, 3)) / 65535.0)
    rot, trans = look_at([0.0, -6.0, 1.0], [0.0, 0.0, 0.0])
    cameras = {(t, 0): Camera(40.0, 40.0, 16.0, 12.0, rot, trans, 32, 24) for t in range(num_frames)}
    return SceneGraph(background, objects, sky, cameras=cameras)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_camera():
    return Camera(30.0, 30.0, 12.0, 10.0, np.eye(3), np.zeros(3), 24, 20)
