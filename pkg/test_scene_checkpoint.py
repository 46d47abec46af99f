#!/usr/bin/env python3
"""
Tests for the scene model and checkpoint storage
"""

import json
import os

import numpy as np
import pytest

from conftest import random_scene, random_gaussians, random_track
from geometry.appearance import eval_fourier_sh
from scene.checkpoint import save_checkpoint, load_checkpoint
from scene.gaussians import GaussianSet, AppearanceCoeffs, SemanticField, OBJECT_SCALAR, STATIC
from scene.graph import SceneGraph, ObjectModel
from scene.sky import SkyCubemap, texel_directions
from utils.errors import CheckpointError, ValidationError


def files_bytes(path):
    out = {}
    for name in sorted(os.listdir(path)):
        with open(os.path.join(path, name), 'rb') as f:
            out[name] = f.read()
    return out


def assert_sets_equal(a, b):
    for name, value in a.parameters().items():
        assert np.array_equal(value, b.parameters()[name]), name


def test_empty_scene_round_trip(tmp_path):
    scene = SceneGraph(GaussianSet.empty(), [], SkyCubemap.constant(2, 0.0))
    save_checkpoint(scene, tmp_path / 'ckpt')
    loaded = load_checkpoint(tmp_path / 'ckpt')
    assert loaded.point_count() == 0
    assert loaded.objects == []
    assert np.array_equal(loaded.sky.faces, scene.sky.faces)


def test_single_object_round_trip_is_bit_identical(tmp_path, rng):
    scene = random_scene(rng, n_background=0, n_objects=1, object_points=8)
    save_checkpoint(scene, tmp_path / 'ckpt')
    loaded = load_checkpoint(tmp_path / 'ckpt')
    assert_sets_equal(scene.objects[0].gaussians, loaded.objects[0].gaussians)
    track, loaded_track = scene.objects[0].track, loaded.objects[0].track
    assert np.array_equal(track.rotations, loaded_track.rotations)
    assert np.array_equal(track.translations, loaded_track.translations)
    assert np.array_equal(scene.sky.faces, loaded.sky.faces)
    assert loaded.cameras.keys() == scene.cameras.keys()


@pytest.mark.parametrize('seed', range(10))
def test_save_load_save_is_byte_identical(tmp_path, seed):
    scene = random_scene(np.random.default_rng(seed), n_objects=seed % 3)
    # training values are float64; the first save rounds them
    scene.background.positions = scene.background.positions + 1e-9
    save_checkpoint(scene, tmp_path / 'a')
    save_checkpoint(load_checkpoint(tmp_path / 'a'), tmp_path / 'b')
    assert files_bytes(tmp_path / 'a') == files_bytes(tmp_path / 'b')


def test_reflected_track_rotation_rejected(tmp_path, rng):
    scene = random_scene(rng)
    save_checkpoint(scene, tmp_path / 'ckpt')
    meta_path = tmp_path / 'ckpt' / 'meta.json'
    meta = json.loads(meta_path.read_text())
    meta['objects'][0]['track']['rotations'][1] = [1, 0, 0, 0, 1, 0, 0, 0, -1]
    meta_path.write_text(json.dumps(meta))
    with pytest.raises(CheckpointError, match="invalid rotation"):
        load_checkpoint(tmp_path / 'ckpt')


def test_unnormalized_quaternion_renormalized_on_load(tmp_path, rng):
    scene = random_scene(rng, n_objects=0)
    scene.background.rotations[0] = [0.999, 0.0, 0.0, 0.0]
    save_checkpoint(scene, tmp_path / 'ckpt')
    loaded = load_checkpoint(tmp_path / 'ckpt')
    assert np.linalg.norm(loaded.background.rotations[0]) == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(loaded.background.rotations[1:], scene.background.rotations[1:])


def test_truncated_column_file_rejected(tmp_path, rng):
    scene = random_scene(rng)
    save_checkpoint(scene, tmp_path / 'ckpt')
    path = tmp_path / 'ckpt' / 'background.bin'
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(CheckpointError, match="shape mismatch"):
        load_checkpoint(tmp_path / 'ckpt')


@pytest.mark.parametrize('object_id', ['../outside', 'a/b', '..', ''])
def test_unsafe_object_id_rejected_before_writing(tmp_path, rng, object_id):
    scene = random_scene(rng)
    scene.objects[0].object_id = object_id
    with pytest.raises(CheckpointError, match="file name"):
        save_checkpoint(scene, tmp_path / 'ckpt')
    assert not (tmp_path / 'ckpt').exists()
    assert not (tmp_path / 'outside.bin').exists()


def test_object_file_outside_checkpoint_rejected(tmp_path, rng):
    save_checkpoint(random_scene(rng), tmp_path / 'ckpt')
    meta_path = tmp_path / 'ckpt' / 'meta.json'
    meta = json.loads(meta_path.read_text())
    meta['objects'][0]['file'] = '../object_0.bin'
    meta_path.write_text(json.dumps(meta))
    with pytest.raises(CheckpointError, match="stored as"):
        load_checkpoint(tmp_path / 'ckpt')


def test_missing_checkpoint_raises_file_not_found(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / 'nothing')


def test_activation_ranges(rng):
    gaussians = random_gaussians(rng, 50)
    gaussians.opacity_logits = rng.normal(0, 5, 50)
    assert np.all((gaussians.opacities > 0) & (gaussians.opacities < 1))
    assert np.all(gaussians.scales > 0)


def test_static_mode_equals_single_term_fourier(rng):
    gaussians = random_gaussians(rng, 5)
    assert gaussians.appearance.mode == STATIC
    for t in range(4):
        assert np.array_equal(eval_fourier_sh(gaussians.appearance.coeffs, t, 4, axis=1),
                              gaussians.appearance.coeffs[:, 0])


def test_appearance_shape_must_match_layout():
    with pytest.raises(ValidationError):
        AppearanceCoeffs(STATIC, 1, 1, np.zeros((2, 1, 9, 3)))
    with pytest.raises(ValidationError):
        AppearanceCoeffs(STATIC, 1, 3, np.zeros((2, 3, 4, 3)))


def test_object_scalar_expands_to_vehicle_class():
    field = SemanticField(OBJECT_SCALAR, 8, np.array([1.5, -2.0]))
    expanded = field.expand(2)
    assert expanded.shape == (2, 8)
    assert np.array_equal(expanded[:, 2], [1.5, -2.0])
    assert np.count_nonzero(expanded) == 2


def test_column_length_mismatch_rejected(rng):
    good = random_gaussians(rng, 4)
    with pytest.raises(ValidationError):
        GaussianSet(good.positions, good.log_scales[:3], good.rotations, good.opacity_logits,
                    good.appearance, good.semantic)


def test_scene_graph_rejects_duplicate_ids_and_wrong_semantic_kind(rng):
    scene = random_scene(rng, n_objects=1)
    obj = scene.objects[0]
    with pytest.raises(ValidationError):
        SceneGraph(scene.background, [obj, ObjectModel(obj.object_id, obj.gaussians, obj.track)], scene.sky)
    with pytest.raises(ValidationError):
        SceneGraph(scene.background, [ObjectModel('x', scene.background, obj.track)], scene.sky)
    with pytest.raises(ValidationError):
        scene.get_object('missing')


def test_object_class_count_must_match_scene(rng):
    background = random_gaussians(rng, 4, num_classes=3)
    car = ObjectModel('car', random_gaussians(rng, 4, kind=OBJECT_SCALAR, num_classes=8), random_track(rng, 2))
    with pytest.raises(ValidationError, match="8 classes, scene has 3"):
        SceneGraph(background, [car], SkyCubemap.constant(2), num_classes=3, vehicle_class_index=2,
                   class_names=('sky', 'road', 'vehicle'))


def test_scene_copy_is_independent(rng):
    scene = random_scene(rng)
    copy = scene.copy()
    copy.background.positions[0] += 1.0
    copy.objects[0].track.delta_yaws[0] = 0.3
    assert not np.array_equal(copy.background.positions, scene.background.positions)
    assert scene.objects[0].track.delta_yaws[0] == 0.0


def test_sky_samples_texels_at_texel_centers(rng):
    sky = SkyCubemap(rng.uniform(0, 1, (6, 4, 4, 3)))
    dirs = texel_directions(4)
    assert np.allclose(sky.sample(dirs), sky.faces, atol=1e-12)


def test_sky_is_continuous_across_face_seams():
    resolution = 16
    dirs = texel_directions(resolution)
    sky = SkyCubemap(0.5 + 0.5 * dirs / np.linalg.norm(dirs, axis=-1, keepdims=True))
    eps = 1e-7
    pairs = [([1.0 - eps, 0.1, 1.0], [1.0, 0.1, 1.0 - eps]),
             ([-0.2, 1.0, 1.0 - eps], [-0.2, 1.0 - eps, 1.0]),
             ([1.0, -1.0 + eps, 0.3], [1.0 - eps, -1.0, 0.3])]
    for a, b in pairs:
        assert np.abs(sky.sample(np.array(a)) - sky.sample(np.array(b))).max() < 2.0 / resolution


def test_sky_backward_matches_finite_differences(rng):
    sky = SkyCubemap(rng.uniform(0, 1, (6, 3, 3, 3)))
    dirs = rng.normal(size=(20, 3))
    upstream = rng.normal(size=(20, 3))
    grad = sky.sample_backward(dirs, upstream)
    index = np.argwhere(grad != 0)[0]
    h = 1e-6
    plus, minus = sky.copy(), sky.copy()
    plus.faces[tuple(index)] += h
    minus.faces[tuple(index)] -= h
    numeric = (np.sum(plus.sample(dirs) * upstream) - np.sum(minus.sample(dirs) * upstream)) / (2 * h)
    assert grad[tuple(index)] == pytest.approx(numeric, rel=1e-5)
