#!/usr/bin/env python3
"""
Tests for point cloud IO, the dataset loader and scene initialization
"""

import json

import numpy as np
import pytest
from scipy.special import expit

from geometry.appearance import SH_C0, COLOR_OFFSET
from geometry.camera import Camera
from ingest.dataset import Dataset, FrameRecord, load_dataset, write_dataset, project_lidar_depth
from ingest.initialization import (InitConfig, init_scene, collect_object_points, colorize,
                                   knn_log_scales, MID_GRAY)
from ingest.pointcloud import PointCloud, read_ply, write_ply
from scene.pose import PoseTrack
from utils.errors import DatasetError, ValidationError
from utils.filtering import voxel_downsample, points_in_box, split_frames, project_to_pixels

BOX_CENTER = np.array([0.5, 0.0, 4.0])


def camera():
    return Camera(20.0, 20.0, 8.0, 6.0, np.eye(3), np.zeros(3), 16, 12)


def wall_points():
    xs, ys = np.meshgrid(np.arange(-1.5, 1.51, 0.5), np.arange(-1.0, 1.01, 0.5))
    return np.column_stack([xs.ravel(), ys.ravel(), np.full(xs.size, 6.0)])


def box_points():
    offsets = np.array(np.meshgrid([-0.25, 0.25], [-0.25, 0.25], [-0.25, 0.25])).reshape(3, -1).T
    return BOX_CENTER + offsets


def small_dataset(rng, num_frames=2, sfm=None):
    lidar = PointCloud(np.concatenate([wall_points(), box_points()]))
    frames = []
    for t in range(num_frames):
        semantic = rng.integers(0, 8, (12, 16))
        semantic[0, :4] = 255
        frames.append(FrameRecord(t, t, 0, camera(), rng.integers(0, 256, (12, 16, 3)) / 255.0,
                                  lidar, rng.uniform(size=(12, 16)) < 0.3, semantic))
    track = PoseTrack(np.tile(np.eye(3), (num_frames, 1, 1)), np.tile(BOX_CENTER, (num_frames, 1)),
                      [1.0, 1.0, 1.0], np.ones(num_frames, dtype=bool))
    return Dataset(frames, {'car': track}, num_frames, sfm_points=sfm)


# --- point clouds ---------------------------------------------------------------

@pytest.mark.parametrize('text', [False, True])
def test_ply_round_trip(tmp_path, rng, text):
    positions = rng.normal(0, 10, (50, 3)).astype(np.float32).astype(np.float64)
    colors = rng.integers(0, 256, (50, 3)) / 255.0
    path = write_ply(PointCloud(positions, colors), str(tmp_path / 'points.ply'), text=text)
    loaded = read_ply(path)
    assert np.array_equal(loaded.positions, positions)
    assert np.allclose(loaded.colors, colors, atol=1e-12)


def test_ply_without_colors(tmp_path):
    path = write_ply(PointCloud(np.zeros((3, 3))), str(tmp_path / 'plain.ply'))
    assert read_ply(path).colors is None


def test_ply_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_ply(str(tmp_path / 'missing.ply'))
    (tmp_path / 'junk.ply').write_text('not a ply file')
    with pytest.raises(DatasetError):
        read_ply(str(tmp_path / 'junk.ply'))
    with pytest.raises(DatasetError):
        PointCloud(np.array([[0.0, np.nan, 1.0]]))


# --- filtering ------------------------------------------------------------------

def test_voxel_downsample_averages_each_voxel():
    points = np.array([[0.1, 0.1, 0.1], [0.3, 0.3, 0.3], [1.2, 0.0, 0.0], [-0.1, 0.0, 0.0]])
    centroids, colors = voxel_downsample(points, 1.0, colors=np.eye(4)[:, :3])
    assert np.allclose(centroids, [[-0.1, 0.0, 0.0], [0.2, 0.2, 0.2], [1.2, 0.0, 0.0]])
    assert np.allclose(colors[1], [0.5, 0.5, 0.0])
    assert voxel_downsample(np.zeros((0, 3)), 0.5)[0].shape == (0, 3)
    with pytest.raises(ValidationError):
        voxel_downsample(points, 0.0)


def test_box_membership_includes_faces():
    inside = points_in_box(np.array([[0.5, 0.0, 0.0], [0.5001, 0.0, 0.0], [0.0, -1.0, 0.25]]),
                           [1.0, 2.0, 0.5])
    assert inside.tolist() == [True, False, True]


def test_pixel_projection_rounds_to_nearest_pixel():
    visible, cols, rows, depth = project_to_pixels(
        np.array([[0.0, 0.0, 5.0], [0.124, 0.0, 5.0], [0.0, 0.0, -1.0]]), camera())
    assert visible.tolist() == [True, True, False]
    assert (cols[0], rows[0]) == (8, 6)
    assert cols[1] == 8
    assert depth[2] == -1.0


def test_split_frames():
    assert split_frames(10, 'test', waymo_split=True) == [0, 4, 8]
    assert split_frames(10, 'train', waymo_split=True) == [1, 2, 3, 5, 6, 7, 9]
    assert split_frames(8, 'test') == [3, 7]
    assert split_frames(3, 'all') == [0, 1, 2]
    with pytest.raises(ValidationError):
        split_frames(3, 'val')


# --- dataset ----------------------------------------------------------------------

def test_dataset_round_trip(tmp_path, rng):
    sfm = PointCloud(np.array([[0.0, 0.0, 7.0], [0.5, 0.5, 7.0]]), np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
    dataset = small_dataset(rng, sfm=sfm)
    write_dataset(dataset, str(tmp_path / 'data'))
    loaded = load_dataset(str(tmp_path / 'data'), num_workers=2)
    assert loaded.num_frames == dataset.num_frames
    assert loaded.class_names == dataset.class_names
    for a, b in zip(dataset.frames, loaded.frames):
        assert (a.timestep, a.camera_id) == (b.timestep, b.camera_id)
        assert a.camera.to_dict() == b.camera.to_dict()
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.lidar.positions, b.lidar.positions)
        assert np.array_equal(a.sky_mask, b.sky_mask)
        assert np.array_equal(a.semantic, b.semantic)
    track = loaded.tracklets['car']
    assert np.array_equal(track.translations, dataset.tracklets['car'].translations)
    assert np.array_equal(track.box_dims, [1.0, 1.0, 1.0])
    assert np.array_equal(loaded.sfm_points.positions, sfm.positions)


def test_tracklet_frame_outside_range_rejected(tmp_path, rng):
    root = tmp_path / 'data'
    write_dataset(small_dataset(rng), str(root))
    meta = json.loads((root / 'scene.json').read_text())
    meta['tracklets'][0]['frames'][0]['frame'] = 7
    (root / 'scene.json').write_text(json.dumps(meta))
    with pytest.raises(DatasetError, match="references frame 7"):
        load_dataset(str(root))


def test_semantic_label_outside_class_map_rejected(tmp_path, rng):
    root = tmp_path / 'data'
    write_dataset(small_dataset(rng), str(root))
    meta = json.loads((root / 'scene.json').read_text())
    meta['class_map'] = {'names': ['a', 'b', 'c'], 'vehicle_class_index': 2}
    (root / 'scene.json').write_text(json.dumps(meta))
    with pytest.raises(DatasetError, match="outside class map"):
        load_dataset(str(root))


def test_frames_must_be_ordered(rng):
    dataset = small_dataset(rng)
    with pytest.raises(DatasetError):
        Dataset(dataset.frames[::-1], {}, dataset.num_frames)


def test_missing_dataset_raises_file_not_found(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(str(tmp_path / 'nowhere'))


def test_lidar_depth_keeps_nearest_point(rng):
    frame = small_dataset(rng).frames[0]
    frame.lidar = PointCloud(np.array([[0.0, 0.0, 5.0], [0.0, 0.0, 3.0], [1.0, 0.0, 5.0], [0.0, 0.0, -2.0]]))
    depth = project_lidar_depth(frame)
    assert depth[6, 8] == 3.0
    assert depth[6, 12] == 5.0
    assert np.count_nonzero(depth) == 2


# --- initialization -----------------------------------------------------------------

def test_init_scene_separates_object_and_background(rng):
    dataset = small_dataset(rng)
    scene = init_scene(dataset, InitConfig(min_object_points=1, sky_resolution=4))
    assert scene.background.count == len(wall_points())
    local = scene.background.positions - BOX_CENTER
    assert not np.any(points_in_box(local, [1.0, 1.0, 1.0]))
    car = scene.get_object('car')
    assert car.gaussians.count == 2 * len(box_points())
    assert np.all(np.abs(car.gaussians.positions) <= 0.5)
    assert car.gaussians.appearance.fourier_k == 5
    assert np.allclose(expit(scene.background.opacity_logits), 0.1)
    assert np.all(scene.sky.faces == 0.5)
    assert scene.cameras.keys() == {(0, 0), (1, 0)}


def test_object_fallback_samples_inside_the_box(rng):
    dataset = small_dataset(rng)
    cloud = collect_object_points(dataset, 'car', min_points=100, fallback_samples=300, seed=3)
    again = collect_object_points(dataset, 'car', min_points=100, fallback_samples=300, seed=3)
    assert len(cloud) == 300
    assert np.all(points_in_box(cloud.positions, [1.0, 1.0, 1.0]))
    assert np.array_equal(cloud.positions, again.positions)
    with pytest.raises(DatasetError):
        collect_object_points(dataset, 'bus')


@pytest.mark.parametrize('per_frame,fallback', [(1000, False), (999, True)])
def test_object_points_fall_back_only_below_the_minimum(rng, per_frame, fallback):
    dataset = small_dataset(rng)
    inside = [rng.uniform(-0.45, 0.45, (per_frame, 3)) for _ in dataset.frames]
    for frame, local in zip(dataset.frames, inside):
        frame.lidar = PointCloud(np.concatenate([wall_points(), BOX_CENTER + local]))
    cloud = collect_object_points(dataset, 'car', min_points=2000, fallback_samples=300)
    if fallback:
        assert len(cloud) == 300
    else:
        assert len(cloud) == 2000
        assert np.allclose(cloud.positions, np.concatenate(inside), atol=1e-12)


def test_sfm_points_keep_their_colors(rng):
    sfm = PointCloud(np.array([[0.0, 0.0, 7.0], [0.5, 0.5, 7.0]]), np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
    scene = init_scene(small_dataset(rng, sfm=sfm), InitConfig(min_object_points=1, sky_resolution=4))
    assert scene.background.count == len(wall_points()) + 2
    colors = SH_C0 * scene.background.appearance.coeffs[-2:, 0, 0, :] + COLOR_OFFSET
    assert np.allclose(colors, sfm.colors, atol=1e-12)


def test_colorize_uses_first_visible_frame(rng):
    dataset = small_dataset(rng)
    cloud = colorize(PointCloud(np.array([[0.0, 0.0, 5.0], [0.0, 0.0, -5.0]])), dataset)
    assert np.array_equal(cloud.colors[0], dataset.frames[0].image[6, 8])
    assert np.all(cloud.colors[1] == MID_GRAY)


def test_knn_scales_follow_point_spacing():
    positions = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    assert np.allclose(knn_log_scales(positions, k=1), 0.0)
    assert np.allclose(knn_log_scales(positions[:1], fallback=0.2), np.log(0.2))
