#!/usr/bin/env python3
"""
Tests for the training losses and their gradients
"""

import numpy as np
import pytest

from training.losses import (LossWeights, loss_color, loss_depth, loss_sky, loss_semantic, loss_reg,
                             ssim_map, ssim_with_grad)
from utils.errors import ValidationError


def numeric(fn, x, index, h=1e-6):
    plus, minus = x.copy(), x.copy()
    plus[index] += h
    minus[index] -= h
    return (fn(plus)[0] - fn(minus)[0]) / (2 * h)


def random_indices(rng, shape, count=6):
    return [np.unravel_index(i, shape) for i in rng.choice(int(np.prod(shape)), count, replace=False)]


def test_color_loss_is_zero_with_zero_gradient_at_target(rng):
    target = rng.uniform(0, 1, (16, 16, 3))
    value, grad = loss_color(target.copy(), target)
    assert value == pytest.approx(0.0, abs=1e-12)
    assert np.all(grad == 0.0)


def test_ssim_of_identical_images_is_one(rng):
    image = rng.uniform(0, 1, (20, 18, 3))
    assert np.allclose(ssim_map(image, image), 1.0)
    value, grad = ssim_with_grad(image, image)
    assert value == pytest.approx(1.0)
    assert np.all(grad == 0.0)


@pytest.mark.parametrize('lambda_ssim', [0.0, 0.2, 1.0])
def test_color_loss_gradient(rng, lambda_ssim):
    target = rng.uniform(0, 1, (14, 12, 3))
    color = np.clip(target + rng.normal(0, 0.2, target.shape), 0, 1)
    _, grad = loss_color(color, target, lambda_ssim)
    fn = lambda x: loss_color(x, target, lambda_ssim)  # noqa: E731
    for index in random_indices(rng, color.shape):
        assert grad[index] == pytest.approx(numeric(fn, color, index), rel=1e-4, abs=1e-9)


def test_ssim_penalizes_structure(rng):
    image = rng.uniform(0, 1, (16, 16))
    assert ssim_with_grad(image, 1.0 - image)[0] < ssim_with_grad(image, image + 0.01)[0]


def test_depth_loss_trims_the_worst_hits():
    lidar = np.zeros((8, 8))
    lidar.reshape(-1)[:20] = 10.0
    depth = np.where(lidar > 0, 10.1, 3.0)
    depth.reshape(-1)[5] = 15.0
    value, grad = loss_depth(depth, lidar)
    assert value == pytest.approx(0.1)
    assert grad.reshape(-1)[5] == 0.0
    assert grad.reshape(-1)[0] == pytest.approx(1.0 / 19)
    assert np.all(grad.reshape(-1)[20:] == 0.0)


def test_depth_loss_without_hits():
    value, grad = loss_depth(np.ones((4, 4)), np.zeros((4, 4)))
    assert value == 0.0
    assert np.all(grad == 0.0)


def test_sky_loss_value_and_gradient(rng):
    mask = rng.uniform(size=(6, 7)) < 0.4
    assert loss_sky(np.full((6, 7), 0.5), mask)[0] == pytest.approx(np.log(2.0))
    opacity = rng.uniform(0.05, 0.95, (6, 7))
    _, grad = loss_sky(opacity, mask)
    fn = lambda x: loss_sky(x, mask)  # noqa: E731
    for index in random_indices(rng, opacity.shape):
        assert grad[index] == pytest.approx(numeric(fn, opacity, index), rel=1e-5)


def test_sky_loss_is_finite_at_saturated_opacity():
    value, grad = loss_sky(np.array([[0.0, 1.0]]), np.array([[0, 1]]))
    assert np.isfinite(value)
    assert np.all(grad == 0.0)


def test_semantic_loss_ignores_label_255(rng):
    logits = rng.normal(size=(5, 6, 4))
    labels = rng.integers(0, 4, (5, 6))
    labels[0] = 255
    value, grad = loss_semantic(logits, labels)
    assert np.all(grad[0] == 0.0)
    assert np.allclose(grad[1:].sum(axis=-1), 0.0)
    fn = lambda x: loss_semantic(x, labels)  # noqa: E731
    for index in random_indices(rng, logits.shape):
        assert grad[index] == pytest.approx(numeric(fn, logits, index), rel=1e-5, abs=1e-10)
    assert loss_semantic(np.zeros((2, 2, 4)), np.zeros((2, 2), dtype=int))[0] == pytest.approx(np.log(4))
    assert loss_semantic(logits, np.full((5, 6), 255))[0] == 0.0
    with pytest.raises(ValidationError):
        loss_semantic(logits, np.full((5, 6), 4))


def test_entropy_regularizer(rng):
    assert loss_reg(np.array([0.0, 1.0]))[0] == 0.0
    assert loss_reg(np.full(3, 0.5))[0] == pytest.approx(np.log(2.0))
    opacity = rng.uniform(0.05, 0.95, (5, 5))
    _, grad = loss_reg(opacity)
    for index in random_indices(rng, opacity.shape):
        assert grad[index] == pytest.approx(numeric(loss_reg, opacity, index), rel=1e-5)


def test_shape_mismatch_and_negative_weight_rejected():
    with pytest.raises(ValidationError):
        loss_depth(np.ones((2, 2)), np.ones((3, 2)))
    with pytest.raises(ValidationError):
        LossWeights(depth=-1.0)
