#!/usr/bin/env python3
"""
Training Losses

Every loss returns ``(value, gradient)`` where the gradient has the shape of
the rendered input it differentiates.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d
from scipy.special import entr, log_softmax, softmax

from utils.errors import ValidationError

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
OPACITY_EPS = 1e-6
DEPTH_KEEP_FRACTION = 0.95
IGNORE_LABEL = 255


@dataclass
class LossWeights:
    ssim: float = 0.2
    depth: float = 0.01
    sky: float = 0.05
    semantic: float = 0.1
    reg: float = 0.1

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise ValidationError(f"loss weight {name} must be >= 0, got {value}")


def _check_shapes(a, b):
    if np.shape(a) != np.shape(b):
        raise ValidationError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - size // 2
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter(image):
    # zero-padded separable Gaussian over the two spatial axes
    window = gaussian_window()
    out = correlate1d(image, window, axis=0, mode='constant', cval=0.0)
    return correlate1d(out, window, axis=1, mode='constant', cval=0.0)


def _ssim_terms(x, y):
    mu_x, mu_y = _filter(x), _filter(y)
    ex2, ey2, exy = _filter(x * x), _filter(y * y), _filter(x * y)
    var_x = ex2 - mu_x * mu_x
    var_y = ey2 - mu_y * mu_y
    cov_xy = exy - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + SSIM_C1
    a2 = 2.0 * cov_xy + SSIM_C2
    b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1
    b2 = var_x + var_y + SSIM_C2
    return mu_x, mu_y, a1, a2, b1, b2


def ssim_map(x, y):
    """Per-pixel SSIM of two [H, W, C] (or [H, W]) images."""
    _, _, a1, a2, b1, b2 = _ssim_terms(np.asarray(x, dtype=np.float64),
                                       np.asarray(y, dtype=np.float64))
    return (a1 / b1) * (a2 / b2)


def ssim_with_grad(x, y):
    """
    Mean SSIM and its gradient w.r.t. ``x``.

    The gradient is exactly zero when ``x == y``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mu_x, mu_y, a1, a2, b1, b2 = _ssim_terms(x, y)
    r1, r2 = a1 / b1, a2 / b2
    s = r1 * r2
    g = np.full(x.shape, 1.0 / x.size)
    d_mu = (2.0 * mu_y * r2 / b1 - 2.0 * mu_y * r1 / b2) - s * (2.0 * mu_x / b1 - 2.0 * mu_x / b2)
    d_ex2 = -s / b2
    d_exy = 2.0 * r1 / b2
    grad = _filter(g * d_mu) + 2.0 * x * _filter(g * d_ex2) + y * _filter(g * d_exy)
    return float(np.mean(s)), grad


def loss_color(color, target, lambda_ssim=0.2):
    """
    (1 - lambda) L1 + lambda (1 - SSIM) with an 11x11 Gaussian window.

    Args:
        color (np.ndarray): [H, W, 3] render
        target (np.ndarray): [H, W, 3] ground truth
        lambda_ssim (float): D-SSIM weight

    Returns:
        tuple: (loss, d loss / d color)
    """
    _check_shapes(color, target)
    diff = np.asarray(color, dtype=np.float64) - target
    l1 = float(np.mean(np.abs(diff)))
    grad = (1.0 - lambda_ssim) * np.sign(diff) / diff.size
    value = (1.0 - lambda_ssim) * l1
    if lambda_ssim > 0.0:
        ssim, ssim_grad = ssim_with_grad(color, target)
        value += lambda_ssim * (1.0 - ssim)
        grad = grad - lambda_ssim * ssim_grad
    return value, grad


def loss_depth(depth, lidar_depth):
    """
    Trimmed L1 over LiDAR hits: the 95% of hit pixels with the smallest error.

    Args:
        depth (np.ndarray): [H, W] rendered depth
        lidar_depth (np.ndarray): [H, W] sparse target, 0 = no hit

    Returns:
        tuple: (loss, gradient); (0, zeros) without hits
    """
    _check_shapes(depth, lidar_depth)
    grad = np.zeros(np.shape(depth))
    hits = np.flatnonzero(np.asarray(lidar_depth).reshape(-1) > 0.0)
    if len(hits) == 0:
        return 0.0, grad
    diff = np.asarray(depth, dtype=np.float64).reshape(-1)[hits] - np.asarray(lidar_depth).reshape(-1)[hits]
    keep = max(1, int(np.round(DEPTH_KEEP_FRACTION * len(hits))))
    chosen = np.argsort(np.abs(diff), kind='stable')[:keep]
    grad.reshape(-1)[hits[chosen]] = np.sign(diff[chosen]) / keep
    return float(np.mean(np.abs(diff[chosen]))), grad


def loss_sky(opacity, sky_mask):
    """
    Binary cross-entropy pushing opacity to 0 on sky pixels and to 1 elsewhere.

    Args:
        opacity (np.ndarray): [H, W] accumulated opacity
        sky_mask (np.ndarray): [H, W] binary, 1 = sky

    Returns:
        tuple: (loss, gradient)
    """
    _check_shapes(opacity, sky_mask)
    o = np.asarray(opacity, dtype=np.float64)
    m = np.asarray(sky_mask, dtype=np.float64)
    clamped = np.clip(o, OPACITY_EPS, 1.0 - OPACITY_EPS)
    value = -np.mean((1.0 - m) * np.log(clamped) + m * np.log(1.0 - clamped))
    inside = (o > OPACITY_EPS) & (o < 1.0 - OPACITY_EPS)
    grad = np.where(inside, -((1.0 - m) / clamped - m / (1.0 - clamped)) / o.size, 0.0)
    return float(value), grad


def loss_semantic(logits, labels, ignore_label=IGNORE_LABEL):
    """
    Mean softmax cross-entropy over non-ignored pixels.

    Args:
        logits (np.ndarray): [H, W, M] blended logits
        labels (np.ndarray): [H, W] class indices (``ignore_label`` skipped)

    Returns:
        tuple: (loss, gradient w.r.t. logits)
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if labels.shape != logits.shape[:2]:
        raise ValidationError(f"label map {labels.shape} does not match logits {logits.shape[:2]}")
    m = logits.shape[-1]
    valid = labels != ignore_label
    if np.any((labels[valid] < 0) | (labels[valid] >= m)):
        raise ValidationError(f"semantic label outside [0, {m})")
    grad = np.zeros_like(logits)
    n = int(valid.sum())
    if n == 0:
        return 0.0, grad
    log_p = log_softmax(logits[valid], axis=-1)
    picked = labels[valid]
    value = -np.mean(log_p[np.arange(n), picked])
    g = softmax(logits[valid], axis=-1)
    g[np.arange(n), picked] -= 1.0
    grad[valid] = g / n
    return float(value), grad


def loss_reg(object_opacity):
    """
    Binary entropy of the objects-only accumulated opacity.

    Returns:
        tuple: (loss, gradient); zero at O = 0 and O = 1
    """
    o = np.asarray(object_opacity, dtype=np.float64)
    value = np.mean(entr(o) + entr(1.0 - o))
    clamped = np.clip(o, OPACITY_EPS, 1.0 - OPACITY_EPS)
    inside = (o > OPACITY_EPS) & (o < 1.0 - OPACITY_EPS)
    grad = np.where(inside, -(np.log(clamped) - np.log(1.0 - clamped)) / o.size, 0.0)
    return float(value), grad
