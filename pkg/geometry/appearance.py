#!/usr/bin/env python3
"""
Appearance Kernels

Real spherical-harmonics color evaluation and the time-varying cosine series
that produces SH coefficients for a frame index.
"""

import numpy as np

from utils.errors import ValidationError

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)
COLOR_OFFSET = 0.5
MAX_SH_DEGREE = 3


def num_sh_bases(degree):
    """Number of real SH basis functions up to ``degree`` inclusive."""
    if not 0 <= degree <= MAX_SH_DEGREE:
        raise ValidationError(f"SH degree must be in [0, {MAX_SH_DEGREE}], got {degree}")
    return (degree + 1) ** 2


def sh_basis(directions, degree):
    """
    Evaluate the real SH basis at unit directions.

    Args:
        directions (np.ndarray): [N, 3] unit vectors
        degree (int): Maximum band

    Returns:
        np.ndarray: [N, (degree+1)^2] basis values
    """
    d = np.asarray(directions, dtype=np.float64)
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    out = np.empty((d.shape[0], num_sh_bases(degree)))
    out[:, 0] = SH_C0
    if degree >= 1:
        out[:, 1] = -SH_C1 * y
        out[:, 2] = SH_C1 * z
        out[:, 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[:, 4] = SH_C2[0] * x * y
        out[:, 5] = SH_C2[1] * y * z
        out[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        out[:, 7] = SH_C2[3] * x * z
        out[:, 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        out[:, 9] = SH_C3[0] * y * (3.0 * xx - yy)
        out[:, 10] = SH_C3[1] * x * y * z
        out[:, 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        out[:, 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[:, 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        out[:, 14] = SH_C3[5] * z * (xx - yy)
        out[:, 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return out


def sh_basis_gradient(directions, degree):
    """
    Derivatives of sh_basis w.r.t. the (unit) direction components.

    Returns:
        np.ndarray: [N, (degree+1)^2, 3]
    """
    d = np.asarray(directions, dtype=np.float64)
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    out = np.zeros((d.shape[0], num_sh_bases(degree), 3))
    if degree >= 1:
        out[:, 1, 1] = -SH_C1
        out[:, 2, 2] = SH_C1
        out[:, 3, 0] = -SH_C1
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[:, 4] = SH_C2[0] * np.stack([y, x, 0 * z], axis=-1)
        out[:, 5] = SH_C2[1] * np.stack([0 * x, z, y], axis=-1)
        out[:, 6] = SH_C2[2] * np.stack([-2 * x, -2 * y, 4 * z], axis=-1)
        out[:, 7] = SH_C2[3] * np.stack([z, 0 * y, x], axis=-1)
        out[:, 8] = SH_C2[4] * np.stack([2 * x, -2 * y, 0 * z], axis=-1)
    if degree >= 3:
        out[:, 9] = SH_C3[0] * np.stack([6 * x * y, 3 * xx - 3 * yy, 0 * z], axis=-1)
        out[:, 10] = SH_C3[1] * np.stack([y * z, x * z, x * y], axis=-1)
        out[:, 11] = SH_C3[2] * np.stack([-2 * x * y, 4 * zz - xx - 3 * yy, 8 * y * z], axis=-1)
        out[:, 12] = SH_C3[3] * np.stack([-6 * x * z, -6 * y * z, 6 * zz - 3 * xx - 3 * yy], axis=-1)
        out[:, 13] = SH_C3[4] * np.stack([4 * zz - 3 * xx - yy, -2 * x * y, 8 * x * z], axis=-1)
        out[:, 14] = SH_C3[5] * np.stack([2 * x * z, -2 * y * z, xx - yy], axis=-1)
        out[:, 15] = SH_C3[6] * np.stack([3 * xx - 3 * yy, -6 * x * y, 0 * z], axis=-1)
    return out


def fourier_weights(t, n_frames, k):
    """Cosine weights cos(i pi t / N_t) for i in [0, k)."""
    if k < 1:
        raise ValidationError(f"Fourier order k must be >= 1, got {k}")
    if n_frames <= 0:
        raise ValidationError(f"frame count must be positive, got {n_frames}")
    return np.cos(np.arange(k) * np.pi * float(t) / float(n_frames))


def eval_fourier_sh(coeffs, t, n_frames, axis=0):
    """
    Evaluate the cosine series sum_i f_i cos(i pi t / N_t).

    Args:
        coeffs (np.ndarray): Coefficients with the series on ``axis``
        t (float): Frame index
        n_frames (int): Sequence length N_t
        axis (int): Axis holding the k series terms

    Returns:
        np.ndarray: ``coeffs`` with ``axis`` reduced
    """
    f = np.moveaxis(np.asarray(coeffs, dtype=np.float64), axis, -1)
    weights = fourier_weights(t, n_frames, f.shape[-1])
    return np.einsum('...i,i->...', f, weights, optimize=False)


def _unit_directions(view_dirs):
    v = np.asarray(view_dirs, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
        raise ValidationError("view direction must be non-zero and finite")
    return v / norms, norms


def eval_sh_color(z, view_dirs, degree):
    """
    Evaluate view-dependent RGB from SH coefficients.

    Accepts a single point (z [B, 3], view_dir [3]) or a batch
    (z [N, B, 3], view_dirs [N, 3]).

    Returns:
        np.ndarray: RGB clamped to >= 0, [3] or [N, 3]
    """
    single = np.ndim(view_dirs) == 1
    coeffs = np.asarray(z, dtype=np.float64)
    dirs = np.asarray(view_dirs, dtype=np.float64)
    if single:
        coeffs, dirs = coeffs[None], dirs[None]
    unit, _ = _unit_directions(dirs)
    bases = num_sh_bases(degree)
    raw = np.einsum('nb,nbc->nc', sh_basis(unit, degree), coeffs[:, :bases], optimize=False)
    color = np.maximum(raw + COLOR_OFFSET, 0.0)
    return color[0] if single else color


def eval_sh_color_backward(z, view_dirs, degree, grad_color):
    """
    Reverse pass of eval_sh_color for a batch.

    Args:
        z (np.ndarray): [N, B, 3] coefficients
        view_dirs (np.ndarray): [N, 3] unnormalized view directions
        degree (int): Maximum band
        grad_color (np.ndarray): [N, 3] upstream gradient

    Returns:
        tuple: (grad_z [N, B, 3], grad_view_dirs [N, 3])
    """
    coeffs = np.asarray(z, dtype=np.float64)
    unit, norms = _unit_directions(view_dirs)
    bases = num_sh_bases(degree)
    basis = sh_basis(unit, degree)
    raw = np.einsum('nb,nbc->nc', basis, coeffs[:, :bases], optimize=False) + COLOR_OFFSET
    g = np.where(raw > 0.0, grad_color, 0.0)
    grad_z = np.zeros_like(coeffs)
    grad_z[:, :bases] = basis[:, :, None] * g[:, None, :]
    grad_basis = np.einsum('nbc,nc->nb', coeffs[:, :bases], g, optimize=False)
    grad_unit = np.einsum('nb,nbk->nk', grad_basis, sh_basis_gradient(unit, degree), optimize=False)
    radial = np.sum(unit * grad_unit, axis=-1, keepdims=True)
    grad_dirs = (grad_unit - unit * radial) / norms
    return grad_z, grad_dirs
