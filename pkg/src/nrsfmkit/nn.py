"""Small graph-building blocks shared by the trainable models."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


def linear(x, w, b):
    """x @ w + b for x (..., in), w (in, out), b (out,)."""
    return ad.bias_add(ad.matmul(x, w), b)


def gram_schmidt_rotations(params6):
    """Map a (F, 6) tensor of two free 3-vectors per frame to (F, 3, 3) rotations.

    Rows of each rotation matrix are the orthonormalized vectors b1, b2 and
    their cross product, so R^T R = I and det(R) = +1 hold by construction.
    """
    a1 = params6[:, 0:3]
    a2 = params6[:, 3:6]
    n1 = ad.reciprocal(ad.sqrt(ad.reduce_sum(ad.mul(a1, a1), axis=1)))
    b1 = ad.scale_rows(a1, n1)
    d = ad.reduce_sum(ad.mul(b1, a2), axis=1)
    p = ad.sub(a2, ad.scale_rows(b1, d))
    n2 = ad.reciprocal(ad.sqrt(ad.reduce_sum(ad.mul(p, p), axis=1)))
    b2 = ad.scale_rows(p, n2)
    b3 = _cross(b1, b2)
    rows = ad.concat([b1, b2, b3], axis=1)  # (F, 9)
    return ad.reshape(rows, (params6.shape[0], 3, 3))


def _cross(u, v):
    """Cross product of (F, 3) tensors, componentwise from slices."""
    ux, uy, uz = u[:, 0:1], u[:, 1:2], u[:, 2:3]
    vx, vy, vz = v[:, 0:1], v[:, 1:2], v[:, 2:3]
    cx = ad.sub(ad.mul(uy, vz), ad.mul(uz, vy))
    cy = ad.sub(ad.mul(uz, vx), ad.mul(ux, vz))
    cz = ad.sub(ad.mul(ux, vy), ad.mul(uy, vx))
    return ad.concat([cx, cy, cz], axis=1)


def identity_rotation_params(num_frames):
    """6-vector parameters that Gram-Schmidt maps to identity rotations."""
    base = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    return np.tile(base, (num_frames, 1))


def rotation_params_from_matrices(rotations):
    """Exact 6-vector preimages of proper rotation matrices (first two rows)."""
    rotations = np.asarray(rotations, dtype=np.float64)
    return rotations[:, :2, :].reshape(rotations.shape[0], 6).copy()


def sinusoidal_embedding(t, dim, max_period=10000.0):
    """Sinusoidal embedding of integer timesteps t (N,) -> (N, dim)."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)
