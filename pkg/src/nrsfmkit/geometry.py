"""Core 3D/2D point-set geometry.

Point sets are row-major numpy arrays: a shape is (P, 3) or (P, 2) with one
point per row, a sequence stacks frames into (F, P, 3) / (F, P, 2).
Rotations are (3, 3) proper orthogonal matrices acting on column vectors, so
rotating a shape in row layout is ``shape @ R.T``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateShapeError

PROJECTION = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
"""Orthographic projection: keep x and y, drop depth."""


def centralize(points):
    """Subtract the point mean. Accepts (P, k) or a per-frame (F, P, k) stack."""
    points = np.asarray(points, dtype=np.float64)
    return points - points.mean(axis=-2, keepdims=True)


def project_orthographic(rotation, shape):
    """Project a centralized (P, 3) shape to (P, 2): rows of PROJECTION @ R @ S^T."""
    rotation = np.asarray(rotation, dtype=np.float64)
    shape = np.asarray(shape, dtype=np.float64)
    return shape @ rotation[:2].T


def project_sequence(rotations, shapes):
    """Per-frame orthographic projection of an (F, P, 3) stack."""
    rotations = np.asarray(rotations, dtype=np.float64)
    shapes = np.asarray(shapes, dtype=np.float64)
    return np.matmul(shapes, np.transpose(rotations[:, :2, :], (0, 2, 1)))


def measurement_matrix(w):
    """Stack (F, P, 2) measurements into the classic (2F, P) matrix."""
    w = np.asarray(w, dtype=np.float64)
    frames, joints, _ = w.shape
    return np.transpose(w, (0, 2, 1)).reshape(2 * frames, joints)


def is_rotation(matrix, tol=1e-9):
    matrix = np.asarray(matrix)
    if matrix.shape != (3, 3):
        return False
    ortho = np.abs(matrix.T @ matrix - np.eye(3)).max() < tol
    return bool(ortho and abs(np.linalg.det(matrix) - 1.0) < tol)


def rotation_about_axis(axis, angle):
    """Rodrigues formula for the rotation of `angle` radians about `axis`."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    kx, ky, kz = axis
    k = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def rotation_about_z(angle):
    return rotation_about_axis([0.0, 0.0, 1.0], angle)


def rotation_log(rotation):
    """Axis-angle vector of a proper rotation (inverse of rotation_about_axis)."""
    rotation = np.asarray(rotation, dtype=np.float64)
    cos = np.clip((np.trace(rotation) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos)
    if angle < 1e-12:
        return np.zeros(3)
    if np.pi - angle < 1e-6:
        # Near pi the skew part vanishes; recover the axis from R + I.
        m = (rotation + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(m), 0.0, None))
        axis = axis / np.linalg.norm(axis)
        col = int(np.argmax(np.diag(m)))
        for i in range(3):
            if i != col and m[i, col] < 0:
                axis[i] = -axis[i]
        return axis * angle
    axis = np.array(
        [
            rotation[2, 1] - rotation[1, 2],
            rotation[0, 2] - rotation[2, 0],
            rotation[1, 0] - rotation[0, 1],
        ]
    ) / (2.0 * np.sin(angle))
    return axis * angle


def slerp(rot_a, rot_b, u):
    """Geodesic interpolation between two rotations, u in [0, 1]."""
    rot_a = np.asarray(rot_a, dtype=np.float64)
    rel = rotation_log(rot_a.T @ np.asarray(rot_b, dtype=np.float64))
    angle = np.linalg.norm(rel)
    if angle < 1e-15:
        return rot_a.copy()
    return rot_a @ rotation_about_axis(rel / angle, u * angle)


def random_rotation(rng):
    """Uniform-ish random proper rotation from a Gaussian matrix QR."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return q


@dataclass(frozen=True)
class KabschResult:
    rotation: np.ndarray
    scale: float
    residual: float


def kabsch(source, target, with_scale=False):
    """Proper rotation (and optional scale) minimizing ||s R source - target||_F.

    Both point sets must be centralized (P, 3) arrays with the same P >= 3.
    The determinant is forced to +1 by flipping the weakest singular
    direction; a source whose points are collinear (rank < 2) is rejected.
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape:
        raise ValueError(f"point sets differ in shape: {source.shape} vs {target.shape}")
    if source.ndim != 2 or source.shape[1] != 3 or source.shape[0] < 3:
        raise ValueError(f"expected (P, 3) with P >= 3, got {source.shape}")
    sv = np.linalg.svd(source, compute_uv=False)
    if sv[1] < 1e-9 * max(sv[0], 1e-300):
        raise DegenerateShapeError("degenerate configuration: source rank < 2")

    m = source.T @ target
    u, sig, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    corr = np.array([1.0, 1.0, d])
    rotation = vt.T @ np.diag(corr) @ u.T
    if with_scale:
        scale = float((corr * sig).sum() / (source * source).sum())
    else:
        scale = 1.0
    residual = float(np.linalg.norm(scale * source @ rotation.T - target))
    return KabschResult(rotation=rotation, scale=scale, residual=residual)
