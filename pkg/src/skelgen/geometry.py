"""Small 3D vector and rotation helpers shared across modules."""

from __future__ import annotations

import numpy as np


def unit(v: np.ndarray, fallback: np.ndarray | None = None) -> np.ndarray:
    """Normalize to length 1; a near-zero vector returns `fallback` (or raises)."""
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        if fallback is None:
            raise ValueError("cannot normalize a zero vector")
        return np.asarray(fallback, dtype=np.float64)
    return v / n


def angle_deg(u: np.ndarray, v: np.ndarray) -> float:
    """Unsigned angle between two vectors in degrees, clamped against rounding."""
    u = unit(u)
    v = unit(v)
    c = float(np.clip(np.dot(u, v), -1.0, 1.0))
    return float(np.degrees(np.arccos(c)))


def axis_angle_rotation(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    """Rotation matrix about `axis` by `angle_rad` (Rodrigues)."""
    a = unit(axis)
    x, y, z = a
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix (normalized quaternion of 4 gaussians)."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotation_between(frame_a: np.ndarray, frame_b: np.ndarray) -> np.ndarray:
    """Rotation taking orthonormal frame `frame_a` (rows) onto `frame_b` (rows)."""
    return np.asarray(frame_b, dtype=np.float64).T @ np.asarray(frame_a, dtype=np.float64)


def frame_angles_deg(frame_a: np.ndarray, frame_b: np.ndarray) -> np.ndarray:
    """Per-axis angles in degrees between two frames given as row-stacked axes."""
    return np.array([angle_deg(frame_a[i], frame_b[i]) for i in range(3)])
