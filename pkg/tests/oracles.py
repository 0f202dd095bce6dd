"""Independent reference implementations used only by the test suite.

Everything here is written from first principles (per-axis rotation
matrices multiplied together, brute-force field sampling) so library code
is never checked against itself.
"""

from __future__ import annotations

import math

import numpy as np


def rot_x(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)


def rot_y(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)


def rot_z(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def pose_matrix(pose6) -> np.ndarray:
    """4x4 matrix for (x, y, z, rx, ry, rz) built as Rz @ Ry @ Rx plus t."""
    x, y, z, rx, ry, rz = np.asarray(
        pose6.as_array() if hasattr(pose6, "as_array") else pose6, dtype=np.float64
    )
    m = np.eye(4)
    m[:3, :3] = rot_z(rz) @ rot_y(ry) @ rot_x(rx)
    m[:3, 3] = (x, y, z)
    return m


def matrix_pose(m: np.ndarray) -> np.ndarray:
    """Euler extraction for the Rz @ Ry @ Rx convention, away from gimbal."""
    r = m[:3, :3]
    ry = math.degrees(math.asin(max(-1.0, min(1.0, -r[2, 0]))))
    rx = math.degrees(math.atan2(r[2, 1], r[2, 2]))
    rz = math.degrees(math.atan2(r[1, 0], r[0, 0]))
    return np.array([m[0, 3], m[1, 3], m[2, 3], rx, ry, rz], dtype=np.float64)


def random_pose_array(rng: np.random.Generator, max_ry: float = 85.0) -> np.ndarray:
    """Pose with |ry| strictly below max_ry, well away from gimbal lock."""
    t = rng.uniform(-80.0, 80.0, 3)
    rx = rng.uniform(-179.0, 179.0)
    ry = rng.uniform(-max_ry + 1e-3, max_ry - 1e-3)
    rz = rng.uniform(-179.0, 179.0)
    return np.array([*t, rx, ry, rz])


def blob_field_oracle(phantom, points: np.ndarray) -> np.ndarray:
    """Brute-force scalar field evaluation, one blob and one point at a time."""
    points = np.atleast_2d(points)
    out = np.full(points.shape[0], phantom.background, dtype=np.float64)
    for blob in phantom.blobs:
        rot = rot_z(blob.rot[2]) @ rot_y(blob.rot[1]) @ rot_x(blob.rot[0])
        for i, p in enumerate(points):
            local = rot.T @ (p - np.asarray(blob.center))
            r2 = float(np.sum((local / np.asarray(blob.axes)) ** 2))
            if r2 < 1.0:
                out[i] += blob.intensity * (1.0 - r2) ** 2
    return np.clip(out, 0.0, 1.0)
