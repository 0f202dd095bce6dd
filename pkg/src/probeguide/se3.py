"""Exact rigid-motion algebra on 6-D probe poses.

A pose is (x, y, z, rx, ry, rz): translation in millimetres followed by
fixed-axis roll/pitch/yaw angles in degrees.  The matrix convention used
everywhere in this package is

    R = Rz(rz) @ Ry(ry) @ Rx(rx)

i.e. rotate about the fixed x axis first, then y, then z.  Angles are kept
canonical in (-180, 180].  Degrees and millimetres appear at every API
boundary; radians exist only inside the trig kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GimbalLockError",
    "Pose6",
    "HomTransform",
    "ZERO_POSE",
    "canonical_angle",
    "to_matrix",
    "from_matrix",
    "invert",
    "compose",
    "relative",
    "combine_through_intermediate",
    "format_pose",
    "parse_pose",
]

# |cos(ry)| below this means the matrix-to-vector conversion has lost a
# degree of freedom and the split between rx and rz is arbitrary.
GIMBAL_COS_EPS = 1e-6

_ORTHO_TOL = 1e-9


class GimbalLockError(ValueError):
    """Pitch is at +/-90 deg; rx/rz cannot be separated."""


def canonical_angle(deg: float) -> float:
    """Wrap an angle in degrees into (-180, 180]."""
    r = math.fmod(deg + 180.0, 360.0)
    if r <= 0.0:
        r += 360.0
    return r - 180.0


@dataclass(frozen=True)
class Pose6:
    """6-D pose/action: mm translations and canonical degree angles."""

    x: float
    y: float
    z: float
    rx: float
    ry: float
    rz: float

    def __post_init__(self) -> None:
        vals = (self.x, self.y, self.z, self.rx, self.ry, self.rz)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"pose components must be finite, got {vals}")
        object.__setattr__(self, "rx", canonical_angle(self.rx))
        object.__setattr__(self, "ry", canonical_angle(self.ry))
        object.__setattr__(self, "rz", canonical_angle(self.rz))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.rx, self.ry, self.rz], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "Pose6":
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (6,):
            raise ValueError(f"expected 6 components, got shape {a.shape}")
        return cls(*(float(v) for v in a))

    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    def angles(self) -> np.ndarray:
        return np.array([self.rx, self.ry, self.rz], dtype=np.float64)


ZERO_POSE = Pose6(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class HomTransform:
    """4x4 homogeneous rigid transform with validated rotation block."""

    m: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"expected 4x4 matrix, got {m.shape}")
        if not (m[3, 0] == 0.0 and m[3, 1] == 0.0 and m[3, 2] == 0.0 and m[3, 3] == 1.0):
            raise ValueError(f"bottom row must be exactly (0,0,0,1), got {m[3]}")
        r = m[:3, :3]
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("rotation block is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation block determinant is not +1 within 1e-9")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    @property
    def rotation(self) -> np.ndarray:
        return self.m[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.m[:3, 3]


def _rotation_from_angles(rx_deg: float, ry_deg: float, rz_deg: float) -> np.ndarray:
    ax, ay, az = math.radians(rx_deg), math.radians(ry_deg), math.radians(rz_deg)
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    cz, sz = math.cos(az), math.sin(az)
    # Expanded Rz @ Ry @ Rx.
    return np.array(
        [
            [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
            [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
            [-sy, cy * sx, cy * cx],
        ],
        dtype=np.float64,
    )


def to_matrix(a: Pose6) -> HomTransform:
    """Vector-form pose to homogeneous matrix."""
    m = np.eye(4, dtype=np.float64)
    m[:3, :3] = _rotation_from_angles(a.rx, a.ry, a.rz)
    m[0, 3] = a.x
    m[1, 3] = a.y
    m[2, 3] = a.z
    return HomTransform(m)


def from_matrix(t: HomTransform, gimbal_fallback: bool = False) -> Pose6:
    """Homogeneous matrix back to vector form (the inverse conversion).

    Raises GimbalLockError when |cos(ry)| < 1e-6 unless ``gimbal_fallback``
    is set, in which case the canonical fallback rx := 0 is used and the
    remaining in-plane rotation is absorbed into rz.
    """
    r = t.m[:3, :3]
    sy = -r[2, 0]
    cy = math.hypot(r[2, 1], r[2, 2])
    if cy < GIMBAL_COS_EPS:
        if not gimbal_fallback:
            raise GimbalLockError(f"|cos(ry)| = {cy:.3e} < {GIMBAL_COS_EPS:.0e}")
        if sy > 0.0:
            ry = 90.0
            rz = -math.degrees(math.atan2(r[0, 1], r[1, 1]))
        else:
            ry = -90.0
            rz = math.degrees(math.atan2(-r[0, 1], r[1, 1]))
        return Pose6(t.m[0, 3], t.m[1, 3], t.m[2, 3], 0.0, ry, rz)
    ry = math.degrees(math.asin(max(-1.0, min(1.0, sy))))
    rx = math.degrees(math.atan2(r[2, 1], r[2, 2]))
    rz = math.degrees(math.atan2(r[1, 0], r[0, 0]))
    return Pose6(t.m[0, 3], t.m[1, 3], t.m[2, 3], rx, ry, rz)


def matrix_inverse(t: HomTransform) -> HomTransform:
    """Inverse transform via the rigid structure (R^T, -R^T t)."""
    r = t.m[:3, :3]
    m = np.eye(4, dtype=np.float64)
    m[:3, :3] = r.T
    m[:3, 3] = -(r.T @ t.m[:3, 3])
    return HomTransform(m)


def invert(a: Pose6, gimbal_fallback: bool = False) -> Pose6:
    return from_matrix(matrix_inverse(to_matrix(a)), gimbal_fallback)


def compose(a: Pose6, b: Pose6, gimbal_fallback: bool = False) -> Pose6:
    """Pose of applying ``b`` in the frame reached by ``a``."""
    return from_matrix(HomTransform(to_matrix(a).m @ to_matrix(b).m), gimbal_fallback)


def relative(p1: Pose6, p2: Pose6, gimbal_fallback: bool = False) -> Pose6:
    """Motion taking the ``p1`` frame onto the ``p2`` frame."""
    m = matrix_inverse(to_matrix(p1)).m @ to_matrix(p2).m
    return from_matrix(HomTransform(m), gimbal_fallback)


def combine_through_intermediate(a_12: Pose6, a_2t: Pose6, gimbal_fallback: bool = False) -> Pose6:
    """Combine a hop to an intermediate frame with that frame's remaining
    motion into a single motion from the start frame.

    When a_12 = relative(p1, p2) and a_2t = relative(p2, pT) the result
    telescopes to relative(p1, pT) exactly.
    """
    return compose(a_12, a_2t, gimbal_fallback)


def format_pose(a: Pose6, sep: str = " ") -> str:
    """Textual form: six decimals, x y z rx ry rz, 12 significant digits."""
    return sep.join(f"{v:.12g}" for v in a.as_array())


def parse_pose(text: str, sep: str | None = None) -> Pose6:
    parts = text.replace(",", " ").split() if sep is None else text.split(sep)
    if len(parts) != 6:
        raise ValueError(f"expected 6 numbers, got {len(parts)}")
    return Pose6(*(float(p) for p in parts))
