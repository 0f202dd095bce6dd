"""Procedural 3-D scalar-field phantom and its 2-D slice renderer.

The phantom is a handful of smooth ellipsoidal blobs inside a 120 mm cube.
A virtual probe pose defines a cutting plane; rendering samples the field
on a pixel grid in that plane and applies multiplicative speckle.  All of
it is deterministic in the seeds, so frames can be regenerated bit-for-bit
anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import se3
from .se3 import Pose6

__all__ = [
    "Blob",
    "Phantom",
    "Frame",
    "PLANE_COUNT",
    "PLANE_NAMES",
    "DEFAULT_H",
    "DEFAULT_W",
    "DEFAULT_SPACING",
    "DEFAULT_SPECKLE",
    "generate_phantom",
    "standard_plane_poses",
    "render_slice",
]

PLANE_COUNT = 3
# Synthetic stand-ins for the three clinically standard cross-sections.
PLANE_NAMES = ("long-axis", "short-axis-upper", "short-axis-lower")

DEFAULT_H = 64
DEFAULT_W = 64
DEFAULT_SPACING = 1.5  # mm per pixel
DEFAULT_SPECKLE = 0.08

_CENTER_LIMIT = 60.0  # blob centers stay inside the +/-60 mm cube


@dataclass(frozen=True)
class Blob:
    """One smooth ellipsoid: value `intensity` at the center, 0 at the shell."""

    center: tuple[float, float, float]
    axes: tuple[float, float, float]
    rot: tuple[float, float, float]  # rx, ry, rz degrees
    intensity: float


@dataclass(frozen=True)
class Phantom:
    subject_seed: int
    blobs: tuple[Blob, ...]
    background: float = 0.1
    noise_sigma: float = DEFAULT_SPECKLE

    def __post_init__(self) -> None:
        if len(self.blobs) < 6:
            raise ValueError("phantom needs at least 6 blobs")
        intensities = [b.intensity for b in self.blobs]
        if len(set(intensities)) != len(intensities):
            raise ValueError("blob intensities must be pairwise distinct")
        for b in self.blobs:
            if max(abs(c) for c in b.center) > _CENTER_LIMIT:
                raise ValueError(f"blob center {b.center} outside the 120 mm cube")

    def field_at(self, points: np.ndarray) -> np.ndarray:
        """Scalar field at (N, 3) points in mm, clipped to [0, 1]."""
        return _field_over_blobs(self.blobs, self.background, points)


def _blob_tables(phantom: "Phantom"):
    """Per-blob centers, max semi-axes, intensities, and the combined
    rotate-and-scale matrices, computed once per instance (stored lazily;
    the dataclass is frozen but not slotted)."""
    hit = getattr(phantom, "_tables", None)
    if hit is None:
        centers = np.array([b.center for b in phantom.blobs])
        amax = np.array([max(b.axes) for b in phantom.blobs])
        intensities = np.array([b.intensity for b in phantom.blobs])
        # (p - c) @ bmat gives ellipsoid-normalized local coordinates.
        bmats = np.stack(
            [
                se3.to_matrix(Pose6(0, 0, 0, *b.rot)).rotation / np.asarray(b.axes)
                for b in phantom.blobs
            ]
        )
        hit = (centers, amax, intensities, bmats)
        object.__setattr__(phantom, "_tables", hit)
    return hit


def _field_over_blobs(blobs, background: float, points: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    values = np.full(points.shape[0], background, dtype=np.float64)
    for blob in blobs:
        rot = se3.to_matrix(Pose6(0, 0, 0, *blob.rot)).rotation
        local = (points - np.asarray(blob.center)) @ rot  # = rot.T applied row-wise
        r2 = np.sum((local / np.asarray(blob.axes)) ** 2, axis=1)
        inside = r2 < 1.0
        values[inside] += blob.intensity * (1.0 - r2[inside]) ** 2
    return np.clip(values, 0.0, 1.0)


@dataclass(frozen=True)
class Frame:
    """Grayscale slice: (h, w) pixels in [0, 1], `spacing` mm per pixel."""

    h: int
    w: int
    spacing: float
    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.shape != (self.h, self.w):
            raise ValueError(f"pixel block {px.shape} does not match {(self.h, self.w)}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixels must be finite and within [0, 1]")
        px = px.copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)


# Template anatomy: one large central body plus satellite structures, laid
# out with no symmetry plane.  Intensities are spaced >= 0.05 apart so the
# per-subject jitter can never collide two of them.
_MAIN_BLOBS = (
    Blob((0.0, 0.0, 0.0), (38.0, 30.0, 26.0), (0.0, 15.0, 30.0), 0.90),
    Blob((25.0, 18.0, -12.0), (16.0, 12.0, 10.0), (20.0, 0.0, -40.0), 0.75),
    Blob((-28.0, 10.0, 15.0), (14.0, 18.0, 11.0), (-30.0, 20.0, 10.0), 0.60),
    Blob((12.0, -26.0, 20.0), (11.0, 9.0, 13.0), (0.0, -25.0, 55.0), 0.45),
    Blob((-15.0, -20.0, -22.0), (9.0, 12.0, 8.0), (40.0, 10.0, 0.0), 0.80),
    Blob((30.0, -8.0, 25.0), (7.0, 6.0, 9.0), (10.0, 35.0, -20.0), 0.55),
    Blob((-8.0, 28.0, -25.0), (8.0, 10.0, 6.0), (-15.0, -10.0, 25.0), 0.35),
    Blob((15.0, 4.0, 6.0), (5.0, 4.0, 5.0), (0.0, 0.0, 0.0), 1.00),
    Blob((-10.0, -6.0, 10.0), (4.0, 5.0, 4.0), (25.0, 0.0, -15.0), 0.25),
)


def _distinct_intensities(values: np.ndarray) -> np.ndarray:
    """Nudge any colliding intensities apart (collisions are measure-zero
    for continuous draws, but the distinctness invariant must be certain)."""
    values = values.copy()
    order = np.argsort(values, kind="stable")
    for a, b in zip(order[:-1], order[1:]):
        if values[b] <= values[a]:
            values[b] = np.nextafter(values[a], np.inf)
    return values


def _texture_blobs(count: int = 1200) -> tuple[Blob, ...]:
    """Small scattered structures that give every slice fine-scale detail.

    Without them, near-tangent pose changes (a 2 degree tilt moves plane
    points by under 2 mm) barely alter the image and the navigation task
    degenerates.  The density is chosen so a typical slice slab crosses a
    few dozen of them.
    """
    rng = np.random.default_rng(0x7E47_0001)
    centers = rng.uniform(-55.0, 55.0, (count, 3))
    axes = rng.uniform(3.0, 6.0, (count, 3))
    rots = rng.uniform(-90.0, 90.0, (count, 3))
    values = _distinct_intensities(rng.uniform(0.25, 0.70, count))
    # Keep texture values off the main blobs' exact intensities.
    main_values = {b.intensity for b in _MAIN_BLOBS}
    values = np.array([v if v not in main_values else np.nextafter(v, 1.0) for v in values])
    return tuple(
        Blob(tuple(c), tuple(a), tuple(r), float(v))
        for c, a, r, v in zip(centers, axes, rots, values)
    )


_TEMPLATE_BLOBS = _MAIN_BLOBS + _texture_blobs()

# Each standard plane is anchored to one template blob: the plane origin is
# that blob's center plus a fixed offset, so per-subject jitter moves the
# target exactly as it moves the anchor.
_PLANE_ANCHORS = (0, 1, 2)
_PLANE_OFFSETS = ((0.0, 0.0, 0.0), (-5.0, 3.0, 0.0), (4.0, -2.0, 6.0))
_PLANE_ROTATIONS = ((0.0, 0.0, 0.0), (90.0, 0.0, 90.0), (45.0, -30.0, -60.0))

_CENTER_JITTER = 6.0  # mm, uniform
_AXIS_JITTER = 0.15  # relative, uniform
_ROT_JITTER = 10.0  # deg, uniform
_INTENSITY_JITTER = 0.005


def generate_phantom(subject_seed: int) -> Phantom:
    """Deterministic per-subject phantom; seed 0 is the unjittered template."""
    if subject_seed == 0:
        return Phantom(subject_seed=0, blobs=_TEMPLATE_BLOBS)
    rng = np.random.default_rng(np.random.SeedSequence([0x5EED_FA17, subject_seed]))
    blobs = []
    for blob in _TEMPLATE_BLOBS:
        center = np.asarray(blob.center) + rng.uniform(-_CENTER_JITTER, _CENTER_JITTER, 3)
        center = np.clip(center, -_CENTER_LIMIT, _CENTER_LIMIT)
        axes = np.asarray(blob.axes) * rng.uniform(1 - _AXIS_JITTER, 1 + _AXIS_JITTER, 3)
        rot = np.asarray(blob.rot) + rng.uniform(-_ROT_JITTER, _ROT_JITTER, 3)
        intensity = np.clip(
            blob.intensity + rng.uniform(-_INTENSITY_JITTER, _INTENSITY_JITTER), 0.02, 1.0
        )
        blobs.append(Blob(tuple(center), tuple(axes), tuple(rot), float(intensity)))
    values = _distinct_intensities(np.array([b.intensity for b in blobs]))
    blobs = [
        Blob(b.center, b.axes, b.rot, float(v)) for b, v in zip(blobs, values)
    ]
    return Phantom(subject_seed=subject_seed, blobs=tuple(blobs))


def standard_plane_poses(phantom: Phantom) -> tuple[Pose6, Pose6, Pose6]:
    """The three target probe poses, anchored to this phantom's anatomy."""
    poses = []
    for anchor, offset, rot in zip(_PLANE_ANCHORS, _PLANE_OFFSETS, _PLANE_ROTATIONS):
        c = phantom.blobs[anchor].center
        poses.append(
            Pose6(c[0] + offset[0], c[1] + offset[1], c[2] + offset[2], *rot)
        )
    return tuple(poses)


def render_slice(
    phantom: Phantom,
    probe_pose: Pose6,
    h: int = DEFAULT_H,
    w: int = DEFAULT_W,
    spacing: float = DEFAULT_SPACING,
    noise_seed: int = 0,
) -> Frame:
    """Sample the field on the probe's cutting plane.

    Pixel (r, c) maps to in-plane coordinates ((c - w/2) * spacing,
    (r - h/2) * spacing, 0), carried into the volume by the probe pose.
    Speckle is multiplicative log-normal with mean 1 and the phantom's
    configured strength; strength 0 gives the bare field.
    """
    if h < 16 or w < 16:
        raise ValueError("frames must be at least 16x16")
    t = se3.to_matrix(probe_pose)
    cols = (np.arange(w, dtype=np.float64) - w / 2.0) * spacing
    rows = (np.arange(h, dtype=np.float64) - h / 2.0) * spacing
    u, v = np.meshgrid(cols, rows)  # u varies along columns, v along rows
    plane_points = np.stack([u.ravel(), v.ravel(), np.zeros(h * w)], axis=1)
    points = (plane_points @ t.rotation.T + t.translation).reshape(h, w, 3)

    # Each blob's falloff has compact support (zero at and beyond the
    # ellipsoid shell), so it can only touch pixels inside its projected
    # bounding square; everything else is skipped exactly.
    centers, amax, intensities, bmats = _blob_tables(phantom)
    local = (centers - t.translation) @ t.rotation
    keep = np.nonzero(
        (np.abs(local[:, 2]) <= amax)
        & (np.abs(local[:, 0]) <= cols[-1] + spacing + amax)
        & (local[:, 0] >= cols[0] - amax)
        & (np.abs(local[:, 1]) <= rows[-1] + spacing + amax)
        & (local[:, 1] >= rows[0] - amax)
    )[0]

    acc = np.full((h, w), phantom.background, dtype=np.float64)
    for b in keep:
        r0, r1 = np.searchsorted(rows, [local[b, 1] - amax[b], local[b, 1] + amax[b]])
        c0, c1 = np.searchsorted(cols, [local[b, 0] - amax[b], local[b, 0] + amax[b]])
        r0, c0 = max(r0 - 1, 0), max(c0 - 1, 0)
        r1, c1 = min(r1 + 1, h), min(c1 + 1, w)
        if r0 >= r1 or c0 >= c1:
            continue
        window = points[r0:r1, c0:c1].reshape(-1, 3)
        d = (window - centers[b]) @ bmats[b]
        r2 = np.einsum("ij,ij->i", d, d)
        inside = r2 < 1.0
        if inside.any():
            contrib = np.zeros(window.shape[0])
            contrib[inside] = intensities[b] * (1.0 - r2[inside]) ** 2
            acc[r0:r1, c0:c1] += contrib.reshape(r1 - r0, c1 - c0)

    values = np.clip(acc.ravel(), 0.0, 1.0)
    sigma = phantom.noise_sigma
    if sigma > 0.0:
        z = np.random.default_rng(noise_seed).standard_normal(h * w)
        values = np.clip(values * np.exp(sigma * z - 0.5 * sigma * sigma), 0.0, 1.0)
    # Snap to the 32-bit grid frames are stored on, so disk round trips are exact.
    pixels = values.astype(np.float32).astype(np.float64).reshape(h, w)
    return Frame(h=h, w=w, spacing=spacing, pixels=pixels)
