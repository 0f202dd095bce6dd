"""Expert-demonstration generation and dataset construction.

A scan is a noisy, contracting trajectory of probe poses ending exactly on
a standard-plane target, with a rendered frame per pose.  From scans we
build the two training views: per-frame target-relative actions, and
ordered frame pairs with their inter-frame and frame-to-target motions.
Scans serialize to a directory of binary blobs plus a JSON manifest.
"""

from __future__ import annotations

import concurrent.futures
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import phantom as ph
from . import se3
from .phantom import Frame, Phantom
from .se3 import GimbalLockError, Pose6

__all__ = [
    "SliceGeometry",
    "DemoSequence",
    "GuidanceSample",
    "PermutationSample",
    "ScanDataset",
    "DatasetFormatError",
    "generate_scan",
    "build_guidance_dataset",
    "target_actions",
    "sample_permutation_pairs",
    "generate_dataset",
    "guidance_arrays",
    "save_dataset",
    "load_dataset",
    "manifest_crc",
]

FORMAT_MAGIC = b"DPL1"
FORMAT_VERSION = "DPL1"

# Sampling region around the target pose.
TRANSLATION_BOX = 60.0  # mm per axis
ANGLE_BOX = 45.0  # deg per axis
PITCH_ABS_LIMIT = 60.0  # deg, absolute
STEP_FRACTION = (0.03, 0.22)
STEP_JITTER_MM = 1.5
STEP_JITTER_DEG = 1.5

MIN_SCAN_LENGTH = 8

_SCAN_STREAM = 0xD3_0001


class DatasetFormatError(RuntimeError):
    """Corrupt, truncated, or wrong-version dataset file."""


@dataclass(frozen=True)
class SliceGeometry:
    h: int = ph.DEFAULT_H
    w: int = ph.DEFAULT_W
    spacing: float = ph.DEFAULT_SPACING


@dataclass(frozen=True)
class DemoSequence:
    """One scan: parallel (frame, pose) lists; the last pose is the target."""

    subject_seed: int
    plane: int
    frames: tuple[Frame, ...]
    poses: tuple[Pose6, ...]

    def __post_init__(self) -> None:
        if len(self.frames) != len(self.poses):
            raise ValueError("frames and poses must pair up")
        if len(self.poses) < MIN_SCAN_LENGTH:
            raise ValueError(f"scan must have at least {MIN_SCAN_LENGTH} frames")

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def target_pose(self) -> Pose6:
        return self.poses[-1]


@dataclass(frozen=True)
class GuidanceSample:
    frame: Frame
    plane: int
    action_gt: Pose6


@dataclass(frozen=True)
class PermutationSample:
    frame1: Frame
    frame2: Frame
    plane: int
    a_12: Pose6
    a_1t: Pose6
    a_2t: Pose6


@dataclass(frozen=True)
class ScanDataset:
    geometry: SliceGeometry
    train_subjects: tuple[int, ...]
    test_subjects: tuple[int, ...]
    sequences: tuple[DemoSequence, ...]
    master_seed: int = 0

    def split(self, role: str) -> tuple[DemoSequence, ...]:
        subjects = self.train_subjects if role == "train" else self.test_subjects
        return tuple(s for s in self.sequences if s.subject_seed in subjects)


def _clamp_to_region(offsets: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Clamp target-relative offsets into the sampling box, keeping |ry|
    within its absolute limit."""
    offsets = np.clip(
        offsets,
        [-TRANSLATION_BOX] * 3 + [-ANGLE_BOX] * 3,
        [TRANSLATION_BOX] * 3 + [ANGLE_BOX] * 3,
    )
    ry = target[4] + offsets[4]
    offsets[4] += np.clip(ry, -PITCH_ABS_LIMIT, PITCH_ABS_LIMIT) - ry
    return offsets


def generate_scan(
    phantom: Phantom,
    plane: int,
    scan_seed: int,
    length: int = 50,
    geometry: SliceGeometry = SliceGeometry(),
) -> DemoSequence:
    """Simulated expert scan: start anywhere in the sampling region, then
    contract a random fraction of the remaining per-axis offset each step
    (plus jitter), landing exactly on the target pose."""
    if length < MIN_SCAN_LENGTH:
        raise ValueError(f"length must be >= {MIN_SCAN_LENGTH}")
    if not 0 <= plane < ph.PLANE_COUNT:
        raise ValueError(f"plane must be in [0, {ph.PLANE_COUNT})")
    rng = np.random.default_rng(
        np.random.SeedSequence([_SCAN_STREAM, phantom.subject_seed, plane, scan_seed])
    )
    target = ph.standard_plane_poses(phantom)[plane].as_array()

    offsets = np.concatenate(
        [
            rng.uniform(-TRANSLATION_BOX, TRANSLATION_BOX, 3),
            rng.uniform(-ANGLE_BOX, ANGLE_BOX, 3),
        ]
    )
    offsets = _clamp_to_region(offsets, target)

    pose_arrays = [target + offsets]
    for _ in range(length - 2):
        frac = rng.uniform(*STEP_FRACTION, 6)
        jitter = np.concatenate(
            [rng.normal(0.0, STEP_JITTER_MM, 3), rng.normal(0.0, STEP_JITTER_DEG, 3)]
        )
        offsets = (1.0 - frac) * offsets + jitter
        offsets = _clamp_to_region(offsets, target)
        pose_arrays.append(target + offsets)
    pose_arrays.append(target.copy())

    poses = tuple(Pose6.from_array(a) for a in pose_arrays)
    noise_seeds = rng.integers(0, 2**63 - 1, size=length)
    frames = tuple(
        ph.render_slice(
            phantom,
            pose,
            h=geometry.h,
            w=geometry.w,
            spacing=geometry.spacing,
            noise_seed=int(seed),
        )
        for pose, seed in zip(poses, noise_seeds)
    )
    return DemoSequence(subject_seed=phantom.subject_seed, plane=plane, frames=frames, poses=poses)


def target_actions(sequence: DemoSequence) -> tuple[Pose6, ...]:
    """Remaining motion to the target for every frame (zero at the end)."""
    target = sequence.target_pose
    return tuple(se3.relative(p, target) for p in sequence.poses)


def guidance_arrays(sequences):
    """Stack the per-frame training view into flat arrays: frames
    (N, h, w, 1), plane ids (N,), remaining motions (N, 6), and the sample
    count of each source scan (N,)."""
    frames, planes, actions, scan_size = [], [], [], []
    for seq in sequences:
        acts = target_actions(seq)
        for frame, act in zip(seq.frames[:-1], acts[:-1]):
            frames.append(frame.pixels[..., None])
            planes.append(seq.plane)
            actions.append(act.as_array())
            scan_size.append(len(seq) - 1)
    return (
        np.asarray(frames, dtype=np.float64),
        np.asarray(planes, dtype=np.int64),
        np.asarray(actions, dtype=np.float64),
        np.asarray(scan_size, dtype=np.float64),
    )


def build_guidance_dataset(sequences) -> list[GuidanceSample]:
    """One sample per non-terminal frame, labelled with the remaining motion."""
    samples: list[GuidanceSample] = []
    for seq in sequences:
        actions = target_actions(seq)
        for frame, action in zip(seq.frames[:-1], actions[:-1]):
            samples.append(GuidanceSample(frame=frame, plane=seq.plane, action_gt=action))
    return samples


def sample_permutation_pairs(
    sequence: DemoSequence, k: int, rng_seed: int
) -> list[PermutationSample]:
    """Draw k ordered (t1, t2) index pairs, t1 != t2, over the non-terminal
    frames, without replacement while enough distinct pairs remain."""
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(sequence) - 1  # non-terminal frames
    if n < 2:
        raise ValueError("sequence too short for pairs")
    total = n * (n - 1)
    rng = np.random.default_rng(rng_seed)
    if k <= total:
        chosen = rng.choice(total, size=k, replace=False)
    else:
        chosen = np.concatenate(
            [np.arange(total), rng.choice(total, size=k - total, replace=True)]
        )
    actions = target_actions(sequence)
    samples: list[PermutationSample] = []
    for idx in chosen:
        t1 = int(idx) // (n - 1)
        r = int(idx) % (n - 1)
        t2 = r if r < t1 else r + 1
        try:
            a_12 = se3.relative(sequence.poses[t1], sequence.poses[t2])
        except GimbalLockError:
            # Essentially unreachable under the sampling region's pitch
            # bound; trade this pair for a fresh one.
            replacement = int(rng.integers(0, total))
            t1 = replacement // (n - 1)
            r = replacement % (n - 1)
            t2 = r if r < t1 else r + 1
            a_12 = se3.relative(sequence.poses[t1], sequence.poses[t2])
        samples.append(
            PermutationSample(
                frame1=sequence.frames[t1],
                frame2=sequence.frames[t2],
                plane=sequence.plane,
                a_12=a_12,
                a_1t=actions[t1],
                a_2t=actions[t2],
            )
        )
    return samples


def generate_dataset(
    train_subjects,
    test_subjects,
    scans_per_plane: int = 2,
    frames_per_scan: int = 50,
    geometry: SliceGeometry = SliceGeometry(),
    master_seed: int = 0,
    workers: int = 1,
) -> ScanDataset:
    """Render every scan for the requested subject split.  Each scan is
    self-seeded, so results never depend on scheduling; pass workers > 1 to
    render scans from a thread pool (profitable only when single-frame
    rendering is heavy enough to amortize the interpreter lock)."""
    train_subjects = tuple(train_subjects)
    test_subjects = tuple(test_subjects)
    overlap = set(train_subjects) & set(test_subjects)
    if overlap:
        raise ValueError(f"train/test subjects overlap: {sorted(overlap)}")

    jobs = []
    for subject in train_subjects + test_subjects:
        phantom = ph.generate_phantom(subject)
        for plane in range(ph.PLANE_COUNT):
            for scan_idx in range(scans_per_plane):
                jobs.append((phantom, plane, scan_idx))

    def run(job):
        phantom, plane, scan_idx = job
        return generate_scan(phantom, plane, scan_idx, frames_per_scan, geometry)

    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            sequences = tuple(pool.map(run, jobs))
    else:
        sequences = tuple(map(run, jobs))
    return ScanDataset(
        geometry=geometry,
        train_subjects=train_subjects,
        test_subjects=test_subjects,
        sequences=sequences,
        master_seed=master_seed,
    )


def draw_subject_seeds(count: int, master_seed: int) -> list[int]:
    """Distinct pseudo-random subject seeds derived from one master seed."""
    rng = np.random.default_rng(np.random.SeedSequence([0x5B1EC7, master_seed]))
    seeds: list[int] = []
    seen = set()
    while len(seeds) < count:
        s = int(rng.integers(1, 2**63 - 1))
        if s not in seen:
            seen.add(s)
            seeds.append(s)
    return seeds


# ---------------------------------------------------------------------------
# On-disk format: JSON manifest + one binary blob per scan.
# Blob layout: magic "DPL1", u32 h, w, n; n frames of h*w float32; n poses
# of 6 float64; u32 CRC32 of everything after the magic.  Little-endian.


def _scan_blob(seq: DemoSequence, geometry: SliceGeometry) -> bytes:
    n = len(seq)
    payload = bytearray()
    payload += struct.pack("<III", geometry.h, geometry.w, n)
    for frame in seq.frames:
        payload += frame.pixels.astype("<f4").tobytes()
    for pose in seq.poses:
        payload += pose.as_array().astype("<f8").tobytes()
    crc = zlib.crc32(bytes(payload)) & 0xFFFFFFFF
    return FORMAT_MAGIC + bytes(payload) + struct.pack("<I", crc)


def _parse_scan_blob(data: bytes, subject_seed: int, plane: int, spacing: float) -> DemoSequence:
    if len(data) < 4 or data[:4] != FORMAT_MAGIC:
        raise DatasetFormatError("bad magic; not a scan blob or wrong format version")
    if len(data) < 4 + 12 + 4:
        raise DatasetFormatError("truncated scan blob")
    payload, (stored_crc,) = data[4:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != stored_crc:
        raise DatasetFormatError("scan blob checksum mismatch")
    h, w, n = struct.unpack("<III", payload[:12])
    frame_bytes = h * w * 4
    expected = 12 + n * frame_bytes + n * 48
    if len(payload) != expected:
        raise DatasetFormatError(
            f"scan blob length {len(payload)} does not match header ({expected})"
        )
    offset = 12
    frames = []
    for _ in range(n):
        px = np.frombuffer(payload, dtype="<f4", count=h * w, offset=offset)
        frames.append(
            Frame(h=h, w=w, spacing=spacing, pixels=px.astype(np.float64).reshape(h, w))
        )
        offset += frame_bytes
    poses = []
    for _ in range(n):
        vals = np.frombuffer(payload, dtype="<f8", count=6, offset=offset)
        poses.append(Pose6.from_array(vals))
        offset += 48
    return DemoSequence(
        subject_seed=subject_seed, plane=plane, frames=tuple(frames), poses=tuple(poses)
    )


def _manifest_dict(ds: ScanDataset, files: list[str]) -> dict:
    return {
        "format": FORMAT_VERSION,
        "geometry": {"h": ds.geometry.h, "w": ds.geometry.w, "spacing": ds.geometry.spacing},
        "master_seed": ds.master_seed,
        "train_subjects": list(ds.train_subjects),
        "test_subjects": list(ds.test_subjects),
        "counts": {
            "sequences": len(ds.sequences),
            "frames": sum(len(s) for s in ds.sequences),
        },
        "scans": [
            {
                "file": name,
                "subject_seed": seq.subject_seed,
                "plane": seq.plane,
                "length": len(seq),
                "role": "train" if seq.subject_seed in ds.train_subjects else "test",
            }
            for name, seq in zip(files, ds.sequences)
        ],
    }


def save_dataset(ds: ScanDataset, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    files = [f"scan_{i:05d}.bin" for i in range(len(ds.sequences))]
    for name, seq in zip(files, ds.sequences):
        (path / name).write_bytes(_scan_blob(seq, ds.geometry))
    manifest = _manifest_dict(ds, files)
    (path / "manifest").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_manifest(path) -> dict:
    path = Path(path)
    manifest_path = path / "manifest"
    if not manifest_path.exists():
        raise DatasetFormatError(f"no manifest in {path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"manifest is not valid JSON: {e}") from e
    if manifest.get("format") != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported format {manifest.get('format')!r}")
    return manifest


def manifest_crc(path) -> int:
    """Fingerprint of a dataset directory's manifest (split identity)."""
    return zlib.crc32((Path(path) / "manifest").read_bytes()) & 0xFFFFFFFF


def load_dataset(path) -> ScanDataset:
    path = Path(path)
    manifest = load_manifest(path)
    geom = SliceGeometry(
        h=manifest["geometry"]["h"],
        w=manifest["geometry"]["w"],
        spacing=manifest["geometry"]["spacing"],
    )
    sequences = []
    for entry in manifest["scans"]:
        blob = (path / entry["file"]).read_bytes()
        seq = _parse_scan_blob(blob, entry["subject_seed"], entry["plane"], geom.spacing)
        if len(seq) != entry["length"]:
            raise DatasetFormatError(f"{entry['file']}: length disagrees with manifest")
        sequences.append(seq)
    return ScanDataset(
        geometry=geom,
        train_subjects=tuple(manifest["train_subjects"]),
        test_subjects=tuple(manifest["test_subjects"]),
        sequences=tuple(sequences),
        master_seed=manifest.get("master_seed", 0),
    )
