import concurrent.futures
import dataclasses

import numpy as np
import pytest

from probeguide import phantom as ph
from probeguide.se3 import Pose6

from .oracles import blob_field_oracle, pose_matrix


@pytest.fixture(scope="module")
def template():
    return ph.generate_phantom(0)


@pytest.fixture(scope="module")
def quiet_template(template):
    return dataclasses.replace(template, noise_sigma=0.0)


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    a = a.ravel() - a.mean()
    b = b.ravel() - b.mean()
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    return float(a @ b / denom)


class TestGeneratePhantom:
    def test_deterministic(self):
        assert ph.generate_phantom(42) == ph.generate_phantom(42)

    def test_seeds_differ(self):
        a, b = ph.generate_phantom(1), ph.generate_phantom(2)
        shifts = [
            np.linalg.norm(np.subtract(x.center, y.center))
            for x, y in zip(a.blobs, b.blobs)
        ]
        assert max(shifts) > 1.0

    def test_seed_zero_is_template(self, template):
        assert template.blobs == ph._TEMPLATE_BLOBS
        assert template.subject_seed == 0

    def test_invariants_hold_for_many_seeds(self):
        for seed in range(1, 30):
            p = ph.generate_phantom(seed)
            assert len(p.blobs) >= 6
            intensities = [b.intensity for b in p.blobs]
            assert len(set(intensities)) == len(intensities)
            for b in p.blobs:
                assert max(abs(c) for c in b.center) <= 60.0


class TestStandardPlanePoses:
    def test_template_reference_poses(self, template):
        poses = ph.standard_plane_poses(template)
        assert poses[0] == Pose6(0, 0, 0, 0, 0, 0)
        assert poses[1] == Pose6(20, 21, -12, 90, 0, 90)
        assert poses[2] == Pose6(-24, 8, 21, 45, -30, -60)

    def test_pitch_bounded(self):
        for seed in range(20):
            for p in ph.standard_plane_poses(ph.generate_phantom(seed)):
                assert abs(p.ry) <= 60.0

    def test_poses_pairwise_distinct(self):
        for seed in range(10):
            poses = ph.standard_plane_poses(ph.generate_phantom(seed))
            for i in range(3):
                for j in range(i + 1, 3):
                    d = np.abs(poses[i].as_array() - poses[j].as_array())
                    assert d[:3].max() > 10.0 or d[3:].max() > 10.0

    def test_targets_track_anchor_jitter(self, template):
        jittered = ph.generate_phantom(9)
        base = ph.standard_plane_poses(template)
        got = ph.standard_plane_poses(jittered)
        for i, anchor in enumerate(ph._PLANE_ANCHORS):
            shift = np.subtract(jittered.blobs[anchor].center, template.blobs[anchor].center)
            expect = base[i].as_array()
            expect[:3] += shift
            assert np.allclose(got[i].as_array(), expect, atol=1e-12)


class TestRenderSlice:
    def test_deterministic(self, template):
        pose = Pose6(5, -3, 2, 10, 5, -20)
        f1 = ph.render_slice(template, pose, noise_seed=77)
        f2 = ph.render_slice(template, pose, noise_seed=77)
        assert np.array_equal(f1.pixels, f2.pixels)

    def test_noise_seed_changes_pixels(self, template):
        pose = Pose6(5, -3, 2, 10, 5, -20)
        f1 = ph.render_slice(template, pose, noise_seed=1)
        f2 = ph.render_slice(template, pose, noise_seed=2)
        assert not np.array_equal(f1.pixels, f2.pixels)

    def test_far_pose_is_pure_background(self, quiet_template):
        pose = Pose6(500, 0, 0, 0, 0, 0)
        f = ph.render_slice(quiet_template, pose)
        assert np.allclose(f.pixels, np.float32(quiet_template.background), atol=1e-7)

    def test_matches_point_sampling_oracle(self, quiet_template):
        pose = ph.standard_plane_poses(quiet_template)[1]
        h, w, spacing = 24, 20, 2.0
        f = ph.render_slice(quiet_template, pose, h=h, w=w, spacing=spacing)
        m = pose_matrix(pose)
        pts = []
        for r in range(h):
            for c in range(w):
                local = np.array([(c - w / 2) * spacing, (r - h / 2) * spacing, 0.0, 1.0])
                pts.append((m @ local)[:3])
        expected = blob_field_oracle(quiet_template, np.array(pts)).reshape(h, w)
        assert np.allclose(f.pixels, expected.astype(np.float32), atol=1e-7)

    def test_range_and_finiteness(self, template):
        rng = np.random.default_rng(4)
        for _ in range(10):
            pose = Pose6(*rng.uniform(-60, 60, 3), *rng.uniform(-45, 45, 3))
            f = ph.render_slice(template, pose, noise_seed=int(rng.integers(1 << 31)))
            assert np.all(np.isfinite(f.pixels))
            assert f.pixels.min() >= 0.0 and f.pixels.max() <= 1.0

    def test_rejects_tiny_frames(self, template):
        with pytest.raises(ValueError):
            ph.render_slice(template, Pose6(0, 0, 0, 0, 0, 0), h=8, w=64)

    def test_concurrent_rendering_consistent(self, template):
        pose = Pose6(1, 2, 3, 4, 5, 6)
        with concurrent.futures.ThreadPoolExecutor(max_workers=8) as pool:
            frames = list(
                pool.map(lambda _: ph.render_slice(template, pose, noise_seed=9), range(16))
            )
        for f in frames[1:]:
            assert np.array_equal(f.pixels, frames[0].pixels)


class TestIdentifiability:
    """Noise-free frames must visibly change under small pose changes.

    Probed over the inner bulk of the demonstration sampling region (40 mm
    / 30 deg about each target): blob support is confined to the 120 mm
    cube, so slices taken from the extreme corners of the region can miss
    all structure entirely and carry no information to correlate.
    """

    def test_single_axis_perturbations(self, quiet_template):
        rng = np.random.default_rng(17)
        targets = ph.standard_plane_poses(quiet_template)
        for trial in range(120):
            target = targets[trial % 3]
            base = target.as_array()
            base[:3] += rng.uniform(-40, 40, 3)
            base[3:] += rng.uniform(-30, 30, 3)
            base[4] = np.clip(base[4], -60, 60)
            axis = trial % 6
            step = rng.choice([-1.0, 1.0]) * 2.0
            pert = base.copy()
            pert[axis] += step
            fa = ph.render_slice(quiet_template, Pose6.from_array(base))
            fb = ph.render_slice(quiet_template, Pose6.from_array(pert))
            c = ncc(fa.pixels, fb.pixels)
            assert c < 0.999, f"axis {axis} step {step}: ncc={c:.6f} at {base}"
