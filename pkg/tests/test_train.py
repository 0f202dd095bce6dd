import json
import math

import numpy as np
import pytest

from probeguide import demo, nn
from probeguide.model import PolicyModel
from probeguide.train import ConfigMismatchError, TrainConfig, resume, train

from .conftest import tiny_config


class TestConfig:
    def test_zero_epochs_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(variant="baseline", epochs=0)

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(variant="wizard")

    def test_nonpositive_lr_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(variant="baseline", base_lr=0.0)


class TestDeterminism:
    @pytest.mark.parametrize("variant", ["baseline", "dreamer"])
    def test_same_seed_same_trace(self, variant, tiny_dataset_dir, tmp_path):
        cfg = tiny_config(variant, epochs=3)
        r1 = train(cfg, tiny_dataset_dir, tmp_path / "a.ckpt")
        r2 = train(cfg, tiny_dataset_dir, tmp_path / "b.ckpt")
        t1 = [e["loss"] for e in r1["epochs"]]
        t2 = [e["loss"] for e in r2["epochs"]]
        assert t1 == t2  # bit-identical floats
        a = nn.load_arrays(tmp_path / "a.ckpt")
        b = nn.load_arrays(tmp_path / "b.ckpt")
        for k in a:
            assert np.array_equal(a[k], b[k]), k

    def test_different_seed_different_trace(self, tiny_dataset_dir, tmp_path):
        r1 = train(tiny_config("baseline", epochs=2, seed=1), tiny_dataset_dir, tmp_path / "a.ckpt")
        r2 = train(tiny_config("baseline", epochs=2, seed=2), tiny_dataset_dir, tmp_path / "b.ckpt")
        assert r1["epochs"][0]["loss"] != r2["epochs"][0]["loss"]


class TestSchedule:
    def test_logged_lr_follows_cosine_exactly(self, tiny_dataset_dir, tmp_path):
        cfg = tiny_config("baseline", epochs=4)
        report = train(cfg, tiny_dataset_dir, tmp_path / "m.ckpt")
        spe = report["steps_per_epoch"]
        total = report["total_steps"]
        for row in report["epochs"]:
            expect = nn.cosine_lr(row["epoch"] * spe, total, cfg.base_lr)
            assert abs(row["lr"] - expect) <= 1e-12
        lrs = [row["lr"] for row in report["epochs"]]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_loss_decreases_over_training(self, tiny_dataset_dir, tmp_path):
        for seed in (1, 2, 3):
            cfg = tiny_config("baseline", epochs=6, seed=seed, base_lr=1e-3)
            report = train(cfg, tiny_dataset_dir, tmp_path / f"s{seed}.ckpt")
            assert report["epochs"][-1]["loss"] < report["epochs"][0]["loss"]


class TestResume:
    @pytest.mark.parametrize("variant", ["baseline", "dreamer"])
    def test_split_run_matches_unsplit(self, variant, tiny_dataset_dir, tmp_path):
        cfg = tiny_config(variant, epochs=6)
        train(cfg, tiny_dataset_dir, tmp_path / "full.ckpt")
        train(cfg, tiny_dataset_dir, tmp_path / "half.ckpt", stop_after_epochs=3)
        resume(tmp_path / "half.ckpt", tiny_dataset_dir, tmp_path / "joined.ckpt")
        full = nn.load_arrays(tmp_path / "full.ckpt")
        joined = nn.load_arrays(tmp_path / "joined.ckpt")
        for k in full:
            assert np.allclose(full[k], joined[k], atol=1e-9), k
        # Our substreams make the match exact, not just close.
        for k in full:
            if k.startswith("param/"):
                assert np.array_equal(full[k], joined[k]), k

    def test_resume_rejects_different_batch_size(self, tiny_dataset_dir, tmp_path):
        cfg = tiny_config("baseline", epochs=4)
        train(cfg, tiny_dataset_dir, tmp_path / "m.ckpt", stop_after_epochs=2)
        bad = tiny_config("baseline", epochs=4, batch_size=8)
        with pytest.raises(ConfigMismatchError):
            resume(tmp_path / "m.ckpt", tiny_dataset_dir, tmp_path / "n.ckpt", config=bad)

    def test_resume_rejects_different_dataset(self, tiny_dataset_dir, tmp_path):
        cfg = tiny_config("baseline", epochs=4)
        train(cfg, tiny_dataset_dir, tmp_path / "m.ckpt", stop_after_epochs=2)
        other = demo.generate_dataset(
            demo.draw_subject_seeds(1, 300),
            demo.draw_subject_seeds(1, 400),
            scans_per_plane=1,
            frames_per_scan=10,
            geometry=demo.SliceGeometry(h=32, w=32, spacing=3.0),
        )
        demo.save_dataset(other, tmp_path / "other")
        with pytest.raises(ConfigMismatchError):
            resume(tmp_path / "m.ckpt", tmp_path / "other", tmp_path / "n.ckpt")

    def test_corrupted_checkpoint_rejected(self, tiny_dataset_dir, tmp_path):
        cfg = tiny_config("baseline", epochs=2)
        train(cfg, tiny_dataset_dir, tmp_path / "m.ckpt")
        raw = bytearray((tmp_path / "m.ckpt").read_bytes())
        raw[50] ^= 0xAA
        (tmp_path / "m.ckpt").write_bytes(bytes(raw))
        with pytest.raises(nn.CheckpointError):
            resume(tmp_path / "m.ckpt", tiny_dataset_dir, tmp_path / "n.ckpt")


class TestReports:
    def test_report_written_and_leakage_guarded(self, tiny_dataset_dir, tmp_path):
        report = train(tiny_config("dreamer", epochs=2), tiny_dataset_dir, tmp_path / "m.ckpt")
        on_disk = json.loads((tmp_path / "m.ckpt.report.json").read_text())
        assert on_disk["epochs"] == report["epochs"]
        assert not set(report["train_subjects"]) & set(report["test_subjects_untouched"])
        assert all(row["skipped_gimbal"] == 0 for row in report["epochs"])

    def test_checkpoint_self_describes(self, tiny_dataset_dir, tmp_path, tiny_checkpoints):
        model, extras = PolicyModel.load(tiny_checkpoints["dreamer"])
        assert model.variant == "dreamer"
        assert extras["train/manifest_crc"][0] == demo.manifest_crc(tiny_dataset_dir)
        assert model.config.h == 32 and model.config.w == 32
        assert float(extras["cfg/spacing"][0]) == 3.0
