import numpy as np
import pytest

from probeguide import demo
from probeguide.train import TrainConfig, train

TINY_GEOMETRY = demo.SliceGeometry(h=32, w=32, spacing=3.0)


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory):
    """Small but real dataset: 2 train subjects, 1 test subject."""
    ds = demo.generate_dataset(
        train_subjects=demo.draw_subject_seeds(2, master_seed=100),
        test_subjects=demo.draw_subject_seeds(1, master_seed=200),
        scans_per_plane=1,
        frames_per_scan=12,
        geometry=TINY_GEOMETRY,
        master_seed=100,
    )
    path = tmp_path_factory.mktemp("data") / "tiny"
    demo.save_dataset(ds, path)
    return path


def tiny_config(variant: str, **kw) -> TrainConfig:
    defaults = dict(epochs=4, batch_size=16, base_lr=1e-3, seed=11, pairs_per_sequence=6)
    defaults.update(kw)
    return TrainConfig(variant=variant, **defaults)


@pytest.fixture(scope="session")
def tiny_checkpoints(tiny_dataset_dir, tmp_path_factory):
    """One short real training run per variant, shared by eval/service tests."""
    out = tmp_path_factory.mktemp("ckpt")
    paths = {}
    for variant in ("baseline", "dreamer"):
        paths[variant] = out / f"{variant}.ckpt"
        train(tiny_config(variant, epochs=20), tiny_dataset_dir, paths[variant])
    return paths
