"""Seed-controlled training for both model variants.

Epoch order, parameter init, and pair resampling all derive from one seed
through fixed-purpose substreams, so a run's loss trace is bit-reproducible
and a checkpoint can resume mid-schedule and land exactly where the unsplit
run would have.  The cosine schedule always spans the configured total
epoch count.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import demo, nn
from .model import ModelConfig, PolicyModel

__all__ = ["TrainConfig", "ConfigMismatchError", "train", "resume", "load_train_state"]

_INIT_STREAM = 0
_ORDER_STREAM = 1
_PAIR_STREAM = 2


class ConfigMismatchError(ValueError):
    """Checkpoint was produced under an incompatible configuration."""


@dataclass
class TrainConfig:
    variant: str
    epochs: int = 40
    batch_size: int = 32
    base_lr: float = 1e-4
    weight_decay: float = 1e-4
    pairs_per_sequence: int = 8
    beta: float = 1.0
    seed: int = 0
    weight_by_scan: bool = False

    def __post_init__(self) -> None:
        if self.variant not in ("baseline", "dreamer"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def _pair_arrays(sequences, k: int, epoch_rng: np.random.Generator):
    frames, planes, a12, a1t, a2t, scan_len = [], [], [], [], [], []
    seeds = epoch_rng.integers(0, 2**63 - 1, size=len(sequences))
    for seq, seed in zip(sequences, seeds):
        for s in demo.sample_permutation_pairs(seq, k, int(seed)):
            frames.append(s.frame1.pixels[..., None])
            planes.append(s.plane)
            a12.append(s.a_12.as_array())
            a1t.append(s.a_1t.as_array())
            a2t.append(s.a_2t.as_array())
            scan_len.append(k)
    return (
        np.asarray(frames, dtype=np.float64),
        np.asarray(planes, dtype=np.int64),
        np.asarray(a12, dtype=np.float64),
        np.asarray(a1t, dtype=np.float64),
        np.asarray(a2t, dtype=np.float64),
        np.asarray(scan_len, dtype=np.float64),
    )


def _train_state_arrays(config: TrainConfig, epochs_done: int, global_step: int, crc: int, spacing: float):
    return {
        "train/seed": np.array([float(config.seed)]),
        "train/epochs_total": np.array([float(config.epochs)]),
        "train/epochs_done": np.array([float(epochs_done)]),
        "train/batch_size": np.array([float(config.batch_size)]),
        "train/base_lr": np.array([config.base_lr]),
        "train/weight_decay": np.array([config.weight_decay]),
        "train/pairs_per_sequence": np.array([float(config.pairs_per_sequence)]),
        "train/beta": np.array([config.beta]),
        "train/weight_by_scan": np.array([float(config.weight_by_scan)]),
        "train/manifest_crc": np.array([float(crc)]),
        "train/global_step": np.array([float(global_step)]),
        "cfg/spacing": np.array([spacing]),
    }


def load_train_state(extras: dict[str, np.ndarray]) -> TrainConfig:
    variant = ("baseline", "dreamer")[int(extras["cfg/variant"][0])]
    return TrainConfig(
        variant=variant,
        epochs=int(extras["train/epochs_total"][0]),
        batch_size=int(extras["train/batch_size"][0]),
        base_lr=float(extras["train/base_lr"][0]),
        weight_decay=float(extras["train/weight_decay"][0]),
        pairs_per_sequence=int(extras["train/pairs_per_sequence"][0]),
        beta=float(extras["train/beta"][0]),
        seed=int(extras["train/seed"][0]),
        weight_by_scan=bool(extras["train/weight_by_scan"][0]),
    )


def _run(
    config: TrainConfig,
    data_dir,
    out_ckpt,
    model: PolicyModel,
    optimizer: nn.AdamW,
    start_epoch: int,
    stop_after_epochs: int | None,
    log=None,
) -> dict:
    ds = demo.load_dataset(data_dir)
    crc = demo.manifest_crc(data_dir)
    train_seqs = ds.split("train")
    if not train_seqs:
        raise ValueError("dataset has no training scans")
    used_subjects = sorted({s.subject_seed for s in train_seqs})
    leaked = set(used_subjects) & set(ds.test_subjects)
    if leaked:
        raise RuntimeError(f"test subjects leaked into training: {sorted(leaked)}")

    if config.variant == "baseline":
        frames, planes, actions, scan_len = demo.guidance_arrays(train_seqs)
        n_samples = frames.shape[0]
    else:
        n_samples = config.pairs_per_sequence * len(train_seqs)

    steps_per_epoch = -(-n_samples // config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    stop_epoch = config.epochs if stop_after_epochs is None else stop_after_epochs
    if not start_epoch <= stop_epoch <= config.epochs:
        raise ValueError("stop_after_epochs must lie between the resume point and total epochs")

    global_step = start_epoch * steps_per_epoch
    epoch_rows = []
    for epoch in range(start_epoch, stop_epoch):
        t0 = time.perf_counter()
        if config.variant == "dreamer":
            pair_rng = np.random.default_rng(
                np.random.SeedSequence([config.seed, _PAIR_STREAM, epoch])
            )
            frames, planes, a12, a1t, a2t, scan_len = _pair_arrays(
                train_seqs, config.pairs_per_sequence, pair_rng
            )
        order_rng = np.random.default_rng(
            np.random.SeedSequence([config.seed, _ORDER_STREAM, epoch])
        )
        order = order_rng.permutation(frames.shape[0])

        lr_epoch = nn.cosine_lr(global_step, total_steps, config.base_lr)
        loss_sum = 0.0
        count = 0
        skipped = 0
        for lo in range(0, order.size, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            lr = nn.cosine_lr(global_step, total_steps, config.base_lr)
            weights = scan_len[idx] ** -1 if config.weight_by_scan else None
            model.params.zero_grad()
            if config.variant == "baseline":
                loss = model.forward_baseline(
                    frames[idx], planes[idx], actions[idx], config.beta, weights
                )
            else:
                loss, batch_skipped = model.forward_dreamer(
                    frames[idx], planes[idx], a12[idx], a1t[idx], a2t[idx], config.beta, weights
                )
                skipped += batch_skipped
            loss.backward()
            optimizer.step(lr, config.weight_decay)
            loss_sum += loss.item() * idx.size
            count += idx.size
            global_step += 1
        row = {
            "epoch": epoch,
            "loss": loss_sum / count,
            "lr": lr_epoch,
            "seconds": round(time.perf_counter() - t0, 3),
            "skipped_gimbal": skipped,
        }
        epoch_rows.append(row)
        if log:
            log(f"epoch {epoch:3d}  loss {row['loss']:.6f}  lr {row['lr']:.3e}  {row['seconds']:.1f}s")

    extra = _train_state_arrays(config, stop_epoch, global_step, crc, ds.geometry.spacing)
    extra.update(optimizer.state_arrays())
    model.save(out_ckpt, extra=extra)

    report = {
        "variant": config.variant,
        "config": asdict(config),
        "manifest_crc": crc,
        "train_subjects": used_subjects,
        "test_subjects_untouched": sorted(ds.test_subjects),
        "steps_per_epoch": steps_per_epoch,
        "total_steps": total_steps,
        "epochs_done": stop_epoch,
        "epochs": epoch_rows,
        "checkpoint": str(out_ckpt),
    }
    Path(str(out_ckpt) + ".report.json").write_text(json.dumps(report, indent=1))
    return report


def train(
    config: TrainConfig,
    data_dir,
    out_ckpt,
    stop_after_epochs: int | None = None,
    log=None,
) -> dict:
    """Train from scratch; optionally stop early (the checkpoint can then
    be resumed to finish the schedule)."""
    ds_manifest = demo.load_manifest(data_dir)
    geom = ds_manifest["geometry"]
    model = PolicyModel(
        ModelConfig(h=geom["h"], w=geom["w"]), config.variant, seed=config.seed
    )
    optimizer = nn.AdamW(model.params)
    return _run(config, data_dir, out_ckpt, model, optimizer, 0, stop_after_epochs, log)


def resume(
    ckpt_path,
    data_dir,
    out_ckpt=None,
    config: TrainConfig | None = None,
    stop_after_epochs: int | None = None,
    log=None,
) -> dict:
    """Continue a stopped run to the end of its configured schedule."""
    model, extras = PolicyModel.load(ckpt_path)
    saved = load_train_state(extras)
    if config is not None and config != saved:
        raise ConfigMismatchError(
            f"resume config {config} does not match checkpoint config {saved}"
        )
    crc_now = demo.manifest_crc(data_dir)
    if int(extras["train/manifest_crc"][0]) != crc_now:
        raise ConfigMismatchError("checkpoint was trained on a different dataset split")
    optimizer = nn.AdamW(model.params)
    optimizer.load_state(extras)
    start_epoch = int(extras["train/epochs_done"][0])
    return _run(
        saved,
        data_dir,
        out_ckpt or ckpt_path,
        model,
        optimizer,
        start_epoch,
        stop_after_epochs,
        log,
    )
