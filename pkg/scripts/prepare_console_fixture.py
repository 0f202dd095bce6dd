#!/usr/bin/env python3
"""Build (once) the dataset and trained world-model checkpoint the browser
console's end-to-end test steers against.  Writes fixture.json with the
checkpoint path and subject seeds."""

from __future__ import annotations

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from probeguide import demo  # noqa: E402
from probeguide.train import TrainConfig, train  # noqa: E402


def main() -> int:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "frontend" / ".fixtures"
    out.mkdir(parents=True, exist_ok=True)
    meta_path = out / "fixture.json"
    ckpt = out / "dreamer.ckpt"
    if meta_path.exists() and ckpt.exists():
        print(meta_path)
        return 0

    train_subjects = demo.draw_subject_seeds(6, master_seed=31)
    test_subjects = demo.draw_subject_seeds(1, master_seed=32)
    data_dir = out / "data"
    if not (data_dir / "manifest").exists():
        ds = demo.generate_dataset(
            train_subjects, test_subjects, scans_per_plane=1, frames_per_scan=40, master_seed=31
        )
        demo.save_dataset(ds, data_dir)

    cfg = TrainConfig(variant="dreamer", epochs=25, seed=5, pairs_per_sequence=32)
    train(cfg, data_dir, ckpt, log=lambda s: print(f"  {s}"))

    meta = {
        "checkpoint": str(ckpt),
        "train_subjects": train_subjects,
        "test_subjects": test_subjects,
    }
    meta_path.write_text(json.dumps(meta, indent=1))
    print(meta_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
