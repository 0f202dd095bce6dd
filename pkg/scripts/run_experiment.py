#!/usr/bin/env python3
"""Full two-model experiment: generate data, train both variants over seed
pairs, and report whether the world-model run beats the plain policy per
plane, plus the pooled error-spread comparison.

Writes everything under --out and prints a verdict line per seed pair.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from probeguide import demo, eval as ev  # noqa: E402
from probeguide.train import TrainConfig, train  # noqa: E402


def run_pair(pair_idx, base_seed, dream_seed, data_dir, out_dir, args):
    reports = {}
    ckpts = {}
    for variant, seed in (("baseline", base_seed), ("dreamer", dream_seed)):
        ckpt = out_dir / f"{variant}_{seed}.ckpt"
        cfg = TrainConfig(
            variant=variant,
            epochs=args.epochs,
            seed=seed,
            batch_size=args.batch_size,
            pairs_per_sequence=args.pairs_per_sequence,
        )
        t0 = time.time()
        reports[variant] = train(cfg, data_dir, ckpt)
        ckpts[variant] = ckpt
        print(f"  trained {variant} seed {seed} in {time.time() - t0:.0f}s "
              f"(final loss {reports[variant]['epochs'][-1]['loss']:.4f})")
    cmp_report = ev.compare(
        ckpts["baseline"], ckpts["dreamer"], data_dir, out_dir / f"pair_{pair_idx}"
    )

    planes = sorted(int(p) for p in cmp_report["mean_over_axes"])
    axis_wins = {}
    mean_wins = {}
    for plane in planes:
        rows = [r for r in cmp_report["rows"] if r["plane"] == plane]
        axis_wins[plane] = sum(1 for r in rows if r["dreamer"] <= r["baseline"])
        means = cmp_report["mean_over_axes"][str(plane)]
        mean_wins[plane] = means["dreamer"] < means["baseline"]
    pooled = cmp_report["pooled_ae_std"]
    pair_pass = all(axis_wins[p] >= 4 and mean_wins[p] for p in planes)
    std_pass = pooled["dreamer"] <= pooled["baseline"]
    verdict = {
        "pair": pair_idx,
        "seeds": {"baseline": base_seed, "dreamer": dream_seed},
        "axis_wins": axis_wins,
        "mean_wins": mean_wins,
        "mae_pass": pair_pass,
        "pooled_ae_std": pooled,
        "std_pass": std_pass,
    }
    print(f"  pair {pair_idx}: axis wins {axis_wins}  mean wins {mean_wins}  "
          f"MAE {'PASS' if pair_pass else 'fail'}  "
          f"std {pooled['dreamer']:.3f} vs {pooled['baseline']:.3f} "
          f"{'PASS' if std_pass else 'fail'}")
    return verdict


def main(argv=None) -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True)
    ap.add_argument("--subjects", type=int, default=12)
    ap.add_argument("--test-subjects", type=int, default=3)
    ap.add_argument("--scans-per-plane", type=int, default=2)
    ap.add_argument("--frames", type=int, default=50)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--pairs-per-sequence", type=int, default=None,
                    help="defaults to the library default")
    ap.add_argument("--data-seed", type=int, default=7)
    ap.add_argument("--seed-pairs", type=int, nargs="+", default=[101, 102, 103],
                    help="baseline seeds; dreamer seeds are +100")
    args = ap.parse_args(argv)
    if args.pairs_per_sequence is None:
        args.pairs_per_sequence = TrainConfig(variant="dreamer").pairs_per_sequence

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data_dir = out_dir / "data"
    t0 = time.time()
    if not (data_dir / "manifest").exists():
        subjects = demo.draw_subject_seeds(args.subjects + args.test_subjects, args.data_seed)
        ds = demo.generate_dataset(
            subjects[: args.subjects],
            subjects[args.subjects :],
            scans_per_plane=args.scans_per_plane,
            frames_per_scan=args.frames,
            master_seed=args.data_seed,
        )
        demo.save_dataset(ds, data_dir)
        print(f"generated dataset in {time.time() - t0:.0f}s")

    verdicts = []
    for i, base_seed in enumerate(args.seed_pairs):
        print(f"seed pair {i}: baseline {base_seed} / dreamer {base_seed + 100}")
        verdicts.append(run_pair(i, base_seed, base_seed + 100, data_dir, out_dir, args))

    mae_passes = sum(v["mae_pass"] for v in verdicts)
    std_passes = sum(v["std_pass"] for v in verdicts)
    summary = {
        "pairs": verdicts,
        "mae_pairs_passed": mae_passes,
        "std_pairs_passed": std_passes,
        "mae_ok": mae_passes >= 2,
        "std_ok": std_passes >= 2,
        "wall_seconds": round(time.time() - t0, 1),
    }
    (out_dir / "experiment_summary.json").write_text(json.dumps(summary, indent=1))
    print(f"MAE criterion: {mae_passes}/{len(verdicts)} pairs  "
          f"spread criterion: {std_passes}/{len(verdicts)} pairs  "
          f"({summary['wall_seconds']:.0f}s total)")
    return 0 if (summary["mae_ok"] and summary["std_ok"]) else 1


if __name__ == "__main__":
    sys.exit(main())
