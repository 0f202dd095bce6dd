"""Command-line entry points: dataset generation, training, evaluation,
model comparison, and the live guidance server."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import demo


def _cmd_gen_data(args) -> int:
    subjects = demo.draw_subject_seeds(args.subjects + args.test_subjects, args.seed)
    train_subjects = subjects[: args.subjects]
    test_subjects = subjects[args.subjects :]
    geometry = demo.SliceGeometry(h=args.size, w=args.size, spacing=args.spacing)
    ds = demo.generate_dataset(
        train_subjects,
        test_subjects,
        scans_per_plane=args.scans_per_plane,
        frames_per_scan=args.frames,
        geometry=geometry,
        master_seed=args.seed,
        workers=args.workers,
    )
    demo.save_dataset(ds, args.out)
    n_frames = sum(len(s) for s in ds.sequences)
    print(
        f"wrote {len(ds.sequences)} scans ({n_frames} frames) to {args.out} "
        f"[{args.subjects} train / {args.test_subjects} test subjects]"
    )
    return 0


def _cmd_train(args) -> int:
    from .train import TrainConfig, train

    config = TrainConfig(
        variant=args.variant,
        epochs=args.epochs,
        batch_size=args.batch_size,
        base_lr=args.lr,
        weight_decay=args.weight_decay,
        pairs_per_sequence=args.pairs_per_sequence,
        seed=args.seed,
        weight_by_scan=args.weight_by_scan,
    )
    report = train(config, args.data, args.out, stop_after_epochs=args.stop_after, log=print)
    print(f"checkpoint: {report['checkpoint']}")
    return 0


def _cmd_resume(args) -> int:
    from .train import resume

    report = resume(args.ckpt, args.data, args.out, log=print)
    print(f"checkpoint: {report['checkpoint']}")
    return 0


def _cmd_eval(args) -> int:
    from . import eval as ev

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    predictor, info = ev.load_predictor(args.ckpt)
    label = info["model"].variant
    table = ev.mae_table(predictor, args.data)
    ev.write_mae_csv(out / "mae.csv", table, label)
    curves = {label: ev.stability_curve(predictor, args.data, bins=args.bins)}
    ev.write_stability_csv(out / "stability.csv", curves)
    ev.plot_stability(out / "stability.svg", curves, label)
    print(f"plane  count  {'  '.join(f'{a:>7}' for a in ev.AXES)}")
    for plane, row in table.per_plane.items():
        cells = "  ".join(f"{v:7.2f}" for v in row)
        print(f"{plane:>5}  {table.counts[plane]:>5}  {cells}")
    print(f"wrote {out}/mae.csv, stability.csv, stability.svg")
    return 0


def _cmd_compare(args) -> int:
    from . import eval as ev

    report = ev.compare(args.baseline, args.dreamer, args.data, args.out, bins=args.bins)
    print(f"{'plane':>5} {'axis':>4} {'baseline':>9} {'dreamer':>9}  change")
    for row in report["rows"]:
        print(
            f"{row['plane']:>5} {row['axis']:>4} {row['baseline']:9.3f} "
            f"{row['dreamer']:9.3f}  {row['rendered']}"
        )
    pooled = report["pooled_ae_std"]
    print(f"pooled AE std: baseline {pooled['baseline']:.3f}  dreamer {pooled['dreamer']:.3f}")
    print(f"wrote {args.out}/compare.csv, summary.json, stability_plane_*.csv/svg")
    return 0


def _cmd_serve(args) -> int:
    from .service import GuidanceService, ProtocolServer

    checkpoints = {}
    if args.ckpt_baseline:
        checkpoints["baseline"] = args.ckpt_baseline
    if args.ckpt_dreamer:
        checkpoints["dreamer"] = args.ckpt_dreamer
    if not checkpoints:
        print("at least one of --ckpt-baseline / --ckpt-dreamer is required", file=sys.stderr)
        return 2
    service = GuidanceService(checkpoints, fresh_noise=args.fresh_noise)
    server = ProtocolServer(service, host=args.host, port=args.port)
    print(f"serving {sorted(checkpoints)} on {args.host}:{server.port} (NDJSON + HTTP)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        print("shutting down")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="probeguide")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic scan dataset")
    g.add_argument("--subjects", type=int, default=12, help="training subjects")
    g.add_argument("--test-subjects", type=int, default=3)
    g.add_argument("--scans-per-plane", type=int, default=2)
    g.add_argument("--frames", type=int, default=50, help="frames per scan")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--size", type=int, default=64, help="frame height and width")
    g.add_argument("--spacing", type=float, default=1.5, help="mm per pixel")
    g.add_argument("--workers", type=int, default=1)
    g.set_defaults(fn=_cmd_gen_data)

    t = sub.add_parser("train", help="train one model variant")
    t.add_argument("--variant", choices=["baseline", "dreamer"], required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--epochs", type=int, default=40)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--weight-decay", type=float, default=1e-4)
    t.add_argument("--pairs-per-sequence", type=int, default=8)
    t.add_argument("--weight-by-scan", action="store_true")
    t.add_argument("--stop-after", type=int, default=None, help="stop after N epochs (resumable)")
    t.set_defaults(fn=_cmd_train)

    r = sub.add_parser("resume", help="continue a stopped training run")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--out", default=None)
    r.set_defaults(fn=_cmd_resume)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the held-out split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--bins", type=int, default=10)
    e.set_defaults(fn=_cmd_eval)

    c = sub.add_parser("compare", help="side-by-side evaluation of two checkpoints")
    c.add_argument("--baseline", required=True)
    c.add_argument("--dreamer", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--bins", type=int, default=10)
    c.set_defaults(fn=_cmd_compare)

    s = sub.add_parser("serve", help="run the live guidance service")
    s.add_argument("--ckpt-baseline", default=None)
    s.add_argument("--ckpt-dreamer", default=None)
    s.add_argument("--port", type=int, default=8765)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--fresh-noise", action="store_true", help="new speckle each step")
    s.set_defaults(fn=_cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
