"""Evaluation: per-plane per-axis MAE tables, stability curves of absolute
error against distance to target, and the side-by-side two-model report.

One convention runs through everything here: millimetres and degrees are
treated as commensurate, so "distance to target" is the plain mean of the
six absolute action components and a sample's absolute error is the plain
mean of its six absolute residuals.  Aggregations use exact summation, so
results are independent of sample order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import demo
from .model import PolicyModel

__all__ = [
    "AXES",
    "MaeTable",
    "StabilityCurve",
    "SplitMismatchError",
    "load_predictor",
    "evaluation_arrays",
    "mae_table",
    "stability_curve",
    "pooled_ae_std",
    "compare",
    "percent_change_str",
    "write_mae_csv",
    "write_stability_csv",
    "plot_stability",
]

AXES = ("x", "y", "z", "rx", "ry", "rz")


class SplitMismatchError(ValueError):
    """The two checkpoints (or checkpoint and dataset) disagree on the split."""


@dataclass(frozen=True)
class MaeTable:
    per_plane: dict[int, np.ndarray]  # plane -> (6,) per-axis MAE (NaN if empty)
    counts: dict[int, int]

    def mean_over_axes(self, plane: int) -> float:
        return float(np.mean(self.per_plane[plane]))


@dataclass(frozen=True)
class StabilityCurve:
    edges: np.ndarray  # (bins + 1,) strictly increasing
    mean: np.ndarray  # (bins,) mean AE, NaN on empty bins
    std: np.ndarray  # (bins,) std of AE, NaN on empty bins
    count: np.ndarray  # (bins,) ints

    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


def _exact_mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values) if values else float("nan")


def _exact_std(values) -> float:
    values = list(values)
    if not values:
        return float("nan")
    m = _exact_mean(values)
    return math.sqrt(math.fsum((v - m) ** 2 for v in values) / len(values))


def load_predictor(ckpt_path):
    """Checkpoint to a (frames, planes) -> (N, 6) callable plus its metadata."""
    model, extras = PolicyModel.load(ckpt_path)
    return model.predict, {"model": model, "extras": extras}


def _as_predictor(ckpt_or_fn):
    if callable(ckpt_or_fn):
        return ckpt_or_fn, None
    fn, info = load_predictor(ckpt_or_fn)
    return fn, info


def evaluation_arrays(dataset_or_dir, role: str = "test"):
    ds = dataset_or_dir if isinstance(dataset_or_dir, demo.ScanDataset) else demo.load_dataset(dataset_or_dir)
    return demo.guidance_arrays(ds.split(role))


def mae_table(ckpt_or_fn, dataset_or_dir, role: str = "test", planes: int = 3) -> MaeTable:
    """Per-axis mean absolute error of the predicted remaining motion,
    aggregated per target plane.  Planes with no samples report NaN rows
    with count zero."""
    predict, _ = _as_predictor(ckpt_or_fn)
    frames, plane_ids, actions, _ = evaluation_arrays(dataset_or_dir, role)
    preds = predict(frames, plane_ids)
    err = np.abs(preds - actions)
    per_plane: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    for plane in range(planes):
        rows = err[plane_ids == plane]
        counts[plane] = rows.shape[0]
        if rows.shape[0] == 0:
            per_plane[plane] = np.full(6, np.nan)
        else:
            per_plane[plane] = np.array([_exact_mean(rows[:, a]) for a in range(6)])
    return MaeTable(per_plane=per_plane, counts=counts)


def _sample_ae_and_distance(predict, frames, plane_ids, actions):
    preds = predict(frames, plane_ids)
    ae = np.abs(preds - actions).mean(axis=1)
    dist = np.abs(actions).mean(axis=1)
    return ae, dist


def stability_curve(ckpt_or_fn, dataset_or_dir, bins: int = 10, role: str = "test") -> StabilityCurve:
    """Mean and spread of per-sample absolute error, binned by the sample's
    distance to target.  Bins partition every sample exactly once."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    predict, _ = _as_predictor(ckpt_or_fn)
    frames, plane_ids, actions, _ = evaluation_arrays(dataset_or_dir, role)
    ae, dist = _sample_ae_and_distance(predict, frames, plane_ids, actions)
    hi = float(dist.max()) if dist.size else 1.0
    edges = np.linspace(0.0, hi * (1.0 + 1e-12) if hi > 0 else 1.0, bins + 1)
    idx = np.clip(np.searchsorted(edges, dist, side="right") - 1, 0, bins - 1)
    mean = np.full(bins, np.nan)
    std = np.full(bins, np.nan)
    count = np.zeros(bins, dtype=np.int64)
    for b in range(bins):
        vals = ae[idx == b]
        count[b] = vals.size
        if vals.size:
            mean[b] = _exact_mean(vals)
            std[b] = _exact_std(vals)
    return StabilityCurve(edges=edges, mean=mean, std=std, count=count)


def pooled_ae_std(ckpt_or_fn, dataset_or_dir, role: str = "test") -> float:
    """Spread of per-sample absolute error pooled over the whole split."""
    predict, _ = _as_predictor(ckpt_or_fn)
    frames, plane_ids, actions, _ = evaluation_arrays(dataset_or_dir, role)
    ae, _ = _sample_ae_and_distance(predict, frames, plane_ids, actions)
    return _exact_std(ae)


def percent_change_str(old: float, new: float) -> str:
    return f"{100.0 * (new - old) / old:+.1f}%"


# -- report rendering ---------------------------------------------------------


def write_mae_csv(path, table: MaeTable, label: str = "model") -> None:
    lines = ["plane,model,count," + ",".join(AXES)]
    for plane, row in table.per_plane.items():
        vals = ",".join(f"{v:.12g}" for v in row)
        lines.append(f"{plane},{label},{table.counts[plane]},{vals}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_stability_csv(path, curves: dict[str, StabilityCurve]) -> None:
    lines = ["model,bin_lo,bin_hi,count,mean_ae,std_ae"]
    for label, c in curves.items():
        for b in range(c.count.size):
            lines.append(
                f"{label},{c.edges[b]:.12g},{c.edges[b + 1]:.12g},{c.count[b]},"
                f"{c.mean[b]:.12g},{c.std[b]:.12g}"
            )
    Path(path).write_text("\n".join(lines) + "\n")


def plot_stability(path, curves: dict[str, StabilityCurve], title: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for label, c in curves.items():
        ok = c.count > 0
        x = c.centers()[ok]
        ax.plot(x, c.mean[ok], "--", label=label)
        ax.fill_between(x, c.mean[ok] - c.std[ok], c.mean[ok] + c.std[ok], alpha=0.25)
    ax.set_xlabel("mean pose difference to target (mm / deg)")
    ax.set_ylabel("absolute error")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _check_same_split(infos: list[dict], data_dir) -> None:
    crc = demo.manifest_crc(data_dir)
    for info in infos:
        ckpt_crc = int(info["extras"]["train/manifest_crc"][0])
        if ckpt_crc != crc:
            raise SplitMismatchError(
                f"checkpoint trained on manifest {ckpt_crc:#010x}, "
                f"dataset here is {crc:#010x}"
            )


def compare(baseline_ckpt, dreamer_ckpt, data_dir, out_dir, bins: int = 10) -> dict:
    """Side-by-side evaluation of two checkpoints on the same held-out
    split: per-axis MAE with percent change, pooled AE spread, stability
    CSVs, and one SVG per plane."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base_fn, base_info = load_predictor(baseline_ckpt)
    dream_fn, dream_info = load_predictor(dreamer_ckpt)
    _check_same_split([base_info, dream_info], data_dir)

    ds = demo.load_dataset(data_dir)
    base_table = mae_table(base_fn, ds)
    dream_table = mae_table(dream_fn, ds)

    rows = []
    for plane in sorted(base_table.per_plane):
        for a, axis in enumerate(AXES):
            old = base_table.per_plane[plane][a]
            new = dream_table.per_plane[plane][a]
            rows.append(
                {
                    "plane": plane,
                    "axis": axis,
                    "baseline": old,
                    "dreamer": new,
                    "pct_change": 100.0 * (new - old) / old,
                    "rendered": percent_change_str(old, new),
                }
            )

    test_seqs = ds.split("test")
    curves_per_plane = {}
    for plane in sorted(base_table.per_plane):
        plane_ds = demo.ScanDataset(
            geometry=ds.geometry,
            train_subjects=ds.train_subjects,
            test_subjects=ds.test_subjects,
            sequences=tuple(s for s in test_seqs if s.plane == plane),
        )
        if not plane_ds.sequences:
            continue
        curves = {
            "baseline": stability_curve(base_fn, plane_ds, bins),
            "dreamer": stability_curve(dream_fn, plane_ds, bins),
        }
        curves_per_plane[plane] = curves
        write_stability_csv(out_dir / f"stability_plane_{plane}.csv", curves)
        plot_stability(out_dir / f"stability_plane_{plane}.svg", curves, f"plane {plane}")

    pooled = {
        "baseline": pooled_ae_std(base_fn, ds),
        "dreamer": pooled_ae_std(dream_fn, ds),
    }

    lines = ["plane,axis,baseline,dreamer,pct_change"]
    for r in rows:
        lines.append(
            f"{r['plane']},{r['axis']},{r['baseline']:.12g},{r['dreamer']:.12g},{r['pct_change']:.12g}"
        )
    (out_dir / "compare.csv").write_text("\n".join(lines) + "\n")

    report = {
        "rows": rows,
        "counts": base_table.counts,
        "mean_over_axes": {
            str(p): {
                "baseline": base_table.mean_over_axes(p),
                "dreamer": dream_table.mean_over_axes(p),
            }
            for p in sorted(base_table.per_plane)
            if base_table.counts[p]
        },
        "pooled_ae_std": pooled,
    }
    (out_dir / "summary.json").write_text(json.dumps(report, indent=1, default=float))
    return report
