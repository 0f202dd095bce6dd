"""Policy network (encoder + guidance head with plane queries) and the
action-conditioned latent world model, wired for joint training.

The guidance head always reads a feature and a plane query and emits a 6-D
action.  The world model maps (feature, relative motion) to the feature of
the plane that motion reaches, letting the guidance head be supervised on
frames it has never encoded; its action output is folded back through the
rigid-motion composition, differentiably, to supervise the starting frame
as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn, se3
from .nn import Tensor

__all__ = [
    "ModelConfig",
    "PolicyModel",
    "combine_actions_diff",
    "pose_batch_matrices",
    "VARIANTS",
    "FULL_SCALE_GUIDE_DIMS",
]

VARIANTS = ("baseline", "dreamer")

# Reference dims of the full-scale configuration this desk-scale model mirrors.
FULL_SCALE_GUIDE_DIMS = (2048, 512, 6)

_DEG2RAD = math.pi / 180.0
_RAD2DEG = 180.0 / math.pi
# |sin(pitch)| above this leaves the matrix-to-vector conversion ill-posed
# (matches the pose library's |cos| < 1e-6 cut).
_GIMBAL_SIN_MAX = math.sqrt(1.0 - 1e-12)


@dataclass(frozen=True)
class ModelConfig:
    h: int = 64
    w: int = 64
    feature_dim: int = 128
    planes: int = 3
    query_dim: int = 16
    conv_channels: tuple[int, ...] = (8, 16, 32, 64)
    # Non-overlapping 2x2 patches halve the grid per layer with a quarter of
    # a 3x3 kernel's work; the final dense layer still sees the whole frame.
    conv_kernel: int = 2
    conv_pad: int = 0
    guide_dims: tuple[int, ...] = (256, 64, 6)
    heads: int = 4
    blocks: int = 2
    ff_dim: int = 256
    # Motions are scaled to roughly unit range before the world model
    # embeds them: mm axes by 1/60, degree axes by 1/45.
    action_scale: tuple[float, float] = (60.0, 45.0)

    def __post_init__(self) -> None:
        if self.guide_dims[-1] != 6:
            raise ValueError("guidance head must end in 6 outputs")
        if self.feature_dim % self.heads != 0:
            raise ValueError("feature_dim must divide into heads")

    def action_scale_vector(self) -> np.ndarray:
        mm, deg = self.action_scale
        return np.array([1 / mm] * 3 + [1 / deg] * 3, dtype=np.float64)


def pose_batch_matrices(actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized pose-to-matrix: (B, 6) -> rotations (B, 3, 3), translations (B, 3)."""
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    ax, ay, az = (actions[:, i] * _DEG2RAD for i in (3, 4, 5))
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    r = np.empty((actions.shape[0], 3, 3), dtype=np.float64)
    r[:, 0, 0] = cz * cy
    r[:, 0, 1] = cz * sy * sx - sz * cx
    r[:, 0, 2] = cz * sy * cx + sz * sx
    r[:, 1, 0] = sz * cy
    r[:, 1, 1] = sz * sy * sx + cz * cx
    r[:, 1, 2] = sz * sy * cx - cz * sx
    r[:, 2, 0] = -sy
    r[:, 2, 1] = cy * sx
    r[:, 2, 2] = cy * cx
    return r, actions[:, :3].copy()


def combine_actions_diff(a_12: np.ndarray, a_2t: Tensor) -> tuple[Tensor, np.ndarray]:
    """Differentiable hop-then-remainder action combination.

    ``a_12`` is data (constant); ``a_2t`` is a (B, 6) prediction.  Returns
    the (B, 6) combined action plus a validity mask; rows whose combined
    rotation pitches into the conversion singularity are flagged False and
    must be excluded from any loss.  Values agree with the exact pose
    library to float64 precision.
    """
    r12, t12 = pose_batch_matrices(a_12)

    tx, ty, tz = a_2t[:, 0], a_2t[:, 1], a_2t[:, 2]
    ax = nn.mul(a_2t[:, 3], _DEG2RAD)
    ay = nn.mul(a_2t[:, 4], _DEG2RAD)
    az = nn.mul(a_2t[:, 5], _DEG2RAD)
    cx, sx = nn.cos(ax), nn.sin(ax)
    cy, sy = nn.cos(ay), nn.sin(ay)
    cz, sz = nn.cos(az), nn.sin(az)

    # Rotation block of the predicted motion, entry by entry.
    r2 = [
        [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
        [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
        [nn.neg(sy), cy * sx, cy * cx],
    ]
    t2 = [tx, ty, tz]

    def rot_entry(i: int, j: int) -> Tensor:
        return (
            r12[:, i, 0] * r2[0][j] + r12[:, i, 1] * r2[1][j] + r12[:, i, 2] * r2[2][j]
        )

    combined = [[rot_entry(i, j) for j in range(3)] for i in range(3)]
    trans = [
        r12[:, i, 0] * t2[0] + r12[:, i, 1] * t2[1] + r12[:, i, 2] * t2[2] + t12[:, i]
        for i in range(3)
    ]

    sy_out = nn.neg(combined[2][0])
    valid = np.abs(sy_out.value) <= _GIMBAL_SIN_MAX
    ry_out = nn.mul(nn.asin(sy_out), _RAD2DEG)
    rx_out = nn.mul(nn.atan2(combined[2][1], combined[2][2]), _RAD2DEG)
    rz_out = nn.mul(nn.atan2(combined[1][0], combined[0][0]), _RAD2DEG)

    parts = [trans[0], trans[1], trans[2], rx_out, ry_out, rz_out]
    bsz = a_2t.value.shape[0]
    out = nn.concat([nn.reshape(p, (bsz, 1)) for p in parts], axis=-1)
    return out, valid


class PolicyModel:
    """Encoder, guidance head, plane queries, and (for the dreamer variant)
    the latent world model, all over one parameter store."""

    def __init__(self, config: ModelConfig, variant: str, seed: int = 0):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        self.config = config
        self.variant = variant
        self.params = nn.ParamStore()
        self._rng = np.random.default_rng(np.random.SeedSequence([0x0DE1, seed]))
        self._build()

    # -- construction --------------------------------------------------------

    def _normal(self, shape, std: float) -> np.ndarray:
        return self._rng.normal(0.0, std, shape)

    def _build(self) -> None:
        cfg = self.config
        cin = 1
        k, pad = cfg.conv_kernel, cfg.conv_pad
        side_h, side_w = cfg.h, cfg.w
        for i, cout in enumerate(cfg.conv_channels):
            std = math.sqrt(2.0 / (cin * k * k))
            self.params.add(f"enc/conv{i}/w", self._normal((k, k, cin, cout), std))
            self.params.add(f"enc/conv{i}/b", np.zeros(cout))
            cin = cout
            side_h = (side_h + 2 * pad - k) // 2 + 1
            side_w = (side_w + 2 * pad - k) // 2 + 1
        self._flat_dim = cin * side_h * side_w
        self.params.add(
            "enc/fc/w", self._normal((self._flat_dim, cfg.feature_dim), math.sqrt(1.0 / self._flat_dim))
        )
        self.params.add("enc/fc/b", np.zeros(cfg.feature_dim))

        self.params.add("guide/query", self._normal((cfg.planes, cfg.query_dim), 0.5))
        gin = cfg.feature_dim + cfg.query_dim
        for i, gout in enumerate(cfg.guide_dims):
            last = i == len(cfg.guide_dims) - 1
            std = math.sqrt((1.0 if last else 2.0) / gin) * (0.1 if last else 1.0)
            self.params.add(f"guide/fc{i}/w", self._normal((gin, gout), std))
            self.params.add(f"guide/fc{i}/b", np.zeros(gout))
            gin = gout

        if self.variant == "dreamer":
            self._build_dreamer()

    def _build_dreamer(self) -> None:
        cfg = self.config
        d = cfg.feature_dim
        self.params.add("dream/act/w", self._normal((6, d), math.sqrt(1.0 / 6)))
        self.params.add("dream/act/b", np.zeros(d))
        self.params.add("dream/pos", self._normal((2, d), 0.02))
        for i in range(cfg.blocks):
            p = f"dream/blk{i}"
            self.params.add(f"{p}/ln1/g", np.ones(d))
            self.params.add(f"{p}/ln1/b", np.zeros(d))
            for name in ("wq", "wk", "wv", "wo"):
                self.params.add(f"{p}/attn/{name}", self._normal((d, d), math.sqrt(1.0 / d)))
            for name in ("bq", "bk", "bv", "bo"):
                self.params.add(f"{p}/attn/{name}", np.zeros(d))
            self.params.add(f"{p}/ln2/g", np.ones(d))
            self.params.add(f"{p}/ln2/b", np.zeros(d))
            self.params.add(f"{p}/ff/w1", self._normal((d, cfg.ff_dim), math.sqrt(2.0 / d)))
            self.params.add(f"{p}/ff/b1", np.zeros(cfg.ff_dim))
            self.params.add(f"{p}/ff/w2", self._normal((cfg.ff_dim, d), math.sqrt(1.0 / cfg.ff_dim)))
            self.params.add(f"{p}/ff/b2", np.zeros(d))
        self.params.add("dream/lnf/g", np.ones(d))
        self.params.add("dream/lnf/b", np.zeros(d))
        self.params.add("dream/head/w", self._normal((d, d), math.sqrt(1.0 / d)))
        self.params.add("dream/head/b", np.zeros(d))

    # -- forward passes --------------------------------------------------------

    def encode(self, frames) -> Tensor:
        """(B, h, w, 1) pixel block to (B, feature_dim) latent features."""
        x = nn.as_tensor(frames)
        if x.value.ndim != 4 or x.value.shape[1:3] != (self.config.h, self.config.w):
            raise ValueError(f"expected (B, {self.config.h}, {self.config.w}, 1), got {x.value.shape}")
        p = self.params
        for i in range(len(self.config.conv_channels)):
            x = nn.relu(
                nn.conv2d(x, p[f"enc/conv{i}/w"], p[f"enc/conv{i}/b"], stride=2, pad=self.config.conv_pad)
            )
        x = nn.reshape(x, (x.value.shape[0], self._flat_dim))
        return nn.dense(x, p["enc/fc/w"], p["enc/fc/b"])

    def guide(self, features: Tensor, planes: np.ndarray) -> Tensor:
        """Features plus plane selector to a 6-D action (mm, mm, mm, deg x3)."""
        planes = np.asarray(planes, dtype=np.int64)
        if planes.min() < 0 or planes.max() >= self.config.planes:
            raise ValueError(f"plane ids must be in [0, {self.config.planes})")
        p = self.params
        q = nn.embedding(p["guide/query"], planes)
        x = nn.concat([features, q], axis=-1)
        n_layers = len(self.config.guide_dims)
        for i in range(n_layers):
            x = nn.dense(x, p[f"guide/fc{i}/w"], p[f"guide/fc{i}/b"])
            if i < n_layers - 1:
                x = nn.relu(x)
        return x

    def dream(self, features: Tensor, a_12: np.ndarray) -> Tensor:
        """Predict the latent feature of the plane reached by motion a_12."""
        if self.variant != "dreamer":
            raise RuntimeError("baseline variant has no world model")
        cfg = self.config
        p = self.params
        scaled = np.atleast_2d(np.asarray(a_12, dtype=np.float64)) * cfg.action_scale_vector()
        aemb = nn.dense(Tensor(scaled), p["dream/act/w"], p["dream/act/b"])
        bsz, d = features.value.shape
        tok0 = nn.reshape(features + p["dream/pos"][0], (bsz, 1, d))
        tok1 = nn.reshape(aemb + p["dream/pos"][1], (bsz, 1, d))
        x = nn.concat([tok0, tok1], axis=1)
        for i in range(cfg.blocks):
            x = x + self._attention(x, f"dream/blk{i}")
            x = x + self._feed_forward(x, f"dream/blk{i}")
        x = nn.layer_norm(x, p["dream/lnf/g"], p["dream/lnf/b"])
        feature_token = x[:, 0]
        return nn.dense(feature_token, p["dream/head/w"], p["dream/head/b"])

    def _attention(self, x: Tensor, prefix: str) -> Tensor:
        cfg = self.config
        p = self.params
        bsz, ntok, d = x.value.shape
        dh = d // cfg.heads
        y = nn.layer_norm(x, p[f"{prefix}/ln1/g"], p[f"{prefix}/ln1/b"])

        def heads(name_w, name_b):
            proj = nn.dense(y, p[f"{prefix}/attn/{name_w}"], p[f"{prefix}/attn/{name_b}"])
            return nn.transpose(nn.reshape(proj, (bsz, ntok, cfg.heads, dh)), (0, 2, 1, 3))

        att = nn.softmax_attention(heads("wq", "bq"), heads("wk", "bk"), heads("wv", "bv"))
        merged = nn.reshape(nn.transpose(att, (0, 2, 1, 3)), (bsz, ntok, d))
        return nn.dense(merged, p[f"{prefix}/attn/wo"], p[f"{prefix}/attn/bo"])

    def _feed_forward(self, x: Tensor, prefix: str) -> Tensor:
        p = self.params
        y = nn.layer_norm(x, p[f"{prefix}/ln2/g"], p[f"{prefix}/ln2/b"])
        y = nn.relu(nn.dense(y, p[f"{prefix}/ff/w1"], p[f"{prefix}/ff/b1"]))
        return nn.dense(y, p[f"{prefix}/ff/w2"], p[f"{prefix}/ff/b2"])

    # -- losses ------------------------------------------------------------------

    def forward_baseline(self, frames, planes, actions, beta: float = 1.0, weights=None) -> Tensor:
        """Direct imitation loss: guide(encode(frame)) against the labelled
        remaining motion; mean over the batch (optionally weighted)."""
        pred = self.guide(self.encode(frames), planes)
        per = nn.smooth_l1_per_sample(pred, actions, beta)
        if weights is None:
            return nn.tmean(per)
        w = np.asarray(weights, dtype=np.float64)
        return nn.tsum(per * (w / w.sum()))

    def forward_dreamer(
        self,
        frames1,
        planes,
        a_12,
        a_1t,
        a_2t,
        beta: float = 1.0,
        weights=None,
        policy_term: bool = True,
    ) -> tuple[Tensor, int]:
        """Joint loss for the policy network and the world model.

        The dreamed feature's action is penalized at the far frame, and
        again after composition with the hop at the starting frame.  With
        ``policy_term`` the starting frame's direct prediction is trained
        too, so the guidance head stays calibrated to raw encoder features
        (the path used at inference).  Rows whose composition lands in the
        conversion singularity are skipped and counted (the sampling
        region's pitch bound makes a nonzero count a data bug)."""
        f1 = self.encode(frames1)
        f2p = self.dream(f1, a_12)
        a2p = self.guide(f2p, planes)
        a1p, valid = combine_actions_diff(a_12, a2p)
        direct = self.guide(f1, planes) if policy_term else None
        skipped = int((~valid).sum())
        a_1t = np.asarray(a_1t, dtype=np.float64)
        a_2t = np.asarray(a_2t, dtype=np.float64)
        if skipped:
            a1p = nn.mask_rows(a1p, valid)
            a2p = nn.mask_rows(a2p, valid)
            if direct is not None:
                direct = nn.mask_rows(direct, valid)
            a_1t = a_1t[valid]
            a_2t = a_2t[valid]
            if weights is not None:
                weights = np.asarray(weights, dtype=np.float64)[valid]
        per = nn.smooth_l1_per_sample(a1p, a_1t, beta) + nn.smooth_l1_per_sample(a2p, a_2t, beta)
        if direct is not None:
            per = per + nn.smooth_l1_per_sample(direct, a_1t, beta)
        if weights is None:
            return nn.tmean(per), skipped
        w = np.asarray(weights, dtype=np.float64)
        return nn.tsum(per * (w / w.sum())), skipped

    # -- inference ----------------------------------------------------------------

    def predict(self, frames: np.ndarray, planes: np.ndarray, batch: int = 256) -> np.ndarray:
        """Guidance for a block of frames; plain forward, no graph retained."""
        frames = np.asarray(frames, dtype=np.float64)
        planes = np.asarray(planes, dtype=np.int64)
        outputs = []
        for lo in range(0, frames.shape[0], batch):
            f = self.encode(Tensor(frames[lo : lo + batch]))
            outputs.append(self.guide(f, planes[lo : lo + batch]).value)
        return np.concatenate(outputs, axis=0)

    def encode_np(self, frames: np.ndarray, batch: int = 256) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.float64)
        return np.concatenate(
            [self.encode(Tensor(frames[lo : lo + batch])).value for lo in range(0, frames.shape[0], batch)],
            axis=0,
        )

    def dream_np(self, features: np.ndarray, a_12: np.ndarray) -> np.ndarray:
        return self.dream(Tensor(np.asarray(features, dtype=np.float64)), a_12).value

    # -- checkpoints -----------------------------------------------------------------

    def config_arrays(self) -> dict[str, np.ndarray]:
        cfg = self.config
        return {
            "cfg/h": np.array([float(cfg.h)]),
            "cfg/w": np.array([float(cfg.w)]),
            "cfg/feature_dim": np.array([float(cfg.feature_dim)]),
            "cfg/planes": np.array([float(cfg.planes)]),
            "cfg/query_dim": np.array([float(cfg.query_dim)]),
            "cfg/conv_channels": np.array([float(c) for c in cfg.conv_channels]),
            "cfg/conv_kernel": np.array([float(cfg.conv_kernel)]),
            "cfg/conv_pad": np.array([float(cfg.conv_pad)]),
            "cfg/guide_dims": np.array([float(c) for c in cfg.guide_dims]),
            "cfg/heads": np.array([float(cfg.heads)]),
            "cfg/blocks": np.array([float(cfg.blocks)]),
            "cfg/ff_dim": np.array([float(cfg.ff_dim)]),
            "cfg/action_scale": np.array(list(cfg.action_scale)),
            "cfg/variant": np.array([float(VARIANTS.index(self.variant))]),
        }

    def save(self, path, extra: dict[str, np.ndarray] | None = None) -> None:
        arrays = self.config_arrays()
        for name, t in self.params.items():
            arrays[f"param/{name}"] = t.value
        if extra:
            arrays.update(extra)
        nn.save_arrays(path, arrays)

    @classmethod
    def load(cls, path) -> tuple["PolicyModel", dict[str, np.ndarray]]:
        arrays = nn.load_arrays(path)
        cfg = config_from_arrays(arrays)
        variant = VARIANTS[int(arrays["cfg/variant"][0])]
        model = cls(cfg, variant)
        model.params.load_values(
            {k[len("param/") :]: v for k, v in arrays.items() if k.startswith("param/")}
        )
        extras = {k: v for k, v in arrays.items() if not k.startswith("param/")}
        return model, extras


def config_from_arrays(arrays: dict[str, np.ndarray]) -> ModelConfig:
    return ModelConfig(
        h=int(arrays["cfg/h"][0]),
        w=int(arrays["cfg/w"][0]),
        feature_dim=int(arrays["cfg/feature_dim"][0]),
        planes=int(arrays["cfg/planes"][0]),
        query_dim=int(arrays["cfg/query_dim"][0]),
        conv_channels=tuple(int(c) for c in arrays["cfg/conv_channels"]),
        conv_kernel=int(arrays["cfg/conv_kernel"][0]),
        conv_pad=int(arrays["cfg/conv_pad"][0]),
        guide_dims=tuple(int(c) for c in arrays["cfg/guide_dims"]),
        heads=int(arrays["cfg/heads"][0]),
        blocks=int(arrays["cfg/blocks"][0]),
        ff_dim=int(arrays["cfg/ff_dim"][0]),
        action_scale=tuple(float(s) for s in arrays["cfg/action_scale"]),
    )
