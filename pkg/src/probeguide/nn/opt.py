"""Parameter store, decoupled-weight-decay adaptive-moment optimizer,
cosine learning-rate schedule, and the binary checkpoint format."""

from __future__ import annotations

import math
import struct
import zlib
from pathlib import Path

import numpy as np

from .engine import Tensor

__all__ = [
    "ParamStore",
    "AdamW",
    "cosine_lr",
    "save_arrays",
    "load_arrays",
    "CheckpointError",
]

CKPT_MAGIC = b"CKPT1"


class CheckpointError(RuntimeError):
    """Corrupt or truncated checkpoint file."""


class ParamStore:
    """Named parameter tensors; names unique, shapes frozen at creation."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def values_dict(self) -> dict[str, np.ndarray]:
        return {name: t.value.copy() for name, t in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            if name not in values:
                raise KeyError(f"missing parameter {name!r}")
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != t.value.shape:
                raise ValueError(f"shape mismatch for {name!r}: {arr.shape} vs {t.value.shape}")
            t.value = arr.copy()


class AdamW:
    """Adaptive-moment update with weight decay applied directly to the
    parameters (not mixed into the gradient)."""

    def __init__(self, store: ParamStore, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.value) for name, p in store.items()}
        self.v = {name: np.zeros_like(p.value) for name, p in store.items()}

    def step(self, lr: float, weight_decay: float = 0.0) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in self.store.items():
            g = p.grad
            if g is None:
                continue
            if weight_decay:
                p.value -= lr * weight_decay * p.value
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"opt/m/{k}": v.copy() for k, v in self.m.items()}
        out.update({f"opt/v/{k}": v.copy() for k, v in self.v.items()})
        out["opt/t"] = np.array([float(self.t)])
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["opt/t"][0])
        for k in self.m:
            self.m[k] = np.asarray(arrays[f"opt/m/{k}"], dtype=np.float64).copy()
            self.v[k] = np.asarray(arrays[f"opt/v/{k}"], dtype=np.float64).copy()


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Half-cosine decay from base_lr at step 0 to 0 at total_steps."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    frac = min(max(step / total_steps, 0.0), 1.0)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


# -- checkpoint format --------------------------------------------------------
# magic "CKPT1", then per array: u32 name length, name bytes (utf-8),
# u32 rank, rank u32 dims, float64 values; finally u32 CRC32 of all record
# bytes.  Everything little-endian.  Round trips are bit-exact.


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    body = bytearray()
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        encoded = name.encode("utf-8")
        body += struct.pack("<I", len(encoded))
        body += encoded
        body += struct.pack("<I", arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += arr.astype("<f8").tobytes()
    crc = zlib.crc32(bytes(body)) & 0xFFFFFFFF
    Path(path).write_bytes(CKPT_MAGIC + bytes(body) + struct.pack("<I", crc))


def load_arrays(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < len(CKPT_MAGIC) + 4 or data[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, (stored_crc,) = data[len(CKPT_MAGIC) : -4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError(f"{path}: checksum mismatch")
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    try:
        while offset < len(body):
            (name_len,) = struct.unpack_from("<I", body, offset)
            offset += 4
            name = body[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", body, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}I", body, offset)
            offset += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            values = np.frombuffer(body, dtype="<f8", count=count, offset=offset)
            offset += 8 * count
            arrays[name] = values.astype(np.float64).reshape(dims)
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"{path}: malformed record ({e})") from e
    return arrays
