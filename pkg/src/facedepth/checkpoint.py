"""Versioned little-endian binary checkpoints with a SHA-256 trailer.

Layout (all integers little-endian)::

    b"DFCKPT"  u32 version
    u8 len + ascii kind            generator | discriminator | siamese
    f64 width multiplier
    u32 count, then tensors        (u16 len + utf8 name, u8 ndim, u32 dims, f32 data)
    u8 has_optimizer
      u64 step, f64 lr, beta1, beta2, eps
      u32 count, then tensors      named "m/<param>" and "v/<param>"
    u32 len + utf8 JSON config snapshot (sorted keys)
    32-byte SHA-256 of everything above
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from .autodiff.nn import Module
from .autodiff.optim import Adam, AdamState
from .models import DiscriminatorNet, GeneratorNet, SiameseNet

MAGIC = b"DFCKPT"
VERSION = 1
KINDS = ("generator", "discriminator", "siamese")
PathLike = Union[str, os.PathLike]


class CheckpointError(ValueError):
    """A checkpoint file is corrupt, of an unknown version, or does not fit the model."""


@dataclass
class OptimizerSnapshot:
    step: int
    lr: float
    beta1: float
    beta2: float
    eps: float
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]


@dataclass
class Checkpoint:
    kind: str
    multiplier: float
    tensors: Dict[str, np.ndarray]
    optimizer: Optional[OptimizerSnapshot] = None
    config: dict = field(default_factory=dict)


def _write_tensors(buf: io.BytesIO, tensors: Dict[str, np.ndarray]) -> None:
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def tensors(self) -> Dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            (n,) = self.unpack("<H")
            name = self.take(n).decode("utf-8")
            (ndim,) = self.unpack("<B")
            shape = self.unpack(f"<{ndim}I")
            size = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(self.take(4 * size), dtype="<f4").reshape(shape)
            out[name] = arr.astype(np.float32)
        return out


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    if ckpt.kind not in KINDS:
        raise CheckpointError(f"unknown model kind {ckpt.kind!r}")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    kind = ckpt.kind.encode("ascii")
    buf.write(struct.pack("<B", len(kind)))
    buf.write(kind)
    buf.write(struct.pack("<d", ckpt.multiplier))
    _write_tensors(buf, ckpt.tensors)
    opt = ckpt.optimizer
    buf.write(struct.pack("<B", opt is not None))
    if opt is not None:
        buf.write(struct.pack("<Q4d", opt.step, opt.lr, opt.beta1, opt.beta2, opt.eps))
        moments = {f"m/{k}": a for k, a in opt.m.items()}
        moments.update({f"v/{k}": a for k, a in opt.v.items()})
        _write_tensors(buf, moments)
    cfg = json.dumps(ckpt.config, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC) + 32 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, digest = data[:-32], data[-32:]
    r = _Reader(body)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch; file is corrupt")
    (n,) = r.unpack("<B")
    kind = r.take(n).decode("ascii")
    if kind not in KINDS:
        raise CheckpointError(f"unknown model kind {kind!r}")
    (multiplier,) = r.unpack("<d")
    tensors = r.tensors()
    optimizer = None
    (has_opt,) = r.unpack("<B")
    if has_opt:
        step, lr, b1, b2, eps = r.unpack("<Q4d")
        moments = r.tensors()
        m = {k[2:]: a for k, a in moments.items() if k.startswith("m/")}
        v = {k[2:]: a for k, a in moments.items() if k.startswith("v/")}
        optimizer = OptimizerSnapshot(step, lr, b1, b2, eps, m, v)
    (n,) = r.unpack("<I")
    config = json.loads(r.take(n).decode("utf-8"))
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after checkpoint body")
    return Checkpoint(kind, multiplier, tensors, optimizer, config)


def _kind_of(net: Module) -> str:
    if isinstance(net, GeneratorNet):
        return "generator"
    if isinstance(net, DiscriminatorNet):
        return "discriminator"
    if isinstance(net, SiameseNet):
        return "siamese"
    raise CheckpointError(f"cannot checkpoint a {type(net).__name__}")


def snapshot(net: Module, optimizer: Optional[Adam] = None, config: Optional[dict] = None) -> Checkpoint:
    """Copy a network (and optionally its optimizer) into a :class:`Checkpoint`."""
    tensors = {k: np.array(v, dtype=np.float32) for k, v in net.state_dict().items()}
    opt = None
    if optimizer is not None:
        st = optimizer.state
        opt = OptimizerSnapshot(
            st.step, optimizer.lr, optimizer.beta1, optimizer.beta2, optimizer.eps,
            {k: a.copy() for k, a in st.m.items()}, {k: a.copy() for k, a in st.v.items()},
        )
    cfg = dict(config or {})
    if isinstance(net, (DiscriminatorNet, SiameseNet)):
        cfg.setdefault("image_size", net.image_size)
    return Checkpoint(_kind_of(net), float(net.multiplier), tensors, opt, cfg)


def save_checkpoint(path: PathLike, net: Module, optimizer: Optional[Adam] = None, config: Optional[dict] = None) -> None:
    data = encode_checkpoint(snapshot(net, optimizer, config))
    tmp = Path(f"{path}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def load_checkpoint(path: PathLike) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())


def build_model(ckpt: Checkpoint) -> Module:
    """Construct the network described by ``ckpt`` and load its tensors."""
    if ckpt.kind == "generator":
        net: Module = GeneratorNet(ckpt.multiplier)
    elif ckpt.kind == "discriminator":
        net = DiscriminatorNet(ckpt.multiplier, int(ckpt.config["image_size"]))
    else:
        net = SiameseNet(ckpt.multiplier, int(ckpt.config["image_size"]))
    restore_model(net, ckpt)
    return net


def restore_model(net: Module, ckpt: Checkpoint) -> None:
    if _kind_of(net) != ckpt.kind:
        raise CheckpointError(f"checkpoint holds a {ckpt.kind}, not a {_kind_of(net)}")
    if abs(float(net.multiplier) - ckpt.multiplier) > 1e-12:
        raise CheckpointError(f"checkpoint width multiplier {ckpt.multiplier} != model multiplier {net.multiplier}")
    try:
        net.load_state_dict(ckpt.tensors)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint does not fit the model: {exc}") from None


def restore_optimizer(optimizer: Adam, ckpt: Checkpoint) -> None:
    snap = ckpt.optimizer
    if snap is None:
        raise CheckpointError("checkpoint carries no optimizer state")
    if set(snap.m) != set(optimizer.params) or set(snap.v) != set(optimizer.params):
        raise CheckpointError("optimizer state names do not match the model parameters")
    optimizer.lr, optimizer.beta1, optimizer.beta2, optimizer.eps = snap.lr, snap.beta1, snap.beta2, snap.eps
    optimizer.state = AdamState(snap.step, {k: a.copy() for k, a in snap.m.items()}, {k: a.copy() for k, a in snap.v.items()})
