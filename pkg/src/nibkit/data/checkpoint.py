"""Self-describing checkpoint container.

Layout: 8-byte magic ``NIBKIT01``, a little-endian uint64 header length, a UTF-8
JSON header, then the raw little-endian float32 payload at the offsets the
header lists.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..autodiff.optim import OptimizerState
from ..models import Model, ModelConfig, build_model

MAGIC = b"NIBKIT01"
FORMAT_VERSION = 1
_PAYLOAD_DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


class MagicError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class ConsistencyError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: Optional[ModelConfig]
    params: Dict[str, np.ndarray]
    optimizer: Optional[OptimizerState] = None
    step: int = 0
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: Model, optimizer: Optional[OptimizerState] = None, step: int = 0,
                   extra: Optional[dict] = None) -> "Checkpoint":
        return cls(model.config, model.snapshot(), optimizer, step, dict(extra or {}))

    def build(self) -> Model:
        if self.config is None:
            raise CheckpointError("checkpoint has no model config; cannot rebuild the model")
        model = build_model(self.config)
        missing = set(model.params) ^ set(self.params)
        if missing:
            raise ConsistencyError(f"parameter set differs from the {self.config.arch} model: {sorted(missing)}")
        model.load(self.params)
        return model


def _entries(ckpt: Checkpoint) -> List[Tuple[str, np.ndarray]]:
    out = [(f"param/{k}", v) for k, v in ckpt.params.items()]
    if ckpt.optimizer is not None:
        out += [(f"adam.m/{k}", v) for k, v in ckpt.optimizer.m.items()]
        out += [(f"adam.v/{k}", v) for k, v in ckpt.optimizer.v.items()]
    return out


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    tensors, chunks, offset = [], [], 0
    for name, arr in _entries(ckpt):
        data = np.ascontiguousarray(arr, dtype=_PAYLOAD_DTYPE).tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    opt = ckpt.optimizer
    header = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config.to_dict() if ckpt.config is not None else None,
        "noise": ckpt.config.nib.to_dict() if ckpt.config is not None and ckpt.config.nib is not None else None,
        "optimizer": None if opt is None else {
            "kind": opt.kind, "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps, "step": opt.step,
        },
        "step": int(ckpt.step),
        "extra": ckpt.extra,
        "payload_nbytes": offset,
        "tensors": tensors,
    }
    text = json.dumps(header, sort_keys=True, indent=1, ensure_ascii=True).encode("ascii")
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(text)))
        fh.write(text)
        for c in chunks:
            fh.write(c)
    os.replace(tmp, path)


def read_header(buf: bytes) -> Tuple[dict, int]:
    if len(buf) < 16 or buf[:8] != MAGIC:
        raise MagicError(f"not a nibkit checkpoint: magic {buf[:8]!r}, expected {MAGIC!r}")
    (n,) = struct.unpack("<Q", buf[8:16])
    if len(buf) < 16 + n:
        raise TruncatedError(f"header claims {n} bytes but only {len(buf) - 16} remain")
    try:
        header = json.loads(buf[16 : 16 + n].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConsistencyError(f"header is not valid JSON: {exc}") from None
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionError(f"checkpoint format version {version}, this build reads version {FORMAT_VERSION}")
    return header, 16 + n


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        buf = fh.read()
    header, start = read_header(buf)
    payload = memoryview(buf)[start:]
    expected = header["payload_nbytes"]
    if len(payload) < expected:
        raise TruncatedError(f"payload has {len(payload)} bytes, header expects {expected}")
    if len(payload) > expected:
        raise ConsistencyError(f"{len(payload) - expected} trailing bytes after the payload")
    arrays: Dict[str, np.ndarray] = {}
    cursor = 0
    for t in header["tensors"]:
        name, shape, off, nbytes = t["name"], tuple(t["shape"]), t["offset"], t["nbytes"]
        if nbytes != int(np.prod(shape, dtype=np.int64)) * _PAYLOAD_DTYPE.itemsize:
            raise ConsistencyError(f"tensor {name}: shape {shape} does not match {nbytes} payload bytes")
        if off != cursor or off + nbytes > expected:
            raise ConsistencyError(f"tensor {name}: offset {off} inconsistent with layout (expected {cursor})")
        arrays[name] = np.frombuffer(payload[off : off + nbytes], dtype=_PAYLOAD_DTYPE).reshape(shape).astype(np.float32)
        cursor += nbytes
    config = ModelConfig.from_dict(header["config"]) if header["config"] is not None else None
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    opt = None
    if header["optimizer"] is not None:
        o = header["optimizer"]
        opt = OptimizerState(kind=o["kind"], lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"],
                             step=o["step"])
        opt.m = {k[len("adam.m/"):]: v for k, v in arrays.items() if k.startswith("adam.m/")}
        opt.v = {k[len("adam.v/"):]: v for k, v in arrays.items() if k.startswith("adam.v/")}
    return Checkpoint(config, params, opt, header["step"], header.get("extra", {}))
