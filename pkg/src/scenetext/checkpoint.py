"""Self-describing binary checkpoints.

Layout (little-endian)::

    b"TRCK" | u32 version | u64 header length | header JSON (UTF-8)
    u32 record count | records...

Each record is ``u16 name length | name | u8 dtype length | dtype str |
u32 rank | u32 extents | raw payload``. The header carries the model config,
vocabulary, training step and (optionally) the optimizer hyperparameters;
Adam moments are stored as records named ``optim.m.<param>`` / ``optim.v.<param>``.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .autodiff.optim import Adam
from .data.vocab import Vocabulary
from .model import ModelConfig, TextRecognitionModel, preset_config

MAGIC = b"TRCK"
VERSION = 1
_DTYPES = ("<f4", "<f8", "<i8")


class CheckpointError(ValueError):
    """Malformed, truncated or incompatible checkpoint file."""


def _encode_record(name: str, array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    dtype = arr.dtype.newbyteorder("<").str
    if dtype not in _DTYPES:
        raise CheckpointError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
    arr = np.ascontiguousarray(arr, dtype=dtype)
    raw_name = name.encode("utf-8")
    parts = [
        struct.pack("<H", len(raw_name)),
        raw_name,
        struct.pack("<B", len(dtype)),
        dtype.encode("ascii"),
        struct.pack("<I", arr.ndim),
        struct.pack(f"<{arr.ndim}I", *arr.shape),
        arr.tobytes(),
    ]
    return b"".join(parts)


def encode_checkpoint(header: dict, tensors: dict[str, np.ndarray]) -> bytes:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(head)), head]
    out.append(struct.pack("<I", len(tensors)))
    out.extend(_encode_record(name, arr) for name, arr in tensors.items())
    return b"".join(out)


class _Reader:
    def __init__(self, raw: bytes, source: str):
        self.raw = raw
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(
                f"{self.source}: truncated (needed {n} bytes at offset {self.pos}, file has {len(self.raw)})"
            )
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(raw: bytes, source: str = "<bytes>") -> tuple[dict, dict[str, np.ndarray]]:
    r = _Reader(raw, source)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{source}: format version {version}, this build reads version {VERSION}")
    (head_len,) = r.unpack("<Q")
    try:
        header = json.loads(r.take(head_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupt header: {exc}") from None
    (count,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (dtype_len,) = r.unpack("<B")
        dtype = r.take(dtype_len).decode("ascii")
        if dtype not in _DTYPES:
            raise CheckpointError(f"{source}: tensor {name!r} has unknown dtype {dtype!r}")
        (rank,) = r.unpack("<I")
        shape = r.unpack(f"<{rank}I")
        nbytes = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize
        tensors[name] = np.frombuffer(r.take(nbytes), dtype=dtype).reshape(shape).copy()
    if r.pos != len(raw):
        raise CheckpointError(f"{source}: {len(raw) - r.pos} trailing bytes after last record")
    return header, tensors


def save_checkpoint(
    model: TextRecognitionModel,
    path: str | Path,
    optimizer: Adam | None = None,
    step: int = 0,
    extra: dict | None = None,
) -> Path:
    """Write atomically (temp file + rename) so a crash never leaves half a checkpoint."""
    path = Path(path)
    header = {
        "model_config": model.config.to_dict(),
        "vocab": model.vocab.to_dict(),
        "step": int(step),
        "optimizer": None,
        "extra": extra or {},
    }
    tensors = dict(model.state_dict())
    if optimizer is not None:
        s = optimizer.state
        header["optimizer"] = {
            "lr": s.lr,
            "beta1": s.beta1,
            "beta2": s.beta2,
            "epsilon": s.epsilon,
            "weight_decay": s.weight_decay,
            "step": s.step,
        }
        names = [n for n, _ in model.named_parameters()]
        for name, m, v in zip(names, s.m, s.v):
            tensors[f"optim.m.{name}"] = m
            tensors[f"optim.v.{name}"] = v
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(header, tensors))
    os.replace(tmp, path)
    return path


def load_checkpoint(
    path: str | Path,
    preset: str | None = None,
    model: TextRecognitionModel | None = None,
) -> tuple[TextRecognitionModel, Adam | None, dict]:
    """Rebuild the model (and optimizer, when stored) from ``path``.

    ``preset`` or ``model`` request a specific architecture; the stored
    tensors must then fit it, otherwise the shape mismatch is reported with
    the offending tensor name.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    header, tensors = decode_checkpoint(raw, str(path))
    config = ModelConfig.from_dict(header["model_config"])
    if model is None:
        if preset is not None and preset != config.preset:
            model = TextRecognitionModel(preset_config(preset, config.case_mode, dtype=config.dtype))
        else:
            model = TextRecognitionModel(config)
    if Vocabulary.from_dict(header["vocab"]) != model.vocab:
        raise CheckpointError(f"{path}: vocabulary does not match the requested model")
    params = {k: v for k, v in tensors.items() if not k.startswith("optim.")}
    model.load_state_dict(params)
    optimizer = None
    if header.get("optimizer") is not None:
        h = header["optimizer"]
        optimizer = Adam(
            model.parameters(),
            lr=h["lr"],
            betas=(h["beta1"], h["beta2"]),
            eps=h["epsilon"],
            weight_decay=h["weight_decay"],
        )
        optimizer.state.step = h["step"]
        names = [n for n, _ in model.named_parameters()]
        try:
            optimizer.state.m = [tensors[f"optim.m.{n}"].copy() for n in names]
            optimizer.state.v = [tensors[f"optim.v.{n}"].copy() for n in names]
        except KeyError as exc:
            raise CheckpointError(f"{path}: optimizer state lacks {exc.args[0]}") from None
    return model, optimizer, header
