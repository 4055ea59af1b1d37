"""Versioned binary checkpoints.

Layout (all little-endian)::

    b"EGCK" | u16 version | u32 header length | header JSON (utf-8)
    then, for every tensor listed in the header, its float64 values in C order

The header carries the model configuration (vocabulary included), the training
configuration in its key=value text form, the corpus manifest hash and the
tensor names and shapes. Saving a loaded checkpoint reproduces the same bytes.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DatasetError, MissingFile, VersionMismatch
from .model import ModelConfig, param_shapes

MAGIC = b"EGCK"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")


@dataclass
class Checkpoint:
    params: dict
    model_config: ModelConfig
    train_config_text: str = ""
    manifest_hash: Optional[str] = None

    def train_config(self, **overrides):
        from .train import TrainConfig
        return TrainConfig.loads(self.train_config_text, **overrides)


def _config_dict(cfg: ModelConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["vocab"] = list(cfg.vocab)
    return d


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    names = list(ckpt.params)
    header = {
        "format": "eventground.checkpoint",
        "version": VERSION,
        "model_config": _config_dict(ckpt.model_config),
        "train_config": ckpt.train_config_text,
        "manifest_hash": ckpt.manifest_hash,
        "tensors": [{"name": n, "shape": list(ckpt.params[n].shape)} for n in names],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(ckpt.params[n], dtype="<f8").tobytes() for n in names)
    return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + body


def decode_checkpoint(blob: bytes) -> Checkpoint:
    if len(blob) < _PREFIX.size:
        raise DatasetError("checkpoint shorter than its prefix")
    magic, version, head_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise DatasetError(f"not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, this build reads {VERSION}")
    start = _PREFIX.size
    try:
        header = json.loads(blob[start:start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetError(f"corrupt checkpoint header: {exc}") from exc
    cfg_doc = dict(header["model_config"])
    cfg_doc["vocab"] = tuple(cfg_doc["vocab"])
    cfg = ModelConfig(**cfg_doc)
    offset = start + head_len
    params = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(blob):
            raise DatasetError(f"checkpoint truncated inside tensor {entry['name']!r}")
        params[entry["name"]] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset = end
    if offset != len(blob):
        raise DatasetError("trailing bytes after the last checkpoint tensor")
    expected = param_shapes(cfg)
    if {k: tuple(v.shape) for k, v in params.items()} != expected:
        raise DatasetError("checkpoint tensors do not match its model configuration")
    return Checkpoint(params, cfg, header.get("train_config", ""), header.get("manifest_hash"))


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no checkpoint at {path}")
    return decode_checkpoint(path.read_bytes())
