"""Checkpoint Format

Binary layout:
    b"PNET" | u32 format version | u64 manifest length | YAML manifest
    then per tensor: u64 name length | name | u64 rank | u64 dims... | <f8 data

All integers are little-endian. The manifest carries the model
configuration, the vocabulary, the training state and the tensor count.
Optimizer moments travel as extra named tensors.
"""

import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO, Dict, List, Optional, Union

import numpy as np
import yaml

from src.errors import CheckpointError, ConfigurationError
from src.model.config import ModelConfig
from src.model.params import ModelParams
from src.tensor.tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"PNET"
FORMAT_VERSION = 1
EXTRA_PREFIX = "optim."


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ModelParams
    vocab_tokens: Optional[List[str]] = None
    train_state: Dict[str, Any] = field(default_factory=dict)
    extra: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def step(self) -> int:
        return int(self.train_state.get("step", 0))


def _write_tensor(f: BinaryIO, name: str, data: np.ndarray):
    encoded = name.encode("utf-8")
    f.write(struct.pack("<Q", len(encoded)))
    f.write(encoded)
    f.write(struct.pack("<Q", data.ndim))
    f.write(struct.pack(f"<{data.ndim}Q", *data.shape))
    f.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def save_checkpoint(path: Union[str, Path], config: ModelConfig, params: ModelParams,
                    vocab_tokens: Optional[List[str]] = None, train_state: Optional[Dict[str, Any]] = None,
                    extra: Optional[Dict[str, np.ndarray]] = None) -> Path:
    """Write atomically: a temporary sibling file renamed over the target"""
    path = Path(path)
    extra = extra or {}
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_config": config.to_dict(),
        "vocab": list(vocab_tokens) if vocab_tokens is not None else None,
        "train_state": dict(train_state or {}),
        "tensor_count": len(params) + len(extra),
    }
    manifest_bytes = yaml.safe_dump(manifest, sort_keys=True, allow_unicode=True).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    temp = path.with_name(path.name + ".tmp")
    with open(temp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(manifest_bytes)))
        f.write(manifest_bytes)
        for name, tensor in params.items():
            _write_tensor(f, name, tensor.data)
        for name in sorted(extra):
            if not name.startswith(EXTRA_PREFIX):
                raise CheckpointError(f"extra tensor {name!r} must start with {EXTRA_PREFIX!r}")
            _write_tensor(f, name, extra[name])
    os.replace(temp, path)
    logger.info(f"[CHECKPOINT] Saved {path} (step {manifest['train_state'].get('step', 0)})")
    return path


class _Reader:
    def __init__(self, f: BinaryIO, path: Path):
        self.f = f
        self.path = path

    def read(self, size: int) -> bytes:
        data = self.f.read(size)
        if len(data) != size:
            raise CheckpointError(f"{self.path}: truncated checkpoint (wanted {size} bytes, got {len(data)})")
        return data

    def u64(self) -> int:
        return struct.unpack("<Q", self.read(8))[0]


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        reader = _Reader(f, path)
        if reader.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        version = struct.unpack("<I", reader.read(4))[0]
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
        try:
            manifest = yaml.safe_load(reader.read(reader.u64()).decode("utf-8"))
        except (yaml.YAMLError, UnicodeDecodeError) as e:
            raise CheckpointError(f"{path}: unreadable manifest ({e})") from None
        if not isinstance(manifest, dict) or "model_config" not in manifest:
            raise CheckpointError(f"{path}: manifest lacks a model configuration")

        params = ModelParams()
        extra: Dict[str, np.ndarray] = {}
        for _ in range(int(manifest.get("tensor_count", 0))):
            name = reader.read(reader.u64()).decode("utf-8")
            rank = reader.u64()
            shape = struct.unpack(f"<{rank}Q", reader.read(8 * rank)) if rank else ()
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(reader.read(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
            if name.startswith(EXTRA_PREFIX):
                extra[name] = data
            else:
                params.add(name, Tensor(data))
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes after the last tensor")

    try:
        config = ModelConfig.from_dict(manifest["model_config"])
    except ConfigurationError as e:
        raise CheckpointError(f"{path}: invalid model configuration ({e})") from None
    if not params.matches(config):
        raise CheckpointError(f"{path}: tensors do not match the stored model configuration")
    logger.info(f"[CHECKPOINT] Loaded {path} ({len(params)} tensors)")
    return Checkpoint(config, params, manifest.get("vocab"), manifest.get("train_state") or {}, extra)
