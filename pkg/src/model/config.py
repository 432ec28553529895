"""Model Configuration

Hyper-parameters of the encoder-decoder and the future n-gram objective.
"""

from dataclasses import asdict, dataclass, fields
from typing import Any, Dict

from src.errors import ConfigurationError


@dataclass
class ModelConfig:
    vocab_size: int
    layers_enc: int = 3
    layers_dec: int = 3
    hidden: int = 128
    ffn: int = 512
    heads: int = 4
    n: int = 2                      # future tokens predicted per position
    gamma: float = 1.0              # attenuation coefficient of the stream weights
    max_len: int = 128
    dropout: float = 0.1
    num_buckets: int = 32
    max_distance: int = 128
    layer_norm_eps: float = 1e-5
    loss_reduction: str = "mean"    # mean | sum, per-stream NLL normalization

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.vocab_size < 1:
            raise ConfigurationError(f"vocab_size must be >= 1, got {self.vocab_size}")
        if self.n < 1:
            raise ConfigurationError(f"n must be >= 1, got {self.n}")
        if not self.gamma > 0:
            raise ConfigurationError(f"gamma must be > 0, got {self.gamma}")
        if self.heads < 1 or self.hidden % self.heads:
            raise ConfigurationError(f"hidden size {self.hidden} is not divisible by {self.heads} heads")
        if self.layers_enc < 1 or self.layers_dec < 1:
            raise ConfigurationError("encoder and decoder need at least one layer each")
        if self.ffn < 1 or self.max_len < 2:
            raise ConfigurationError(f"invalid ffn={self.ffn} or max_len={self.max_len}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must satisfy 0 <= p < 1, got {self.dropout}")
        if self.num_buckets < 4 or self.max_distance <= self.num_buckets // 2:
            raise ConfigurationError(
                f"relative buckets need num_buckets >= 4 and max_distance > num_buckets/2 "
                f"(got {self.num_buckets}, {self.max_distance})"
            )
        if self.loss_reduction not in ("mean", "sum"):
            raise ConfigurationError(f"loss_reduction must be 'mean' or 'sum', got {self.loss_reduction!r}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {', '.join(unknown)}")
        return cls(**values)
