"""Model Parameters

Named learnable tensors of the encoder, the shared decoder, the embeddings
and the predicting-stream init vectors.
"""

import logging
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from src.model.config import ModelConfig
from src.tensor.tensor import Tensor

logger = logging.getLogger(__name__)

INIT_STD = 0.02
STREAM_INIT = "decoder.stream_init"


def attention_names(prefix: str) -> List[str]:
    return [f"{prefix}.{proj}.{kind}" for proj in "qkvo" for kind in ("weight", "bias")]


def parameter_shapes(config: ModelConfig) -> "OrderedDict[str, Tuple[int, ...]]":
    """Every parameter name with its shape, in initialization order"""
    d, f = config.hidden, config.ffn
    shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
    shapes["embed.token"] = (config.vocab_size, d)
    shapes["embed.position"] = (config.max_len, d)

    def layer_norm(prefix):
        shapes[f"{prefix}.gain"] = (d,)
        shapes[f"{prefix}.bias"] = (d,)

    def attention(prefix):
        for name in attention_names(prefix):
            shapes[name] = (d, d) if name.endswith("weight") else (d,)

    def feed_forward(prefix):
        shapes[f"{prefix}.in.weight"] = (d, f)
        shapes[f"{prefix}.in.bias"] = (f,)
        shapes[f"{prefix}.out.weight"] = (f, d)
        shapes[f"{prefix}.out.bias"] = (d,)

    for side, layers in (("encoder", config.layers_enc), ("decoder", config.layers_dec)):
        layer_norm(f"{side}.embed_ln")
        shapes[f"{side}.rel_bias"] = (config.num_buckets, config.heads)
        for k in range(layers):
            prefix = f"{side}.layers.{k}"
            attention(f"{prefix}.self_attn")
            layer_norm(f"{prefix}.self_attn_ln")
            if side == "decoder":
                attention(f"{prefix}.cross_attn")
                layer_norm(f"{prefix}.cross_attn_ln")
            feed_forward(f"{prefix}.ffn")
            layer_norm(f"{prefix}.ffn_ln")

    if config.n > 1:
        shapes[STREAM_INIT] = (config.n - 1, d)
    return shapes


def _initial_value(name: str, shape: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    if name.endswith(".gain"):
        return np.ones(shape)
    if name.endswith(".bias") and not name.endswith("rel_bias"):
        return np.zeros(shape)
    return rng.normal(0.0, INIT_STD, size=shape)


class ModelParams:
    """Ordered name -> Tensor map; every tensor requires grad"""

    def __init__(self, tensors: Optional[Dict[str, Tensor]] = None):
        self._tensors: "OrderedDict[str, Tensor]" = OrderedDict()
        for name, tensor in (tensors or {}).items():
            self.add(name, tensor)

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0) -> "ModelParams":
        """normal(0, 0.02) weights and embeddings, zero biases, unit gains"""
        rng = np.random.default_rng(seed)
        params = cls()
        for name, shape in parameter_shapes(config).items():
            params.add(name, Tensor(_initial_value(name, shape, rng)))
        logger.debug(f"[MODEL] Initialized {params.num_parameters():,} parameters (seed {seed})")
        return params

    def add(self, name: str, tensor: Tensor):
        tensor.requires_grad = True
        tensor.name = name
        self._tensors[name] = tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> List[str]:
        return list(self._tensors)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._tensors.items())

    def tensors(self) -> List[Tensor]:
        return list(self._tensors.values())

    def num_parameters(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def zero_grad(self):
        for tensor in self._tensors.values():
            tensor.zero_grad()

    def matches(self, config: ModelConfig) -> bool:
        expected = parameter_shapes(config)
        return list(expected) == self.names() and all(
            self._tensors[name].shape == shape for name, shape in expected.items()
        )

    def resize_streams(self, n: int, rng: np.random.Generator):
        """Change the number of predicting streams, keeping shared init rows"""
        old = self._tensors.get(STREAM_INIT)
        kept = old.data[: max(n - 1, 0)] if old is not None else np.zeros((0, self["embed.token"].shape[1]))
        if n <= 1:
            self._tensors.pop(STREAM_INIT, None)
            return
        extra = rng.normal(0.0, INIT_STD, size=(n - 1 - kept.shape[0], kept.shape[1]))
        self.add(STREAM_INIT, Tensor(np.concatenate([kept, extra], axis=0)))
        logger.info(f"[MODEL] Resized predicting streams to n={n} ({kept.shape[0]} init rows kept)")
