"""Attention Kernels

Multi-head scaled dot-product attention with boolean masks, the n-stream
masks and position bookkeeping of the predicting streams, and T5-style
bucketed relative position bias.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from src.errors import ConfigurationError, DimensionError
from src.tensor import functional as F
from src.tensor.tensor import Tensor

DEFAULT_NUM_BUCKETS = 32
DEFAULT_MAX_DISTANCE = 128


@dataclass
class AttentionMask:
    """Boolean [Q,K] (or [B,Q,K]) matrix; True means query may attend key"""
    allowed: np.ndarray

    def __post_init__(self):
        self.allowed = np.asarray(self.allowed, dtype=bool)
        if self.allowed.ndim not in (2, 3):
            raise DimensionError("attention_mask", self.allowed.shape)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.allowed.shape

    def __and__(self, other: "AttentionMask") -> "AttentionMask":
        return AttentionMask(np.logical_and(self.allowed, other.allowed))

    def for_scores(self) -> np.ndarray:
        """Broadcastable against [B,H,Q,K] scores"""
        return self.allowed if self.allowed.ndim == 2 else self.allowed[:, None, :, :]


MaskLike = Union[AttentionMask, np.ndarray, None]


def causal_mask(length: int) -> AttentionMask:
    """Lower-triangular inclusive: q attends k iff k <= q"""
    if length < 1:
        raise ConfigurationError(f"causal mask needs length >= 1, got {length}")
    return AttentionMask(np.tril(np.ones((length, length), dtype=bool)))


def stream_mask(length: int) -> AttentionMask:
    """[T, 2T] mask over main keys followed by stream keys

    Row j permits main keys 0..j and the stream's own slot j (j+2 keys).
    """
    main = np.tril(np.ones((length, length), dtype=bool))
    own = np.eye(length, dtype=bool)
    return AttentionMask(np.concatenate([main, own], axis=1))


def padding_mask(key_valid: np.ndarray, query_len: int) -> AttentionMask:
    """[B, Q, K] mask hiding padded keys from every query"""
    key_valid = np.asarray(key_valid, dtype=bool)
    return AttentionMask(np.repeat(key_valid[:, None, :], query_len, axis=1))


def relative_bucket(
    relative_position,
    num_buckets: int = DEFAULT_NUM_BUCKETS,
    max_distance: int = DEFAULT_MAX_DISTANCE,
    bidirectional: bool = True,
):
    """Map key-minus-query offsets to bucket ids in [0, num_buckets)

    Small distances get their own bucket, larger ones share logarithmically
    sized buckets up to max_distance, everything beyond lands in the last
    bucket. Unidirectional mode folds future offsets onto bucket 0.
    """
    scalar = np.ndim(relative_position) == 0
    distance = -np.asarray(relative_position, dtype=np.int64)
    bucket = np.zeros_like(distance)
    if bidirectional:
        num_buckets //= 2
        bucket += (distance < 0).astype(np.int64) * num_buckets
        distance = np.abs(distance)
    else:
        distance = np.maximum(distance, 0)
    max_exact = num_buckets // 2
    log_ratio = np.log(np.maximum(distance, 1) / max_exact) / np.log(max_distance / max_exact)
    large = max_exact + (log_ratio * (num_buckets - max_exact)).astype(np.int64)
    large = np.minimum(large, num_buckets - 1)
    bucket += np.where(distance < max_exact, distance, large)
    return int(bucket) if scalar else bucket


def main_offsets(length: int) -> np.ndarray:
    positions = np.arange(length)
    return positions[None, :] - positions[:, None]


def positions_for_stream(stream_index: int, length: int) -> Tuple[np.ndarray, np.ndarray]:
    """Absolute position ids and key-minus-query offsets for one stream

    Stream i at slot j stands for the token it predicts, position j+i. Its
    offsets cover the main keys 0..T-1 followed by the stream's own slots,
    matching the column order of `stream_mask`. Stream 0 is the main stream.
    """
    if stream_index < 0:
        raise ConfigurationError(f"stream index must be >= 0, got {stream_index}")
    main_positions = np.arange(length)
    if stream_index == 0:
        return main_positions, main_offsets(length)
    query_positions = main_positions + stream_index
    key_positions = np.concatenate([main_positions, query_positions])
    return query_positions, key_positions[None, :] - query_positions[:, None]


class RelativeBias:
    """Learned [num_buckets, heads] table added to pre-softmax scores"""

    def __init__(self, table: Tensor, num_buckets: int = DEFAULT_NUM_BUCKETS,
                 max_distance: int = DEFAULT_MAX_DISTANCE, bidirectional: bool = False):
        if table.shape[0] != num_buckets:
            raise DimensionError("relative_bias", table.shape, (num_buckets,))
        self.table = table
        self.num_buckets = num_buckets
        self.max_distance = max_distance
        self.bidirectional = bidirectional

    def gather(self, offsets: np.ndarray) -> Tensor:
        """[Q,K] offsets -> [H,Q,K] bias"""
        buckets = relative_bucket(offsets, self.num_buckets, self.max_distance, self.bidirectional)
        return F.transpose(F.embedding_lookup(self.table, buckets), (2, 0, 1))


@dataclass
class AttentionWeights:
    q_weight: Tensor
    q_bias: Tensor
    k_weight: Tensor
    k_bias: Tensor
    v_weight: Tensor
    v_bias: Tensor
    o_weight: Tensor
    o_bias: Tensor

    @classmethod
    def from_params(cls, params, prefix: str) -> "AttentionWeights":
        return cls(*(params[f"{prefix}.{proj}.{kind}"] for proj in "qkvo" for kind in ("weight", "bias")))

    def tensors(self) -> List[Tensor]:
        return [self.q_weight, self.q_bias, self.k_weight, self.k_bias,
                self.v_weight, self.v_bias, self.o_weight, self.o_bias]


def split_heads(x: Tensor, heads: int) -> Tensor:
    batch, length, dim = x.shape
    return F.transpose(F.reshape(x, (batch, length, heads, dim // heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    batch, heads, length, head_dim = x.shape
    return F.reshape(F.transpose(x, (0, 2, 1, 3)), (batch, length, heads * head_dim))


def project_heads(x: Tensor, weight: Tensor, bias: Tensor, heads: int) -> Tensor:
    return split_heads(F.linear(x, weight, bias), heads)


def _mask_array(mask: MaskLike) -> Optional[np.ndarray]:
    if mask is None:
        return None
    if isinstance(mask, AttentionMask):
        return mask.for_scores()
    return AttentionMask(mask).for_scores()


def scaled_dot_product(q: Tensor, k: Tensor, v: Tensor, mask: MaskLike = None,
                       bias: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
    """[B,H,Q,dh] x [B,H,K,dh] -> context [B,H,Q,dh], weights [B,H,Q,K]"""
    scores = F.scale(F.matmul(q, F.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(q.shape[-1]))
    if bias is not None:
        scores = F.add(scores, bias)
    weights = F.softmax(scores, axis=-1, mask=_mask_array(mask))
    return F.matmul(weights, v), weights


def attend(q: Tensor, k: Tensor, v: Tensor, mask: MaskLike, weights: AttentionWeights,
           bias: Optional[Tensor] = None, return_weights: bool = False):
    context, probs = scaled_dot_product(q, k, v, mask, bias)
    out = F.linear(merge_heads(context), weights.o_weight, weights.o_bias)
    return (out, probs) if return_weights else out


def multi_head(query: Tensor, key: Tensor, value: Tensor, mask: MaskLike, weights: AttentionWeights,
               heads: int, bias: Optional[Tensor] = None, return_weights: bool = False):
    """Project, attend per head, concatenate and project back

    Accepts [Q,D] or [B,Q,D] inputs. A query row whose mask permits no key
    gets an all-zero context, so its output is just the output-projection
    bias.
    """
    dim = query.shape[-1]
    if dim % heads:
        raise ConfigurationError(f"hidden size {dim} is not divisible by {heads} heads")
    if key.shape[-1] != dim or value.shape != key.shape:
        raise DimensionError("multi_head", query.shape, key.shape, value.shape)
    unbatched = query.ndim == 2
    if unbatched:
        query = F.reshape(query, (1,) + query.shape)
        key = F.reshape(key, (1,) + key.shape)
        value = F.reshape(value, (1,) + value.shape)
    q = project_heads(query, weights.q_weight, weights.q_bias, heads)
    k = project_heads(key, weights.k_weight, weights.k_bias, heads)
    v = project_heads(value, weights.v_weight, weights.v_bias, heads)
    out, probs = attend(q, k, v, mask, weights, bias, return_weights=True)
    if unbatched:
        out = F.reshape(out, out.shape[1:])
        probs = F.reshape(probs, probs.shape[1:])
    return (out, probs) if return_weights else out


def stream_attention(stream: Tensor, main: Tensor, weights: AttentionWeights, heads: int,
                     stream_index: int, n: int, bias: Optional[RelativeBias] = None) -> Tensor:
    """One predicting stream's self-attention over the main-stream prefix

    Slot j queries with its own state and attends to main states 0..j plus
    itself, all positions in one batched call under `stream_mask`.
    """
    if not 1 <= stream_index <= n - 1:
        raise ConfigurationError(f"stream index {stream_index} outside 1..{n - 1}")
    if stream.shape != main.shape:
        raise DimensionError("stream_attention", stream.shape, main.shape)
    length = stream.shape[-2]
    keys = F.concat([main, stream], axis=-2)
    bias_tensor = None
    if bias is not None:
        bias_tensor = bias.gather(positions_for_stream(stream_index, length)[1])
    return multi_head(stream, keys, keys, stream_mask(length), weights, heads, bias=bias_tensor)


def attend_cached(x_new: Tensor, cached_keys: Optional[Tensor], cached_values: Optional[Tensor],
                  weights: AttentionWeights, heads: int, bias: Optional[Tensor] = None):
    """Single-position causal self-attention against cached per-head keys/values

    Returns the output plus the extended key/value caches.
    """
    q = project_heads(x_new, weights.q_weight, weights.q_bias, heads)
    k = project_heads(x_new, weights.k_weight, weights.k_bias, heads)
    v = project_heads(x_new, weights.v_weight, weights.v_bias, heads)
    if cached_keys is not None:
        k = F.concat([cached_keys, k], axis=2)
        v = F.concat([cached_values, v], axis=2)
    return attend(q, k, v, None, weights, bias), k, v
