"""ProphetNet Encoder-Decoder

Transformer encoder, a decoder whose single set of layer weights drives the
main stream and n-1 predicting streams, and the future n-gram objective
that weights each stream's NLL with attenuation coefficients.

Stream 0 (main) at slot j sees target tokens 0..j of the decoder input and
predicts labels[j]; predicting stream i at the same slot sees the same
prefix and predicts labels[j+i].
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.data.vocab import BOS_ID
from src.errors import CacheMismatchError, ConfigurationError, DataError, EmptyLossError, NumericalError
from src.model.attention import (
    AttentionWeights,
    RelativeBias,
    attend,
    attend_cached,
    causal_mask,
    main_offsets,
    multi_head,
    padding_mask,
    project_heads,
    stream_attention,
)
from src.model.config import ModelConfig
from src.model.params import STREAM_INIT, ModelParams
from src.tensor import functional as F
from src.tensor.tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

IGNORE_INDEX = -100


@dataclass(frozen=True)
class AlphaWeights:
    weights: Tuple[float, ...]

    def __len__(self) -> int:
        return len(self.weights)

    def __getitem__(self, index: int) -> float:
        return self.weights[index]

    def __iter__(self):
        return iter(self.weights)


def alpha_weights(gamma: float, n: int) -> AlphaWeights:
    """alpha_j = gamma^j / sum_i gamma^i for j = 0..n-1"""
    if not gamma > 0:
        raise ConfigurationError(f"gamma must be > 0, got {gamma}")
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    powers = [float(gamma) ** j for j in range(n)]
    total = sum(powers)
    return AlphaWeights(tuple(p / total for p in powers))


def stream_targets(labels: np.ndarray, label_valid: np.ndarray, streams: int) -> List[np.ndarray]:
    """Per-stream targets: labels shifted left by i, invalid slots ignored"""
    labels = np.where(label_valid, labels, IGNORE_INDEX)
    length = labels.shape[-1]
    targets = []
    for i in range(streams):
        shifted = np.full_like(labels, IGNORE_INDEX)
        if i < length:
            shifted[..., : length - i] = labels[..., i:]
        targets.append(shifted)
    return targets


def stream_valid_counts(labels: np.ndarray, label_valid: np.ndarray, streams: int) -> List[int]:
    return [int((t != IGNORE_INDEX).sum()) for t in stream_targets(labels, label_valid, streams)]


def future_ngram_loss(
    stream_logits: Sequence[Tensor],
    targets: Sequence[np.ndarray],
    alpha: AlphaWeights,
    reduction: str = "mean",
    normalizers: Optional[Sequence[float]] = None,
) -> Tuple[Tensor, List[float]]:
    """sum_j alpha_j * NLL_j over streams with at least one valid position

    Returns the weighted loss and each stream's NLL. A stream whose targets
    are all ignored contributes 0 and is not renormalized away.
    """
    if len(stream_logits) != len(alpha) or len(targets) != len(alpha):
        raise ConfigurationError(
            f"{len(stream_logits)} stream logits / {len(targets)} targets for {len(alpha)} alpha weights"
        )
    terms = []
    nll = []
    for i, (logits, target) in enumerate(zip(stream_logits, targets)):
        if np.isnan(logits.data).any():
            raise NumericalError(f"NaN in logits of stream {i}")
        if not (target != IGNORE_INDEX).any():
            nll.append(0.0)
            continue
        normalizer = normalizers[i] if normalizers is not None else None
        stream_nll = F.cross_entropy(logits, target, IGNORE_INDEX, reduction, normalizer)
        nll.append(stream_nll.item())
        terms.append(F.scale(stream_nll, alpha[i]))
    if not terms:
        raise EmptyLossError("no stream has a valid target position")
    loss = terms[0]
    for term in terms[1:]:
        loss = F.add(loss, term)
    return loss, nll


@dataclass
class LossOutput:
    loss: Tensor
    nll_per_stream: List[float]
    stream_logits: List[Tensor]
    targets: List[np.ndarray]


@dataclass
class DecoderCache:
    """Per-layer self-attention keys/values of the positions decoded so far"""
    cross_kv: List[Tuple[Tensor, Tensor]]
    memory_mask: Optional[np.ndarray]
    self_keys: List[Optional[Tensor]] = field(default_factory=list)
    self_values: List[Optional[Tensor]] = field(default_factory=list)
    length: int = 0

    def fork(self) -> "DecoderCache":
        """Independent copy for a diverging hypothesis; tensors are shared"""
        return DecoderCache(self.cross_kv, self.memory_mask, list(self.self_keys),
                            list(self.self_values), self.length)


def _as_batch(ids) -> Tuple[np.ndarray, bool]:
    ids = np.asarray(ids, dtype=np.int64)
    return (ids[None, :], True) if ids.ndim == 1 else (ids, False)


class ProphetNet:
    def __init__(self, config: ModelConfig, seed: int = 0, params: Optional[ModelParams] = None):
        self.config = config
        self.params = params if params is not None else ModelParams.initialize(config, seed)
        if not self.params.matches(config):
            raise ConfigurationError("parameter set does not match the model configuration")

    # building blocks

    def _layer_norm(self, x: Tensor, prefix: str) -> Tensor:
        return F.layer_norm(x, self.params[f"{prefix}.gain"], self.params[f"{prefix}.bias"],
                            self.config.layer_norm_eps)

    def _dropout(self, x: Tensor, training: bool, rng) -> Tensor:
        return F.dropout(x, self.config.dropout, training, rng)

    def _attention(self, prefix: str) -> AttentionWeights:
        return AttentionWeights.from_params(self.params, prefix)

    def _feed_forward(self, x: Tensor, prefix: str, training: bool, rng) -> Tensor:
        p = self.params
        hidden = F.gelu(F.linear(x, p[f"{prefix}.in.weight"], p[f"{prefix}.in.bias"]))
        hidden = self._dropout(hidden, training, rng)
        return F.linear(hidden, p[f"{prefix}.out.weight"], p[f"{prefix}.out.bias"])

    def _residual(self, x: Tensor, update: Tensor, ln_prefix: str, training: bool, rng) -> Tensor:
        return self._layer_norm(F.add(x, self._dropout(update, training, rng)), ln_prefix)

    def _embed(self, ids: np.ndarray, positions: np.ndarray, side: str, training: bool, rng) -> Tensor:
        x = F.add(F.embedding_lookup(self.params["embed.token"], ids),
                  F.embedding_lookup(self.params["embed.position"], positions))
        return self._dropout(self._layer_norm(x, f"{side}.embed_ln"), training, rng)

    def _relative_bias(self, side: str) -> RelativeBias:
        return RelativeBias(self.params[f"{side}.rel_bias"], self.config.num_buckets,
                            self.config.max_distance, bidirectional=(side == "encoder"))

    def _check_length(self, length: int, what: str):
        if length == 0:
            raise DataError(f"empty {what} sequence")
        if length > self.config.max_len:
            raise DataError(f"{what} length {length} exceeds max_len {self.config.max_len}; truncate first")

    def _logits(self, h: Tensor) -> Tensor:
        return F.matmul(h, F.transpose(self.params["embed.token"], (1, 0)))

    def _decoder_block(self, k: int, x: Tensor, self_attn: Tensor, memory: Tensor,
                       memory_mask, training: bool, rng, cross_kv=None) -> Tensor:
        """Residual+norm around a precomputed self-attention, then cross-attention and FFN"""
        prefix = f"decoder.layers.{k}"
        x = self._residual(x, self_attn, f"{prefix}.self_attn_ln", training, rng)
        weights = self._attention(f"{prefix}.cross_attn")
        if cross_kv is None:
            cross = multi_head(x, memory, memory, memory_mask, weights, self.config.heads)
        else:
            q = project_heads(x, weights.q_weight, weights.q_bias, self.config.heads)
            cross = attend(q, cross_kv[0], cross_kv[1], memory_mask, weights)
        x = self._residual(x, cross, f"{prefix}.cross_attn_ln", training, rng)
        return self._residual(x, self._feed_forward(x, f"{prefix}.ffn", training, rng),
                              f"{prefix}.ffn_ln", training, rng)

    # encoder / decoder

    def encode(self, source, source_valid: Optional[np.ndarray] = None,
               training: bool = False, rng=None) -> Tensor:
        """Source ids [M] or [B,M] -> H_enc [M,D] or [B,M,D]"""
        ids, unbatched = _as_batch(source)
        batch, length = ids.shape
        self._check_length(length, "source")
        x = self._embed(ids, np.arange(length), "encoder", training, rng)
        bias = self._relative_bias("encoder").gather(main_offsets(length))
        mask = padding_mask(source_valid, length) if source_valid is not None else None
        for k in range(self.config.layers_enc):
            prefix = f"encoder.layers.{k}"
            attn = multi_head(x, x, x, mask, self._attention(f"{prefix}.self_attn"), self.config.heads, bias=bias)
            x = self._residual(x, attn, f"{prefix}.self_attn_ln", training, rng)
            x = self._residual(x, self._feed_forward(x, f"{prefix}.ffn", training, rng),
                               f"{prefix}.ffn_ln", training, rng)
        return F.reshape(x, x.shape[1:]) if unbatched else x

    def _stream_inputs(self, batch: int, length: int, training: bool, rng) -> List[Tensor]:
        """Init vector plus the absolute embedding of the predicted position"""
        streams = []
        last = self.config.max_len - 1
        for i in range(1, self.config.n):
            init = F.reshape(F.embedding_lookup(self.params[STREAM_INIT], [i - 1]), (1, 1, -1))
            positions = np.minimum(np.arange(length) + i, last)
            x = F.add(init, F.embedding_lookup(self.params["embed.position"], positions[None, :].repeat(batch, 0)))
            streams.append(self._dropout(self._layer_norm(x, "decoder.embed_ln"), training, rng))
        return streams

    def decode_train(self, decoder_input, memory: Tensor, source_valid: Optional[np.ndarray] = None,
                     training: bool = False, rng=None, streams_enabled: bool = True) -> List[Tensor]:
        """Teacher-forced decoder pass; one [B,T,V] logits tensor per stream"""
        ids, unbatched = _as_batch(decoder_input)
        if unbatched and memory.ndim == 2:
            memory = F.reshape(memory, (1,) + memory.shape)
        batch, length = ids.shape
        self._check_length(length, "target")
        heads = self.config.heads
        memory_mask = padding_mask(source_valid, length) if source_valid is not None else None

        h = self._embed(ids, np.arange(length), "decoder", training, rng)
        streams = self._stream_inputs(batch, length, training, rng) if streams_enabled else []
        relative = self._relative_bias("decoder")
        main_bias = relative.gather(main_offsets(length))
        causal = causal_mask(length)

        for k in range(self.config.layers_dec):
            weights = self._attention(f"decoder.layers.{k}.self_attn")
            updated = []
            for i, stream in enumerate(streams, start=1):
                attn = stream_attention(stream, h, weights, heads, i, self.config.n, bias=relative)
                updated.append(self._decoder_block(k, stream, attn, memory, memory_mask, training, rng))
            attn = multi_head(h, h, h, causal, weights, heads, bias=main_bias)
            h = self._decoder_block(k, h, attn, memory, memory_mask, training, rng)
            streams = updated

        logits = [self._logits(x) for x in [h] + streams]
        if unbatched:
            logits = [F.reshape(x, x.shape[1:]) for x in logits]
        return logits

    def forward_loss(self, batch, alpha: Optional[AlphaWeights] = None, training: bool = False,
                     rng=None, streams_enabled: bool = True,
                     normalizers: Optional[Sequence[float]] = None) -> LossOutput:
        """Encode, decode every stream and weight the per-stream NLLs

        With streams disabled only the main stream is decoded and scored
        with weight 1.
        """
        if alpha is None:
            alpha = alpha_weights(self.config.gamma, self.config.n)
        memory = self.encode(batch.source, batch.source_valid, training, rng)
        logits = self.decode_train(batch.decoder_input, memory, batch.source_valid, training, rng, streams_enabled)
        if not streams_enabled:
            alpha = AlphaWeights((1.0,))
            normalizers = normalizers[:1] if normalizers is not None else None
        targets = stream_targets(batch.labels, batch.label_valid, len(logits))
        loss, nll = future_ngram_loss(logits, targets, alpha, self.config.loss_reduction, normalizers)
        return LossOutput(loss=loss, nll_per_stream=nll, stream_logits=logits, targets=targets)

    # incremental inference

    def start_cache(self, memory: Tensor, source_valid: Optional[np.ndarray] = None) -> DecoderCache:
        """Project the encoder output once per decoder layer for cross-attention"""
        if memory.ndim == 2:
            memory = F.reshape(memory, (1,) + memory.shape)
        heads = self.config.heads
        cross_kv = []
        with no_grad():
            for k in range(self.config.layers_dec):
                weights = self._attention(f"decoder.layers.{k}.cross_attn")
                cross_kv.append((project_heads(memory, weights.k_weight, weights.k_bias, heads),
                                 project_heads(memory, weights.v_weight, weights.v_bias, heads)))
        memory_mask = padding_mask(source_valid, 1).allowed if source_valid is not None else None
        layers = self.config.layers_dec
        return DecoderCache(cross_kv, memory_mask, [None] * layers, [None] * layers, 0)

    def decode_infer_step(self, prefix: Sequence[int], memory: Tensor,
                          cache: Optional[DecoderCache] = None,
                          source_valid: Optional[np.ndarray] = None) -> np.ndarray:
        """Main-stream logits [V] for the token after `prefix`

        The decoder input is BOS followed by the prefix. With a cache only the
        newest position is computed and the cache is extended in place;
        without one the whole main stream is re-run.
        """
        t = len(prefix)
        if t >= self.config.max_len:
            raise DataError(f"prefix length {t} reaches max_len {self.config.max_len}")
        if cache is None:
            with no_grad():
                logits = self.decode_train([BOS_ID] + list(prefix), memory, source_valid, streams_enabled=False)[0]
            return logits.data[-1]
        if cache.length != t:
            raise CacheMismatchError(f"cache holds {cache.length} positions but prefix has {t} tokens")

        heads = self.config.heads
        token = prefix[-1] if t else BOS_ID
        offsets = np.arange(t + 1)[None, :] - t
        with no_grad():
            x = self._embed(np.array([[token]]), np.array([t]), "decoder", False, None)
            bias = self._relative_bias("decoder").gather(offsets)
            for k in range(self.config.layers_dec):
                weights = self._attention(f"decoder.layers.{k}.self_attn")
                attn, cache.self_keys[k], cache.self_values[k] = attend_cached(
                    x, cache.self_keys[k], cache.self_values[k], weights, heads, bias
                )
                x = self._decoder_block(k, x, attn, None, cache.memory_mask, False, None, cross_kv=cache.cross_kv[k])
            logits = self._logits(x)
        cache.length = t + 1
        return logits.data[0, 0]


def teacher_forced_accuracy(model: ProphetNet, batches: Iterable, streams_enabled: bool = True) -> List[float]:
    """Per-stream argmax accuracy over valid target positions"""
    correct: List[int] = []
    total: List[int] = []
    with no_grad():
        for batch in batches:
            memory = model.encode(batch.source, batch.source_valid)
            logits = model.decode_train(batch.decoder_input, memory, batch.source_valid,
                                        streams_enabled=streams_enabled)
            targets = stream_targets(batch.labels, batch.label_valid, len(logits))
            if not correct:
                correct, total = [0] * len(logits), [0] * len(logits)
            for i, (stream_logits, target) in enumerate(zip(logits, targets)):
                valid = target != IGNORE_INDEX
                predicted = stream_logits.data.argmax(axis=-1)
                correct[i] += int(((predicted == target) & valid).sum())
                total[i] += int(valid.sum())
    return [c / t if t else 1.0 for c, t in zip(correct, total)]


def main_stream_nll(model: ProphetNet, batches: Iterable) -> float:
    """Teacher-forced mean NLL per target token of the main stream"""
    total, count = 0.0, 0
    with no_grad():
        for batch in batches:
            memory = model.encode(batch.source, batch.source_valid)
            logits = model.decode_train(batch.decoder_input, memory, batch.source_valid, streams_enabled=False)[0]
            target = stream_targets(batch.labels, batch.label_valid, 1)[0]
            total += F.cross_entropy(logits, target, IGNORE_INDEX, reduction="sum").item()
            count += int((target != IGNORE_INDEX).sum())
    if count == 0:
        raise EmptyLossError("no target tokens to score")
    return total / count
