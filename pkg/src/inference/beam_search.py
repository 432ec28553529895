"""Greedy and Beam-Search Generation

Main-stream-only decoding through the model's incremental step, with a
length-normalized hypothesis score, min/max length control and optional
repeated-trigram blocking.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Set, Tuple

import numpy as np

from src.data.vocab import BOS_ID, EOS_ID, PAD_ID
from src.errors import ConfigurationError, DataError
from src.model.prophetnet import DecoderCache, ProphetNet
from src.tensor.tensor import no_grad

logger = logging.getLogger(__name__)

Trigram = Tuple[int, int, int]
NEVER_GENERATED = (BOS_ID, PAD_ID)
PENALTY_STYLES = ("simple", "gnmt")


@dataclass
class GenerationConfig:
    """Decoding settings

    max_len counts the closing </s>, so an output holds at most max_len - 1
    tokens. When min_len >= max_len the forced </s> wins.
    """
    beam: int = 5
    alpha: float = 1.2
    min_len: int = 0
    max_len: int = 128
    block_trigrams: bool = False
    length_penalty_style: str = "simple"

    def __post_init__(self):
        if self.beam < 1:
            raise ConfigurationError(f"beam must be >= 1, got {self.beam}")
        if self.min_len < 0 or self.max_len < 1:
            raise ConfigurationError(f"invalid length limits min_len={self.min_len} max_len={self.max_len}")
        if self.length_penalty_style not in PENALTY_STYLES:
            raise ConfigurationError(f"length_penalty_style must be one of {PENALTY_STYLES}")


def trigrams_of(tokens: Sequence[int]) -> Set[Trigram]:
    return {tuple(tokens[i:i + 3]) for i in range(len(tokens) - 2)}


def contains_repeated_trigram(tokens: Sequence[int]) -> bool:
    seen: Set[Trigram] = set()
    for i in range(len(tokens) - 2):
        trigram = tuple(tokens[i:i + 3])
        if trigram in seen:
            return True
        seen.add(trigram)
    return False


@dataclass
class Hypothesis:
    tokens: List[int] = field(default_factory=list)
    log_prob: float = 0.0
    trigrams: Set[Trigram] = field(default_factory=set)
    finished: bool = False
    cache: Optional[DecoderCache] = field(default=None, repr=False, compare=False)

    def extend(self, token: int, log_prob: float, cache: Optional[DecoderCache] = None) -> "Hypothesis":
        tokens = self.tokens + [token]
        trigrams = set(self.trigrams)
        if len(tokens) >= 3:
            trigrams.add(tuple(tokens[-3:]))
        return Hypothesis(tokens, self.log_prob + log_prob, trigrams, token == EOS_ID, cache)

    def blocked_tokens(self) -> Set[int]:
        """Tokens that would recreate a trigram already in the sequence"""
        if len(self.tokens) < 2:
            return set()
        last_two = (self.tokens[-2], self.tokens[-1])
        return {c for a, b, c in self.trigrams if (a, b) == last_two}


@dataclass
class BeamResult:
    tokens: List[int]       # without the closing </s>
    score: float
    log_prob: float
    finished: bool
    pool_scores: List[float] = field(default_factory=list)  # every hypothesis the winner was picked from


def length_penalty(length: int, alpha: float, style: str = "simple") -> float:
    if style == "gnmt":
        return ((5.0 + length) / 6.0) ** alpha
    return float(length) ** alpha


def score(hypothesis: Hypothesis, alpha: float, style: str = "simple") -> float:
    """Summed log-probability divided by the length penalty; </s> counts"""
    if not hypothesis.tokens:
        raise DataError("cannot score an empty hypothesis")
    return hypothesis.log_prob / length_penalty(len(hypothesis.tokens), alpha, style)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def allowed_scores(log_probs: np.ndarray, hypothesis: Hypothesis, min_len: int, limit: int,
                   block_trigrams: bool) -> np.ndarray:
    """Next-token log-probs with disallowed continuations at -inf

    </s> is masked before min_len and forced at the last slot; it is never
    blocked. If nothing else survives, </s> is emitted with its real score.
    """
    scores = log_probs.copy()
    scores[list(NEVER_GENERATED)] = -np.inf
    length = len(hypothesis.tokens)
    if length >= limit - 1:
        scores = np.full_like(log_probs, -np.inf)
        scores[EOS_ID] = log_probs[EOS_ID]
        return scores
    if length < min_len:
        scores[EOS_ID] = -np.inf
    if block_trigrams:
        blocked = [t for t in hypothesis.blocked_tokens() if t != EOS_ID]
        scores[blocked] = -np.inf
    if not np.isfinite(scores).any():
        scores[EOS_ID] = log_probs[EOS_ID]
    return scores


def _start(model: ProphetNet, source: Sequence[int]):
    source = list(source)[: model.config.max_len]
    if not source:
        raise DataError("cannot generate from an empty source")
    with no_grad():
        memory = model.encode(source)
    return memory, model.start_cache(memory)


def greedy(source: Sequence[int], model: ProphetNet, max_len: Optional[int] = None, min_len: int = 0) -> List[int]:
    """Argmax token per step (lowest id on ties) until </s> or max_len"""
    limit = min(max_len or model.config.max_len, model.config.max_len)
    memory, cache = _start(model, source)
    hypothesis = Hypothesis()
    while not hypothesis.finished:
        log_probs = log_softmax(model.decode_infer_step(hypothesis.tokens, memory, cache))
        scores = allowed_scores(log_probs, hypothesis, min_len, limit, block_trigrams=False)
        token = int(np.argmax(scores))
        hypothesis = hypothesis.extend(token, float(log_probs[token]))
    return hypothesis.tokens[:-1]


def beam_search(source: Sequence[int], model: ProphetNet, beam: int = 5, alpha: float = 1.2,
                min_len: int = 0, max_len: Optional[int] = None, block_trigrams: bool = False,
                length_penalty_style: str = "simple") -> BeamResult:
    """Keep the `beam` best partial hypotheses by summed log-probability

    Candidates are ranked by (score desc, token id, parent index). A
    candidate ending in </s> moves to the finished pool; the search stops
    once `beam` hypotheses finished or none is alive, and the finished one
    with the best length-normalized score wins.
    """
    if beam < 1:
        raise ConfigurationError(f"beam must be >= 1, got {beam}")
    limit = min(max_len or model.config.max_len, model.config.max_len)
    memory, cache = _start(model, source)
    alive = [Hypothesis(cache=cache)]
    finished: List[Hypothesis] = []

    while alive and len(finished) < beam:
        candidates = []
        for parent_index, hypothesis in enumerate(alive):
            log_probs = log_softmax(model.decode_infer_step(hypothesis.tokens, memory, hypothesis.cache))
            scores = allowed_scores(log_probs, hypothesis, min_len, limit, block_trigrams)
            finite = np.flatnonzero(np.isfinite(scores))
            order = finite[np.lexsort((finite, -scores[finite]))][:beam]
            for token in order:
                total = hypothesis.log_prob + float(log_probs[token])
                candidates.append((-total, int(token), parent_index, float(log_probs[token])))
        candidates.sort()

        next_alive = []
        for _, token, parent_index, token_log_prob in candidates[:beam]:
            parent = alive[parent_index]
            cache = None if token == EOS_ID else parent.cache.fork()
            child = parent.extend(token, token_log_prob, cache=cache)
            (finished if child.finished else next_alive).append(child)
        alive = next_alive

    if not finished:
        finished = alive
    pool_scores = [score(h, alpha, length_penalty_style) for h in finished]
    best_index = int(np.argmax(pool_scores))
    best = finished[best_index]
    tokens = best.tokens[:-1] if best.finished else best.tokens
    return BeamResult(tokens, pool_scores[best_index], best.log_prob, best.finished, pool_scores)


def generate(model: ProphetNet, sources: Sequence[Sequence[int]], config: GenerationConfig) -> List[BeamResult]:
    """Beam search over every source with one shared configuration"""
    results = []
    for index, source in enumerate(sources, start=1):
        results.append(beam_search(
            source, model, beam=config.beam, alpha=config.alpha, min_len=config.min_len,
            max_len=config.max_len, block_trigrams=config.block_trigrams,
            length_penalty_style=config.length_penalty_style,
        ))
        if index % 100 == 0:
            logger.info(f"[GENERATE] {index}/{len(sources)} sequences decoded")
    return results
