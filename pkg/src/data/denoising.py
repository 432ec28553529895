"""Span-Mask Denoising

Turns a document into a denoising example: one contiguous span per 64-token
window is corrupted in the encoder input (80% mask symbol, 10% random
token, 10% unchanged) and the decoder learns to regenerate only the
masked fragment.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np

from src.data.vocab import MASK_ID, NUM_RESERVED, Vocab
from src.errors import DataError

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 64
DEFAULT_RATIO = 0.15
MASK_PROB = 0.8
RANDOM_PROB = 0.1


def span_length(width: int, ratio: float = DEFAULT_RATIO) -> int:
    """round(ratio * width), halves rounded up"""
    return int(math.floor(ratio * width + 0.5))


def corrupt_token(token: int, rng: np.random.Generator, vocab_size: int) -> int:
    """mask id / uniform non-reserved id / the token itself at 0.8 / 0.1 / 0.1"""
    if vocab_size <= NUM_RESERVED:
        raise DataError(f"vocab of size {vocab_size} has no corpus tokens to sample from")
    draw = rng.random()
    if draw < MASK_PROB:
        return MASK_ID
    if draw < MASK_PROB + RANDOM_PROB:
        return int(rng.integers(NUM_RESERVED, vocab_size))
    return int(token)


@dataclass
class DenoisedExample:
    encoder_input: List[int]
    target: List[int]
    target_span_starts: List[int]
    span_lengths: List[int] = field(default_factory=list)

    def reconstruct(self) -> List[int]:
        """Put the target fragment back under its spans"""
        tokens = list(self.encoder_input)
        offset = 0
        for start, length in zip(self.target_span_starts, self.span_lengths):
            tokens[start:start + length] = self.target[offset:offset + length]
            offset += length
        return tokens

    @property
    def masked_count(self) -> int:
        return len(self.target)

    def dump_line(self, vocab: Optional[Vocab] = None) -> str:
        """SRC<TAB>TGT<TAB>starts"""
        render = (lambda ids: " ".join(vocab.id_to_token(i) for i in ids)) if vocab else \
            (lambda ids: " ".join(str(i) for i in ids))
        starts = ",".join(str(s) for s in self.target_span_starts)
        return f"{render(self.encoder_input)}\t{render(self.target)}\t{starts}"


def mask_spans(
    tokens: Sequence[int],
    rng: np.random.Generator,
    vocab_size: int,
    window: int = DEFAULT_WINDOW,
    ratio: float = DEFAULT_RATIO,
) -> DenoisedExample:
    """One uniformly placed span per window; a trailing partial window of
    length L gets a span of round(ratio * L) when that is at least 1"""
    tokens = [int(t) for t in tokens]
    if not tokens:
        raise DataError("cannot mask an empty document")
    encoder_input = list(tokens)
    target: List[int] = []
    starts: List[int] = []
    lengths: List[int] = []
    for window_start in range(0, len(tokens), window):
        width = min(window, len(tokens) - window_start)
        length = span_length(width, ratio)
        if length < 1:
            continue
        start = window_start + int(rng.integers(0, width - length + 1))
        starts.append(start)
        lengths.append(length)
        for position in range(start, start + length):
            target.append(tokens[position])
            encoder_input[position] = corrupt_token(tokens[position], rng, vocab_size)
    return DenoisedExample(encoder_input, target, starts, lengths)


def write_dump(examples: Iterable[DenoisedExample], path: Union[str, Path], vocab: Optional[Vocab] = None) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for example in examples:
            f.write(example.dump_line(vocab) + "\n")
            count += 1
    logger.info(f"[DATA] Wrote {count} denoising examples to {path}")
    return count
