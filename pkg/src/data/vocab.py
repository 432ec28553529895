"""Vocabulary

Whitespace tokenization and the token <-> id bijection. Ids 0..4 are
reserved; corpus tokens start at id 5 in vocab-file line order.
"""

import hashlib
import logging
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

from src.errors import DataError

logger = logging.getLogger(__name__)

BOS_ID = 0
PAD_ID = 1
MASK_ID = 2
UNK_ID = 3
EOS_ID = 4
RESERVED_TOKENS = ("<s>", "<pad>", "<mask>", "<unk>", "</s>")
NUM_RESERVED = len(RESERVED_TOKENS)


def tokenize(line: str) -> List[str]:
    return line.split()


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        self.tokens: List[str] = list(tokens)
        self._ids: Dict[str, int] = {tok: i for i, tok in enumerate(RESERVED_TOKENS)}
        for index, token in enumerate(self.tokens):
            if token in self._ids:
                raise DataError(f"duplicate or reserved token in vocabulary: {token!r}")
            self._ids[token] = NUM_RESERVED + index

    def __len__(self) -> int:
        return NUM_RESERVED + len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def token_to_id(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def id_to_token(self, token_id: int) -> str:
        if token_id < NUM_RESERVED:
            return RESERVED_TOKENS[token_id]
        return self.tokens[token_id - NUM_RESERVED]

    def encode(self, text: Union[str, Sequence[str]]) -> List[int]:
        tokens = tokenize(text) if isinstance(text, str) else text
        return [self.token_to_id(tok) for tok in tokens]

    def decode(self, ids: Iterable[int], strip_special: bool = True) -> str:
        """Ids back to a space-joined line; stops at </s> when stripping"""
        words = []
        for token_id in ids:
            token_id = int(token_id)
            if strip_special and token_id == EOS_ID:
                break
            if strip_special and token_id in (BOS_ID, PAD_ID):
                continue
            words.append(self.id_to_token(token_id))
        return " ".join(words)

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()[:16]

    def save(self, path: Union[str, Path]):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(f"{tok}\n" for tok in self.tokens), encoding="utf-8")
        logger.info(f"[VOCAB] Saved {len(self)} entries to {path}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocab":
        path = Path(path)
        if not path.exists():
            raise DataError(f"vocab file not found: {path}")
        tokens = [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
        if not tokens:
            raise DataError(f"vocab file is empty: {path}")
        return cls(tokens)

    def __repr__(self):
        return f"Vocab(size={len(self)})"


def build_vocab(lines: Iterable[str], max_size: int) -> Vocab:
    """Most frequent corpus tokens first, ties broken lexicographically

    `max_size` bounds the number of corpus tokens; everything past it encodes
    to <unk>.
    """
    counts = Counter(tok for line in lines for tok in tokenize(line) if tok not in RESERVED_TOKENS)
    if not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    kept = [tok for tok, _ in ranked[:max_size]]
    if len(ranked) > len(kept):
        logger.info(f"[VOCAB] {len(ranked) - len(kept)} rare tokens fall back to <unk>")
    return Vocab(kept)
