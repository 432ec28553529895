"""Evaluation Metrics

ROUGE-N and ROUGE-L F1 on token sequences, token accuracy, perplexity and
the JSON eval report.
"""

import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Any, Dict, Hashable, List, Optional, Sequence

from src.errors import ConfigurationError, DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, overlap: int, candidate_total: int, reference_total: int) -> "RougeScore":
        precision = overlap / candidate_total if candidate_total else 0.0
        recall = overlap / reference_total if reference_total else 0.0
        total = precision + recall
        f1 = 2 * precision * recall / total if total > 0 else 0.0
        return cls(precision, recall, f1)


def ngrams(tokens: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[Hashable], reference: Sequence[Hashable], n: int = 1) -> RougeScore:
    """Clipped n-gram overlap; sequences shorter than n score zero"""
    if n < 1:
        raise ConfigurationError(f"rouge n must be >= 1, got {n}")
    cand, ref = ngrams(candidate, n), ngrams(reference, n)
    overlap = sum((cand & ref).values())
    return RougeScore.from_counts(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for x in a:
        current = [0]
        for j, y in enumerate(b, start=1):
            current.append(previous[j - 1] + 1 if x == y else max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l(candidate: Sequence[Hashable], reference: Sequence[Hashable]) -> RougeScore:
    """Plain longest-common-subsequence F1"""
    return RougeScore.from_counts(lcs_length(candidate, reference), len(candidate), len(reference))


def token_accuracy(predicted: Sequence[Hashable], gold: Sequence[Hashable], ignore_id: Optional[Hashable] = None) -> float:
    """Exact-match fraction over positions whose gold token is not ignore_id"""
    if len(predicted) != len(gold):
        raise DataError(f"token_accuracy: {len(predicted)} predictions for {len(gold)} gold tokens")
    scored = [(p, g) for p, g in zip(predicted, gold) if ignore_id is None or g != ignore_id]
    if not scored:
        logger.warning("[METRICS] token_accuracy: every position is ignored, reporting 1.0")
        return 1.0
    return sum(p == g for p, g in scored) / len(scored)


def perplexity(mean_nll: float) -> float:
    return math.exp(mean_nll)


def normalize(line: str) -> List[str]:
    """Lowercased whitespace tokens"""
    return line.lower().split()


@dataclass
class EvalReport:
    rouge1: float
    rouge2: float
    rougeL: float
    token_acc: float
    ppl: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


_MISSING = object()


def evaluate_lines(candidates: Sequence[str], references: Sequence[str], ppl: Optional[float] = None) -> EvalReport:
    """Mean per-line ROUGE F1 and position-aligned token accuracy

    A position present in only one of the two lines counts as a mismatch.
    """
    if len(candidates) != len(references):
        raise DataError(f"{len(candidates)} candidate lines vs {len(references)} reference lines")
    if not candidates:
        raise DataError("nothing to evaluate")
    r1 = r2 = rl = 0.0
    predicted: List[Any] = []
    gold: List[Any] = []
    for candidate_line, reference_line in zip(candidates, references):
        cand, ref = normalize(candidate_line), normalize(reference_line)
        r1 += rouge_n(cand, ref, 1).f1
        r2 += rouge_n(cand, ref, 2).f1
        rl += rouge_l(cand, ref).f1
        width = max(len(cand), len(ref))
        predicted.extend(cand + [_MISSING] * (width - len(cand)))
        gold.extend(ref + [None] * (width - len(ref)))
    count = len(candidates)
    return EvalReport(r1 / count, r2 / count, rl / count, token_accuracy(predicted, gold), ppl)
