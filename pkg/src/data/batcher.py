"""Batching and Data Sources

Pads source/target pairs into batches, maps training steps to batches
deterministically, and prefetches upcoming batches on a worker thread.
"""

import logging
import math
import queue
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.data.denoising import DEFAULT_RATIO, DEFAULT_WINDOW, DenoisedExample, mask_spans
from src.data.vocab import BOS_ID, EOS_ID, PAD_ID, Vocab, tokenize
from src.errors import ConfigurationError, DataError

logger = logging.getLogger(__name__)


@dataclass
class Seq2SeqExample:
    source: List[int]
    target: List[int]


@dataclass
class Batch:
    source: np.ndarray          # [B, M] ids, padded
    source_valid: np.ndarray    # [B, M] bool
    decoder_input: np.ndarray   # [B, T] BOS-shifted target
    labels: np.ndarray          # [B, T] gold next tokens
    label_valid: np.ndarray     # [B, T] bool, False on padding

    @property
    def size(self) -> int:
        return self.source.shape[0]

    @property
    def num_target_tokens(self) -> int:
        return int(self.label_valid.sum())

    def split(self, parts: int) -> List["Batch"]:
        """Row-wise micro-batches with the same padded widths"""
        parts = max(1, min(parts, self.size))
        chunks = np.array_split(np.arange(self.size), parts)
        return [
            Batch(self.source[rows], self.source_valid[rows], self.decoder_input[rows],
                  self.labels[rows], self.label_valid[rows])
            for rows in chunks
        ]


def _pad(rows: Sequence[Sequence[int]], pad_id: int) -> Tuple[np.ndarray, np.ndarray]:
    width = max(len(r) for r in rows)
    ids = np.full((len(rows), width), pad_id, dtype=np.int64)
    valid = np.zeros((len(rows), width), dtype=bool)
    for i, row in enumerate(rows):
        ids[i, :len(row)] = row
        valid[i, :len(row)] = True
    return ids, valid


def collate(examples: Sequence[Seq2SeqExample], pad_id: int = PAD_ID, max_len: Optional[int] = None,
            append_eos: bool = False) -> Batch:
    """Pad a list of examples into one batch

    The decoder reads BOS followed by the target. With `append_eos` the
    labels are target + </s>; otherwise labels are the target itself and the
    decoder input drops the last target token.
    """
    if not examples:
        raise DataError("cannot collate an empty list of examples")
    target_limit = None if max_len is None else (max_len - 1 if append_eos else max_len)
    sources, decoder_inputs, labels = [], [], []
    for example in examples:
        source = list(example.source[:max_len] if max_len else example.source)
        target = list(example.target[:target_limit] if target_limit is not None else example.target)
        if not source:
            raise DataError("example with an empty source")
        if append_eos:
            labels.append(target + [EOS_ID])
            decoder_inputs.append([BOS_ID] + target)
        elif target:
            labels.append(target)
            decoder_inputs.append([BOS_ID] + target[:-1])
        else:
            raise DataError("example with an empty target")
        sources.append(source)
    source_ids, source_valid = _pad(sources, pad_id)
    decoder_ids, _ = _pad(decoder_inputs, pad_id)
    label_ids, label_valid = _pad(labels, pad_id)
    return Batch(source_ids, source_valid, decoder_ids, label_ids, label_valid)


def batcher(examples: Sequence[Seq2SeqExample], batch_size: int, max_len: Optional[int] = None,
            pad_id: int = PAD_ID, seed: Optional[int] = None, append_eos: bool = False) -> Iterator[Batch]:
    """Consecutive padded batches; shuffled reproducibly when a seed is given"""
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(examples)) if seed is None else np.random.default_rng(seed).permutation(len(examples))
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        yield collate([examples[i] for i in chunk], pad_id, max_len, append_eos)


class _EpochSchedule:
    """Step -> (epoch, example indices); each epoch is a seeded permutation"""

    def __init__(self, count: int, batch_size: int, seed: int):
        if count < 1:
            raise DataError("no training examples")
        if batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
        self.count = count
        self.batch_size = batch_size
        self.seed = seed
        self.batches_per_epoch = math.ceil(count / batch_size)

    def indices(self, step: int) -> Tuple[int, np.ndarray]:
        if step < 1:
            raise ConfigurationError(f"steps are 1-based, got {step}")
        epoch, slot = divmod(step - 1, self.batches_per_epoch)
        order = np.random.default_rng([self.seed, epoch]).permutation(self.count)
        return epoch, order[slot * self.batch_size:(slot + 1) * self.batch_size]


class PairBatchSource:
    """Supervised (source, target) pairs; batch_at(step) is a pure function"""

    def __init__(self, examples: Sequence[Seq2SeqExample], batch_size: int, seed: int,
                 max_len: Optional[int] = None, append_eos: bool = True):
        self.examples = list(examples)
        self.schedule = _EpochSchedule(len(self.examples), batch_size, seed)
        self.max_len = max_len
        self.append_eos = append_eos

    def batch_at(self, step: int) -> Batch:
        _, rows = self.schedule.indices(step)
        return collate([self.examples[i] for i in rows], PAD_ID, self.max_len, self.append_eos)


class DenoisingBatchSource:
    """Documents re-masked every epoch with generator [seed, epoch, doc_index]"""

    def __init__(self, documents: Sequence[Sequence[int]], vocab_size: int, batch_size: int, seed: int,
                 max_len: Optional[int] = None, window: int = DEFAULT_WINDOW, ratio: float = DEFAULT_RATIO):
        self.documents = [list(doc[:max_len] if max_len else doc) for doc in documents if len(doc)]
        self.schedule = _EpochSchedule(len(self.documents), batch_size, seed)
        self.vocab_size = vocab_size
        self.seed = seed
        self.max_len = max_len
        self.window = window
        self.ratio = ratio

    def denoised(self, epoch: int, index: int) -> DenoisedExample:
        rng = np.random.default_rng([self.seed, epoch, index])
        return mask_spans(self.documents[index], rng, self.vocab_size, self.window, self.ratio)

    def example(self, epoch: int, index: int) -> Seq2SeqExample:
        denoised = self.denoised(epoch, index)
        return Seq2SeqExample(source=denoised.encoder_input, target=denoised.target)

    def batch_at(self, step: int) -> Batch:
        epoch, rows = self.schedule.indices(step)
        examples = [self.example(epoch, int(i)) for i in rows]
        return collate(examples, PAD_ID, self.max_len, append_eos=True)


class BatchPrefetcher:
    """Builds batches for steps start..end ahead of the training loop

    A worker thread fills a bounded queue in step order; `get(step)` must be
    called with consecutive steps.
    """

    def __init__(self, source, start_step: int, end_step: int, depth: int = 4):
        self.source = source
        self.next_step = start_step
        self.end_step = end_step
        self.queue: "queue.Queue" = queue.Queue(maxsize=max(1, depth))
        self.is_running = False
        self.worker_thread = None

    def start(self):
        if self.is_running:
            return
        self.is_running = True
        self.worker_thread = threading.Thread(target=self._fill_loop, daemon=True)
        self.worker_thread.start()
        logger.debug(f"[DATA] Prefetching steps {self.next_step}..{self.end_step}")

    def stop(self):
        self.is_running = False
        while not self.queue.empty():
            try:
                self.queue.get_nowait()
            except queue.Empty:
                break
        if self.worker_thread:
            self.worker_thread.join(timeout=5)

    def _fill_loop(self):
        step = self.next_step
        while self.is_running and step <= self.end_step:
            try:
                item = (step, self.source.batch_at(step))
            except Exception as e:
                item = (step, e)
            while self.is_running:
                try:
                    self.queue.put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue
            step += 1

    def get(self, step: int) -> Batch:
        if not self.is_running:
            self.start()
        produced_step, batch = self.queue.get()
        if produced_step != step:
            raise RuntimeError(f"prefetcher produced step {produced_step} but step {step} was requested")
        if isinstance(batch, Exception):
            raise batch
        return batch

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.stop()


def _read_lines(path: Union[str, Path], what: str) -> List[str]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{what} not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not any(line.strip() for line in lines):
        raise DataError(f"{what} is empty: {path}")
    return lines


def load_corpus(path: Union[str, Path], vocab: Optional[Vocab] = None) -> Union[List[str], List[List[int]]]:
    """One document per non-empty line; encoded to ids when a vocab is given"""
    lines = [line for line in _read_lines(path, "corpus") if line.strip()]
    logger.info(f"[DATA] Loaded {len(lines)} documents from {path}")
    return [vocab.encode(line) for line in lines] if vocab is not None else lines


def load_pairs(path: Union[str, Path], vocab: Vocab, max_len: Optional[int] = None) -> List[Seq2SeqExample]:
    """`source<TAB>target` lines -> examples"""
    examples = []
    overlength = 0
    for number, line in enumerate(_read_lines(path, "pair file"), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not tokenize(parts[0]) or not tokenize(parts[1]):
            raise DataError(f"{path}:{number}: expected 'source<TAB>target'")
        source, target = vocab.encode(parts[0]), vocab.encode(parts[1])
        if max_len is not None and (len(source) > max_len or len(target) >= max_len):
            overlength += 1
        examples.append(Seq2SeqExample(source, target))
    if overlength:
        logger.warning(f"[DATA] {overlength} pairs exceed max_len {max_len} and will be truncated")
    logger.info(f"[DATA] Loaded {len(examples)} pairs from {path}")
    return examples
