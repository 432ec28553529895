"""Synthetic Task System

Registry of toy sequence-to-sequence mappings (copy, reverse, lead-k) used
for desk-scale learning checks.
"""

import re
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from src.data.batcher import Seq2SeqExample
from src.data.vocab import NUM_RESERVED, Vocab
from src.errors import ConfigurationError


class SyntheticTask(ABC):
    """Base class for all synthetic tasks"""

    def __init__(self, name: str, description: str, min_source_len: int = 1):
        self.name = name
        self.description = description
        self.min_source_len = min_source_len

    @abstractmethod
    def target_for(self, source: List[int]) -> List[int]:
        """Gold output for one source sequence"""
        pass

    def sample(self, rng: np.random.Generator, vocab_size: int, min_len: int, max_len: int) -> Seq2SeqExample:
        length = int(rng.integers(max(min_len, self.min_source_len), max_len + 1))
        source = [int(t) for t in rng.integers(NUM_RESERVED, vocab_size, size=length)]
        return Seq2SeqExample(source=source, target=self.target_for(source))


class CopyTask(SyntheticTask):
    def __init__(self):
        super().__init__(name="copy", description="target equals the source")

    def target_for(self, source: List[int]) -> List[int]:
        return list(source)


class ReverseTask(SyntheticTask):
    def __init__(self):
        super().__init__(name="reverse", description="target is the source reversed")

    def target_for(self, source: List[int]) -> List[int]:
        return list(reversed(source))


class LeadTask(SyntheticTask):
    """Toy LEAD-k summary: the first k source tokens"""

    def __init__(self, k: int = 3):
        if k < 1:
            raise ConfigurationError(f"lead_k needs k >= 1, got {k}")
        super().__init__(name=f"lead_{k}", description=f"target is the first {k} source tokens", min_source_len=k)
        self.k = k

    def target_for(self, source: List[int]) -> List[int]:
        return list(source[: self.k])


class SyntheticTaskRegistry:
    """Registry for managing synthetic tasks"""

    def __init__(self):
        self._tasks: Dict[str, SyntheticTask] = {}
        self._register_default_tasks()

    def _register_default_tasks(self):
        self.register(CopyTask())
        self.register(ReverseTask())
        self.register(LeadTask(3))

    def register(self, task: SyntheticTask):
        self._tasks[task.name] = task

    def get(self, name: str) -> Optional[SyntheticTask]:
        """Look up a task; lead_<k> is created on demand, lead_k means k=3"""
        if name == "lead_k":
            name = "lead_3"
        if name not in self._tasks:
            match = re.fullmatch(r"lead_(\d+)", name)
            if match:
                self.register(LeadTask(int(match.group(1))))
        return self._tasks.get(name)

    def list_tasks(self) -> List[SyntheticTask]:
        return list(self._tasks.values())


# Global registry instance
synthetic_task_registry = SyntheticTaskRegistry()


def synth_task(kind: str, size: int, vocab_size: int, seed: int, min_len: int = 4, max_len: int = 12,
               test_size: Optional[int] = None) -> Tuple[List[Seq2SeqExample], List[Seq2SeqExample]]:
    """`size` training examples plus a disjointly drawn test set"""
    task = synthetic_task_registry.get(kind)
    if task is None:
        raise ConfigurationError(f"unknown synthetic task {kind!r}")
    if size < 1:
        raise ConfigurationError(f"size must be >= 1, got {size}")
    if vocab_size <= NUM_RESERVED:
        raise ConfigurationError(f"vocab_size must exceed the {NUM_RESERVED} reserved ids")
    test_size = max(1, size // 10) if test_size is None else test_size
    rng = np.random.default_rng(seed)
    train = [task.sample(rng, vocab_size, min_len, max_len) for _ in range(size)]
    test = [task.sample(rng, vocab_size, min_len, max_len) for _ in range(test_size)]
    return train, test


def synthetic_vocab(vocab_size: int) -> Vocab:
    """Vocab whose token strings w<id> map onto ids NUM_RESERVED..vocab_size-1"""
    return Vocab([f"w{i}" for i in range(NUM_RESERVED, vocab_size)])


def write_pairs(examples: List[Seq2SeqExample], path: Union[str, Path], vocab: Vocab) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for example in examples:
            f.write(f"{vocab.decode(example.source)}\t{vocab.decode(example.target)}\n")
    return path
