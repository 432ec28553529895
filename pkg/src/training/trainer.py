"""Training Loop

Forward over every stream, future n-gram loss, backward, clipping and Adam,
with scheduled checkpoints and one JSON metrics line per step. All
randomness of step s comes from generators seeded with (seed, s), so a
resumed run repeats the uninterrupted loss sequence exactly.
"""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np

from src.data.batcher import BatchPrefetcher
from src.errors import ConfigurationError, NumericalError, TrainingDivergedError
from src.model.checkpoint import Checkpoint, save_checkpoint
from src.model.prophetnet import ProphetNet, alpha_weights, stream_valid_counts
from src.tensor.tensor import new_tape
from src.training.optimizer import AdamState, adam_step, clip_grad_norm, lr_at

logger = logging.getLogger(__name__)

StopCondition = Callable[[int, ProphetNet], bool]


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 32
    warmup: int = 100
    peak_lr: float = 3e-4
    seed: int = 0
    checkpoint_interval: int = 500
    task: str = "pretrain"          # pretrain | finetune
    n: int = 2
    gamma: float = 1.0
    micro_batches: int = 1
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_interval: int = 100
    log_interval: int = 10
    log_throughput: bool = True
    prefetch_depth: int = 4

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError(f"steps must be >= 1, got {self.steps}")
        if not 0 <= self.warmup <= self.steps:
            raise ConfigurationError(f"warmup ({self.warmup}) must lie in 0..steps ({self.steps})")
        if self.batch_size < 1 or self.micro_batches < 1:
            raise ConfigurationError("batch_size and micro_batches must be >= 1")
        if self.task not in ("pretrain", "finetune"):
            raise ConfigurationError(f"task must be 'pretrain' or 'finetune', got {self.task!r}")
        if self.checkpoint_interval < 1 or self.eval_interval < 1 or self.log_interval < 1:
            raise ConfigurationError("checkpoint, eval and log intervals must be >= 1")

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainResult:
    final_step: int
    losses: List[float] = field(default_factory=list)
    stopped_early: bool = False
    checkpoint: Optional[Path] = None


class Trainer:
    def __init__(
        self,
        model: ProphetNet,
        source,
        config: TrainConfig,
        metrics_path: Optional[Union[str, Path]] = None,
        checkpoint_path: Optional[Union[str, Path]] = None,
        vocab_tokens: Optional[List[str]] = None,
        stop_when: Optional[StopCondition] = None,
        header: Optional[Dict[str, Any]] = None,
    ):
        if config.n != model.config.n or config.gamma != model.config.gamma:
            raise ConfigurationError(
                f"training n/gamma ({config.n}, {config.gamma}) differ from the model's "
                f"({model.config.n}, {model.config.gamma})"
            )
        self.model = model
        self.source = source
        self.config = config
        self.metrics_path = Path(metrics_path) if metrics_path else None
        self.checkpoint_path = Path(checkpoint_path) if checkpoint_path else None
        self.vocab_tokens = vocab_tokens
        self.stop_when = stop_when
        self.header = header if header is not None else {"train": config.to_dict(), "model": model.config.to_dict()}
        self.alpha = alpha_weights(config.gamma, config.n)
        self.state = AdamState.zeros(model.params, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
        self.last_checkpoint: Optional[Path] = None

    def resume_from(self, checkpoint: Checkpoint):
        """Continue from a saved step with its parameters and Adam moments"""
        self.model.params = checkpoint.params
        self.state = AdamState.from_extra(
            checkpoint.extra, checkpoint.params, checkpoint.step,
            beta1=self.config.beta1, beta2=self.config.beta2, eps=self.config.adam_eps,
        )
        logger.info(f"[TRAINER] Resuming after step {checkpoint.step}")

    def train_step(self, step: int, batch) -> Dict[str, Any]:
        """One optimizer update; returns the metrics record of the step"""
        started = time.perf_counter()
        params = self.model.params
        params.zero_grad()
        rng = np.random.default_rng([self.config.seed, step])
        parts = batch.split(self.config.micro_batches)
        normalizers = None
        if len(parts) > 1 and self.model.config.loss_reduction == "mean":
            normalizers = stream_valid_counts(batch.labels, batch.label_valid, self.config.n)

        loss_value = 0.0
        nll = [0.0] * self.config.n
        try:
            for part in parts:
                new_tape()
                out = self.model.forward_loss(part, self.alpha, training=True, rng=rng, normalizers=normalizers)
                if not math.isfinite(out.loss.item()):
                    raise NumericalError(f"non-finite loss {out.loss.item()}")
                out.loss.backward()
                loss_value += out.loss.item()
                nll = [a + b for a, b in zip(nll, out.nll_per_stream)]
            clip_grad_norm(params, self.config.clip_norm)
            lr = lr_at(step, self.config.peak_lr, self.config.warmup)
            adam_step(params, self.state, lr)
        except NumericalError as e:
            logger.error(f"[TRAINER] Step {step}: {e}")
            raise TrainingDivergedError(step, self.last_checkpoint) from e

        record: Dict[str, Any] = {"step": step, "loss": loss_value, "nll_per_stream": nll, "lr": lr}
        if self.config.log_throughput:
            elapsed = max(time.perf_counter() - started, 1e-9)
            record["tokens_per_sec"] = round(batch.num_target_tokens / elapsed, 1)
        return record

    def save(self, step: int) -> Optional[Path]:
        if self.checkpoint_path is None:
            return None
        train_state = {"step": step, "task": self.config.task, "seed": self.config.seed}
        self.last_checkpoint = save_checkpoint(
            self.checkpoint_path, self.model.config, self.model.params, self.vocab_tokens,
            train_state, self.state.to_extra(),
        )
        return self.last_checkpoint

    def _open_metrics(self, start_step: int):
        if self.metrics_path is None:
            return None
        self.metrics_path.parent.mkdir(parents=True, exist_ok=True)
        if start_step == 1:
            f = open(self.metrics_path, "w", encoding="utf-8")
            f.write(json.dumps({"config": self.header}) + "\n")
            return f
        if self.metrics_path.exists():
            self._truncate_metrics(start_step)
        return open(self.metrics_path, "a", encoding="utf-8")

    def _truncate_metrics(self, start_step: int):
        """Drop records from steps that will be re-run, and any torn last line"""
        kept, dropped = [], 0
        for line in self.metrics_path.read_text(encoding="utf-8").splitlines():
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                dropped += 1
                continue
            if isinstance(record, dict) and record.get("step", 0) >= start_step:
                dropped += 1
                continue
            kept.append(line)
        if dropped:
            logger.warning(f"[TRAINER] Dropping {dropped} metrics records past step {start_step - 1}")
            self.metrics_path.write_text("".join(line + "\n" for line in kept), encoding="utf-8")

    def run(self) -> TrainResult:
        start_step = self.state.step + 1
        end_step = self.config.steps
        result = TrainResult(final_step=self.state.step)
        if start_step > end_step:
            logger.info(f"[TRAINER] Nothing to do: already at step {self.state.step}")
            return result

        logger.info(f"[TRAINER] Training steps {start_step}..{end_step} "
                    f"(n={self.config.n}, gamma={self.config.gamma}, {self.model.params.num_parameters():,} params)")
        metrics = self._open_metrics(start_step)
        prefetcher = BatchPrefetcher(self.source, start_step, end_step, self.config.prefetch_depth)
        try:
            with prefetcher:
                for step in range(start_step, end_step + 1):
                    record = self.train_step(step, prefetcher.get(step))
                    result.losses.append(record["loss"])
                    result.final_step = step
                    if metrics:
                        metrics.write(json.dumps(record) + "\n")
                        metrics.flush()
                    if step % self.config.log_interval == 0 or step == start_step:
                        logger.info(f"[TRAINER] step {step}/{end_step} loss {record['loss']:.4f} "
                                    f"lr {record['lr']:.2e}")
                    if step % self.config.checkpoint_interval == 0 and step != end_step:
                        self.save(step)
                    if self.stop_when and step % self.config.eval_interval == 0 and self.stop_when(step, self.model):
                        logger.info(f"[TRAINER] Stop condition met at step {step}")
                        result.stopped_early = True
                        break
        finally:
            if metrics:
                metrics.close()
        result.checkpoint = self.save(result.final_step)
        return result


def train(config: TrainConfig, model: ProphetNet, source, **kwargs) -> TrainResult:
    return Trainer(model, source, config, **kwargs).run()
