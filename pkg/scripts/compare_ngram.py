#!/usr/bin/env python3
"""
Future N-gram Comparison - lead-k synthetic task

Trains the same small model on the lead-k task with n=1 (plain next-token
prediction), n=2 and n=3 at a fixed seed and prints the final main-stream
test token accuracy of each run side by side. Informational only: at desk
scale the gap between the runs is small and seed-dependent.
"""

import argparse
import logging
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.config.logging_setup import setup_logging
from src.data.batcher import PairBatchSource, batcher
from src.evaluation.synthetic_tasks import synth_task
from src.model.config import ModelConfig
from src.model.prophetnet import ProphetNet, teacher_forced_accuracy
from src.training.trainer import TrainConfig, train

logger = logging.getLogger("src.scripts.compare_ngram")

RUNS = [(1, 1.0), (2, 1.0), (3, 0.5)]


def run_once(n: int, gamma: float, args) -> float:
    train_set, test_set = synth_task(args.task, args.size, args.vocab_size, args.seed, test_size=args.test_size)
    model_config = ModelConfig(
        vocab_size=args.vocab_size, layers_enc=2, layers_dec=2, hidden=args.hidden, ffn=4 * args.hidden,
        heads=4, n=n, gamma=gamma, max_len=32, dropout=0.0,
    )
    train_config = TrainConfig(
        steps=args.steps, batch_size=32, warmup=min(100, args.steps), peak_lr=1e-3, seed=args.seed,
        checkpoint_interval=args.steps, task="finetune", n=n, gamma=gamma, log_interval=100,
        log_throughput=False,
    )
    model = ProphetNet(model_config, seed=args.seed)
    source = PairBatchSource(train_set, train_config.batch_size, args.seed, model_config.max_len)
    train(train_config, model, source)
    test_batches = list(batcher(test_set, 64, model_config.max_len, append_eos=True))
    return teacher_forced_accuracy(model, test_batches, streams_enabled=False)[0]


def main():
    parser = argparse.ArgumentParser(description="lead-k accuracy for n in {1, 2, 3}")
    parser.add_argument("--task", default="lead_3")
    parser.add_argument("--size", type=int, default=2000)
    parser.add_argument("--test-size", dest="test_size", type=int, default=200)
    parser.add_argument("--vocab-size", dest="vocab_size", type=int, default=40)
    parser.add_argument("--hidden", type=int, default=64)
    parser.add_argument("--steps", type=int, default=1500)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    setup_logging("INFO")

    results = {}
    for n, gamma in RUNS:
        logger.info(f"[COMPARE] Training {args.task} with n={n}, gamma={gamma}")
        results[(n, gamma)] = run_once(n, gamma, args)

    print(f"\n{args.task} test token accuracy (seed {args.seed}, {args.steps} steps)")
    print("-" * 40)
    for (n, gamma), accuracy in results.items():
        print(f"n={n} gamma={gamma:<4} accuracy={accuracy:.4f}")


if __name__ == "__main__":
    main()
