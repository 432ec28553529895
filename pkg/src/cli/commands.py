"""CLI Commands

One function per subcommand. Each returns the process exit code and lets
package errors propagate to `main`, which maps them to exit codes.
"""

import json
import logging
import sys
from pathlib import Path
from typing import List, Tuple

import numpy as np

from src.config.config_manager import ConfigManager
from src.config.logging_setup import setup_logging
from src.data.batcher import (
    DenoisingBatchSource, PairBatchSource, Seq2SeqExample, batcher, load_corpus, load_pairs,
)
from src.data.denoising import write_dump
from src.data.vocab import Vocab, build_vocab
from src.errors import DataError
from src.evaluation.metrics import evaluate_lines, perplexity
from src.inference.beam_search import GenerationConfig, generate
from src.model.checkpoint import Checkpoint, load_checkpoint
from src.model.config import ModelConfig
from src.model.prophetnet import ProphetNet, main_stream_nll
from src.tensor.gradcheck import run_gradcheck_suite
from src.training.trainer import Trainer, TrainResult

logger = logging.getLogger(__name__)

GENERATION_FLAGS = ("beam", "alpha", "min_len", "max_len", "block_trigrams", "length_penalty_style")


def _load_config(args) -> ConfigManager:
    config = ConfigManager(args.config, overrides=args.overrides or ())
    setup_logging(config.get("logging.level"), config.get("logging.console"), config.path("logs_dir"))
    return config


def _read_lines(path: str, what: str) -> List[str]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{what} not found: {path}")
    try:
        return path.read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise DataError(f"cannot read {what} {path}: {e}") from None


def _check_vocab(checkpoint: Checkpoint, vocab: Vocab, path: Path):
    if checkpoint.vocab_tokens is not None and list(checkpoint.vocab_tokens) != vocab.tokens:
        stored = Vocab(checkpoint.vocab_tokens)
        raise DataError(
            f"vocabulary mismatch: checkpoint {path} was trained with vocab {stored.fingerprint()} "
            f"({len(stored)} entries), configured vocab is {vocab.fingerprint()} ({len(vocab)} entries)"
        )


def _run_training(config: ConfigManager, model: ProphetNet, source, vocab: Vocab, task: str) -> TrainResult:
    train_config = config.train_config(task)
    checkpoint_path = config.path("checkpoint")
    trainer = Trainer(
        model, source, train_config,
        metrics_path=config.path("metrics"),
        checkpoint_path=checkpoint_path,
        vocab_tokens=vocab.tokens,
        header=config.effective(),
    )
    if config.get("training.resume") and checkpoint_path and checkpoint_path.exists():
        checkpoint = load_checkpoint(checkpoint_path)
        _check_vocab(checkpoint, vocab, checkpoint_path)
        if checkpoint.config != model.config:
            raise DataError(f"cannot resume: {checkpoint_path} has a different model configuration")
        trainer.resume_from(checkpoint)
    result = trainer.run()
    print(f"[{task.upper()}] finished at step {result.final_step}"
          f"{' (stopped early)' if result.stopped_early else ''}; checkpoint: {result.checkpoint}")
    return result


def cmd_pretrain(args) -> int:
    """Denoising pre-training on the configured corpus"""
    config = _load_config(args)
    config.require_paths("corpus", "vocab")
    vocab = Vocab.load(config.path("vocab"))
    documents = load_corpus(config.path("corpus"), vocab)
    model_config = config.model_config(len(vocab))
    train_config = config.train_config("pretrain")
    source = DenoisingBatchSource(
        documents, len(vocab), train_config.batch_size, train_config.seed, model_config.max_len,
        config.get("data.window"), config.get("data.mask_ratio"),
    )
    dump = config.get("data.dump_examples")
    if dump:
        write_dump((source.denoised(0, i) for i in range(len(source.documents))), dump, vocab)
    model = ProphetNet(model_config, seed=train_config.seed)
    _run_training(config, model, source, vocab, "pretrain")
    return 0


def _finetune_model(config: ConfigManager, vocab: Vocab, seed: int) -> ProphetNet:
    """Start from paths.init_checkpoint, or from scratch when it is null"""
    init = config.path("init_checkpoint")
    if init is None:
        logger.info("[FINETUNE] No init checkpoint configured, training from scratch")
        return ProphetNet(config.model_config(len(vocab)), seed=seed)
    config.require_paths("init_checkpoint")
    checkpoint = load_checkpoint(init)
    _check_vocab(checkpoint, vocab, init)
    values = checkpoint.config.to_dict()
    for key in ("n", "gamma", "dropout", "loss_reduction"):
        values[key] = config.get(f"model.{key}")
    model_config = ModelConfig.from_dict(values)
    params = checkpoint.params
    if model_config.n != checkpoint.config.n:
        params.resize_streams(model_config.n, np.random.default_rng([seed, model_config.n]))
    logger.info(f"[FINETUNE] Initialized from {init} (pre-trained {checkpoint.step} steps)")
    return ProphetNet(model_config, params=params)


def cmd_finetune(args) -> int:
    """Supervised training on source<TAB>target pairs with the same objective"""
    config = _load_config(args)
    config.require_paths("pairs", "vocab")
    vocab = Vocab.load(config.path("vocab"))
    train_config = config.train_config("finetune")
    model = _finetune_model(config, vocab, train_config.seed)
    pairs = load_pairs(config.path("pairs"), vocab, model.config.max_len)
    source = PairBatchSource(pairs, train_config.batch_size, train_config.seed, model.config.max_len)
    _run_training(config, model, source, vocab, "finetune")
    return 0


def _load_model(path: str) -> Tuple[ProphetNet, Vocab]:
    checkpoint = load_checkpoint(path)
    if not checkpoint.vocab_tokens:
        raise DataError(f"checkpoint {path} carries no vocabulary")
    return ProphetNet(checkpoint.config, params=checkpoint.params), Vocab(checkpoint.vocab_tokens)


def cmd_generate(args) -> int:
    """One generated line per input line"""
    values = ConfigManager(args.config, overrides=args.overrides or ()).get("generation") \
        if args.config else GenerationConfig().__dict__.copy()
    for flag in GENERATION_FLAGS:
        if flag in vars(args):
            values[flag] = getattr(args, flag)
    generation = GenerationConfig(**values)

    model, vocab = _load_model(args.checkpoint)
    lines = _read_lines(args.input, "input file")
    sources = [vocab.encode(line) for line in lines]
    if any(not source for source in sources):
        raise DataError(f"{args.input} contains an empty line")
    results = generate(model, sources, generation)
    output = "".join(vocab.decode(result.tokens) + "\n" for result in results)
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(output, encoding="utf-8")
        logger.info(f"[GENERATE] Wrote {len(results)} lines to {args.output}")
    else:
        sys.stdout.write(output)
    return 0


def cmd_eval(args) -> int:
    """ROUGE-1/2/L F1, token accuracy and optional perplexity as JSON"""
    candidates = _read_lines(args.candidates, "candidate file")
    references = _read_lines(args.references, "reference file")
    if len(candidates) != len(references):
        raise DataError(f"{len(candidates)} candidate lines vs {len(references)} reference lines")

    ppl = None
    if args.checkpoint and args.sources:
        model, vocab = _load_model(args.checkpoint)
        sources = _read_lines(args.sources, "source file")
        if len(sources) != len(references):
            raise DataError(f"{len(sources)} source lines vs {len(references)} reference lines")
        examples = [Seq2SeqExample(vocab.encode(s), vocab.encode(r)) for s, r in zip(sources, references)]
        batches = batcher(examples, batch_size=16, max_len=model.config.max_len, append_eos=True)
        ppl = perplexity(main_stream_nll(model, batches))

    report = evaluate_lines(candidates, references, ppl).to_dict()
    rendered = json.dumps(report, indent=2)
    if args.output:
        Path(args.output).write_text(rendered + "\n", encoding="utf-8")
    print(rendered)
    return 0


def cmd_gradcheck(args) -> int:
    """Finite-difference check of every differentiable operation"""
    results = run_gradcheck_suite(seed=args.seed, names=args.only or None)
    worst = max(results, key=lambda r: r.max_rel_error / r.tolerance)
    failed = [r.name for r in results if not r.passed]
    print(f"[GRADCHECK] {len(results) - len(failed)}/{len(results)} checks passed; worst offender: "
          f"{worst.name} (rel. error {worst.max_rel_error:.2e}, tolerance {worst.tolerance:.0e})")
    if failed:
        print(f"[GRADCHECK] FAILED: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_vocab(args) -> int:
    """Build a vocabulary file from a corpus"""
    config = ConfigManager(args.config, overrides=args.overrides or ()) if args.config else None
    corpus = args.corpus or (config and config.path("corpus"))
    output = args.output or (config and config.path("vocab"))
    max_size = args.max_size or (config.get("data.max_vocab") if config else 30000)
    if not corpus or not output:
        raise DataError("vocab needs a corpus and an output path (flags or config paths)")
    vocab = build_vocab(load_corpus(corpus), max_size)
    vocab.save(output)
    print(f"[VOCAB] {len(vocab)} entries written to {output}")
    return 0
