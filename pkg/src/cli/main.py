"""Command-Line Entry Point

Parses the subcommand, runs it and maps failures to exit codes:
0 on success, 2 for user errors (configuration, data, checkpoint, I/O)
and 1 for internal failures such as a diverged training run.
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from src.cli import commands
from src.config.logging_setup import setup_logging
from src.errors import USER_ERRORS, TrainingDivergedError
from src.inference.beam_search import GenerationConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USER = 2


def _add_config_arguments(parser: argparse.ArgumentParser, required: bool = True):
    parser.add_argument("--config", required=required, help="JSON run configuration")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration value, e.g. training.steps=50 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prophetnet",
        description="Desk-scale ProphetNet: future n-gram pre-training, fine-tuning and generation",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    formatter = argparse.ArgumentDefaultsHelpFormatter

    pretrain = subparsers.add_parser("pretrain", help="denoising pre-training on paths.corpus",
                                     formatter_class=formatter)
    _add_config_arguments(pretrain)
    pretrain.set_defaults(handler=commands.cmd_pretrain)

    finetune = subparsers.add_parser("finetune", help="supervised training on paths.pairs",
                                     formatter_class=formatter)
    _add_config_arguments(finetune)
    finetune.set_defaults(handler=commands.cmd_finetune)

    generate = subparsers.add_parser(
        "generate", help="beam-search one output line per input line", formatter_class=formatter,
        description="Flags override the generation section of --config; the defaults shown apply "
                    "when neither sets a value.",
    )
    _add_config_arguments(generate, required=False)
    defaults = GenerationConfig()
    generate.add_argument("--checkpoint", required=True)
    generate.add_argument("--input", required=True, help="one source per line")
    generate.add_argument("--output", help="write here instead of stdout")
    generate.add_argument("--beam", type=int, default=argparse.SUPPRESS,
                          help=f"beam width (default: {defaults.beam})")
    generate.add_argument("--alpha", type=float, default=argparse.SUPPRESS,
                          help=f"length-penalty exponent (default: {defaults.alpha})")
    generate.add_argument("--min-len", dest="min_len", type=int, default=argparse.SUPPRESS,
                          help=f"tokens before </s> is allowed (default: {defaults.min_len})")
    generate.add_argument("--max-len", dest="max_len", type=int, default=argparse.SUPPRESS,
                          help=f"length limit including the closing </s> (default: {defaults.max_len})")
    generate.add_argument("--block-trigrams", dest="block_trigrams", action="store_true",
                          default=argparse.SUPPRESS,
                          help=f"forbid repeating a trigram within a hypothesis (default: {defaults.block_trigrams})")
    generate.add_argument("--length-penalty-style", dest="length_penalty_style", choices=["simple", "gnmt"],
                          default=argparse.SUPPRESS, help=f"(default: {defaults.length_penalty_style})")
    generate.set_defaults(handler=commands.cmd_generate)

    evaluate = subparsers.add_parser("eval", help="ROUGE, token accuracy and perplexity as JSON",
                                     formatter_class=formatter)
    evaluate.add_argument("--candidates", required=True)
    evaluate.add_argument("--references", required=True)
    evaluate.add_argument("--checkpoint", help="with --sources: also report perplexity on the references")
    evaluate.add_argument("--sources", help="source lines matching --references")
    evaluate.add_argument("--output", help="also write the JSON report here")
    evaluate.set_defaults(handler=commands.cmd_eval)

    gradcheck = subparsers.add_parser("gradcheck", help="finite-difference gradient checks",
                                      formatter_class=formatter)
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument("--only", action="append", metavar="NAME", help="run only the named check (repeatable)")
    gradcheck.set_defaults(handler=commands.cmd_gradcheck)

    vocab = subparsers.add_parser("vocab", help="build a vocabulary file from a corpus",
                                  formatter_class=formatter)
    _add_config_arguments(vocab, required=False)
    vocab.add_argument("--corpus", help="defaults to paths.corpus of --config")
    vocab.add_argument("--output", help="defaults to paths.vocab of --config")
    vocab.add_argument("--max-size", dest="max_size", type=int, help="corpus tokens kept (data.max_vocab)")
    vocab.set_defaults(handler=commands.cmd_vocab)

    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level or "INFO")
    if args.log_level and getattr(args, "overrides", None) is not None:
        args.overrides.append(f"logging.level={json.dumps(args.log_level.upper())}")

    try:
        return args.handler(args)
    except USER_ERRORS as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_USER
    except TrainingDivergedError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except KeyboardInterrupt:
        print("[ERROR] interrupted", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as e:
        logger.exception("[ERROR] Unexpected failure")
        print(f"[ERROR] {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
