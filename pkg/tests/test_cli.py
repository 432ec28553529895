import json

import numpy as np
import pytest

from src.cli.main import EXIT_INTERNAL, EXIT_OK, EXIT_USER, main
from src.model.checkpoint import load_checkpoint
from src.tensor import functional as F

WORDS = "the cat sat on a mat dog ran to big red house".split()


def write_corpus(path, lines=100, seed=0):
    rng = np.random.default_rng(seed)
    text = "\n".join(" ".join(rng.choice(WORDS, size=int(rng.integers(5, 20)))) for _ in range(lines))
    path.write_text(text + "\n")


def write_pairs(path, count=20, seed=1):
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(count):
        source = list(rng.choice(WORDS, size=int(rng.integers(3, 8))))
        rows.append(f"{' '.join(source)}\t{' '.join(source[:3])}")
    path.write_text("\n".join(rows) + "\n")


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("PNET_SEED", raising=False)
    write_corpus(tmp_path / "corpus.txt")
    write_pairs(tmp_path / "pairs.tsv")
    config = {
        "model": {"layers_enc": 1, "layers_dec": 1, "hidden": 16, "ffn": 32, "heads": 2, "n": 2,
                  "max_len": 32, "dropout": 0.1},
        "training": {"steps": 4, "batch_size": 8, "warmup": 2, "peak_lr": 1e-3, "checkpoint_interval": 100,
                     "log_throughput": False},
        "generation": {"beam": 2, "max_len": 12},
        "paths": {"corpus": "corpus.txt", "vocab": "vocab.txt", "pairs": "pairs.tsv",
                  "checkpoint": "runs/pre.pnet", "metrics": "runs/pre.jsonl"},
        "logging": {"level": "WARNING"},
    }
    (tmp_path / "config.json").write_text(json.dumps(config))
    return tmp_path


@pytest.fixture
def pretrained(workspace):
    assert main(["vocab", "--config", "config.json"]) == EXIT_OK
    assert main(["pretrain", "--config", "config.json"]) == EXIT_OK
    return workspace / "runs" / "pre.pnet"


def finetune_args(*extra):
    return ["finetune", "--config", "config.json", "--set", "paths.init_checkpoint=runs/pre.pnet",
            "--set", "paths.checkpoint=runs/ft.pnet", "--set", "paths.metrics=runs/ft.jsonl", *extra]


class TestParser:
    def test_help(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["--help"])
        assert info.value.code == 0
        assert "pretrain" in capsys.readouterr().out

    def test_generate_help_shows_defaults(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["generate", "--help"])
        assert info.value.code == 0
        out = " ".join(capsys.readouterr().out.split())
        for expected in ["(default: 5)", "(default: 1.2)", "(default: 0)", "(default: 128)", "(default: simple)"]:
            assert expected in out

    def test_missing_subcommand(self):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 2


class TestVocabAndPretrain:
    def test_vocab_command(self, workspace, capsys):
        assert main(["vocab", "--corpus", "corpus.txt", "--output", "out/v.txt", "--max-size", "5"]) == EXIT_OK
        assert len((workspace / "out" / "v.txt").read_text().splitlines()) == 5
        assert "[VOCAB] 10 entries" in capsys.readouterr().out

    def test_missing_corpus(self, workspace):
        (workspace / "corpus.txt").unlink()
        (workspace / "vocab.txt").write_text("the\ncat\n")
        assert main(["pretrain", "--config", "config.json"]) == EXIT_USER

    def test_unknown_config_key(self, workspace):
        assert main(["pretrain", "--config", "config.json", "--set", "model.depth=3"]) == EXIT_USER

    def test_pretrain_writes_loadable_checkpoint(self, pretrained, workspace):
        checkpoint = load_checkpoint(pretrained)
        assert checkpoint.step == 4
        assert checkpoint.vocab_tokens == (workspace / "vocab.txt").read_text().split()
        lines = (workspace / "runs" / "pre.jsonl").read_text().splitlines()
        assert "config" in json.loads(lines[0]) and len(lines) == 5

    def test_pretrain_is_deterministic(self, pretrained, workspace):
        metrics = workspace / "runs" / "pre.jsonl"
        first_metrics, first_checkpoint = metrics.read_bytes(), pretrained.read_bytes()
        assert main(["pretrain", "--config", "config.json"]) == EXIT_OK
        assert metrics.read_bytes() == first_metrics
        assert pretrained.read_bytes() == first_checkpoint

    def test_short_smoke_run_below_default_warmup(self, workspace):
        main(["vocab", "--config", "config.json"])
        assert main(["pretrain", "--config", "config.json", "--set", "training.steps=50",
                     "--set", "training.warmup=200"]) == EXIT_OK
        assert load_checkpoint(workspace / "runs" / "pre.pnet").step == 50
        lines = (workspace / "runs" / "pre.jsonl").read_text().splitlines()
        assert json.loads(lines[0])["config"]["training"]["warmup"] == 50
        assert len(lines) == 51

    def test_dump_examples(self, workspace):
        main(["vocab", "--config", "config.json"])
        assert main(["pretrain", "--config", "config.json", "--set", "data.dump_examples=dump.tsv",
                     "--set", "training.steps=2"]) == EXIT_OK
        rows = (workspace / "dump.tsv").read_text().splitlines()
        assert len(rows) == 100 and all(len(row.split("\t")) == 3 for row in rows)
        assert all(row.split("\t")[1] for row in rows)


class TestFinetune:
    def test_stream_count_override(self, pretrained, workspace):
        assert main(finetune_args("--set", "model.n=3")) == EXIT_OK
        checkpoint = load_checkpoint(workspace / "runs" / "ft.pnet")
        assert checkpoint.config.n == 3
        assert checkpoint.config.hidden == load_checkpoint(pretrained).config.hidden
        header = json.loads((workspace / "runs" / "ft.jsonl").read_text().splitlines()[0])
        assert header["config"]["model"]["n"] == 3

    def test_from_scratch(self, workspace):
        main(["vocab", "--config", "config.json"])
        assert main(["finetune", "--config", "config.json"]) == EXIT_OK

    def test_empty_pairs(self, pretrained, workspace):
        (workspace / "pairs.tsv").write_text("\n")
        assert main(finetune_args()) == EXIT_USER

    def test_vocab_mismatch(self, pretrained, workspace):
        (workspace / "vocab.txt").write_text("cat\nthe\nsat\n")
        assert main(finetune_args()) == EXIT_USER

    def test_resume(self, pretrained, workspace):
        assert main(["pretrain", "--config", "config.json", "--set", "training.resume=true",
                     "--set", "training.steps=6"]) == EXIT_OK
        assert load_checkpoint(pretrained).step == 6


class TestGenerate:
    @pytest.fixture
    def inputs(self, workspace):
        path = workspace / "inputs.txt"
        path.write_text("the cat sat on a mat\nbig red dog ran\n")
        return path

    def test_deterministic(self, pretrained, inputs, workspace):
        args = ["generate", "--checkpoint", str(pretrained), "--input", "inputs.txt", "--beam", "3"]
        assert main(args + ["--output", "a.txt"]) == EXIT_OK
        assert main(args + ["--output", "b.txt"]) == EXIT_OK
        first = (workspace / "a.txt").read_text()
        assert first == (workspace / "b.txt").read_text()
        assert len(first.splitlines()) == 2

    def test_to_stdout_with_blocking(self, pretrained, inputs, capsys):
        capsys.readouterr()
        assert main(["generate", "--checkpoint", str(pretrained), "--input", "inputs.txt",
                     "--block-trigrams", "--max-len", "10"]) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 2
        for line in lines:
            tokens = line.split()
            trigrams = [tuple(tokens[i:i + 3]) for i in range(len(tokens) - 2)]
            assert len(trigrams) == len(set(trigrams))
            assert len(tokens) < 10

    def test_beam_and_alpha_from_flags_and_config(self, pretrained, inputs):
        assert main(["generate", "--config", "config.json", "--checkpoint", str(pretrained),
                     "--input", "inputs.txt", "--beam", "4", "--alpha", "1.0",
                     "--length-penalty-style", "gnmt", "--output", "out.txt"]) == EXIT_OK

    def test_empty_input_line(self, pretrained, workspace):
        (workspace / "inputs.txt").write_text("the cat\n\n")
        assert main(["generate", "--checkpoint", str(pretrained), "--input", "inputs.txt"]) == EXIT_USER

    def test_missing_checkpoint(self, workspace, inputs):
        assert main(["generate", "--checkpoint", "absent.pnet", "--input", "inputs.txt"]) == EXIT_USER


class TestEval:
    def test_identical_files(self, workspace, capsys):
        (workspace / "c.txt").write_text("the cat sat\na dog\n")
        assert main(["eval", "--candidates", "c.txt", "--references", "c.txt", "--output", "r.json"]) == EXIT_OK
        report = json.loads((workspace / "r.json").read_text())
        assert report["rouge1"] == report["rougeL"] == report["token_acc"] == 1.0
        assert report["ppl"] is None

    def test_two_of_three(self, workspace, capsys):
        (workspace / "c.txt").write_text("a b c\n")
        (workspace / "r.txt").write_text("a b d\n")
        assert main(["eval", "--candidates", "c.txt", "--references", "r.txt"]) == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["rouge1"] == pytest.approx(2 / 3)

    def test_line_count_mismatch(self, workspace):
        (workspace / "c.txt").write_text("a\nb\n")
        (workspace / "r.txt").write_text("a\n")
        assert main(["eval", "--candidates", "c.txt", "--references", "r.txt"]) == EXIT_USER

    def test_perplexity_with_checkpoint(self, pretrained, workspace, capsys):
        (workspace / "s.txt").write_text("the cat sat on a mat\n")
        (workspace / "r.txt").write_text("the cat sat\n")
        capsys.readouterr()
        assert main(["eval", "--candidates", "r.txt", "--references", "r.txt",
                     "--checkpoint", str(pretrained), "--sources", "s.txt"]) == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["ppl"] > 1.0


class TestGradcheck:
    def test_passes(self, capsys):
        assert main(["gradcheck", "--only", "matmul", "--only", "gelu"]) == EXIT_OK
        assert "2/2 checks passed" in capsys.readouterr().out

    def test_sign_flip_fails(self, monkeypatch, capsys):
        original = F.Gelu.backward
        monkeypatch.setattr(F.Gelu, "backward", lambda self, grad: tuple(-g for g in original(self, grad)))
        assert main(["gradcheck", "--only", "gelu"]) == EXIT_INTERNAL
        assert "gelu" in capsys.readouterr().err
