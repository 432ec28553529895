import json

import pytest

from src.config.config_manager import ConfigManager, parse_override
from src.errors import ConfigurationError, DataError


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"model": {"hidden": 64, "heads": 4}, "training": {"steps": 20}}))
    return path


class TestLoading:
    def test_file_overrides_defaults(self, config_file):
        config = ConfigManager(config_file, environ={})
        assert config.get("model.hidden") == 64
        assert config.get("model.layers_enc") == 3
        assert config.get("training.steps") == 20

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            ConfigManager(tmp_path / "absent.json", environ={})

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{ not json")
        with pytest.raises(ConfigurationError):
            ConfigManager(path, environ={})

    def test_unknown_key_is_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"model": {"hiden": 64}}))
        with pytest.raises(ConfigurationError, match="model.hiden"):
            ConfigManager(path, environ={})

    def test_defaults_without_file(self):
        assert ConfigManager(None, environ={}).get("generation.beam") == 5


class TestOverrides:
    def test_parse_override(self):
        assert parse_override("training.steps=50") == ("training.steps", 50)
        assert parse_override("paths.corpus=data/c.txt") == ("paths.corpus", "data/c.txt")
        assert parse_override("generation.block_trigrams=true") == ("generation.block_trigrams", True)

    def test_malformed_override(self):
        with pytest.raises(ConfigurationError):
            parse_override("training.steps")

    def test_overrides_apply_after_file(self, config_file):
        config = ConfigManager(config_file, overrides=["training.steps=7"], environ={})
        assert config.get("training.steps") == 7

    def test_unknown_override_key(self, config_file):
        with pytest.raises(ConfigurationError):
            ConfigManager(config_file, overrides=["training.stepz=7"], environ={})

    def test_seed_from_environment(self, config_file):
        config = ConfigManager(config_file, overrides=["training.seed=3"], environ={"PNET_SEED": "11"})
        assert config.get("training.seed") == 11

    def test_bad_seed_in_environment(self, config_file):
        with pytest.raises(ConfigurationError):
            ConfigManager(config_file, environ={"PNET_SEED": "eleven"})

    def test_generation_longer_than_model(self, config_file):
        with pytest.raises(ConfigurationError):
            ConfigManager(config_file, overrides=["generation.max_len=500"], environ={})


class TestViews:
    def test_typed_configs(self, config_file):
        config = ConfigManager(config_file, overrides=["model.n=3", "model.gamma=0.5"], environ={})
        model = config.model_config(vocab_size=40)
        assert model.vocab_size == 40 and model.hidden == 64 and model.n == 3
        train = config.train_config("finetune")
        assert train.task == "finetune" and train.n == 3 and train.gamma == 0.5 and train.steps == 20
        assert train.warmup == 20
        assert config.generation_config().beam == 5

    def test_warmup_clamped_to_steps(self, config_file, caplog):
        config = ConfigManager(config_file, overrides=["training.steps=50", "training.warmup=200"], environ={})
        with caplog.at_level("WARNING", logger="src.config.config_manager"):
            train = config.train_config()
        assert train.steps == train.warmup == 50
        assert config.get("training.warmup") == 50
        assert "[CONFIG]" in caplog.text

    def test_warmup_within_steps_untouched(self, config_file):
        config = ConfigManager(config_file, overrides=["training.steps=50", "training.warmup=10"], environ={})
        assert config.train_config().warmup == 10

    def test_invalid_model_value_surfaces(self, config_file):
        config = ConfigManager(config_file, overrides=["model.heads=3"], environ={})
        with pytest.raises(ConfigurationError):
            config.model_config(vocab_size=40)

    def test_paths(self, config_file, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        (tmp_path / "corpus.txt").write_text("a b\n")
        config = ConfigManager(config_file, overrides=["paths.corpus=corpus.txt", "paths.vocab=vocab.txt"],
                               environ={})
        assert config.path("corpus") == tmp_path / "corpus.txt"
        assert config.path("pairs") is None
        assert config.get_paths_config()["vocab"] == "vocab.txt"
        config.require_paths("corpus")
        with pytest.raises(DataError):
            config.require_paths("vocab")
        with pytest.raises(DataError):
            config.require_paths("pairs")

    def test_save_round_trip(self, config_file, tmp_path):
        config = ConfigManager(config_file, overrides=["training.steps=9"], environ={})
        out = tmp_path / "saved" / "effective.json"
        config.save(out)
        assert ConfigManager(out, environ={}).effective() == config.effective()
