"""Configuration Management System

Loads the run configuration from a JSON file, merges it over built-in
defaults, applies `--set key=value` overrides and the PNET_SEED
environment variable, and hands out typed views to the modules.
"""

import copy
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional

from src.errors import ConfigurationError, DataError

logger = logging.getLogger(__name__)

SEED_ENV = "PNET_SEED"


def _merge(base: Dict[str, Any], update: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    """Deep-merge update into base, rejecting keys base does not know"""
    for key, value in update.items():
        dotted = f"{prefix}{key}"
        if key not in base:
            raise ConfigurationError(f"unknown configuration key: {dotted}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigurationError(f"configuration key {dotted} must be an object")
            _merge(base[key], value, f"{dotted}.")
        else:
            base[key] = value
    return base


def parse_override(assignment: str):
    """'training.steps=50' -> ('training.steps', 50); non-JSON values stay strings"""
    if "=" not in assignment:
        raise ConfigurationError(f"override must look like key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


class ConfigManager:
    def __init__(self, config_file: Optional[str] = "config.json", overrides: Iterable[str] = (),
                 environ: Optional[Mapping[str, str]] = None):
        self.config_file = Path(config_file) if config_file else None
        if self.config_file and not self.config_file.is_absolute():
            self.config_file = Path.cwd() / self.config_file

        self.config = self._load_config()
        for assignment in overrides:
            self.set(*parse_override(assignment))
        self._apply_environment(os.environ if environ is None else environ)
        self._validate_config()

    def _load_config(self) -> Dict[str, Any]:
        """Load configuration from JSON file over the defaults"""
        config = self._get_default_config()
        if self.config_file is None:
            return config
        if not self.config_file.exists():
            raise ConfigurationError(f"config file not found: {self.config_file}")
        try:
            with open(self.config_file, 'r', encoding='utf-8') as f:
                loaded = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config file {self.config_file} is not valid JSON: {e}") from None
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"config file {self.config_file} must hold a JSON object")
        logger.info(f"[CONFIG] Loaded configuration from {self.config_file}")
        return _merge(config, loaded)

    def _get_default_config(self) -> Dict[str, Any]:
        """Desk-scale defaults; every accepted key appears here"""
        return {
            "model": {
                "layers_enc": 3,
                "layers_dec": 3,
                "hidden": 128,
                "ffn": 512,
                "heads": 4,
                "n": 2,
                "gamma": 1.0,
                "max_len": 128,
                "dropout": 0.1,
                "num_buckets": 32,
                "max_distance": 128,
                "layer_norm_eps": 1e-5,
                "loss_reduction": "mean"
            },
            "training": {
                "steps": 1000,
                "batch_size": 32,
                "warmup": 100,
                "peak_lr": 3e-4,
                "seed": 0,
                "checkpoint_interval": 500,
                "micro_batches": 1,
                "clip_norm": 1.0,
                "beta1": 0.9,
                "beta2": 0.999,
                "adam_eps": 1e-8,
                "eval_interval": 100,
                "log_interval": 10,
                "log_throughput": True,
                "prefetch_depth": 4,
                "resume": False
            },
            "data": {
                "max_vocab": 30000,
                "window": 64,
                "mask_ratio": 0.15,
                "dump_examples": None
            },
            "generation": {
                "beam": 5,
                "alpha": 1.2,
                "min_len": 0,
                "max_len": 128,
                "block_trigrams": False,
                "length_penalty_style": "simple"
            },
            "paths": {
                "corpus": None,
                "vocab": None,
                "pairs": None,
                "init_checkpoint": None,
                "checkpoint": "runs/model.pnet",
                "metrics": "runs/metrics.jsonl",
                "logs_dir": None
            },
            "logging": {
                "level": "INFO",
                "console": True
            }
        }

    def _apply_environment(self, environ: Mapping[str, str]):
        seed = environ.get(SEED_ENV)
        if seed is None or seed == "":
            return
        try:
            self.config["training"]["seed"] = int(seed)
        except ValueError:
            raise ConfigurationError(f"{SEED_ENV} must be an integer, got {seed!r}") from None
        logger.info(f"[CONFIG] Seed {seed} taken from {SEED_ENV}")

    def _validate_config(self):
        """Validate configuration values"""
        if not isinstance(self.get("training.seed"), int):
            raise ConfigurationError("training.seed must be an integer")
        if self.get("generation.max_len") > self.get("model.max_len"):
            raise ConfigurationError("generation.max_len cannot exceed model.max_len")
        for section in ("model", "training", "data", "generation"):
            for key, value in self.config[section].items():
                if isinstance(value, bool) or value is None or isinstance(value, str):
                    continue
                if not isinstance(value, (int, float)):
                    raise ConfigurationError(f"{section}.{key} must be a number, got {value!r}")

    def get(self, key_path: str, default: Any = None) -> Any:
        """Get configuration value using dot notation (e.g., 'model.hidden')"""
        keys = key_path.split('.')
        value = self.config

        for key in keys:
            if isinstance(value, dict) and key in value:
                value = value[key]
            else:
                return default

        return value

    def set(self, key_path: str, value: Any):
        """Set an existing configuration value using dot notation"""
        keys = key_path.split('.')
        config = self.config

        for key in keys[:-1]:
            if not isinstance(config.get(key), dict):
                raise ConfigurationError(f"unknown configuration key: {key_path}")
            config = config[key]

        if keys[-1] not in config or isinstance(config[keys[-1]], dict):
            raise ConfigurationError(f"unknown configuration key: {key_path}")
        config[keys[-1]] = value

    def save(self, path: Optional[str] = None):
        """Write the effective configuration as JSON"""
        target = Path(path) if path else self.config_file
        if target is None:
            raise ConfigurationError("no file to save the configuration to")
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, 'w', encoding='utf-8') as f:
            json.dump(self.config, f, indent=2)
        logger.info(f"[CONFIG] Configuration saved to {target}")

    def effective(self) -> Dict[str, Any]:
        return copy.deepcopy(self.config)

    def model_config(self, vocab_size: int):
        from src.model.config import ModelConfig
        return ModelConfig(vocab_size=vocab_size, **self.get('model'))

    def train_config(self, task: str = "pretrain"):
        from src.training.trainer import TrainConfig
        steps, warmup = self.get("training.steps"), self.get("training.warmup")
        if isinstance(steps, int) and isinstance(warmup, int) and 0 <= steps < warmup:
            logger.warning(f"[CONFIG] training.warmup={warmup} exceeds training.steps={steps}, using warmup={steps}")
            self.set("training.warmup", steps)
        values = {k: v for k, v in self.get('training').items() if k != "resume"}
        return TrainConfig(task=task, n=self.get('model.n'), gamma=self.get('model.gamma'), **values)

    def generation_config(self):
        from src.inference.beam_search import GenerationConfig
        return GenerationConfig(**self.get('generation'))

    def get_paths_config(self) -> Dict[str, Any]:
        """Get paths configuration"""
        return self.get('paths', {})

    def path(self, key: str) -> Optional[Path]:
        value = self.get(f'paths.{key}')
        if not value:
            return None
        path = Path(value)
        return path if path.is_absolute() else Path.cwd() / path

    def require_paths(self, *keys: str):
        """Every named path must be configured and exist"""
        for key in keys:
            path = self.path(key)
            if path is None:
                raise DataError(f"paths.{key} is not set")
            if not path.exists():
                raise DataError(f"{key} not found: {path}")

    def __repr__(self):
        return f"ConfigManager(config_file='{self.config_file}')"
