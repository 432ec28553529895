import numpy as np
import pytest

from src.data.batcher import Seq2SeqExample, collate
from src.data.vocab import Vocab
from src.model.config import ModelConfig
from src.model.prophetnet import ProphetNet
from src.tensor.tensor import new_tape


@pytest.fixture(autouse=True)
def fresh_tape():
    new_tape()
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_config(**overrides) -> ModelConfig:
    values = dict(
        vocab_size=13, layers_enc=1, layers_dec=2, hidden=8, ffn=16, heads=2,
        n=2, gamma=1.0, max_len=16, dropout=0.0,
    )
    values.update(overrides)
    return ModelConfig(**values)


@pytest.fixture
def tiny_config():
    return make_config()


@pytest.fixture
def tiny_model(tiny_config):
    return ProphetNet(tiny_config, seed=7)


@pytest.fixture
def tiny_batch():
    examples = [
        Seq2SeqExample(source=[5, 6, 7, 8], target=[6, 7, 8, 9, 10]),
        Seq2SeqExample(source=[9, 10, 11], target=[11, 12]),
    ]
    return collate(examples, append_eos=True)


@pytest.fixture
def word_vocab():
    return Vocab(["the", "cat", "sat", "on", "mat", "a", "dog"])
