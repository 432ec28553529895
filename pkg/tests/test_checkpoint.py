import struct

import numpy as np
import pytest

from src.errors import CheckpointError
from src.model.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from src.model.prophetnet import ProphetNet
from src.tensor.tensor import no_grad
from src.training.optimizer import AdamState, adam_step


@pytest.fixture
def saved(tmp_path, tiny_model):
    path = tmp_path / "model.pnet"
    save_checkpoint(path, tiny_model.config, tiny_model.params, ["a", "b"], {"step": 3, "task": "pretrain"})
    return path


class TestRoundTrip:
    def test_save_load_save_is_byte_identical(self, tmp_path, saved):
        checkpoint = load_checkpoint(saved)
        again = tmp_path / "again.pnet"
        save_checkpoint(again, checkpoint.config, checkpoint.params, checkpoint.vocab_tokens, checkpoint.train_state)
        assert again.read_bytes() == saved.read_bytes()

    def test_manifest_contents(self, saved, tiny_model):
        checkpoint = load_checkpoint(saved)
        assert checkpoint.config == tiny_model.config
        assert checkpoint.vocab_tokens == ["a", "b"]
        assert checkpoint.step == 3
        assert checkpoint.params.names() == tiny_model.params.names()

    def test_losses_are_bit_exact_after_load(self, saved, tiny_model, tiny_batch):
        checkpoint = load_checkpoint(saved)
        restored = ProphetNet(checkpoint.config, params=checkpoint.params)
        with no_grad():
            before = tiny_model.forward_loss(tiny_batch)
            after = restored.forward_loss(tiny_batch)
        for a, b in zip(before.stream_logits, after.stream_logits):
            np.testing.assert_array_equal(a.data, b.data)
        assert before.loss.item() == after.loss.item()

    def test_optimizer_moments_travel_as_extras(self, tmp_path, tiny_model):
        params = tiny_model.params
        for tensor in params.tensors():
            tensor.grad = np.ones_like(tensor.data)
        state = AdamState.zeros(params)
        adam_step(params, state, 1e-3)
        path = save_checkpoint(tmp_path / "m.pnet", tiny_model.config, params, None, {"step": 1}, state.to_extra())
        checkpoint = load_checkpoint(path)
        restored = AdamState.from_extra(checkpoint.extra, checkpoint.params, checkpoint.step)
        for name in params.names():
            np.testing.assert_array_equal(restored.m[name], state.m[name])
        assert checkpoint.vocab_tokens is None

    def test_no_temporary_file_left(self, saved):
        assert not saved.with_name(saved.name + ".tmp").exists()


class TestRejection:
    def test_missing(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.pnet")

    def test_bad_magic(self, saved):
        data = saved.read_bytes()
        saved.write_bytes(b"XXXX" + data[4:])
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(saved)

    def test_version_mismatch(self, saved):
        data = saved.read_bytes()
        saved.write_bytes(MAGIC + struct.pack("<I", 99) + data[8:])
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(saved)

    def test_truncated(self, saved):
        data = saved.read_bytes()
        saved.write_bytes(data[:-16])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(saved)

    def test_trailing_bytes(self, saved):
        saved.write_bytes(saved.read_bytes() + b"\x00")
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(saved)

    def test_bad_extra_name(self, tmp_path, tiny_model):
        with pytest.raises(CheckpointError):
            save_checkpoint(tmp_path / "x.pnet", tiny_model.config, tiny_model.params,
                            extra={"moments": np.zeros(2)})
