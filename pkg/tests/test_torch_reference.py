"""Float64 torch oracle for the numpy engine and the n=1 reduction"""

import math

import numpy as np
import pytest

from src.data.batcher import Seq2SeqExample, collate
from src.model.prophetnet import ProphetNet
from src.tensor import functional as F
from src.tensor.tensor import Tensor, no_grad
from tests.conftest import make_config

torch = pytest.importorskip("torch")


def t5_bucket(relative_position, bidirectional, num_buckets, max_distance):
    n = -relative_position
    ret = torch.zeros_like(n)
    if bidirectional:
        num_buckets //= 2
        ret = ret + (n < 0).long() * num_buckets
        n = n.abs()
    else:
        n = torch.clamp(n, min=0)
    max_exact = num_buckets // 2
    is_small = n < max_exact
    ratio = torch.log(n.double().clamp(min=1) / max_exact) / math.log(max_distance / max_exact)
    large = max_exact + (ratio * (num_buckets - max_exact)).long()
    large = torch.clamp(large, max=num_buckets - 1)
    return ret + torch.where(is_small, n, large)


class VanillaTransformer:
    """Post-LN encoder-decoder on the same named weights, main stream only"""

    def __init__(self, model: ProphetNet):
        self.config = model.config
        self.p = {name: torch.tensor(t.data, dtype=torch.float64) for name, t in model.params.items()}

    def ln(self, x, prefix):
        return torch.nn.functional.layer_norm(
            x, x.shape[-1:], self.p[f"{prefix}.gain"], self.p[f"{prefix}.bias"], self.config.layer_norm_eps
        )

    def ffn(self, x, prefix):
        p = self.p
        hidden = torch.nn.functional.gelu(x @ p[f"{prefix}.in.weight"] + p[f"{prefix}.in.bias"], approximate="tanh")
        return hidden @ p[f"{prefix}.out.weight"] + p[f"{prefix}.out.bias"]

    def attention(self, query, memory, prefix, mask, bias=None):
        p, heads = self.p, self.config.heads
        batch, q_len, dim = query.shape
        k_len = memory.shape[1]

        def project(x, proj, length):
            out = x @ p[f"{prefix}.{proj}.weight"] + p[f"{prefix}.{proj}.bias"]
            return out.view(batch, length, heads, dim // heads).transpose(1, 2)

        q, k, v = project(query, "q", q_len), project(memory, "k", k_len), project(memory, "v", k_len)
        scores = q @ k.transpose(-1, -2) / math.sqrt(dim // heads)
        if bias is not None:
            scores = scores + bias
        scores = scores.masked_fill(~mask, float("-inf"))
        context = torch.softmax(scores, dim=-1) @ v
        merged = context.transpose(1, 2).reshape(batch, q_len, dim)
        return merged @ p[f"{prefix}.o.weight"] + p[f"{prefix}.o.bias"]

    def bias(self, side, length):
        positions = torch.arange(length)
        offsets = positions[None, :] - positions[:, None]
        buckets = t5_bucket(offsets, side == "encoder", self.config.num_buckets, self.config.max_distance)
        return self.p[f"{side}.rel_bias"][buckets].permute(2, 0, 1)

    def embed(self, ids, side):
        positions = torch.arange(ids.shape[1])
        return self.ln(self.p["embed.token"][ids] + self.p["embed.position"][positions], f"{side}.embed_ln")

    def loss(self, batch):
        source = torch.tensor(batch.source)
        source_valid = torch.tensor(batch.source_valid)
        decoder_input = torch.tensor(batch.decoder_input)
        labels = torch.tensor(np.where(batch.label_valid, batch.labels, -100))

        x = self.embed(source, "encoder")
        key_mask = source_valid[:, None, None, :]
        enc_bias = self.bias("encoder", source.shape[1])
        for k in range(self.config.layers_enc):
            prefix = f"encoder.layers.{k}"
            x = self.ln(x + self.attention(x, x, f"{prefix}.self_attn", key_mask, enc_bias), f"{prefix}.self_attn_ln")
            x = self.ln(x + self.ffn(x, f"{prefix}.ffn"), f"{prefix}.ffn_ln")

        length = decoder_input.shape[1]
        h = self.embed(decoder_input, "decoder")
        causal = torch.tril(torch.ones(length, length, dtype=torch.bool))
        dec_bias = self.bias("decoder", length)
        for k in range(self.config.layers_dec):
            prefix = f"decoder.layers.{k}"
            h = self.ln(h + self.attention(h, h, f"{prefix}.self_attn", causal, dec_bias), f"{prefix}.self_attn_ln")
            h = self.ln(h + self.attention(h, x, f"{prefix}.cross_attn", key_mask), f"{prefix}.cross_attn_ln")
            h = self.ln(h + self.ffn(h, f"{prefix}.ffn"), f"{prefix}.ffn_ln")

        logits = h @ self.p["embed.token"].T
        return torch.nn.functional.cross_entropy(
            logits.reshape(-1, logits.shape[-1]), labels.reshape(-1), ignore_index=-100
        ).item()


@pytest.fixture
def padded_batch():
    examples = [
        Seq2SeqExample(source=[5, 6, 7, 8, 9, 10], target=[6, 7, 8, 9, 10, 11, 12]),
        Seq2SeqExample(source=[9, 10, 11], target=[11, 12, 5]),
        Seq2SeqExample(source=[12, 5], target=[7]),
    ]
    return collate(examples, append_eos=True)


class TestOperationsAgainstTorch:
    def test_softmax(self, rng):
        x = rng.standard_normal((3, 7)) * 5
        expected = torch.softmax(torch.tensor(x), dim=-1).numpy()
        np.testing.assert_allclose(F.softmax(Tensor(x)).data, expected, atol=1e-12)

    def test_layer_norm(self, rng):
        x, gain, bias = rng.standard_normal((4, 6)), rng.standard_normal(6), rng.standard_normal(6)
        expected = torch.nn.functional.layer_norm(
            torch.tensor(x), (6,), torch.tensor(gain), torch.tensor(bias), 1e-5
        ).numpy()
        np.testing.assert_allclose(F.layer_norm(Tensor(x), Tensor(gain), Tensor(bias)).data, expected, atol=1e-12)

    def test_gelu(self, rng):
        x = rng.standard_normal(20) * 3
        expected = torch.nn.functional.gelu(torch.tensor(x), approximate="tanh").numpy()
        np.testing.assert_allclose(F.gelu(Tensor(x)).data, expected, atol=1e-12)

    def test_cross_entropy_and_gradient(self, rng):
        logits = rng.standard_normal((5, 9))
        targets = np.array([1, -100, 4, 8, 0])
        ours = Tensor(logits, requires_grad=True)
        loss = F.cross_entropy(ours, targets)
        loss.backward()

        reference = torch.tensor(logits, requires_grad=True)
        expected = torch.nn.functional.cross_entropy(reference, torch.tensor(targets), ignore_index=-100)
        expected.backward()
        assert loss.item() == pytest.approx(expected.item(), abs=1e-12)
        np.testing.assert_allclose(ours.grad, reference.grad.numpy(), atol=1e-12)

    def test_matmul_gradient(self, rng):
        a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 5))
        ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
        F.sum(F.gelu(F.matmul(ta, tb))).backward()
        ra = torch.tensor(a, requires_grad=True)
        rb = torch.tensor(b, requires_grad=True)
        torch.nn.functional.gelu(ra @ rb, approximate="tanh").sum().backward()
        np.testing.assert_allclose(ta.grad, ra.grad.numpy(), atol=1e-12)
        np.testing.assert_allclose(tb.grad, rb.grad.numpy(), atol=1e-12)

    def test_bucket_function(self):
        from src.model.attention import relative_bucket
        offsets = np.arange(-300, 300)
        for bidirectional in (True, False):
            expected = t5_bucket(torch.tensor(offsets), bidirectional, 32, 128).numpy()
            np.testing.assert_array_equal(relative_bucket(offsets, 32, 128, bidirectional), expected)


class TestSingleStreamReduction:
    @pytest.mark.parametrize("seed", [0, 1])
    def test_loss_equals_vanilla_transformer(self, seed, padded_batch):
        model = ProphetNet(make_config(n=1, layers_enc=2, layers_dec=2, hidden=16, heads=4, ffn=32), seed=seed)
        with no_grad():
            ours = model.forward_loss(padded_batch).loss.item()
        assert abs(ours - VanillaTransformer(model).loss(padded_batch)) < 1e-9

    def test_main_stream_nll_of_two_stream_model(self, padded_batch):
        model = ProphetNet(make_config(n=2, hidden=16, heads=4, ffn=32), seed=4)
        with no_grad():
            out = model.forward_loss(padded_batch)
        assert abs(out.nll_per_stream[0] - VanillaTransformer(model).loss(padded_batch)) < 1e-9
