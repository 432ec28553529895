import numpy as np
import pytest

from src.errors import ConfigurationError, DimensionError, EmptyLossError, OutOfVocabularyError
from src.tensor import functional as F
from src.tensor.tensor import Tensor, no_grad


class TestMatmul:
    def test_identity(self, rng):
        a = Tensor(rng.standard_normal((3, 3)))
        np.testing.assert_array_equal(F.matmul(a, Tensor(np.eye(3))).data, a.data)

    def test_zeros(self, rng):
        a = Tensor(rng.standard_normal((3, 4)))
        assert not F.matmul(a, Tensor(np.zeros((4, 2)))).data.any()

    def test_batched_broadcast(self, rng):
        a = Tensor(rng.standard_normal((2, 3, 4)))
        b = Tensor(rng.standard_normal((4, 5)))
        out = F.matmul(a, b)
        assert out.shape == (2, 3, 5)
        np.testing.assert_allclose(out.data[1], a.data[1] @ b.data)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError) as info:
            F.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
        assert "(2, 3)" in str(info.value) and "(4, 2)" in str(info.value)


class TestSoftmax:
    def test_symmetric_input(self):
        np.testing.assert_allclose(F.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_large_logits_do_not_overflow(self):
        out = F.softmax(Tensor([1000.0, 0.0])).data
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(1.0)
        assert out[1] == pytest.approx(0.0, abs=1e-300)

    def test_rows_sum_to_one(self, rng):
        out = F.softmax(Tensor(rng.standard_normal((5, 7)) * 10), axis=-1).data
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)

    def test_masked_entries_get_exact_zero(self, rng):
        mask = np.array([[True, False, True], [False, False, True]])
        out = F.softmax(Tensor(rng.standard_normal((2, 3))), mask=mask).data
        assert out[0, 1] == 0.0 and out[1, 0] == 0.0 and out[1, 1] == 0.0
        np.testing.assert_allclose(out.sum(axis=-1), 1.0)

    def test_fully_masked_row_is_zero_not_nan(self):
        mask = np.array([[False, False], [True, True]])
        out = F.softmax(Tensor([[1.0, 2.0], [3.0, 3.0]]), mask=mask).data
        np.testing.assert_array_equal(out[0], [0.0, 0.0])
        np.testing.assert_allclose(out[1], [0.5, 0.5])


class TestLayerNorm:
    def test_constant_input_returns_bias(self):
        bias = np.array([0.1, -0.2, 0.3])
        out = F.layer_norm(Tensor([[2.0, 2.0, 2.0]]), Tensor(np.ones(3)), Tensor(bias))
        np.testing.assert_allclose(out.data[0], bias)

    def test_two_values(self):
        out = F.layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
        np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-5)

    def test_gain_shape_mismatch(self):
        with pytest.raises(DimensionError):
            F.layer_norm(Tensor(np.zeros((2, 3))), Tensor(np.ones(2)), Tensor(np.zeros(2)))


class TestElementwise:
    def test_dropout_inference_is_identity(self, rng):
        x = Tensor(rng.standard_normal((4, 4)))
        assert F.dropout(x, 0.5, training=False) is x

    def test_dropout_scales_survivors(self, rng):
        x = Tensor(np.ones((50, 50)))
        out = F.dropout(x, 0.5, training=True, rng=rng).data
        assert set(np.unique(out)) <= {0.0, 2.0}
        assert 0.4 < (out == 0).mean() < 0.6

    @pytest.mark.parametrize("p", [-0.1, 1.0, 1.5])
    def test_dropout_rejects_invalid_probability(self, p):
        with pytest.raises(ConfigurationError):
            F.dropout(Tensor([1.0]), p, training=False)

    def test_gelu_fixed_point(self):
        assert F.gelu(Tensor([0.0])).data[0] == 0.0

    def test_gelu_matches_tanh_approximation(self):
        x = np.array([-2.0, -0.5, 0.7, 3.0])
        expected = 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x ** 3)))
        np.testing.assert_allclose(F.gelu(Tensor(x)).data, expected)

    def test_add_broadcast_mismatch(self):
        with pytest.raises(DimensionError):
            F.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(4)))

    def test_scale_and_operators(self):
        a, b = Tensor([1.0, 2.0]), Tensor([3.0, 5.0])
        np.testing.assert_array_equal((a + b).data, [4.0, 7.0])
        np.testing.assert_array_equal((b - a).data, [2.0, 3.0])
        np.testing.assert_array_equal((a * b).data, [3.0, 10.0])
        np.testing.assert_array_equal((-a).data, [-1.0, -2.0])

    def test_mean(self):
        assert F.mean(Tensor([[1.0, 2.0], [3.0, 6.0]])).item() == 3.0
        np.testing.assert_array_equal(F.mean(Tensor([[1.0, 2.0], [3.0, 6.0]]), axis=0).data, [2.0, 4.0])


class TestEmbeddingLookup:
    def test_returns_row_exactly(self, rng):
        table = Tensor(rng.standard_normal((5, 3)))
        np.testing.assert_array_equal(F.embedding_lookup(table, [0]).data[0], table.data[0])

    def test_duplicate_ids_accumulate(self):
        table = Tensor(np.zeros((4, 2)), requires_grad=True)
        F.sum(F.embedding_lookup(table, [2, 2])).backward()
        np.testing.assert_array_equal(table.grad[2], [2.0, 2.0])
        assert not table.grad[[0, 1, 3]].any()

    def test_empty_ids(self, rng):
        table = Tensor(rng.standard_normal((5, 3)))
        assert F.embedding_lookup(table, np.zeros(0, dtype=int)).shape == (0, 3)

    def test_out_of_vocabulary(self):
        with pytest.raises(OutOfVocabularyError):
            F.embedding_lookup(Tensor(np.zeros((4, 2))), [1, 4])

    def test_multidimensional_ids(self, rng):
        table = Tensor(rng.standard_normal((6, 2)))
        assert F.embedding_lookup(table, np.array([[0, 1, 2], [3, 4, 5]])).shape == (2, 3, 2)


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss = F.cross_entropy(Tensor(np.zeros((3, 4))), [0, 1, 3])
        assert loss.item() == pytest.approx(np.log(4))

    def test_confident_correct_prediction(self):
        logits = np.zeros((2, 5))
        logits[0, 1] = logits[1, 3] = 100.0
        assert F.cross_entropy(Tensor(logits), [1, 3]).item() == pytest.approx(0.0, abs=1e-12)

    def test_ignored_positions_contribute_nothing(self, rng):
        logits = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
        full = F.cross_entropy(Tensor(logits.data[[0, 2]]), [1, 4]).item()
        loss = F.cross_entropy(logits, [1, -100, 4])
        assert loss.item() == pytest.approx(full)
        loss.backward()
        assert not logits.grad[1].any()

    def test_all_ignored_is_an_error(self):
        with pytest.raises(EmptyLossError):
            F.cross_entropy(Tensor(np.zeros((2, 3))), [-100, -100])

    def test_sum_and_normalizer(self, rng):
        logits = Tensor(rng.standard_normal((4, 6)))
        targets = [0, 5, 2, -100]
        mean = F.cross_entropy(logits, targets).item()
        total = F.cross_entropy(logits, targets, reduction="sum").item()
        assert total == pytest.approx(3 * mean)
        assert F.cross_entropy(logits, targets, normalizer=6).item() == pytest.approx(total / 6)

    def test_target_shape_mismatch(self):
        with pytest.raises(DimensionError):
            F.cross_entropy(Tensor(np.zeros((3, 4))), [0, 1])


class TestDeterminism:
    def test_identical_inputs_give_identical_outputs(self):
        def run():
            rng = np.random.default_rng(5)
            x = Tensor(rng.standard_normal((3, 4)))
            w = Tensor(rng.standard_normal((4, 4)))
            with no_grad():
                return F.softmax(F.gelu(F.matmul(x, w))).data

        assert run().tobytes() == run().tobytes()


class TestItem:
    def test_scalar(self):
        assert Tensor(np.array([[2.5]])).item() == 2.5

    def test_non_scalar_is_rejected(self):
        with pytest.raises(DimensionError, match="item"):
            Tensor(np.zeros((2, 3))).item()
