"""Differentiable Operations

Every operation the encoder-decoder needs, each as a `Function` with an
explicit backward rule.
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import ConfigurationError, DimensionError, EmptyLossError, OutOfVocabularyError
from src.tensor.tensor import Function, Tensor

Operand = Union[Tensor, float, int, np.ndarray]

GELU_COEFF = np.sqrt(2.0 / np.pi)


def as_tensor(value: Operand) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _broadcast_shape(op: str, a: np.ndarray, b: np.ndarray) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(op, a.shape, b.shape) from None


class Add(Function):
    def forward(self, a, b):
        _broadcast_shape("add", a, b)
        return a + b

    def backward(self, grad):
        return grad, grad


class Sub(Function):
    def forward(self, a, b):
        _broadcast_shape("sub", a, b)
        return a - b

    def backward(self, grad):
        return grad, -grad


class Mul(Function):
    def forward(self, a, b):
        _broadcast_shape("mul", a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return grad * self.b, grad * self.a


class Scale(Function):
    def forward(self, x, factor=1.0):
        self.factor = factor
        return x * factor

    def backward(self, grad):
        return (grad * self.factor,)


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise DimensionError("matmul", a.shape, b.shape)
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise DimensionError("matmul", a.shape, b.shape) from None
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        grad_a = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        grad_b = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return grad_a, grad_b


class Reshape(Function):
    def forward(self, x, shape=()):
        self.input_shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError:
            raise DimensionError("reshape", x.shape, shape) from None

    def backward(self, grad):
        return (grad.reshape(self.input_shape),)


class Transpose(Function):
    def forward(self, x, axes=None):
        self.axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
        return np.transpose(x, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Concat(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        try:
            return np.concatenate(arrays, axis=axis)
        except ValueError:
            raise DimensionError("concat", *(a.shape for a in arrays)) from None

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


class Sum(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.input_shape = x.shape
        self.axis = axis
        self.keepdims = keepdims
        return np.sum(x, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.input_shape).copy(),)


class Softmax(Function):
    def forward(self, x, axis=-1, mask=None):
        self.axis = axis
        if mask is None:
            shifted = x - np.max(x, axis=axis, keepdims=True)
            exp = np.exp(shifted)
        else:
            mask = np.broadcast_to(mask, x.shape)
            masked = np.where(mask, x, -np.inf)
            row_max = np.max(masked, axis=axis, keepdims=True)
            row_max = np.where(np.isfinite(row_max), row_max, 0.0)
            exp = np.where(mask, np.exp(np.where(mask, x, row_max) - row_max), 0.0)
        total = np.sum(exp, axis=axis, keepdims=True)
        self.out = exp / np.where(total > 0, total, 1.0)
        return self.out

    def backward(self, grad):
        dot = np.sum(grad * self.out, axis=self.axis, keepdims=True)
        return (self.out * (grad - dot),)


class LayerNorm(Function):
    def forward(self, x, gain, bias, eps=1e-5):
        if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
            raise DimensionError("layer_norm", x.shape, gain.shape, bias.shape)
        mean = x.mean(axis=-1, keepdims=True)
        centered = x - mean
        var = (centered ** 2).mean(axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.normalized = centered * self.inv_std
        self.gain = gain
        return self.normalized * gain + bias

    def backward(self, grad):
        lead = tuple(range(grad.ndim - 1))
        grad_gain = np.sum(grad * self.normalized, axis=lead)
        grad_bias = np.sum(grad, axis=lead)
        g = grad * self.gain
        grad_x = self.inv_std * (
            g
            - g.mean(axis=-1, keepdims=True)
            - self.normalized * (g * self.normalized).mean(axis=-1, keepdims=True)
        )
        return grad_x, grad_gain, grad_bias


class Gelu(Function):
    def forward(self, x):
        self.x = x
        self.t = np.tanh(GELU_COEFF * (x + 0.044715 * x ** 3))
        return 0.5 * x * (1.0 + self.t)

    def backward(self, grad):
        x, t = self.x, self.t
        inner = GELU_COEFF * (1.0 + 3 * 0.044715 * x ** 2)
        return (grad * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * inner),)


class Dropout(Function):
    def forward(self, x, keep=None, p=0.0):
        self.scale = keep / (1.0 - p)
        return x * self.scale

    def backward(self, grad):
        return (grad * self.scale,)


class EmbeddingLookup(Function):
    def forward(self, table, ids=None):
        self.ids = ids
        self.table_shape = table.shape
        return table[ids]

    def backward(self, grad):
        grad_table = np.zeros(self.table_shape)
        np.add.at(grad_table, self.ids.reshape(-1), grad.reshape(-1, self.table_shape[-1]))
        return (grad_table,)


class CrossEntropy(Function):
    def forward(self, logits, targets=None, ignore_index=-100, reduction="mean", normalizer=None):
        valid = targets != ignore_index
        count = int(valid.sum())
        if count == 0:
            raise EmptyLossError("every target position equals ignore_index")
        shifted = logits - logits.max(axis=-1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        log_probs = shifted - log_norm
        safe_targets = np.where(valid, targets, 0)
        picked = np.take_along_axis(log_probs, safe_targets[..., None], axis=-1)[..., 0]
        if reduction == "sum":
            denom = 1.0
        else:
            denom = float(normalizer) if normalizer is not None else float(count)
        self.valid = valid
        self.targets = safe_targets
        self.probs = np.exp(log_probs)
        self.denom = denom
        return np.asarray(-np.sum(np.where(valid, picked, 0.0)) / denom)

    def backward(self, grad):
        d = self.probs.copy()
        np.put_along_axis(d, self.targets[..., None], np.take_along_axis(d, self.targets[..., None], axis=-1) - 1.0, axis=-1)
        d = np.where(self.valid[..., None], d, 0.0)
        return (d * (grad / self.denom),)


def add(a: Operand, b: Operand) -> Tensor:
    return Add.apply(as_tensor(a), as_tensor(b))


def sub(a: Operand, b: Operand) -> Tensor:
    return Sub.apply(as_tensor(a), as_tensor(b))


def mul(a: Operand, b: Operand) -> Tensor:
    return Mul.apply(as_tensor(a), as_tensor(b))


def scale(x: Tensor, factor: float) -> Tensor:
    return Scale.apply(x, factor=float(factor))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product [..,M,K] x [..,K,N] -> [..,M,N]"""
    return MatMul.apply(as_tensor(a), as_tensor(b))


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    return Transpose.apply(x, axes=axes)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def sum(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else x.shape[axis]
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax(x: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Max-shifted softmax; masked entries get exactly zero weight

    A row whose mask permits nothing comes back as all zeros instead of NaN.
    """
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        _broadcast_shape("softmax", x.data, mask)
    return Softmax.apply(x, axis=axis, mask=mask)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    return LayerNorm.apply(x, gain, bias, eps=eps)


def gelu(x: Tensor) -> Tensor:
    """tanh approximation of GELU"""
    return Gelu.apply(x)


def dropout(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout probability must satisfy 0 <= p < 1, got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigurationError("dropout in training mode needs a random generator")
    keep = rng.random(x.shape) >= p
    return Dropout.apply(x, keep=keep, p=p)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Row gather; ids of shape S give a result of shape S + (D,)"""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        bad = ids[(ids < 0) | (ids >= table.shape[0])][0]
        raise OutOfVocabularyError(f"id {bad} outside table of {table.shape[0]} rows")
    return EmbeddingLookup.apply(table, ids=ids)


def cross_entropy(
    logits: Tensor,
    targets,
    ignore_index: int = -100,
    reduction: str = "mean",
    normalizer: Optional[float] = None,
) -> Tensor:
    """Negative log-likelihood of integer targets under softmax(logits)

    `mean` divides by the number of non-ignored positions unless an explicit
    `normalizer` is given; `sum` returns the plain sum.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise DimensionError("cross_entropy", logits.shape, targets.shape)
    if reduction not in ("mean", "sum"):
        raise ConfigurationError(f"unknown reduction {reduction!r}")
    return CrossEntropy.apply(
        logits, targets=targets, ignore_index=ignore_index, reduction=reduction, normalizer=normalizer
    )
