"""Finite-Difference Gradient Checks

Central-difference oracle for tape gradients plus a registry of named
checks covering every differentiable operation and the end-to-end model.
The same registry backs the test-suite and the `gradcheck` command.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.tensor import functional as F
from src.tensor.tensor import Tensor, new_tape, no_grad

logger = logging.getLogger(__name__)

OP_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3
# Gradient norms below this are finite-difference noise at eps=1e-5
NOISE_FLOOR = 1e-7
# Tiny model weights are drawn at 10x the training init so every tensor
# carries gradients well above the noise floor
END_TO_END_INIT_SCALE = 10.0

CheckCase = Tuple[Callable[[], Tensor], Sequence[Tensor]]


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error)) and self.max_rel_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    return float(diff / max(scale, NOISE_FLOOR))


def numerical_gradient(
    fn: Callable[[], Tensor],
    tensor: Tensor,
    eps: float = 1e-5,
    indices: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Central differences of scalar fn() w.r.t. tensor (flat indices subset)"""
    if not tensor.data.flags.c_contiguous:
        tensor.data = np.ascontiguousarray(tensor.data)
    flat = tensor.data.reshape(-1)
    indices = range(flat.size) if indices is None else indices
    grad = np.zeros(len(indices))
    with no_grad():
        for slot, index in enumerate(indices):
            original = flat[index]
            flat[index] = original + eps
            plus = fn().item()
            flat[index] = original - eps
            minus = fn().item()
            flat[index] = original
            grad[slot] = (plus - minus) / (2 * eps)
    return grad


def check_gradients(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Largest per-input relative error between tape and finite differences"""
    for tensor in inputs:
        tensor.zero_grad()
    new_tape()
    fn().backward()

    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for tensor in inputs:
        analytic = tensor.grad.reshape(-1) if tensor.grad is not None else np.zeros(tensor.size)
        indices = None
        if max_coords is not None and tensor.size > max_coords:
            indices = np.sort(rng.choice(tensor.size, size=max_coords, replace=False))
            analytic = analytic[indices]
        numeric = numerical_gradient(fn, tensor, eps=eps, indices=indices)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def _param(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _projected(out_fn: Callable[[], Tensor], rng: np.random.Generator, shape) -> Callable[[], Tensor]:
    """Reduce a tensor-valued function to a scalar with a fixed random projection"""
    weights = Tensor(rng.standard_normal(shape))
    return lambda: F.sum(F.mul(out_fn(), weights))


GRADIENT_CHECKS: Dict[str, Tuple[Callable[[np.random.Generator], CheckCase], float, Optional[int]]] = {}


def register_check(name: str, tolerance: float = OP_TOLERANCE, max_coords: Optional[int] = None):
    """Add a named check to the suite; max_coords samples large inputs"""

    def decorator(builder):
        GRADIENT_CHECKS[name] = (builder, tolerance, max_coords)
        return builder

    return decorator


@register_check("matmul")
def _check_matmul(rng):
    a, b = _param(rng, 4, 5), _param(rng, 5, 3)
    return (lambda: F.sum(F.matmul(a, b))), [a, b]


@register_check("matmul_batched")
def _check_matmul_batched(rng):
    a, b = _param(rng, 2, 3, 4), _param(rng, 4, 2)
    return _projected(lambda: F.matmul(a, b), rng, (2, 3, 2)), [a, b]


@register_check("add")
def _check_add(rng):
    a, b = _param(rng, 3, 4), _param(rng, 4)
    return _projected(lambda: F.add(a, b), rng, (3, 4)), [a, b]


@register_check("mul")
def _check_mul(rng):
    a, b = _param(rng, 3, 4), _param(rng, 3, 4)
    return _projected(lambda: F.mul(a, b), rng, (3, 4)), [a, b]


@register_check("scale")
def _check_scale(rng):
    x = _param(rng, 5)
    return _projected(lambda: F.scale(x, -2.5), rng, (5,)), [x]


@register_check("gelu")
def _check_gelu(rng):
    x = _param(rng, 2, 6)
    return _projected(lambda: F.gelu(x), rng, (2, 6)), [x]


@register_check("dropout")
def _check_dropout(rng):
    x = _param(rng, 4, 4)
    seed = int(rng.integers(1 << 30))
    return _projected(lambda: F.dropout(x, 0.3, True, np.random.default_rng(seed)), rng, (4, 4)), [x]


@register_check("softmax")
def _check_softmax(rng):
    x = Tensor(np.array([0.3, -0.7, 1.1]), requires_grad=True)
    return _projected(lambda: F.softmax(x, axis=-1), rng, (3,)), [x]


@register_check("softmax_masked")
def _check_softmax_masked(rng):
    x = _param(rng, 3, 4)
    mask = np.tril(np.ones((3, 4), dtype=bool))
    return _projected(lambda: F.softmax(x, axis=-1, mask=mask), rng, (3, 4)), [x]


@register_check("layer_norm")
def _check_layer_norm(rng):
    x, gain, bias = _param(rng, 2, 4), _param(rng, 4), _param(rng, 4)
    return _projected(lambda: F.layer_norm(x, gain, bias), rng, (2, 4)), [x, gain, bias]


@register_check("embedding_lookup")
def _check_embedding(rng):
    table = _param(rng, 6, 3)
    ids = np.array([2, 2, 5, 0])
    return _projected(lambda: F.embedding_lookup(table, ids), rng, (4, 3)), [table]


@register_check("cross_entropy")
def _check_cross_entropy(rng):
    logits = _param(rng, 3, 5)
    targets = np.array([1, 4, 0])
    return (lambda: F.cross_entropy(logits, targets)), [logits]


@register_check("cross_entropy_ignore")
def _check_cross_entropy_ignore(rng):
    logits = _param(rng, 4, 5)
    targets = np.array([1, -100, 3, -100])
    return (lambda: F.cross_entropy(logits, targets, ignore_index=-100)), [logits]


@register_check("reshape_transpose_concat")
def _check_structural(rng):
    a, b = _param(rng, 2, 3), _param(rng, 2, 3)

    def fn():
        joined = F.concat([a, b], axis=0)
        return F.transpose(F.reshape(joined, (3, 4)), (1, 0))

    return _projected(fn, rng, (4, 3)), [a, b]


@register_check("diamond")
def _check_diamond(rng):
    x = _param(rng, 3)
    return (lambda: F.sum(F.mul(F.gelu(x), x))), [x]


@register_check("multi_head_attention")
def _check_attention(rng):
    from src.model.attention import AttentionWeights, RelativeBias, causal_mask, multi_head

    dim, heads = 4, 2
    weights = AttentionWeights(*(_param(rng, dim, dim) if i % 2 == 0 else _param(rng, dim) for i in range(8)))
    table = _param(rng, 8, heads)
    bias = RelativeBias(table, num_buckets=8, max_distance=16, bidirectional=False)
    x = _param(rng, 3, dim)
    offsets = np.arange(3)[None, :] - np.arange(3)[:, None]

    def fn():
        return multi_head(x, x, x, causal_mask(3), weights, heads, bias=bias.gather(offsets))

    return _projected(fn, rng, (3, dim)), [x, table, *weights.tensors()]


@register_check("prophetnet_end_to_end", tolerance=MODEL_TOLERANCE, max_coords=6)
def _check_model(rng):
    from src.data.batcher import Seq2SeqExample, collate
    from src.model.config import ModelConfig
    from src.model.prophetnet import ProphetNet, alpha_weights

    config = ModelConfig(
        vocab_size=11, layers_enc=1, layers_dec=1, hidden=8, ffn=16, heads=2,
        n=2, gamma=1.0, max_len=8, dropout=0.0,
    )
    model = ProphetNet(config, seed=int(rng.integers(1 << 30)))
    for name, tensor in model.params.items():
        if not name.endswith((".gain", ".bias")) or name.endswith("rel_bias"):
            tensor.data = tensor.data * END_TO_END_INIT_SCALE
    example = Seq2SeqExample(source=[5, 6, 7, 8, 9], target=[6, 7, 8, 9])
    batch = collate([example], append_eos=True)
    alpha = alpha_weights(config.gamma, config.n)

    def fn():
        return model.forward_loss(batch, alpha).loss

    return fn, list(model.params.tensors())


def run_gradcheck_suite(seed: int = 0, names: Optional[Sequence[str]] = None) -> List[GradCheckResult]:
    """Run the registered checks and return one result per check"""
    results = []
    for name, (builder, tolerance, max_coords) in GRADIENT_CHECKS.items():
        if names is not None and name not in names:
            continue
        rng = np.random.default_rng([seed, len(results)])
        fn, inputs = builder(rng)
        error = check_gradients(fn, inputs, max_coords=max_coords, rng=rng)
        result = GradCheckResult(name=name, max_rel_error=error, tolerance=tolerance)
        level = logging.INFO if result.passed else logging.ERROR
        logger.log(level, f"[GRADCHECK] {name}: rel. error {error:.2e} (tolerance {tolerance:.0e})")
        results.append(result)
    return results
