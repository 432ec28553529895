"""Adam and Learning-Rate Schedule

Bias-corrected Adam over named parameters, linear warmup followed by
inverse-square-root decay, and global-norm gradient clipping.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from src.errors import CheckpointError, ConfigurationError, NumericalError
from src.model.checkpoint import EXTRA_PREFIX
from src.model.params import ModelParams

logger = logging.getLogger(__name__)


def lr_at(step: int, peak: float, warmup: int) -> float:
    """peak * step / warmup while warming up, then peak * sqrt(warmup / step)"""
    if step < 1:
        raise ConfigurationError(f"learning-rate schedule is defined for step >= 1, got {step}")
    if warmup <= 0:
        return peak
    if step <= warmup:
        return peak * step / warmup
    return peak * math.sqrt(warmup / step)


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: ModelParams, **hyper) -> "AdamState":
        m = {name: np.zeros_like(t.data) for name, t in params.items()}
        v = {name: np.zeros_like(t.data) for name, t in params.items()}
        return cls(m=m, v=v, **hyper)

    def to_extra(self) -> Dict[str, np.ndarray]:
        """Moments as checkpoint tensors optim.m.<name> / optim.v.<name>"""
        extra = {f"{EXTRA_PREFIX}m.{name}": value for name, value in self.m.items()}
        extra.update({f"{EXTRA_PREFIX}v.{name}": value for name, value in self.v.items()})
        return extra

    @classmethod
    def from_extra(cls, extra: Dict[str, np.ndarray], params: ModelParams, step: int, **hyper) -> "AdamState":
        state = cls.zeros(params, **hyper)
        state.step = step
        if step == 0:
            return state
        for name in params.names():
            try:
                state.m[name] = extra[f"{EXTRA_PREFIX}m.{name}"].copy()
                state.v[name] = extra[f"{EXTRA_PREFIX}v.{name}"].copy()
            except KeyError:
                raise CheckpointError(f"checkpoint lacks optimizer moments for {name}") from None
        return state


def adam_step(params: ModelParams, state: AdamState, lr: float):
    """One bias-corrected Adam update from each tensor's .grad

    A parameter without a gradient is updated as if its gradient were zero.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    for name, tensor in params.items():
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        if np.isnan(grad).any():
            raise NumericalError(f"NaN gradient for parameter {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * grad
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * grad * grad
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        tensor.data = tensor.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def global_grad_norm(params: ModelParams) -> float:
    return math.sqrt(sum(float(np.sum(t.grad * t.grad)) for t in params.tensors() if t.grad is not None))


def clip_grad_norm(params: ModelParams, max_norm: Optional[float]) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm"""
    norm = global_grad_norm(params)
    if max_norm and norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for tensor in params.tensors():
            if tensor.grad is not None:
                tensor.grad = tensor.grad * factor
    return norm
