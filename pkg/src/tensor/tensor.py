"""Tensor and Gradient Tape

Dense float64 tensors that record the operation producing them on a
thread-local tape. `backward` walks the tape in reverse once and leaves the
accumulated gradient on every reachable tensor that requires one.
"""

import threading
from contextlib import contextmanager
from typing import Any, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import DimensionError, TapeError

_state = threading.local()


def _current() -> "Tape":
    tape = getattr(_state, "tape", None)
    if tape is None or tape.consumed:
        tape = Tape()
        _state.tape = tape
    return tape


def new_tape() -> "Tape":
    """Start a fresh tape for this thread, dropping anything unconsumed"""
    _state.tape = Tape()
    return _state.tape


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Run operations without recording them"""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum out the dimensions numpy broadcasting added or stretched"""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Value-semantic float64 array with optional gradient tracking"""

    def __init__(self, data: Any, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.tape_node: Optional["TapeNode"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError("item", self.shape)
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        backward(self)

    def __add__(self, other):
        from src.tensor import functional as F
        return F.add(self, other)

    def __radd__(self, other):
        from src.tensor import functional as F
        return F.add(other, self)

    def __sub__(self, other):
        from src.tensor import functional as F
        return F.sub(self, other)

    def __mul__(self, other):
        from src.tensor import functional as F
        return F.mul(self, other)

    def __rmul__(self, other):
        from src.tensor import functional as F
        return F.mul(other, self)

    def __neg__(self):
        from src.tensor import functional as F
        return F.scale(self, -1.0)

    def __matmul__(self, other):
        from src.tensor import functional as F
        return F.matmul(self, other)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"


class Function:
    """Base class for differentiable operations

    `forward` receives raw arrays and returns the output array; `backward`
    receives the output gradient and returns one gradient (or None) per
    tensor input, in order.
    """

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *tensors: Tensor, **kwargs: Any) -> Tensor:
        fn = cls()
        out = Tensor(fn.forward(*(t.data for t in tensors), **kwargs))
        if is_grad_enabled() and any(t.requires_grad for t in tensors):
            out.requires_grad = True
            out.tape_node = _current().record(fn, tensors, out)
        return out


class TapeNode:
    __slots__ = ("fn", "inputs", "output", "tape")

    def __init__(self, fn: Function, inputs: Sequence[Tensor], output: Tensor, tape: "Tape"):
        self.fn = fn
        self.inputs = tuple(inputs)
        self.output = output
        self.tape = tape


class Tape:
    """Ordered record of the operations of one forward pass"""

    def __init__(self):
        self.nodes: List[TapeNode] = []
        self.consumed = False

    def record(self, fn: Function, inputs: Sequence[Tensor], output: Tensor) -> TapeNode:
        node = TapeNode(fn, inputs, output, self)
        self.nodes.append(node)
        return node

    def __len__(self):
        return len(self.nodes)


def backward(loss: Tensor):
    """Propagate d(loss)/d(tensor) to every reachable tensor requiring grad"""
    if loss.data.size != 1 or loss.ndim != 0:
        raise TapeError(f"backward expects a scalar loss, got shape {loss.shape}")
    node = loss.tape_node
    if node is None:
        raise TapeError("loss was not recorded on a tape (no input requires grad?)")
    tape = node.tape
    if tape.consumed:
        raise TapeError("tape already consumed by an earlier backward; re-run the forward pass")

    reachable = set()
    stack = [node]
    while stack:
        current = stack.pop()
        if id(current) in reachable:
            continue
        reachable.add(id(current))
        stack.extend(t.tape_node for t in current.inputs if t.tape_node is not None)

    pending = {id(loss): np.ones_like(loss.data)}
    for current in reversed(tape.nodes):
        if id(current) not in reachable:
            continue
        grad = pending.pop(id(current.output), None)
        if grad is None:
            continue
        current.output.grad = grad
        input_grads = current.fn.backward(grad)
        for tensor, input_grad in zip(current.inputs, input_grads):
            if input_grad is None or not tensor.requires_grad:
                continue
            input_grad = unbroadcast(input_grad, tensor.shape)
            if tensor.tape_node is None:
                tensor.grad = input_grad.copy() if tensor.grad is None else tensor.grad + input_grad
            elif id(tensor) in pending:
                pending[id(tensor)] = pending[id(tensor)] + input_grad
            else:
                pending[id(tensor)] = input_grad

    tape.consumed = True
    tape.nodes.clear()
