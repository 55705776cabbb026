"""
tensor.py

Dense float64 tensor with a reverse-mode gradient tape.

Values are plain NumPy arrays. Operations only record themselves while a
GradientTape is active and at least one input requires a gradient, so
evaluation code runs tape-free at no extra cost.
"""

import logging
import threading
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class GradientError(RuntimeError):
    """Raised when backward cannot run on the given tensor."""


ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_DEBUG = False
_local = threading.local()


def set_debug(flag: bool) -> None:
    """Enable the finite-value assertion after every forward op."""
    global _DEBUG
    _DEBUG = bool(flag)


def debug_enabled() -> bool:
    return _DEBUG


class Tensor:
    """
    N-dimensional float64 array with an optional gradient buffer.

    Image-like data uses the N x C x H x W layout. `tape_id` is the index of
    the node that produced this tensor on its tape (None for leaves).
    """

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        array = np.asarray(data, dtype=np.float64)
        # 0-d scalars keep shape ()
        self.data = array if array.flags.c_contiguous else np.ascontiguousarray(array)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.tape_id: Optional[int] = None
        self._tape: Optional["GradientTape"] = None

    # ----------------------------
    # Introspection
    # ----------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        """Copy of the values with no tape history."""
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # ----------------------------
    # Arithmetic
    # ----------------------------
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self) -> "Tensor":
        return tensor_mean(self)

    def log(self, eps: float = 0.0) -> "Tensor":
        return log(self, eps)


# ============================================================================
# Gradient tape
# ============================================================================

@dataclass
class TapeNode:
    """One recorded operation."""
    node_id: int
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class GradientTape:
    """
    Append-only record of operations, used as a context manager.

    Tapes are per thread: entering a tape makes it the active tape of the
    calling thread only.
    """

    def __init__(self):
        self.nodes: List[TapeNode] = []

    def __enter__(self) -> "GradientTape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor,
               backward_fn: BackwardFn) -> TapeNode:
        node = TapeNode(len(self.nodes), op, inputs, output, backward_fn)
        output.tape_id = node.node_id
        output._tape = self
        self.nodes.append(node)
        return node


def _tape_stack() -> List[GradientTape]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = []
        _local.tapes = stack
    return stack


def active_tape() -> Optional[GradientTape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def make_result(op: str, data: np.ndarray, inputs: Tuple[Tensor, ...],
                backward_fn: BackwardFn) -> Tensor:
    """Wrap an op's forward value and record it on the active tape."""
    out = Tensor(data)
    if _DEBUG and not np.all(np.isfinite(out.data)):
        if all(np.all(np.isfinite(t.data)) for t in inputs):
            raise FloatingPointError(f"{op} produced non-finite values from finite inputs")
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(op, inputs, out, backward_fn)
    return out


def backward(loss: Tensor) -> None:
    """
    Populate `.grad` of every leaf tensor reachable from `loss`.

    Nodes are visited once each, in reverse recording order. Gradients
    accumulate into existing buffers, so callers zero them between steps.
    """
    if loss.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None or loss.tape_id is None:
        raise GradientError("loss was not recorded on a gradient tape")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: Dict[int, Tensor] = {}

    for node in reversed(tape.nodes[: loss.tape_id + 1]):
        upstream = grads.pop(id(node.output), None)
        if upstream is None:
            continue
        input_grads = node.backward(upstream)
        for inp, grad in zip(node.inputs, input_grads):
            if grad is None or not inp.requires_grad:
                continue
            key = id(inp)
            grads[key] = grads[key] + grad if key in grads else grad
            if inp._tape is not tape:
                leaves[key] = inp

    for key, leaf in leaves.items():
        grad = grads.get(key)
        if grad is None:
            continue
        grad = np.asarray(grad, dtype=np.float64).reshape(leaf.shape)
        leaf.grad = grad.copy() if leaf.grad is None else leaf.grad + grad


# ============================================================================
# Elementwise arithmetic
# ============================================================================

def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum out broadcast dimensions so `grad` matches `shape`."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result("add", a.data + b.data, (a, b), _backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_result("sub", a.data - b.data, (a, b), _backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return make_result("mul", a.data * b.data, (a, b), _backward)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        grad_a = unbroadcast(g / b.data, a.shape)
        grad_b = unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return grad_a, grad_b

    return make_result("div", a.data / b.data, (a, b), _backward)


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return make_result("neg", -a.data, (a,), lambda g: (-g,))


def tensor_sum(a: ArrayLike) -> Tensor:
    a = as_tensor(a)

    def _backward(g):
        return (np.full(a.shape, g.item()),)

    return make_result("sum", np.asarray(a.data.sum()), (a,), _backward)


def tensor_mean(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    count = max(a.size, 1)

    def _backward(g):
        return (np.full(a.shape, g.item() / count),)

    return make_result("mean", np.asarray(a.data.sum() / count), (a,), _backward)


def log(a: ArrayLike, eps: float = 0.0) -> Tensor:
    """Natural log of `a + eps`."""
    a = as_tensor(a)
    shifted = a.data + eps

    def _backward(g):
        return (g / shifted,)

    return make_result("log", np.log(shifted), (a,), _backward)
