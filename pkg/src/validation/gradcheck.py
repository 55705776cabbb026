"""
Central finite-difference gradients for checking backward rules.

`fn` is a zero-argument callable that rebuilds a scalar Tensor from the
tensors being checked, so perturbing their `.data` in place changes it.
"""

from typing import Callable, List, Sequence

import numpy as np

from autograd.tensor import GradientTape, Tensor, backward


def analytic_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor]) -> List[np.ndarray]:
    for t in inputs:
        t.requires_grad = True
        t.zero_grad()
    with GradientTape():
        out = fn()
    backward(out)
    return [t.grad if t.grad is not None else np.zeros(t.shape) for t in inputs]


def numerical_gradient(fn: Callable[[], Tensor], tensor: Tensor, h: float = 1e-6) -> np.ndarray:
    grad = np.zeros(tensor.shape)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = fn().item()
        flat[i] = original - h
        minus = fn().item()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a|| + ||b||, 1e-12)"""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-6) -> float:
    """Largest relative error between analytic and numerical gradients over `inputs`."""
    analytic = analytic_gradients(fn, inputs)
    errors = [relative_error(g, numerical_gradient(fn, t, h)) for g, t in zip(analytic, inputs)]
    return max(errors)
