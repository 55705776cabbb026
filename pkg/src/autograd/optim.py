"""
optim.py

SGD with momentum, Adam, and the polynomial learning-rate decay used for
all three networks.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from autograd.tensor import ShapeError, Tensor

SGD = "sgd"
ADAM = "adam"


@dataclass
class OptimizerState:
    """
    Optimizer hyperparameters, per-parameter buffers and step counter.

    Buffers are created lazily on the first step and keyed by name
    ("momentum" for SGD, "m"/"v" for Adam), one array per parameter.
    """
    kind: str
    lr_base: float
    lr_end: float
    total_steps: int
    power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    buffers: Dict[str, List[np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in (SGD, ADAM):
            raise ValueError(f"Unknown optimizer kind: {self.kind}")
        if self.lr_end > self.lr_base:
            raise ValueError(f"lr_end ({self.lr_end}) exceeds lr_base ({self.lr_base})")

    @property
    def lr(self) -> float:
        return poly_lr(self.step, self)


def poly_lr(step: int, cfg: OptimizerState) -> float:
    """lr(t) = lr_end + (lr_base - lr_end) * (1 - t/T) ** power, t clamped to [0, T]."""
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    if cfg.total_steps <= 0:
        return cfg.lr_base
    t = min(step, cfg.total_steps)
    return cfg.lr_end + (cfg.lr_base - cfg.lr_end) * (1.0 - t / cfg.total_steps) ** cfg.power


def _check(params: Sequence[Tensor], grads: Sequence[np.ndarray]) -> None:
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if np.shape(g) != p.shape:
            raise ShapeError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")


def _buffers(state: OptimizerState, name: str, params: Sequence[Tensor]) -> List[np.ndarray]:
    bufs = state.buffers.get(name)
    if bufs is None:
        bufs = [np.zeros(p.shape) for p in params]
        state.buffers[name] = bufs
    elif len(bufs) != len(params) or any(b.shape != p.shape for b, p in zip(bufs, params)):
        raise ShapeError(f"optimizer buffer '{name}' does not match the parameter list")
    return bufs


def sgd_momentum_step(params: Sequence[Tensor], grads: Sequence[np.ndarray],
                      state: OptimizerState) -> float:
    """
    v <- momentum * v + (g + wd * p);  p <- p - lr * v

    Returns the learning rate used.
    """
    if state.kind != SGD:
        raise ValueError(f"sgd_momentum_step called with a {state.kind} state")
    _check(params, grads)
    lr = poly_lr(state.step, state)
    velocity = _buffers(state, "momentum", params)
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        velocity[i] = state.momentum * velocity[i] + g
        p.data = p.data - lr * velocity[i]
    state.step += 1
    return lr


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray],
              state: OptimizerState) -> float:
    """Adam with bias correction. Returns the learning rate used."""
    if state.kind != ADAM:
        raise ValueError(f"adam_step called with a {state.kind} state")
    _check(params, grads)
    lr = poly_lr(state.step, state)
    first = _buffers(state, "m", params)
    second = _buffers(state, "v", params)
    t = state.step + 1
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        first[i] = state.beta1 * first[i] + (1.0 - state.beta1) * g
        second[i] = state.beta2 * second[i] + (1.0 - state.beta2) * g * g
        m_hat = first[i] / correction1
        v_hat = second[i] / correction2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    state.step = t
    return lr


def step_parameters(params: Sequence[Tensor], state: OptimizerState) -> float:
    """Run one optimizer step on `params` using their `.grad` buffers (missing = zero)."""
    grads = [p.grad if p.grad is not None else np.zeros(p.shape) for p in params]
    if state.kind == SGD:
        return sgd_momentum_step(params, grads, state)
    return adam_step(params, grads, state)


def make_optimizer(kind: str, lr_base: float, lr_end: float, total_steps: int,
                   power: float = 0.9, momentum: float = 0.9, weight_decay: float = 0.0,
                   betas: Optional[Sequence[float]] = None, eps: float = 1e-8) -> OptimizerState:
    beta1, beta2 = betas if betas is not None else (0.9, 0.999)
    return OptimizerState(
        kind=kind, lr_base=lr_base, lr_end=lr_end, total_steps=total_steps,
        power=power, momentum=momentum, weight_decay=weight_decay,
        beta1=beta1, beta2=beta2, eps=eps,
    )
