"""
Adam optimizer, global-norm clipping and the linear-decay learning-rate schedule
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from errors import InvalidArgumentError, NonFiniteError, ShapeError

Params = Dict[str, np.ndarray]


@dataclass
class OptimizerState:
    """Adam moments per parameter plus the step counter"""
    base_lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Params, base_lr: float, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "OptimizerState":
        return cls(
            base_lr=base_lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
            m={name: np.zeros_like(value) for name, value in params.items()},
            v={name: np.zeros_like(value) for name, value in params.items()},
        )


def adam_step(params: Params, grads: Params, state: OptimizerState,
              lr: float) -> Tuple[Params, OptimizerState]:
    """One bias-corrected Adam update; returns new parameter and state objects"""
    if lr < 0:
        raise InvalidArgumentError(f"learning rate must be >= 0, got {lr}")

    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** step
    correction2 = 1.0 - b2 ** step

    new_params, new_m, new_v = {}, {}, {}
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(value)
        if grad.shape != value.shape or state.m[name].shape != value.shape:
            raise ShapeError(f"adam_step:{name}", value.shape, grad.shape, state.m[name].shape)
        if not np.isfinite(grad).all():
            raise NonFiniteError(f"adam_step:{name}", "gradient")

        m = b1 * state.m[name] + (1.0 - b1) * grad
        v = b2 * state.v[name] + (1.0 - b2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        new_params[name] = value - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name] = m
        new_v[name] = v

    new_state = OptimizerState(
        base_lr=state.base_lr, beta1=b1, beta2=b2, eps=state.eps,
        step=step, m=new_m, v=new_v,
    )
    return new_params, new_state


def linear_decay_lr(step: int, total_steps: int, base_lr: float) -> float:
    """base_lr * (1 - step / total_steps), clamped at zero"""
    if total_steps < 1:
        raise InvalidArgumentError(f"total_steps must be >= 1, got {total_steps}")
    if step < 0 or step > total_steps:
        raise InvalidArgumentError(f"step {step} outside [0, {total_steps}]")
    return max(0.0, base_lr * (1.0 - step / total_steps))


def clip_by_global_norm(grads: Params, max_norm: float) -> Tuple[Params, float]:
    """Scale all gradients together so their joint L2 norm is at most max_norm"""
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm <= 0 or norm <= max_norm:
        return grads, norm
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}, norm
