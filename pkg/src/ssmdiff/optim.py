"""Bias-corrected Adam over tape leaves."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .tensor import Tensor


@dataclass
class AdamState:
    """Moment estimates and step counter for one parameter list."""

    first_moment: list
    second_moment: list
    step_count: int = 0
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def init_adam_state(params, learning_rate: float = 2e-4, beta1: float = 0.9,
                    beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    shapes = [np.asarray(p).shape for p in params]
    return AdamState(
        first_moment=[np.zeros(s) for s in shapes],
        second_moment=[np.zeros(s) for s in shapes],
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def adam_step(params, grads, state: AdamState):
    """One Adam update. Returns the new parameter arrays; mutates ``state``."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise DimensionError("params, grads and moments must align")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    new_params = []
    for i, (p, g) in enumerate(zip(params, grads)):
        p = np.asarray(p, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if p.shape != g.shape or p.shape != state.first_moment[i].shape:
            raise DimensionError(
                f"parameter {i}: shapes {p.shape}, {g.shape}, "
                f"{state.first_moment[i].shape} disagree"
            )
        m = state.first_moment[i] = b1 * state.first_moment[i] + (1.0 - b1) * g
        v = state.second_moment[i] = b2 * state.second_moment[i] + (1.0 - b2) * g * g
        m_hat = m / corr1
        v_hat = v / corr2
        new_params.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon))
    return new_params


class Adam:
    """Optimizer bound to a list of ``requires_grad`` tensors."""

    def __init__(self, params: list, learning_rate: float = 2e-4,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params: list[Tensor] = list(params)
        self.state = init_adam_state(
            [p.data for p in self.params], learning_rate, beta1, beta2, epsilon
        )

    def step(self) -> None:
        grads = [
            p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params
        ]
        updated = adam_step([p.data for p in self.params], grads, self.state)
        for p, new in zip(self.params, updated):
            p.data = np.ascontiguousarray(new)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
