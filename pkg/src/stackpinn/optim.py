"""Adam with a continuous exponential learning-rate decay schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class LrSchedule:
    """rate(step) = base_rate * decay_rate ** (step / decay_steps), non-staircase."""

    base_rate: float
    decay_rate: float
    decay_steps: int = 2000

    def __post_init__(self):
        if self.base_rate <= 0:
            raise ValueError("base_rate must be positive")
        if not 0.0 < self.decay_rate <= 1.0:
            raise ValueError("decay_rate must lie in (0, 1]")
        if self.decay_steps <= 0:
            raise ValueError("decay_steps must be positive")

    def rate(self, step: int) -> float:
        return self.base_rate * self.decay_rate ** (step / self.decay_steps)


@dataclass
class AdamState:
    """Moment estimates matching a parameter list; moments start at zero."""

    first_moment: list
    second_moment: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @staticmethod
    def for_params(params: list, beta1: float = 0.9, beta2: float = 0.999,
                   epsilon: float = 1e-8) -> "AdamState":
        return AdamState([np.zeros_like(p.data) for p in params],
                         [np.zeros_like(p.data) for p in params],
                         0, beta1, beta2, epsilon)


def adam_step(state: AdamState, params: list, grads: list, schedule: LrSchedule):
    """One Adam update (in place); rate read at the post-increment step count."""
    if len(params) != len(grads):
        raise ValueError("params/grads length mismatch")
    state.step += 1
    lr = schedule.rate(state.step)
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.data.shape != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} != param shape {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state
