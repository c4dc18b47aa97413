"""Adam with a linearly decaying learning rate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import ContractError, Tensor


@dataclass(frozen=True)
class LinearDecay:
    """lr(t) = lr0 * (1 - t / (total_steps + 1)); stays positive through t = total_steps."""

    lr0: float = 1e-4
    total_steps: int = 1

    def __post_init__(self):
        if self.lr0 <= 0 or self.total_steps < 1:
            raise ContractError("LinearDecay needs lr0 > 0 and total_steps >= 1")

    def lr(self, t: int) -> float:
        return self.lr0 * (1.0 - min(t, self.total_steps) / (self.total_steps + 1))


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params) -> AdamState:
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState,
              sched: LinearDecay) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ContractError("adam_step: params, grads and state lengths differ")
    for p, g, m in zip(params, grads, state.m):
        if p.data.shape != np.shape(g) or p.data.shape != m.shape:
            raise ContractError(f"adam_step: shape mismatch {p.data.shape} vs {np.shape(g)}")
    lr = sched.lr(state.step)
    state.step += 1
    b1, b2, t = state.beta1, state.beta2, state.step
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class Adam:
    """Convenience wrapper: owns the parameter list, state and schedule."""

    params: list[Tensor]
    sched: LinearDecay
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.state = AdamState.for_params(self.params)

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adam_step(self.params, grads, self.state, self.sched)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
