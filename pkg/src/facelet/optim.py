"""Adam with bias correction, operating on Parameter leaves."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Parameter


@dataclass
class AdamState:
    """Per-parameter optimizer state (first/second moment estimates)."""

    m: np.ndarray
    v: np.ndarray
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_parameter(cls, param: Parameter, lr: float = 0.001, beta1: float = 0.9,
                      beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(m=np.zeros_like(param.data), v=np.zeros_like(param.data),
                   lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(param: Parameter, state: AdamState):
    """One bias-corrected Adam update in place; the grad is left untouched.

    Frozen parameters are rejected — updates to them are contract violations,
    not no-ops.
    """
    if not param.trainable:
        raise ValueError("adam_step on a frozen parameter")
    if state.m.shape != param.data.shape:
        raise ValueError(f"state shape {state.m.shape} does not match parameter {param.shape}")
    state.step += 1
    g = param.grad
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    if state.lr != 0.0:  # keep the value bit-identical at lr=0 (no -0.0 churn)
        m_hat = state.m / (1.0 - state.beta1 ** state.step)
        v_hat = state.v / (1.0 - state.beta2 ** state.step)
        param.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.data.dtype)
    return param, state


class Adam:
    """Convenience wrapper: one AdamState per trainable parameter."""

    def __init__(self, params, lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = [p for p in params if p.trainable]
        self.states = [AdamState.for_parameter(p, lr, beta1, beta2, eps) for p in self.params]

    @property
    def lr(self) -> float:
        return self.states[0].lr if self.states else 0.0

    def set_lr(self, lr: float):
        for s in self.states:
            s.lr = lr

    def step(self):
        for p, s in zip(self.params, self.states):
            adam_step(p, s)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
