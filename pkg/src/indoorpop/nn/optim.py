"""Adam optimizer and parameter initialization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError, Tensor


def init_uniform(rng: np.random.Generator, shape: tuple[int, int], fan_in: int, name: str = "") -> Tensor:
    """Trainable tensor drawn from U[-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


@dataclass
class AdamState:
    """Moment estimates for one fixed, ordered parameter list."""

    params: list[Tensor]
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in self.params]
        if not self.v:
            self.v = [np.zeros_like(p.data) for p in self.params]


def adam_step(state: AdamState) -> None:
    """Apply one Adam update in place, from each parameter's ``.grad``."""
    state.step += 1
    t = state.step
    for i, p in enumerate(state.params):
        g = p.grad
        if g is None:
            raise ValueError(f"parameter {p.name!r} has no gradient buffer")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {p.name!r}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / (1.0 - state.beta1**t)
        v_hat = state.v[i] / (1.0 - state.beta2**t)
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
