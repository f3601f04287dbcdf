"""RMSprop over a list of :class:`~socialrec.tensor.Tensor` parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import DimensionError, DomainError, Tensor


@dataclass
class RmspropState:
    learning_rate: float = 0.001
    decay: float = 0.9
    epsilon: float = 1e-8
    cache: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise DomainError(f"decay must lie in (0, 1), got {self.decay}")
        if self.learning_rate < 0 or self.epsilon <= 0:
            raise DomainError("learning_rate must be >= 0 and epsilon > 0")


def rmsprop_step(params: list[np.ndarray], grads: list[np.ndarray | None], state: RmspropState) -> None:
    """In-place update: ``cache = decay*cache + (1-decay)*g**2``; ``p -= lr*g/(sqrt(cache)+eps)``.

    A missing gradient is treated as zero (the cache still decays).
    """
    if not state.cache:
        state.cache = [np.zeros_like(p) for p in params]
    if len(state.cache) != len(params) or len(grads) != len(params):
        raise DimensionError("rmsprop_step: params, grads and cache counts differ")
    for p, g, c in zip(params, grads, state.cache):
        if g is None:
            c *= state.decay
            continue
        if g.shape != p.shape or c.shape != p.shape:
            raise DimensionError(f"rmsprop_step: shapes {p.shape}, {g.shape}, {c.shape} disagree")
        c *= state.decay
        c += (1.0 - state.decay) * g * g
        if state.learning_rate != 0.0:
            p -= state.learning_rate * g / (np.sqrt(c) + state.epsilon)


class RMSprop:
    """Thin stateful wrapper binding a parameter list to an :class:`RmspropState`."""

    def __init__(self, params: list[Tensor], lr: float = 0.001, decay: float = 0.9, eps: float = 1e-8):
        ids = [id(p) for p in params]
        if len(set(ids)) != len(ids):
            raise DomainError("a parameter was registered more than once")
        self.params = list(params)
        self.state = RmspropState(lr, decay, eps, [np.zeros_like(p.data) for p in self.params])

    def step(self) -> None:
        rmsprop_step([p.data for p in self.params], [p.grad for p in self.params], self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
