"""SGD with momentum and L2 weight decay folded into the gradient."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .autograd import Tensor
from .errors import StateError


@dataclass
class OptimState:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocity: dict = field(default_factory=dict)

    def buffer(self, param: Tensor) -> np.ndarray:
        v = self.velocity.get(id(param))
        if v is None:
            v = np.zeros_like(param.data)
            self.velocity[id(param)] = v
        return v

    def reset_rows(self, param: Tensor, keep: np.ndarray) -> None:
        """Clear the momentum of rows that are being frozen."""
        v = self.velocity.get(id(param))
        if v is not None:
            v[~np.asarray(keep, dtype=bool)] = 0


def sgd_step(param: Tensor, state: OptimState) -> Tensor:
    """v <- momentum*v + grad + wd*param;  param <- param - lr*v  (in place)."""
    if param.grad is None:
        raise StateError(f"sgd_step on {param!r} without a gradient")
    v = state.buffer(param)
    g = param.grad
    if state.weight_decay:
        g = g + state.weight_decay * param.data
    v *= state.momentum
    v += g
    param.data -= (state.lr * v).astype(param.dtype)
    return param


class SGD:
    def __init__(self, params: Iterable[Tensor], lr: float = 0.1, momentum: float = 0.9,
                 weight_decay: float = 5e-4):
        self.params = list(params)
        self.state = OptimState(lr=lr, momentum=momentum, weight_decay=weight_decay)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                sgd_step(p, self.state)
