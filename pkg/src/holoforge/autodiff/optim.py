"""First-order optimizers and learning-rate schedules."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tensor import Tensor


class Adam:
    """Adam over a list of tensors; one learning rate per parameter group is supported."""

    def __init__(self, params: Sequence[Tensor], lr: float | Sequence[float] = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.99), eps: float = 1e-8):
        self.params = list(params)
        lrs = [lr] * len(self.params) if np.isscalar(lr) else list(lr)
        if len(lrs) != len(self.params):
            raise ValueError("one learning rate per parameter")
        self.lrs = [float(v) for v in lrs]
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data, dtype=np.float64) for p in self.params]

    def proposal(self, scale: float = 1.0) -> list[np.ndarray]:
        """Advance the moments with the current grads and return the update steps."""
        b1, b2 = self.betas
        self.t += 1
        steps = []
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * np.abs(g) ** 2
            mhat = self.m[i] / (1 - b1 ** self.t)
            vhat = self.v[i] / (1 - b2 ** self.t)
            steps.append(-scale * self.lrs[i] * mhat / (np.sqrt(vhat) + self.eps))
        return steps

    def step(self, scale: float = 1.0) -> None:
        for p, d in zip(self.params, self.proposal(scale)):
            p.data = p.data + d

    def set_lr(self, lr: float) -> None:
        self.lrs = [float(lr)] * len(self.params)


def cosine_lr(initial: float, step: int, total: int, floor: float = 1e-6) -> float:
    """Cosine-annealed rate from ``initial`` at step 0 to ``floor`` at ``total``."""
    if total <= 0:
        return initial
    frac = min(max(step / total, 0.0), 1.0)
    return max(initial * 0.5 * (1.0 + math.cos(math.pi * frac)), floor)
