"""Adam with L2 weight decay and per-parameter learning-rate scales."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np


class Adam:
    def __init__(
        self,
        params: Mapping[str, np.ndarray],
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
        lr_scale: Callable[[str], float] | None = None,
    ):
        if not lr > 0:
            raise ValueError("learning rate must be positive")
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.lr_scale = lr_scale or (lambda name: 1.0)
        self.m = {k: np.zeros_like(v, dtype=float) for k, v in params.items()}
        self.v = {k: np.zeros_like(v, dtype=float) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        """Update ``params`` in place.  Decay is added to the gradient before the moments."""
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, g in grads.items():
            if self.weight_decay:
                g = g + self.weight_decay * params[k]
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            lr = self.lr * self.lr_scale(k)
            params[k] = params[k] - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
