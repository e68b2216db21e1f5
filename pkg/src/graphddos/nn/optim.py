"""Adam optimizer with bias-corrected moment estimates."""

from __future__ import annotations

from typing import Dict

import numpy as np

from ..errors import ConfigurationError
from .params import ParameterBag


class Adam:
    def __init__(self, bag: ParameterBag, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ConfigurationError(f"betas must lie in [0, 1): {beta1}, {beta2}")
        self.bag = bag
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: Dict[str, np.ndarray] = {}
        self._v: Dict[str, np.ndarray] = {}
        for name, p in bag.items():
            self._m[name] = np.zeros_like(p.value)
            self._v[name] = np.zeros_like(p.value)

    def step(self) -> None:
        """Apply one update from the gradients currently held in the bag."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.bag.items():
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
