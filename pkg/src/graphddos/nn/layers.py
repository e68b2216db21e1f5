"""Parametered layers built on the kernel ops."""

from __future__ import annotations

from typing import Tuple

import numpy as np

from . import ops
from .params import ParameterBag
from .rng import RngStream


class Linear:
    """Affine map x @ W + b with Glorot-uniform initialized W and zero b."""

    def __init__(self, bag: ParameterBag, name: str, in_dim: int, out_dim: int,
                 rng: RngStream, bias: bool = True):
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        self.w = bag.register(f"{name}.w", rng.uniform((in_dim, out_dim), -limit, limit))
        self.b = bag.register(f"{name}.b", np.zeros(out_dim)) if bias else None

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, tuple]:
        out, mm_cache = ops.matmul(x, self.w.value)
        if self.b is not None:
            out = out + self.b.value
        return out, (mm_cache,)

    def backward(self, cache: tuple, grad: np.ndarray) -> np.ndarray:
        """Accumulate parameter grads, return gradient w.r.t. the input."""
        (mm_cache,) = cache
        if self.b is not None:
            self.b.grad += grad.sum(axis=0)
        dx, dw = ops.matmul_backward(mm_cache, grad)
        self.w.grad += dw
        return dx


class LayerNorm:
    """Per-row normalization with learned scale and shift."""

    def __init__(self, bag: ParameterBag, name: str, dim: int, eps: float = 1e-5):
        self.name = name
        self.dim = dim
        self.eps = eps
        self.gamma = bag.register(f"{name}.gamma", np.ones(dim))
        self.beta = bag.register(f"{name}.beta", np.zeros(dim))

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, tuple]:
        return ops.layer_norm(x, self.gamma.value, self.beta.value, self.eps)

    def backward(self, cache: tuple, grad: np.ndarray) -> np.ndarray:
        dx, dgamma, dbeta = ops.layer_norm_backward(cache, grad)
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        return dx
