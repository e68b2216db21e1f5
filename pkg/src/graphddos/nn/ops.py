"""Differentiable array kernels.

Each op is a pure function returning ``(out, cache)``; the matching
``*_backward(cache, grad_out)`` returns gradients for the op's inputs.
There is no tape: callers compose backwards by hand in reverse order.
All arrays are float64.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from ..errors import ConfigurationError, DimensionError
from .rng import RngStream

Cache = tuple


# ---------------------------------------------------------------- linear algebra


def matmul(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, Cache]:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    return a @ b, (a, b)


def matmul_backward(cache: Cache, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a, b = cache
    return grad @ b.T, a.T @ grad


def add(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, Cache]:
    if a.shape != b.shape:
        raise DimensionError(f"add operand shapes differ: {a.shape} vs {b.shape}")
    return a + b, ()


def add_backward(cache: Cache, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return grad, grad


def mul(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, Cache]:
    if a.shape != b.shape:
        raise DimensionError(f"mul operand shapes differ: {a.shape} vs {b.shape}")
    return a * b, (a, b)


def mul_backward(cache: Cache, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a, b = cache
    return grad * b, grad * a


# ---------------------------------------------------------------- activations


def leaky_relu(x: np.ndarray, slope: float = 0.2) -> Tuple[np.ndarray, Cache]:
    out = np.where(x > 0, x, slope * x)
    return out, (x, slope)


def leaky_relu_backward(cache: Cache, grad: np.ndarray) -> np.ndarray:
    x, slope = cache
    return grad * np.where(x > 0, 1.0, slope)


def sigmoid(x: np.ndarray) -> Tuple[np.ndarray, Cache]:
    # Split on sign so neither branch exponentiates a large positive value.
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out, (out,)


def sigmoid_backward(cache: Cache, grad: np.ndarray) -> np.ndarray:
    (out,) = cache
    return grad * out * (1.0 - out)


def exp(x: np.ndarray) -> Tuple[np.ndarray, Cache]:
    out = np.exp(x)
    return out, (out,)


def exp_backward(cache: Cache, grad: np.ndarray) -> np.ndarray:
    (out,) = cache
    return grad * out


# ---------------------------------------------------------------- indexing


def gather(x: np.ndarray, idx: np.ndarray) -> Tuple[np.ndarray, Cache]:
    """Select rows of x; duplicate indices are allowed."""
    return x[idx], (x.shape, idx)


def gather_backward(cache: Cache, grad: np.ndarray) -> np.ndarray:
    x_shape, idx = cache
    out = np.zeros(x_shape, dtype=np.float64)
    np.add.at(out, idx, grad)
    return out


def scatter_add(
    values: np.ndarray, idx: np.ndarray, num_segments: int
) -> Tuple[np.ndarray, Cache]:
    """out[i] = sum of values rows whose idx equals i; rows absent from idx stay zero."""
    if values.ndim == 1:
        out = np.zeros(num_segments, dtype=np.float64)
    else:
        out = np.zeros((num_segments,) + values.shape[1:], dtype=np.float64)
    np.add.at(out, idx, values)
    return out, (idx,)


def scatter_add_backward(cache: Cache, grad: np.ndarray) -> np.ndarray:
    (idx,) = cache
    return grad[idx]


# ---------------------------------------------------------------- softmax over segments


def segment_softmax(
    scores: np.ndarray, segment_ids: np.ndarray
) -> Tuple[np.ndarray, Cache]:
    """Softmax normalized independently within each segment.

    scores is (n,) or (n, h); segment_ids is (n,) of non-negative ints.
    Segment ids need not be contiguous. Empty input yields empty output.
    Within a segment the outputs sum to 1 per column.
    """
    scores = np.asarray(scores, dtype=np.float64)
    segment_ids = np.asarray(segment_ids)
    if scores.shape[:1] != segment_ids.shape:
        raise DimensionError(
            f"scores rows {scores.shape[0] if scores.ndim else 0} != "
            f"segment ids {segment_ids.shape}"
        )
    if scores.size == 0:
        return scores.copy(), (scores.copy(), np.zeros(0, dtype=np.int64))
    _, inv = np.unique(segment_ids, return_inverse=True)
    k = int(inv.max()) + 1
    if scores.ndim == 1:
        seg_max = np.full(k, -np.inf)
        np.maximum.at(seg_max, inv, scores)
        e = np.exp(scores - seg_max[inv])
        seg_sum = np.zeros(k)
        np.add.at(seg_sum, inv, e)
        out = e / seg_sum[inv]
    else:
        seg_max = np.full((k,) + scores.shape[1:], -np.inf)
        np.maximum.at(seg_max, inv, scores)
        e = np.exp(scores - seg_max[inv])
        seg_sum = np.zeros_like(seg_max)
        np.add.at(seg_sum, inv, e)
        out = e / seg_sum[inv]
    return out, (out, inv)


def segment_softmax_backward(cache: Cache, grad: np.ndarray) -> np.ndarray:
    out, inv = cache
    if out.size == 0:
        return np.zeros_like(out)
    k = int(inv.max()) + 1
    t = out * grad
    if out.ndim == 1:
        seg_t = np.zeros(k)
    else:
        seg_t = np.zeros((k,) + out.shape[1:])
    np.add.at(seg_t, inv, t)
    return out * (grad - seg_t[inv])


# ---------------------------------------------------------------- normalization


def layer_norm(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5
) -> Tuple[np.ndarray, Cache]:
    """Normalize each row over its last axis, then scale and shift."""
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * istd
    out = gamma * xhat + beta
    return out, (xhat, istd, gamma)


def layer_norm_backward(
    cache: Cache, grad: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, istd, gamma = cache
    dgamma = (grad * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    dbeta = grad.reshape(-1, xhat.shape[-1]).sum(axis=0)
    dxhat = grad * gamma
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = istd * (dxhat - m1 - xhat * m2)
    return dx, dgamma, dbeta


# ---------------------------------------------------------------- regularization


def dropout(
    x: np.ndarray, rate: float, rng: Optional[RngStream], training: bool
) -> Tuple[np.ndarray, Cache]:
    """Inverted dropout: surviving entries are scaled by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, (None, 1.0)
    if rng is None:
        raise ConfigurationError("dropout in training mode requires an rng")
    keep = (rng.uniform(x.shape) >= rate).astype(np.float64)
    scale = 1.0 / (1.0 - rate)
    return x * keep * scale, (keep, scale)


def dropout_backward(cache: Cache, grad: np.ndarray) -> np.ndarray:
    keep, scale = cache
    if keep is None:
        return grad
    return grad * keep * scale


# ---------------------------------------------------------------- loss

_PROB_CLAMP = 1e-7


def bce_with_logits(
    logits: np.ndarray,
    targets: np.ndarray,
    weights: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray]:
    """Weighted binary cross entropy on raw scores.

    Returns (loss, dloss/dlogits). Loss is the mean of per-example weighted
    terms; probabilities are clamped away from {0, 1} before taking logs.
    """
    logits = np.asarray(logits, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if logits.shape != targets.shape:
        raise DimensionError(f"logits {logits.shape} vs targets {targets.shape}")
    n = logits.size
    if n == 0:
        raise DimensionError("empty loss batch")
    if weights is None:
        weights = np.ones(n)
    else:
        weights = np.asarray(weights, dtype=np.float64).ravel()
        if weights.shape != logits.shape:
            raise DimensionError(f"weights {weights.shape} vs logits {logits.shape}")
    p, _ = sigmoid(logits)
    pc = np.clip(p, _PROB_CLAMP, 1.0 - _PROB_CLAMP)
    per = -(targets * np.log(pc) + (1.0 - targets) * np.log(1.0 - pc))
    loss = float(np.mean(weights * per))
    dlogits = weights * (p - targets) / n
    return loss, dlogits
