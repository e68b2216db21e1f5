"""Attention top-k pooling per node type, and the index-preserving unpool."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..errors import ConsistencyError
from ..graph import EDGE_ENDPOINTS
from ..nn import Linear, ParameterBag, RngStream, ops
from .conv import NODE_TYPES, GraphView


def kept_count(ratio: float, n: int) -> int:
    if n == 0:
        return 0
    return max(1, math.ceil(ratio * n))


@dataclass
class PoolLevel:
    """Kept indices (into the pre-pool ordering) and pre-pool sizes for one level."""

    kept: Dict[str, np.ndarray]
    pre_counts: Dict[str, int]

    def check(self) -> None:
        for k in NODE_TYPES:
            idx = self.kept[k]
            n = self.pre_counts[k]
            if idx.size and (idx[0] < 0 or idx[-1] >= n):
                raise ConsistencyError(f"{k} kept index out of range")
            if np.any(np.diff(idx) <= 0):
                raise ConsistencyError(f"{k} kept indices not strictly increasing")


@dataclass
class PoolRecord:
    levels: List[PoolLevel] = field(default_factory=list)

    def check(self) -> None:
        for lv in self.levels:
            lv.check()


class AttentionPool:
    """Score nodes with a per-type multi-head linear scorer (heads averaged),
    keep the top k = max(1, ceil(ratio * n)) by score, gate kept features by
    sigmoid of the noise-free score, and induce the surviving subgraph.
    Training adds Gaussian noise to the selection scores only.
    """

    def __init__(self, bag: ParameterBag, name: str, hidden: int, heads: int,
                 ratio: float, noise_std: float, rng: RngStream):
        self.ratio = ratio
        self.noise_std = noise_std
        self.heads = heads
        self.scorer = {
            k: Linear(bag, f"{name}.{k}.scorer", hidden, heads, rng)
            for k in NODE_TYPES
        }

    def forward(self, view: GraphView, h: Dict[str, np.ndarray], training: bool,
                rng: Optional[RngStream]
                ) -> Tuple[GraphView, Dict[str, np.ndarray], PoolLevel, dict]:
        new_h = {}
        kept = {}
        caches = {}
        for k in NODE_TYPES:
            x = h[k]
            n = x.shape[0]
            if n == 0:
                kept[k] = np.zeros(0, dtype=np.int64)
                new_h[k] = x
                caches[k] = None
                continue
            raw, c_sc = self.scorer[k].forward(x)
            clean = raw.mean(axis=1)
            selection = clean
            if training and self.noise_std > 0:
                if rng is None:
                    raise ConsistencyError("training-mode pooling requires an rng")
                selection = clean + rng.normal((n,), self.noise_std)
            kcount = kept_count(self.ratio, n)
            # Stable argsort on the negated scores: ties keep the lower index.
            order = np.argsort(-selection, kind="stable")[:kcount]
            keep = np.sort(order).astype(np.int64)
            gate, c_sg = ops.sigmoid(clean[keep])
            new_h[k] = x[keep] * gate[:, None]
            kept[k] = keep
            caches[k] = (c_sc, c_sg, keep, x, gate, n)
        level = PoolLevel(
            kept=kept,
            pre_counts={"host": view.n_host, "flow": view.n_flow},
        )
        new_view = _induce(view, kept)
        return new_view, new_h, level, caches

    def backward(self, caches: dict, g: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        dh = {}
        for k in NODE_TYPES:
            cache = caches[k]
            if cache is None:
                dh[k] = g[k]
                continue
            c_sc, c_sg, keep, x, gate, n = cache
            dx = np.zeros_like(x)
            dx[keep] = g[k] * gate[:, None]
            dgate = np.sum(g[k] * x[keep], axis=1)
            dclean_keep = ops.sigmoid_backward(c_sg, dgate)
            dclean = np.zeros(n)
            dclean[keep] = dclean_keep
            draw = np.tile(dclean[:, None] / self.heads, (1, self.heads))
            dx += self.scorer[k].backward(c_sc, draw)
            dh[k] = dx
        return dh


def _induce(view: GraphView, kept: Dict[str, np.ndarray]) -> GraphView:
    """Subgraph on the kept nodes: an edge survives iff both endpoints do."""
    pos = {}
    for k in NODE_TYPES:
        p = np.full(view.count(k), -1, dtype=np.int64)
        p[kept[k]] = np.arange(kept[k].size)
        pos[k] = p
    edges = {}
    for t, arr in view.edges.items():
        sk, dk = EDGE_ENDPOINTS[t]
        fr = pos[sk][arr[0]]
        to = pos[dk][arr[1]]
        alive = (fr >= 0) & (to >= 0)
        edges[t] = np.vstack([fr[alive], to[alive]])
    return GraphView(n_host=kept["host"].size, n_flow=kept["flow"].size, edges=edges)


class Unpool:
    """Scatter coarse rows back to their stored indices, add the skip
    features captured before pooling, then a per-type linear merge.
    """

    def __init__(self, bag: ParameterBag, name: str, hidden: int, rng: RngStream):
        self.merge = {
            k: Linear(bag, f"{name}.{k}.merge", hidden, hidden, rng)
            for k in NODE_TYPES
        }

    def forward(self, h_coarse: Dict[str, np.ndarray], level: PoolLevel,
                skip: Dict[str, np.ndarray]) -> Tuple[Dict[str, np.ndarray], dict]:
        out = {}
        caches = {}
        for k in NODE_TYPES:
            n = level.pre_counts[k]
            keep = level.kept[k]
            if keep.size and (keep.min() < 0 or keep.max() >= n):
                raise ConsistencyError(f"unpool: stored {k} indices out of range")
            if skip[k].shape[0] != n:
                raise ConsistencyError(
                    f"unpool: skip has {skip[k].shape[0]} {k} rows, expected {n}")
            full = np.zeros((n, h_coarse[k].shape[1]))
            full[keep] = h_coarse[k]
            comb = full + skip[k]
            merged, c_mg = self.merge[k].forward(comb)
            out[k] = merged
            caches[k] = (c_mg, keep)
        return out, caches

    def backward(self, caches: dict, g: Dict[str, np.ndarray]
                 ) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
        """Returns (gradient into coarse features, gradient into skip features)."""
        d_coarse = {}
        d_skip = {}
        for k in NODE_TYPES:
            c_mg, keep = caches[k]
            dcomb = self.merge[k].backward(c_mg, g[k])
            d_skip[k] = dcomb
            d_coarse[k] = dcomb[keep]
        return d_coarse, d_skip
