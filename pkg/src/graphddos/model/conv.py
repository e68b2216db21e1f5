"""Residual heterogeneous attention convolution over the typed edge sets."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from ..graph import EDGE_ENDPOINTS, EDGE_TYPES
from ..nn import LayerNorm, Linear, ParameterBag, RngStream, ops

NODE_TYPES = ("host", "flow")


@dataclass
class GraphView:
    """Topology-only view the model layers operate on."""

    n_host: int
    n_flow: int
    edges: Dict[str, np.ndarray]  # type -> (2, E)

    def count(self, kind: str) -> int:
        return self.n_host if kind == "host" else self.n_flow


class HeteroAttentionConv:
    """One conv layer: per edge type, multi-head attention aggregation into
    the destination nodes; per node, incident edge-type contributions are
    summed; residual add, then per-type layer norm and dropout. Nodes with
    no in-edges keep their residual path untouched.
    """

    def __init__(self, bag: ParameterBag, name: str, hidden: int, heads: int,
                 leaky_slope: float, dropout_rate: float, rng: RngStream):
        if hidden % heads != 0:
            raise ValueError("hidden width must divide into heads")
        self.hidden = hidden
        self.heads = heads
        self.head_dim = hidden // heads
        self.slope = leaky_slope
        self.dropout_rate = dropout_rate
        self.w_src: Dict[str, Linear] = {}
        self.w_dst: Dict[str, Linear] = {}
        self.a_src = {}
        self.a_dst = {}
        self.merge: Dict[str, Linear] = {}
        limit = np.sqrt(6.0 / (self.head_dim + 1))
        for t in EDGE_TYPES:
            self.w_src[t] = Linear(bag, f"{name}.{t}.w_src", hidden, hidden, rng, bias=False)
            self.w_dst[t] = Linear(bag, f"{name}.{t}.w_dst", hidden, hidden, rng, bias=False)
            self.a_src[t] = bag.register(
                f"{name}.{t}.a_src", rng.uniform((heads, self.head_dim), -limit, limit))
            self.a_dst[t] = bag.register(
                f"{name}.{t}.a_dst", rng.uniform((heads, self.head_dim), -limit, limit))
            self.merge[t] = Linear(bag, f"{name}.{t}.merge", hidden, hidden, rng)
        self.norm = {k: LayerNorm(bag, f"{name}.ln_{k}", hidden) for k in NODE_TYPES}

    def forward(self, view: GraphView, h: Dict[str, np.ndarray], training: bool,
                rng: Optional[RngStream]) -> Tuple[Dict[str, np.ndarray], tuple]:
        agg = {k: np.zeros_like(h[k]) for k in NODE_TYPES}
        type_caches = {}
        for t in EDGE_TYPES:
            arr = view.edges.get(t)
            if arr is None or arr.shape[1] == 0:
                type_caches[t] = None
                continue
            sk, dk = EDGE_ENDPOINTS[t]
            from_idx, to_idx = arr[0], arr[1]
            n_src, n_dst = view.count(sk), view.count(dk)
            ts, c_ws = self.w_src[t].forward(h[sk])
            td, c_wd = self.w_dst[t].forward(h[dk])
            ts_h = ts.reshape(n_src, self.heads, self.head_dim)
            td_h = td.reshape(n_dst, self.heads, self.head_dim)
            s_src = np.einsum("nhd,hd->nh", ts_h, self.a_src[t].value)
            s_dst = np.einsum("nhd,hd->nh", td_h, self.a_dst[t].value)
            e_raw = s_src[from_idx] + s_dst[to_idx]
            e_act, c_lr = ops.leaky_relu(e_raw, self.slope)
            alpha, c_sm = ops.segment_softmax(e_act, to_idx)
            src_msgs = ts_h[from_idx]
            weighted = src_msgs * alpha[:, :, None]
            summed, c_sc = ops.scatter_add(
                weighted.reshape(-1, self.hidden), to_idx, n_dst)
            contrib, c_mg = self.merge[t].forward(summed)
            agg[dk] += contrib
            type_caches[t] = (c_ws, c_wd, c_lr, c_sm, c_sc, c_mg, ts_h, td_h,
                              alpha, src_msgs, from_idx, to_idx, n_src, n_dst, sk, dk)
        out = {}
        norm_caches = {}
        for k in NODE_TYPES:
            res = h[k] + agg[k]
            normed, c_ln = self.norm[k].forward(res)
            dropped, c_dp = ops.dropout(normed, self.dropout_rate, rng, training)
            out[k] = dropped
            norm_caches[k] = (c_ln, c_dp)
        return out, (type_caches, norm_caches)

    def backward(self, cache: tuple, g: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        type_caches, norm_caches = cache
        dh = {}
        dagg = {}
        for k in NODE_TYPES:
            c_ln, c_dp = norm_caches[k]
            gd = ops.dropout_backward(c_dp, g[k])
            gr = self.norm[k].backward(c_ln, gd)
            dh[k] = gr.copy()  # residual path
            dagg[k] = gr
        for t in EDGE_TYPES:
            tc = type_caches[t]
            if tc is None:
                continue
            (c_ws, c_wd, c_lr, c_sm, c_sc, c_mg, ts_h, td_h, alpha, src_msgs,
             from_idx, to_idx, n_src, n_dst, sk, dk) = tc
            dsummed = self.merge[t].backward(c_mg, dagg[dk])
            dweighted = ops.scatter_add_backward(c_sc, dsummed).reshape(
                -1, self.heads, self.head_dim)
            dalpha = np.sum(dweighted * src_msgs, axis=2)
            dsrc_msgs = dweighted * alpha[:, :, None]
            de_act = ops.segment_softmax_backward(c_sm, dalpha)
            de_raw = ops.leaky_relu_backward(c_lr, de_act)
            ds_src = np.zeros((n_src, self.heads))
            np.add.at(ds_src, from_idx, de_raw)
            ds_dst = np.zeros((n_dst, self.heads))
            np.add.at(ds_dst, to_idx, de_raw)
            dts_h = np.zeros_like(ts_h)
            np.add.at(dts_h, from_idx, dsrc_msgs)
            dts_h += ds_src[:, :, None] * self.a_src[t].value[None, :, :]
            self.a_src[t].grad += np.einsum("nhd,nh->hd", ts_h, ds_src)
            dtd_h = ds_dst[:, :, None] * self.a_dst[t].value[None, :, :]
            self.a_dst[t].grad += np.einsum("nhd,nh->hd", td_h, ds_dst)
            dh[sk] += self.w_src[t].backward(c_ws, dts_h.reshape(n_src, self.hidden))
            dh[dk] += self.w_dst[t].backward(c_wd, dtd_h.reshape(n_dst, self.hidden))
        return dh
