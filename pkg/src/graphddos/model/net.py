"""The full classifier: embed, encoder conv+pool levels, bottleneck,
mirrored unpool+conv decoder, and the flow scoring head.

Node order is canonicalized (sorted unique ids) on the way in and mapped
back on the way out, so outputs depend only on graph content, never on the
order records happened to arrive in. That makes permutation equivariance
exact, not approximate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConsistencyError, DataError, DimensionError, NotFoundError
from ..graph import EDGE_ENDPOINTS, HeteroGraph
from ..nn import LayerNorm, Linear, ParameterBag, RngStream, ops
from .config import ModelConfig
from .conv import NODE_TYPES, GraphView, HeteroAttentionConv
from .pool import AttentionPool, PoolLevel, PoolRecord, Unpool


@dataclass
class CanonGraph:
    view: GraphView
    host_features: np.ndarray
    flow_features: np.ndarray
    host_ids: List[str]
    flow_ids: List[str]
    in_window: np.ndarray  # bool, canonical flow order
    labels: np.ndarray  # float with NaN for unlabeled, canonical order
    orig_flow_pos: np.ndarray  # canonical index -> original index
    canon_flow_pos: np.ndarray  # original index -> canonical index


def canonicalize(graph: HeteroGraph) -> CanonGraph:
    h_order = np.array(sorted(range(graph.n_hosts), key=graph.host_ids.__getitem__),
                       dtype=np.int64)
    f_order = np.array(sorted(range(graph.n_flows), key=graph.flow_ids.__getitem__),
                       dtype=np.int64)
    inv_h = np.empty_like(h_order)
    inv_h[h_order] = np.arange(h_order.size)
    inv_f = np.empty_like(f_order)
    inv_f[f_order] = np.arange(f_order.size)
    inv = {"host": inv_h, "flow": inv_f}
    edges = {}
    for t, arr in graph.edges.items():
        sk, dk = EDGE_ENDPOINTS[t]
        fr = inv[sk][arr[0]]
        to = inv[dk][arr[1]]
        order = np.lexsort((fr, to))
        edges[t] = np.vstack([fr[order], to[order]])
    return CanonGraph(
        view=GraphView(n_host=graph.n_hosts, n_flow=graph.n_flows, edges=edges),
        host_features=graph.host_features[h_order],
        flow_features=graph.flow_features[f_order],
        host_ids=[graph.host_ids[i] for i in h_order],
        flow_ids=[graph.flow_ids[i] for i in f_order],
        in_window=~graph.historical_mask[f_order],
        labels=graph.flow_labels[f_order],
        orig_flow_pos=f_order,
        canon_flow_pos=inv_f,
    )


@dataclass
class FlowScores:
    """Per in-window flow, in the original graph order."""

    flow_ids: List[str]
    probabilities: np.ndarray
    logits: np.ndarray
    saliency: Optional[dict] = None


class FlowHead:
    """Three affine layers narrowing to one logit per flow, with leaky-ReLU,
    layer norm, and dropout after the first two."""

    def __init__(self, bag: ParameterBag, name: str, in_dim: int,
                 dims: Sequence[int], slope: float, dropout_rate: float,
                 rng: RngStream):
        d1, d2, d3 = dims
        if d3 != 1:
            raise ConsistencyError("final head width must be 1")
        self.slope = slope
        self.dropout_rate = dropout_rate
        self.l1 = Linear(bag, f"{name}.l1", in_dim, d1, rng)
        self.ln1 = LayerNorm(bag, f"{name}.ln1", d1)
        self.l2 = Linear(bag, f"{name}.l2", d1, d2, rng)
        self.ln2 = LayerNorm(bag, f"{name}.ln2", d2)
        self.l3 = Linear(bag, f"{name}.l3", d2, 1, rng)

    def forward(self, x: np.ndarray, training: bool, rng: Optional[RngStream]
                ) -> Tuple[np.ndarray, tuple]:
        a1, c1 = self.l1.forward(x)
        r1, cr1 = ops.leaky_relu(a1, self.slope)
        n1, cn1 = self.ln1.forward(r1)
        p1, cp1 = ops.dropout(n1, self.dropout_rate, rng, training)
        a2, c2 = self.l2.forward(p1)
        r2, cr2 = ops.leaky_relu(a2, self.slope)
        n2, cn2 = self.ln2.forward(r2)
        p2, cp2 = ops.dropout(n2, self.dropout_rate, rng, training)
        a3, c3 = self.l3.forward(p2)
        return a3[:, 0], (c1, cr1, cn1, cp1, c2, cr2, cn2, cp2, c3)

    def backward(self, cache: tuple, dlogits: np.ndarray) -> np.ndarray:
        c1, cr1, cn1, cp1, c2, cr2, cn2, cp2, c3 = cache
        g = self.l3.backward(c3, dlogits[:, None])
        g = ops.dropout_backward(cp2, g)
        g = self.ln2.backward(cn2, g)
        g = ops.leaky_relu_backward(cr2, g)
        g = self.l2.backward(c2, g)
        g = ops.dropout_backward(cp1, g)
        g = self.ln1.backward(cn1, g)
        g = ops.leaky_relu_backward(cr1, g)
        return self.l1.backward(c1, g)


class HGUNet:
    def __init__(self, config: ModelConfig):
        self.config = config
        self.bag = ParameterBag()
        rng = RngStream(config.seed).spawn("init")
        hid = config.hidden_dim
        self.embed_host = Linear(self.bag, "embed.host", config.host_width, hid, rng)
        self.embed_flow = Linear(self.bag, "embed.flow", config.flow_width, hid, rng)
        conv_args = (hid, config.heads, config.leaky_slope, config.dropout_rate)
        self.enc_convs = [
            HeteroAttentionConv(self.bag, f"enc{L}.conv", *conv_args, rng)
            for L in range(config.depth)
        ]
        self.pools = [
            AttentionPool(self.bag, f"pool{L}", hid, config.heads,
                          config.pool_ratios[L], config.pool_noise_std, rng)
            for L in range(config.depth)
        ]
        self.bottleneck = [
            HeteroAttentionConv(self.bag, f"bottleneck{i}.conv", *conv_args, rng)
            for i in range(config.bottleneck_layers)
        ]
        self.unpools = [
            Unpool(self.bag, f"dec{L}.unpool", hid, rng)
            for L in range(config.depth)
        ]
        self.dec_convs = [
            HeteroAttentionConv(self.bag, f"dec{L}.conv", *conv_args, rng)
            for L in range(config.depth)
        ]
        self.head = FlowHead(self.bag, "head", hid, config.head_dims,
                             config.leaky_slope, config.dropout_rate, rng)

    # ------------------------------------------------------------- core passes

    def _forward_core(self, graph: HeteroGraph, training: bool,
                      rng: Optional[RngStream]):
        if graph.host_features.shape[1] != self.config.host_width:
            raise DimensionError(
                f"host features are {graph.host_features.shape[1]} wide, "
                f"model expects {self.config.host_width}")
        if graph.flow_features.shape[1] != self.config.flow_width:
            raise DimensionError(
                f"flow features are {graph.flow_features.shape[1]} wide, "
                f"model expects {self.config.flow_width}")
        canon = canonicalize(graph)
        depth = self.config.depth
        e_h, c_eh = self.embed_host.forward(canon.host_features)
        a_h, c_ah = ops.leaky_relu(e_h, self.config.leaky_slope)
        e_f, c_ef = self.embed_flow.forward(canon.flow_features)
        a_f, c_af = ops.leaky_relu(e_f, self.config.leaky_slope)
        h = {"host": a_h, "flow": a_f}
        view = canon.view
        views = [view]
        skips: List[Dict[str, np.ndarray]] = []
        levels: List[PoolLevel] = []
        conv_caches, pool_caches = [], []
        for L in range(depth):
            h, cc = self.enc_convs[L].forward(view, h, training, rng)
            conv_caches.append(cc)
            skips.append(h)
            view, h, level, pc = self.pools[L].forward(view, h, training, rng)
            levels.append(level)
            pool_caches.append(pc)
            views.append(view)
        b_caches = []
        for conv in self.bottleneck:
            h, bc = conv.forward(view, h, training, rng)
            b_caches.append(bc)
        dec_caches = []
        for L in range(depth - 1, -1, -1):
            h, uc = self.unpools[L].forward(h, levels[L], skips[L])
            h, dc = self.dec_convs[L].forward(views[L], h, training, rng)
            dec_caches.append((uc, dc))
        logits, hc = self.head.forward(h["flow"], training, rng)
        record = PoolRecord(levels=levels)
        record.check()
        cache = (canon, c_eh, c_ah, c_ef, c_af, conv_caches, pool_caches,
                 b_caches, dec_caches, hc, h["host"].shape)
        return logits, record, cache

    def _backward_core(self, cache, dlogits: np.ndarray) -> Dict[str, np.ndarray]:
        """Propagate dlogits to the graph inputs; parameter grads accumulate."""
        (canon, c_eh, c_ah, c_ef, c_af, conv_caches, pool_caches,
         b_caches, dec_caches, hc, host_out_shape) = cache
        depth = self.config.depth
        g = {"flow": self.head.backward(hc, dlogits),
             "host": np.zeros(host_out_shape)}
        g_skips: List[Optional[Dict[str, np.ndarray]]] = [None] * depth
        for L in range(depth):
            uc, dc = dec_caches[depth - 1 - L]
            g = self.dec_convs[L].backward(dc, g)
            g, g_skips[L] = self.unpools[L].backward(uc, g)
        for i in range(len(b_caches) - 1, -1, -1):
            g = self.bottleneck[i].backward(b_caches[i], g)
        for L in range(depth - 1, -1, -1):
            g = self.pools[L].backward(pool_caches[L], g)
            for k in NODE_TYPES:
                g[k] = g[k] + g_skips[L][k]
            g = self.enc_convs[L].backward(conv_caches[L], g)
        d_af = ops.leaky_relu_backward(c_af, g["flow"])
        dx_flow = self.embed_flow.backward(c_ef, d_af)
        d_ah = ops.leaky_relu_backward(c_ah, g["host"])
        dx_host = self.embed_host.backward(c_eh, d_ah)
        return {"host": dx_host, "flow": dx_flow}

    # ------------------------------------------------------------- public API

    def forward(self, graph: HeteroGraph, training: bool = False,
                rng: Optional[RngStream] = None) -> Tuple[FlowScores, PoolRecord]:
        logits, record, cache = self._forward_core(graph, training, rng)
        return self._scores_from(graph, cache[0], logits), record

    def predict(self, graph: HeteroGraph) -> FlowScores:
        return self.forward(graph, training=False)[0]

    def _scores_from(self, graph: HeteroGraph, canon: CanonGraph,
                     logits_canon: np.ndarray) -> FlowScores:
        probs_canon, _ = ops.sigmoid(logits_canon)
        orig_in_window = np.flatnonzero(~graph.historical_mask)
        canon_pos = canon.canon_flow_pos[orig_in_window]
        return FlowScores(
            flow_ids=[graph.flow_ids[i] for i in orig_in_window],
            probabilities=probs_canon[canon_pos],
            logits=logits_canon[canon_pos],
        )

    def loss_backward(self, graph: HeteroGraph, rng: Optional[RngStream] = None,
                      training: bool = True,
                      class_weights: Optional[Tuple[float, float]] = None
                      ) -> Tuple[Optional[float], int]:
        """One full forward/backward, gradients left in the parameter bag.

        Loss is weighted binary cross entropy over the in-window flows that
        carry a label; returns (loss, labeled flow count), loss None when no
        flow is labeled (no backward happens then).
        """
        logits, _, cache = self._forward_core(graph, training, rng)
        canon = cache[0]
        mask = canon.in_window & np.isfinite(canon.labels)
        n_labeled = int(mask.sum())
        if n_labeled == 0:
            return None, 0
        y = canon.labels[mask]
        if class_weights is not None:
            w_neg, w_pos = class_weights
            weights = np.where(y > 0.5, w_pos, w_neg)
        else:
            weights = None
        loss, dsub = ops.bce_with_logits(logits[mask], y, weights)
        dlogits = np.zeros_like(logits)
        dlogits[mask] = dsub
        self._backward_core(cache, dlogits)
        return loss, n_labeled

    def saliency(self, graph: HeteroGraph, flow_id: str,
                 top_m: Optional[int] = None) -> List[Tuple[str, float]]:
        """Per-feature contribution (input gradient of the flow's logit times
        the input), sorted by magnitude, largest first. Evaluation mode; the
        parameter bag's gradients are zeroed afterwards.
        """
        logits, _, cache = self._forward_core(graph, training=False, rng=None)
        canon = cache[0]
        try:
            canon_idx = canon.flow_ids.index(flow_id)
        except ValueError:
            raise NotFoundError(f"no flow {flow_id!r} in this graph") from None
        if not canon.in_window[canon_idx]:
            raise NotFoundError(f"flow {flow_id!r} is historical context, not scored")
        dlogits = np.zeros_like(logits)
        dlogits[canon_idx] = 1.0
        dx = self._backward_core(cache, dlogits)["flow"][canon_idx]
        self.bag.zero_grads()
        contrib = dx * canon.flow_features[canon_idx]
        pairs = sorted(
            zip(graph.feature_names, (float(v) for v in contrib)),
            key=lambda p: (-abs(p[1]), p[0]),
        )
        if top_m is not None:
            pairs = pairs[:top_m]
        return pairs

    # ------------------------------------------------------------- persistence

    def save(self, path: str) -> None:
        self.bag.save(path, header={"format": 1,
                                    "config": self.config.to_json_dict()})

    def load_weights(self, path: str) -> None:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        stored = doc.get("header", {}).get("config")
        if stored != self.config.to_json_dict():
            raise ConsistencyError(
                "checkpoint config does not match this model; "
                f"stored={stored!r}")
        self.bag.load_json_dict(doc["parameters"])

    @classmethod
    def load(cls, path: str) -> "HGUNet":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        header = doc.get("header", {})
        if "config" not in header:
            raise DataError(f"{path}: checkpoint lacks a config header")
        model = cls(ModelConfig.from_json_dict(header["config"]))
        model.bag.load_json_dict(doc["parameters"])
        return model
