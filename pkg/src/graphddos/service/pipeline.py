"""Passive replay pipeline: windows -> graphs -> scores -> tiered verdicts.

All scoring outputs (predictions, forensic chain, alerts) are functions of
(input records, checkpoint, config) only — timestamps come from the
stream's logical clock, so two replays of the same inputs are
byte-identical. Wall-clock measurements appear only in the run summary.
"""
from __future__ import annotations

import hashlib
import json
import os
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import StartupError
from ..graph import EDGE_ENDPOINTS, HeteroGraph, SlidingWindowMemory, build_graph
from ..ingest import FlowRecord, Standardizer, write_canonical_jsonl
from ..model import HGUNet
from ..windows import WindowConfig, Windower
from .decisions import (
    ACTION_ALERT,
    ACTION_BLOCK,
    ACTION_NONE,
    ACTION_RATE_LIMIT,
    DecisionConfig,
    auto_verdict,
    is_grey_zone,
)
from .forensic import ForensicWriter
from .store import ALERTS, FEEDBACK, FLOWS, FORENSIC, PREDICTIONS, RunStore

DEFAULT_TOP_M = 8
SUBGRAPH_HOPS = 2
SUBGRAPH_MAX_NODES = 100


def model_version_of(model: HGUNet) -> str:
    payload = json.dumps(model.bag.to_json_dict(), sort_keys=True,
                         separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()[:16]


def extract_subgraph(graph: HeteroGraph, flow_id: str,
                     hops: int = SUBGRAPH_HOPS,
                     max_nodes: int = SUBGRAPH_MAX_NODES) -> dict:
    """Breadth-first typed neighborhood of a flow node, capped by node
    count with an overflow marker. Deterministic: traversal follows the
    graph's stored (canonical) edge order."""
    if flow_id not in graph.flow_ids:
        from ..errors import NotFoundError
        raise NotFoundError(f"no flow {flow_id!r} in this graph")
    start = ("flow", graph.flow_ids.index(flow_id))

    adj: Dict[Tuple[str, int], List[Tuple[str, int]]] = {}
    for etype, (sk, dk) in EDGE_ENDPOINTS.items():
        edges = graph.edges[etype]
        for j in range(edges.shape[1]):
            a = (sk, int(edges[0, j]))
            b = (dk, int(edges[1, j]))
            adj.setdefault(a, []).append(b)
            adj.setdefault(b, []).append(a)

    kept: List[Tuple[str, int]] = []
    seen = {start}
    frontier = deque([(start, 0)])
    truncated = False
    while frontier:
        node, depth = frontier.popleft()
        kept.append(node)
        if len(kept) >= max_nodes:
            truncated = frontier.__len__() > 0
            break
        if depth == hops:
            continue
        for nxt in adj.get(node, []):
            if nxt not in seen:
                seen.add(nxt)
                frontier.append((nxt, depth + 1))

    def node_id(kind: str, idx: int) -> str:
        return graph.host_ids[idx] if kind == "host" else graph.flow_ids[idx]

    kept_set = set(kept)
    nodes = []
    for kind, idx in kept:
        nodes.append({
            "id": node_id(kind, idx),
            "kind": kind,
            "historical": bool(graph.historical_mask[idx]) if kind == "flow"
            else False,
        })
    edges_out = []
    for etype, (sk, dk) in EDGE_ENDPOINTS.items():
        edges = graph.edges[etype]
        for j in range(edges.shape[1]):
            a = (sk, int(edges[0, j]))
            b = (dk, int(edges[1, j]))
            if a in kept_set and b in kept_set:
                edges_out.append({"type": etype, "from": node_id(*a),
                                  "to": node_id(*b)})
    return {"nodes": nodes, "edges": edges_out, "highlight": flow_id,
            "hops": hops, "truncated": truncated}


def _percentiles(samples: List[float]) -> dict:
    if not samples:
        return {"p50": 0.0, "p95": 0.0, "p99": 0.0}
    arr = np.array(samples) * 1000.0  # milliseconds
    return {"p50": float(np.percentile(arr, 50)),
            "p95": float(np.percentile(arr, 95)),
            "p99": float(np.percentile(arr, 99))}


@dataclass
class RunSummary:
    run_id: str
    model_version: str
    n_records: int
    n_windows: int
    n_scored: int
    n_alerts: int
    late_records: int
    tier_counts: Dict[str, int]
    throughput_flows_per_s: float
    stage_latency_ms: Dict[str, dict]
    schema: str = ""
    window: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "run_id": self.run_id, "model_version": self.model_version,
            "n_records": self.n_records, "n_windows": self.n_windows,
            "n_scored": self.n_scored, "n_alerts": self.n_alerts,
            "late_records": self.late_records,
            "tier_counts": self.tier_counts,
            "throughput_flows_per_s": self.throughput_flows_per_s,
            "stage_latency_ms": self.stage_latency_ms,
            "schema": self.schema, "window": self.window,
            "thresholds": self.thresholds,
        }


def run_pipeline(records: Sequence[FlowRecord], model: HGUNet,
                 standardizer: Optional[Standardizer], wcfg: WindowConfig,
                 dcfg: DecisionConfig, out_dir: str, *,
                 schema_name: str = "", run_id: str = "run",
                 speed: Optional[float] = None, top_m: int = DEFAULT_TOP_M,
                 use_memory: bool = True, per_host_cap: int = 8,
                 global_cap: int = 4096) -> RunSummary:
    """Replay a record stream through the scoring pipeline, emitting one
    forensic record per scored flow plus grey-zone alerts with saliency
    and subgraph payloads. An empty input yields a zero-count summary."""
    store = RunStore(out_dir, create=True)
    for name in (PREDICTIONS, ALERTS, FLOWS, FEEDBACK, FORENSIC):
        p = store.path(name)
        if os.path.exists(p):
            os.remove(p)

    t_start = time.monotonic()
    version = model_version_of(model)

    prep_t0 = time.monotonic()
    if standardizer is not None:
        expected = len(standardizer.feature_names)
        if expected != model.config.flow_width:
            raise StartupError(
                f"checkpoint expects {model.config.flow_width} features but "
                f"the standardizer provides {expected}")
        stream = standardizer.transform(list(records))
    else:
        stream = list(records)
    prep_elapsed = time.monotonic() - prep_t0

    write_canonical_jsonl(records, store.path(FLOWS))

    counts = {ACTION_NONE: 0, ACTION_ALERT: 0, ACTION_RATE_LIMIT: 0,
              ACTION_BLOCK: 0}
    n_windows = n_scored = n_alerts = 0
    graph_times: List[float] = []
    infer_times: List[float] = []
    memory = SlidingWindowMemory(per_host_cap, global_cap) if use_memory else None
    prev_ts: Optional[int] = None
    windower = Windower(wcfg)

    def batches():
        for r in stream:
            yield from windower.push(r)
        final = windower.flush()
        if final is not None:
            yield final

    with ForensicWriter(store.path(FORENSIC), header={
            "model_version": version, "schema": schema_name,
            "run_id": run_id,
            "window": {"delta_t": wcfg.delta_t, "max_flows": wcfg.max_flows},
            "thresholds": {"tau_analyst": dcfg.thresholds.tau_analyst,
                           "tau_auto": dcfg.thresholds.tau_auto}}) as forensic:
        for batch in batches():
            if speed and prev_ts is not None:
                gap_s = max(0.0, (batch.start_ts - prev_ts) / 1e6)
                time.sleep(gap_s / speed)
            prev_ts = batch.end_ts
            n_windows += 1

            t0 = time.monotonic()
            g = build_graph(batch.records, memory=memory,
                            d_h=model.config.host_width)
            t1 = time.monotonic()
            scores = model.predict(g)
            t2 = time.monotonic()
            graph_times.append(t1 - t0)
            infer_times.append(t2 - t1)

            labels = g.flow_labels[~g.historical_mask]
            for rec, fid, p, y in zip(batch.records, scores.flow_ids,
                                      scores.probabilities, labels):
                p = float(p)
                verdict = auto_verdict(fid, p, dcfg, issued_at=batch.end_ts)
                counts[verdict.action] += 1
                n_scored += 1
                store.append_jsonl(PREDICTIONS, {
                    "flow_id": fid, "p": p,
                    "label": int(y > 0.5) if np.isfinite(y) else None})
                forensic.append({
                    "flow": {"flow_id": fid, "src_ip": rec.src_ip,
                             "dst_ip": rec.dst_ip, "src_port": rec.src_port,
                             "dst_port": rec.dst_port,
                             "protocol": rec.protocol,
                             "timestamp": rec.timestamp},
                    "p": p, "model_version": version,
                    "window": batch.index, "verdict": verdict.as_dict()})
                if is_grey_zone(p, dcfg):
                    saliency = model.saliency(g, fid, top_m=top_m)
                    store.append_jsonl(ALERTS, {
                        "alert_id": f"w{batch.index}-{fid}",
                        "flow_id": fid, "p": p, "window_index": batch.index,
                        "issued_at": batch.end_ts, "action": verdict.action,
                        "metadata": {"src_ip": rec.src_ip,
                                     "dst_ip": rec.dst_ip,
                                     "src_port": rec.src_port,
                                     "dst_port": rec.dst_port,
                                     "protocol": rec.protocol,
                                     "timestamp": rec.timestamp},
                        "top_features": [[n, float(c)] for n, c in saliency],
                        "subgraph": extract_subgraph(g, fid)})
                    n_alerts += 1
            if memory is not None:
                memory.update(batch.records)

    elapsed = time.monotonic() - t_start
    summary = RunSummary(
        run_id=run_id, model_version=version, n_records=len(records),
        n_windows=n_windows, n_scored=n_scored, n_alerts=n_alerts,
        late_records=windower.late_records, tier_counts=counts,
        throughput_flows_per_s=(n_scored / elapsed) if elapsed > 0 else 0.0,
        stage_latency_ms={"ingest": _percentiles([prep_elapsed]),
                          "graph": _percentiles(graph_times),
                          "inference": _percentiles(infer_times)},
        schema=schema_name,
        window={"delta_t": wcfg.delta_t, "max_flows": wcfg.max_flows,
                "skew_tolerance": wcfg.skew_tolerance},
        thresholds={"tau_analyst": dcfg.thresholds.tau_analyst,
                    "tau_auto": dcfg.thresholds.tau_auto,
                    "notify_floor": dcfg.notify_floor,
                    "grey_zone_rate_limit": dcfg.grey_zone_rate_limit})
    store.write_summary(summary.as_dict())
    return summary
