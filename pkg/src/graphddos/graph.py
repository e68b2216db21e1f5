"""Host/flow graph construction with sliding-window historical context.

Hosts are keyed by IP. Each in-window flow node is wired to its endpoints
with four typed directed edges: src_to_flow, flow_to_dst (forward direction
of the flow) and dst_to_flow, flow_to_src (reverse). Remembered flows from
earlier windows join as context-only nodes wired to whichever of their
endpoints appear in the current window, with role-matching edge types.
"""

from __future__ import annotations

import json
from collections import OrderedDict, deque
from dataclasses import dataclass
from typing import Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, ConsistencyError
from .ingest import ATTACK, BENIGN, FlowRecord

EDGE_TYPES = ("src_to_flow", "flow_to_dst", "dst_to_flow", "flow_to_src")
# Node type at each end of an edge, per edge type: (source, destination).
EDGE_ENDPOINTS = {
    "src_to_flow": ("host", "flow"),
    "flow_to_dst": ("flow", "host"),
    "dst_to_flow": ("host", "flow"),
    "flow_to_src": ("flow", "host"),
}

HIST_PREFIX = "hist:"


@dataclass
class HeteroGraph:
    host_ids: List[str]
    flow_ids: List[str]
    host_features: np.ndarray  # |hosts| x d_h, uniform all-ones
    flow_features: np.ndarray  # |flows| x d_f
    edges: Dict[str, np.ndarray]  # type -> int64 array (2, E): [from_idx, to_idx]
    flow_labels: np.ndarray  # 1.0 attack / 0.0 benign / NaN unlabeled
    historical_mask: np.ndarray  # bool per flow; True = context only
    feature_names: Tuple[str, ...]
    records: List[Optional[FlowRecord]]  # aligned to flow nodes; None for historical

    @property
    def n_hosts(self) -> int:
        return len(self.host_ids)

    @property
    def n_flows(self) -> int:
        return len(self.flow_ids)

    def check(self) -> None:
        """Assert structural invariants; raises ConsistencyError on violation."""
        if self.host_features.shape[0] != self.n_hosts:
            raise ConsistencyError("host feature row count != host count")
        if self.flow_features.shape[0] != self.n_flows:
            raise ConsistencyError("flow feature row count != flow count")
        if len(set(self.host_ids)) != self.n_hosts:
            raise ConsistencyError("host ids not unique")
        if len(set(self.flow_ids)) != self.n_flows:
            raise ConsistencyError("flow ids not unique")
        counts = {t: np.zeros(self.n_flows, dtype=np.int64) for t in EDGE_TYPES}
        for etype, arr in self.edges.items():
            src_kind, dst_kind = EDGE_ENDPOINTS[etype]
            lim = {"host": self.n_hosts, "flow": self.n_flows}
            if arr.size and (arr[0].min() < 0 or arr[0].max() >= lim[src_kind]):
                raise ConsistencyError(f"{etype}: out-of-range source index")
            if arr.size and (arr[1].min() < 0 or arr[1].max() >= lim[dst_kind]):
                raise ConsistencyError(f"{etype}: out-of-range destination index")
            flow_row = arr[1] if dst_kind == "flow" else arr[0]
            np.add.at(counts[etype], flow_row, 1)
        in_window = ~self.historical_mask
        for etype in ("src_to_flow", "flow_to_dst"):
            if not np.all(counts[etype][in_window] == 1):
                raise ConsistencyError(f"in-window flow without exactly one {etype} edge")

    def to_json_dict(self) -> dict:
        return {
            "host_ids": list(self.host_ids),
            "flow_ids": list(self.flow_ids),
            "host_feature_width": int(self.host_features.shape[1]),
            "feature_names": list(self.feature_names),
            "flow_features": [[float(v) for v in row] for row in self.flow_features],
            "edges": {t: [[int(a), int(b)] for a, b in arr.T] for t, arr in self.edges.items()},
            "flow_labels": [None if np.isnan(v) else float(v) for v in self.flow_labels],
            "historical_mask": [bool(v) for v in self.historical_mask],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------- memory


@dataclass
class MemoryEntry:
    flow_id: str
    src_ip: str
    dst_ip: str
    features: np.ndarray
    timestamp: int
    label: str
    seq: int


class SlidingWindowMemory:
    """Per-host rings of recent flows with a per-host cap and a global cap.

    A flow sits in the ring of each distinct endpoint. Per-host eviction is
    strictly oldest-first; once a flow leaves its last ring it leaves the
    global store. The global cap evicts globally-oldest flows outright.
    """

    def __init__(self, per_host_cap: int = 8, global_cap: int = 4096):
        if per_host_cap < 0 or global_cap < 0:
            raise ConfigurationError("memory caps must be non-negative")
        self.per_host_cap = per_host_cap
        self.global_cap = global_cap
        self._rings: Dict[str, Deque[MemoryEntry]] = {}
        self._store: "OrderedDict[int, MemoryEntry]" = OrderedDict()
        self._refs: Dict[int, int] = {}
        self._next_seq = 0

    @property
    def size(self) -> int:
        return len(self._store)

    def history_for(self, host_ip: str) -> List[MemoryEntry]:
        return list(self._rings.get(host_ip, ()))

    def hosts(self) -> List[str]:
        return [h for h, ring in self._rings.items() if ring]

    def add(self, record: FlowRecord) -> None:
        if self.per_host_cap == 0 or self.global_cap == 0:
            return
        entry = MemoryEntry(
            flow_id=record.flow_id,
            src_ip=record.src_ip,
            dst_ip=record.dst_ip,
            features=record.features,
            timestamp=record.timestamp,
            label=record.label,
            seq=self._next_seq,
        )
        self._next_seq += 1
        endpoints = {record.src_ip, record.dst_ip}
        self._store[entry.seq] = entry
        self._refs[entry.seq] = len(endpoints)
        for host in endpoints:
            ring = self._rings.setdefault(host, deque())
            ring.append(entry)
            if len(ring) > self.per_host_cap:
                self._decref(ring.popleft())
        while len(self._store) > self.global_cap:
            _, oldest = next(iter(self._store.items()))
            for host in {oldest.src_ip, oldest.dst_ip}:
                ring = self._rings.get(host)
                if ring is not None and oldest in ring:
                    ring.remove(oldest)
            self._store.pop(oldest.seq)
            self._refs.pop(oldest.seq)

    def _decref(self, entry: MemoryEntry) -> None:
        n = self._refs.get(entry.seq)
        if n is None:
            return  # already globally evicted
        if n <= 1:
            self._store.pop(entry.seq, None)
            self._refs.pop(entry.seq, None)
        else:
            self._refs[entry.seq] = n - 1

    def update(self, records: Sequence[FlowRecord]) -> None:
        for r in records:
            self.add(r)


def update_memory(memory: SlidingWindowMemory, records: Sequence[FlowRecord]) -> SlidingWindowMemory:
    memory.update(records)
    return memory


# ---------------------------------------------------------------- construction


def _label_value(label: str) -> float:
    if label == ATTACK:
        return 1.0
    if label == BENIGN:
        return 0.0
    return float("nan")


def build_graph(
    records: Sequence[FlowRecord],
    memory: Optional[SlidingWindowMemory] = None,
    d_h: int = 8,
) -> HeteroGraph:
    """Build the graph for one closed window.

    Historical flows from memory join hosts that appear in this window;
    they are marked context-only and excluded from loss and decisions.
    """
    if not records:
        raise ConfigurationError("cannot build a graph from an empty batch")
    if d_h < 1:
        raise ConfigurationError(f"host feature width must be >= 1, got {d_h}")
    feature_names = records[0].feature_names
    d_f = len(feature_names)

    host_index: Dict[str, int] = {}
    for r in records:
        for ip in (r.src_ip, r.dst_ip):
            if ip not in host_index:
                host_index[ip] = len(host_index)

    flow_index: Dict[str, int] = {}
    flow_rows: List[np.ndarray] = []
    flow_labels: List[float] = []
    hist_mask: List[bool] = []
    rec_refs: List[Optional[FlowRecord]] = []
    edges: Dict[str, List[Tuple[int, int]]] = {t: [] for t in EDGE_TYPES}

    for r in records:
        if r.features.shape != (d_f,) or r.feature_names != feature_names:
            raise ConsistencyError(f"flow {r.flow_id!r} feature layout differs from batch")
        if r.flow_id in flow_index:
            raise ConsistencyError(f"duplicate flow id {r.flow_id!r} in one window")
        fi = len(flow_rows)
        flow_index[r.flow_id] = fi
        flow_rows.append(np.asarray(r.features, dtype=np.float64))
        flow_labels.append(_label_value(r.label))
        hist_mask.append(False)
        rec_refs.append(r)
        s, d = host_index[r.src_ip], host_index[r.dst_ip]
        edges["src_to_flow"].append((s, fi))
        edges["flow_to_dst"].append((fi, d))
        edges["dst_to_flow"].append((d, fi))
        edges["flow_to_src"].append((fi, s))

    if memory is not None:
        window_flow_ids = set(flow_index)
        hist_nodes: Dict[str, int] = {}
        for ip, hi in host_index.items():
            for entry in memory.history_for(ip):
                if entry.flow_id in window_flow_ids:
                    continue  # the same flow is already an in-window node
                key = HIST_PREFIX + entry.flow_id
                fi = hist_nodes.get(key)
                if fi is None:
                    if entry.features.shape != (d_f,):
                        raise ConsistencyError(
                            f"remembered flow {entry.flow_id!r} has width "
                            f"{entry.features.shape}, window uses {d_f}"
                        )
                    fi = len(flow_rows)
                    hist_nodes[key] = fi
                    flow_index[key] = fi
                    flow_rows.append(np.asarray(entry.features, dtype=np.float64))
                    flow_labels.append(float("nan"))
                    hist_mask.append(True)
                    rec_refs.append(None)
                if entry.src_ip == ip:
                    edges["src_to_flow"].append((hi, fi))
                    edges["flow_to_src"].append((fi, hi))
                if entry.dst_ip == ip:
                    edges["flow_to_dst"].append((fi, hi))
                    edges["dst_to_flow"].append((hi, fi))

    host_ids = list(host_index)
    flow_ids = list(flow_index)
    g = HeteroGraph(
        host_ids=host_ids,
        flow_ids=flow_ids,
        host_features=np.ones((len(host_ids), d_h)),
        flow_features=np.vstack(flow_rows) if flow_rows else np.zeros((0, d_f)),
        edges={
            t: np.array(pairs, dtype=np.int64).reshape(-1, 2).T
            for t, pairs in edges.items()
        },
        flow_labels=np.array(flow_labels),
        historical_mask=np.array(hist_mask, dtype=bool),
        feature_names=feature_names,
        records=rec_refs,
    )
    g.check()
    return g
