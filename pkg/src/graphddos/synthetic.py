"""Deterministic synthetic flow corpora for training and protocol tests.

Two generators: a binary corpus with well-separated benign/attack feature
clusters and flood-style fan-in topology, and a three-label cloud-traffic
variant whose "suspicious" class exercises the label policies.
"""
from __future__ import annotations

from collections import Counter
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigurationError
from .ingest import ATTACK, BENIGN, DEFAULT_FEATURES, SUSPICIOUS, FlowRecord

SPAN_SECONDS = 600.0
BURST_SECONDS = 10.0


def _clipped_normal(rng: np.random.Generator, mu: float, sigma: float,
                    lo: float, size: int) -> np.ndarray:
    return np.clip(rng.normal(mu, sigma, size=size), lo, None)


# Cluster parameters per feature: (benign mu/sigma, attack mu/sigma).
# Attack flows look like floods: tiny inter-arrival times, uniform small
# packets, few ACKs, small windows.
_BENIGN = {
    "ack_flag_count": (8.0, 3.0),
    "init_win_bytes_fwd": (29200.0, 4000.0),
    "min_seg_size_fwd": (32.0, 4.0),
    "fwd_iat_mean": (50_000.0, 15_000.0),
    "fwd_iat_max": None,  # derived: mean * U(2, 4)
    "flow_iat_mean": (40_000.0, 12_000.0),
    "flow_iat_max": None,
    "fwd_pkt_len_std": (350.0, 100.0),
}
_ATTACK = {
    "ack_flag_count": (1.0, 0.8),
    "init_win_bytes_fwd": (8192.0, 1500.0),
    "min_seg_size_fwd": (20.0, 2.0),
    "fwd_iat_mean": (800.0, 300.0),
    "fwd_iat_max": None,  # derived: mean * U(1.1, 1.6)
    "flow_iat_mean": (600.0, 250.0),
    "flow_iat_max": None,
    "fwd_pkt_len_std": (15.0, 8.0),
}
# Suspicious sits near the attack cluster (it folds to attack under the
# default label policy) but is visibly its own mode.
_SUSPICIOUS = {
    "ack_flag_count": (2.5, 1.0),
    "init_win_bytes_fwd": (12288.0, 2000.0),
    "min_seg_size_fwd": (24.0, 2.5),
    "fwd_iat_mean": (3_000.0, 1_000.0),
    "fwd_iat_max": None,
    "flow_iat_mean": (2_500.0, 900.0),
    "flow_iat_max": None,
    "fwd_pkt_len_std": (60.0, 20.0),
}


def _features(rng: np.random.Generator, params: dict, n: int,
              max_ratio: tuple) -> np.ndarray:
    cols = []
    derived_from = {"fwd_iat_max": "fwd_iat_mean", "flow_iat_max": "flow_iat_mean"}
    values: Dict[str, np.ndarray] = {}
    for name in DEFAULT_FEATURES:
        if params[name] is not None:
            mu, sigma = params[name]
            values[name] = _clipped_normal(rng, mu, sigma, 0.0, n)
    for name in DEFAULT_FEATURES:
        if params[name] is None:
            base = values[derived_from[name]]
            values[name] = base * rng.uniform(max_ratio[0], max_ratio[1], size=n)
        cols.append(values[name])
    return np.column_stack(cols)


def _hosts(prefix: str, count: int) -> List[str]:
    # 10.x.y.z-style addresses, deterministic in index.
    out = []
    for i in range(count):
        out.append(f"{prefix}.{(i >> 8) & 255}.{i & 255}")
    return out


def learnable_corpus(n_flows: int = 5000, attack_fraction: float = 0.25,
                     victim_fan_in: int = 25, benign_fan_in_cap: int = 3,
                     seed: int = 0,
                     suspicious_fraction: float = 0.0) -> List[FlowRecord]:
    """Binary (optionally three-label) corpus with flood topology.

    Attack flows arrive in per-victim bursts with fan-in `victim_fan_in`;
    benign destinations never receive more than `benign_fan_in_cap` flows.
    Deterministic in the seed; records come back time-ordered.
    """
    if not 0.0 <= attack_fraction < 1.0:
        raise ConfigurationError("attack_fraction must be in [0, 1)")
    if not 0.0 <= suspicious_fraction < 1.0:
        raise ConfigurationError("suspicious_fraction must be in [0, 1)")
    if victim_fan_in < 1 or benign_fan_in_cap < 1:
        raise ConfigurationError("fan-in parameters must be >= 1")
    rng = np.random.default_rng(seed)

    n_attack = int(round(n_flows * attack_fraction))
    n_susp = int(round(n_flows * suspicious_fraction))
    n_benign = n_flows - n_attack - n_susp
    if n_benign < 0:
        raise ConfigurationError("attack + suspicious fractions exceed 1")

    rows = []  # (timestamp_us, src, dst, sport, dport, features_row, label)

    # Benign mesh: many clients talking to a service pool, capped fan-in.
    n_services = max(1, int(np.ceil(n_benign / benign_fan_in_cap)))
    services = _hosts("10.20", n_services)
    clients = _hosts("10.10", max(64, n_benign // 4))
    feats_b = _features(rng, _BENIGN, n_benign, (2.0, 4.0))
    service_load: Counter = Counter()
    for i in range(n_benign):
        t = int(rng.uniform(0, SPAN_SECONDS) * 1e6)
        src = clients[int(rng.integers(0, len(clients)))]
        for _ in range(8):
            dst = services[int(rng.integers(0, len(services)))]
            if service_load[dst] < benign_fan_in_cap:
                break
        else:
            dst = min(services, key=lambda h: (service_load[h], h))
        service_load[dst] += 1
        rows.append((t, src, dst, int(rng.integers(1024, 65535)),
                     int(rng.choice(np.array([80, 443, 8080]))),
                     feats_b[i], BENIGN))

    def flood(n: int, params: dict, ratio: tuple, fan_in: int,
              victim_prefix: str, bot_prefix: str, label: str) -> None:
        if n == 0:
            return
        n_victims = max(1, n // fan_in)
        victims = _hosts(victim_prefix, n_victims)
        bots = _hosts(bot_prefix, max(32, fan_in * 4))
        feats = _features(rng, params, n, ratio)
        i = 0
        for v, victim in enumerate(victims):
            burst = n // n_victims + (1 if v < n % n_victims else 0)
            start = rng.uniform(0, SPAN_SECONDS - BURST_SECONDS)
            offsets = np.sort(rng.uniform(0, BURST_SECONDS, size=burst))
            for dt in offsets:
                rows.append((int((start + dt) * 1e6),
                             bots[int(rng.integers(0, len(bots)))], victim,
                             int(rng.integers(1024, 65535)), 80,
                             feats[i], label))
                i += 1

    flood(n_attack, _ATTACK, (1.1, 1.6), victim_fan_in, "10.50", "10.40", ATTACK)
    flood(n_susp, _SUSPICIOUS, (1.2, 2.0), max(6, victim_fan_in // 3),
          "10.70", "10.60", SUSPICIOUS)

    rows.sort(key=lambda r: r[0])
    records = []
    for i, (t, src, dst, sport, dport, feats, label) in enumerate(rows):
        records.append(FlowRecord(
            flow_id=f"syn-{i:06d}", src_ip=src, dst_ip=dst,
            src_port=sport, dst_port=dport, protocol=6, timestamp=t,
            features=np.asarray(feats, dtype=np.float64), label=label,
            feature_names=DEFAULT_FEATURES))
    return records


def cloud_corpus(n_flows: int = 6000, seed: int = 0) -> List[FlowRecord]:
    """Three-label variant shaped like cloud-infrastructure capture data:
    a benign majority, a flood-style attack class, and a smaller
    'suspicious' class that the default label policy folds into attack."""
    return learnable_corpus(n_flows=n_flows, attack_fraction=0.23,
                            suspicious_fraction=0.15, seed=seed)


def fan_in_by_destination(records: Sequence[FlowRecord]) -> Dict[str, int]:
    counts: Counter = Counter()
    for r in records:
        counts[r.dst_ip] += 1
    return dict(counts)


def stratified_subsample(records: Sequence[FlowRecord], n: int,
                         seed: int = 0) -> List[FlowRecord]:
    """Label-proportional subsample (largest-remainder apportionment),
    deterministic in the seed. Returns records in time order."""
    if n <= 0:
        raise ConfigurationError(f"subsample size must be positive, got {n}")
    if n >= len(records):
        return list(records)
    rng = np.random.default_rng(seed)
    by_label: Dict[str, List[int]] = {}
    for i, r in enumerate(records):
        by_label.setdefault(str(r.label), []).append(i)
    labels = sorted(by_label)
    quotas = [n * len(by_label[lab]) / len(records) for lab in labels]
    base = [int(np.floor(q)) for q in quotas]
    extras = n - sum(base)
    order = sorted(range(len(labels)),
                   key=lambda i: (-(quotas[i] - np.floor(quotas[i])), i))
    for i in order[:extras]:
        base[i] += 1
    chosen: List[int] = []
    for lab, take in zip(labels, base):
        idx = np.array(by_label[lab])
        take = min(take, idx.size)
        chosen.extend(rng.permutation(idx)[:take].tolist())
    chosen.sort(key=lambda i: (records[i].timestamp, i))
    return [records[i] for i in chosen]
