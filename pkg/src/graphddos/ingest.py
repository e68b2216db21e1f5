"""Flow file parsing, feature selection, standardization, and label policy.

Input layouts are described by schema data files (JSON) rather than code, so
a renamed column or a new indicator set is a data edit. Records come out with
canonical feature names; downstream modules never see source column names.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, DataError, SchemaError

BENIGN = "benign"
ATTACK = "attack"
SUSPICIOUS = "suspicious"
UNLABELED = "unlabeled"
CANONICAL_LABELS = (BENIGN, ATTACK, SUSPICIOUS, UNLABELED)

POLICY_SUSPICIOUS_AS_ATTACK = "binary_suspicious_as_attack"
POLICY_SUSPICIOUS_AS_BENIGN = "binary_suspicious_as_benign"
POLICY_DROP_SUSPICIOUS = "drop_suspicious"
POLICY_THREE_CLASS = "three_class_passthrough"
LABEL_POLICIES = (
    POLICY_SUSPICIOUS_AS_ATTACK,
    POLICY_SUSPICIOUS_AS_BENIGN,
    POLICY_DROP_SUSPICIOUS,
    POLICY_THREE_CLASS,
)

# Default per-flow descriptor subset; schema files may add indicator columns.
DEFAULT_FEATURES = (
    "ack_flag_count",
    "init_win_bytes_fwd",
    "min_seg_size_fwd",
    "fwd_iat_mean",
    "fwd_iat_max",
    "flow_iat_mean",
    "flow_iat_max",
    "fwd_pkt_len_std",
)

_PROTOCOL_NAMES = {"hopopt": 0, "icmp": 1, "tcp": 6, "udp": 17, "gre": 47, "icmpv6": 58}


@dataclass(frozen=True)
class FlowRecord:
    flow_id: str
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: int
    timestamp: int  # epoch microseconds
    features: np.ndarray
    label: str
    feature_names: Tuple[str, ...]

    def feature(self, name: str) -> float:
        try:
            return float(self.features[self.feature_names.index(name)])
        except ValueError:
            raise ConfigurationError(f"record has no feature {name!r}") from None


@dataclass
class ParseStats:
    total_rows: int = 0
    emitted: int = 0
    skipped: int = 0
    suppressed_duplicates: int = 0
    inf_replaced: int = 0
    nan_replaced: int = 0

    def check(self) -> None:
        if self.emitted + self.skipped + self.suppressed_duplicates != self.total_rows:
            raise DataError(
                f"row accounting broken: {self.emitted} + {self.skipped} + "
                f"{self.suppressed_duplicates} != {self.total_rows}"
            )

    def as_dict(self) -> dict:
        return {
            "total_rows": self.total_rows,
            "emitted": self.emitted,
            "skipped": self.skipped,
            "suppressed_duplicates": self.suppressed_duplicates,
            "inf_replaced": self.inf_replaced,
            "nan_replaced": self.nan_replaced,
        }


class FeatureSchema:
    """Column layout of one flow-file format, loaded from a JSON data file."""

    def __init__(self, doc: dict):
        self.name: str = doc["name"]
        self.id_columns: Dict[str, List[str]] = doc["id_columns"]
        self.timestamp_formats: List[str] = doc["timestamp_formats"]
        self.features: List[dict] = list(doc["features"])
        for extra in doc.get("extra_indicator_columns", []):
            self.features.append({"canonical": extra, "sources": [extra]})
        self.label_column: List[str] = doc["label_column"]
        self.label_map: Dict[str, str] = {
            k.lower(): v for k, v in doc["label_map"].items()
        }
        self.label_default: Optional[str] = doc.get("label_default")
        names = [f["canonical"] for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError(f"schema {self.name!r} repeats canonical names")
        self.feature_names: Tuple[str, ...] = tuple(names)
        for bad in set(self.label_map.values()) - set(CANONICAL_LABELS):
            raise SchemaError(f"schema {self.name!r} maps to unknown label {bad!r}")

    def map_source_label(self, raw: str) -> str:
        key = raw.strip().lower()
        if key in self.label_map:
            return self.label_map[key]
        if key == "":
            return UNLABELED
        if self.label_default is not None:
            return self.label_default
        raise DataError(f"unknown label {raw!r} for schema {self.name!r}")

    def resolve(self, header: Sequence[str]) -> "_ResolvedSchema":
        index = {h.strip(): i for i, h in enumerate(header)}

        def find(canonical: str, sources: Sequence[str]) -> int:
            for s in sources:
                if s in index:
                    return index[s]
            raise SchemaError(
                f"schema {self.name!r}: column for {canonical!r} missing "
                f"(tried {list(sources)})"
            )

        ids = {k: find(k, v) for k, v in self.id_columns.items()}
        feats = [find(f["canonical"], f["sources"]) for f in self.features]
        label = find("label", self.label_column)
        return _ResolvedSchema(ids, feats, label)


@dataclass
class _ResolvedSchema:
    id_idx: Dict[str, int]
    feature_idx: List[int]
    label_idx: int


def load_schema(name_or_path: str) -> FeatureSchema:
    """Load a bundled schema by name, or any schema JSON by path."""
    p = Path(name_or_path)
    if p.suffix == ".json" and p.exists():
        doc = json.loads(p.read_text(encoding="utf-8"))
    else:
        ref = resources.files("graphddos.schemas").joinpath(f"{name_or_path}.json")
        try:
            doc = json.loads(ref.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigurationError(
                f"no bundled schema named {name_or_path!r} and no such file"
            ) from None
    return FeatureSchema(doc)


def _parse_timestamp_us(raw: str, formats: Sequence[str]) -> int:
    raw = raw.strip()
    for fmt in formats:
        if fmt == "epoch_seconds":
            try:
                return int(round(float(raw) * 1e6))
            except ValueError:
                continue
        try:
            dt = datetime.strptime(raw, fmt)
        except ValueError:
            continue
        return int(dt.replace(tzinfo=timezone.utc).timestamp() * 1e6)
    raise ValueError(f"unparseable timestamp {raw!r}")


def _parse_protocol(raw: str) -> int:
    raw = raw.strip()
    try:
        return int(float(raw))
    except ValueError:
        pass
    name = raw.lower()
    if name in _PROTOCOL_NAMES:
        return _PROTOCOL_NAMES[name]
    raise ValueError(f"unknown protocol {raw!r}")


def _parse_port(raw: str) -> int:
    port = int(float(raw))
    if not 0 <= port <= 65535:
        raise ValueError(f"port {port} out of range")
    return port


def _column_caps(path: str, resolved: _ResolvedSchema, n_cols: int) -> np.ndarray:
    """First pass: per feature column, the largest finite value seen."""
    caps = np.full(len(resolved.feature_idx), -np.inf)
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            if not row or len(row) != n_cols:
                continue
            for j, col in enumerate(resolved.feature_idx):
                try:
                    v = float(row[col])
                except ValueError:
                    continue
                if math.isfinite(v) and v > caps[j]:
                    caps[j] = v
    caps[~np.isfinite(caps)] = 0.0
    return caps


def iter_flow_file(
    path: str, schema: FeatureSchema, stats: Optional[ParseStats] = None
) -> Iterator[FlowRecord]:
    """Stream records out of a CSV flow file in file order.

    Rows that fail numeric or field parsing are counted and skipped; exact
    duplicates (5-tuple + timestamp + features) are suppressed. Inf feature
    cells become 10x the column's finite max, NaN cells become 0, both
    counted. Stats are final once the iterator is exhausted.
    """
    if stats is None:
        stats = ParseStats()
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file, no header row")
        resolved = schema.resolve(header)
        caps = _column_caps(path, resolved, len(header))
        feature_names = schema.feature_names
        seen_keys = set()
        id_counts: Dict[str, int] = {}
        for row in reader:
            if not row:
                continue
            stats.total_rows += 1
            if len(row) != len(header):
                stats.skipped += 1
                continue
            try:
                src_ip = row[resolved.id_idx["src_ip"]].strip()
                dst_ip = row[resolved.id_idx["dst_ip"]].strip()
                if not src_ip or not dst_ip:
                    raise ValueError("empty endpoint address")
                src_port = _parse_port(row[resolved.id_idx["src_port"]])
                dst_port = _parse_port(row[resolved.id_idx["dst_port"]])
                protocol = _parse_protocol(row[resolved.id_idx["protocol"]])
                ts = _parse_timestamp_us(
                    row[resolved.id_idx["timestamp"]], schema.timestamp_formats
                )
                if ts <= 0:
                    raise ValueError("timestamp not positive")
                raw_feats = [float(row[c]) for c in resolved.feature_idx]
            except ValueError:
                stats.skipped += 1
                continue
            feats = np.empty(len(raw_feats))
            inf_seen = nan_seen = 0
            for j, v in enumerate(raw_feats):
                if math.isnan(v):
                    feats[j] = 0.0
                    nan_seen += 1
                elif math.isinf(v):
                    feats[j] = 10.0 * caps[j] if v > 0 else -10.0 * caps[j]
                    inf_seen += 1
                else:
                    feats[j] = v
            key = (src_ip, dst_ip, src_port, dst_port, protocol, ts, feats.tobytes())
            if key in seen_keys:
                stats.suppressed_duplicates += 1
                continue
            seen_keys.add(key)
            stats.inf_replaced += inf_seen
            stats.nan_replaced += nan_seen
            label = schema.map_source_label(row[resolved.label_idx])
            base_id = row[resolved.id_idx["flow_id"]].strip() or f"row{stats.total_rows}"
            n = id_counts.get(base_id, 0)
            id_counts[base_id] = n + 1
            flow_id = base_id if n == 0 else f"{base_id}#{n + 1}"
            feats.flags.writeable = False
            stats.emitted += 1
            yield FlowRecord(
                flow_id=flow_id,
                src_ip=src_ip,
                dst_ip=dst_ip,
                src_port=src_port,
                dst_port=dst_port,
                protocol=protocol,
                timestamp=ts,
                features=feats,
                label=label,
                feature_names=feature_names,
            )
    stats.check()


def parse_flow_file(path: str, schema: FeatureSchema) -> Tuple[List[FlowRecord], ParseStats]:
    stats = ParseStats()
    records = list(iter_flow_file(path, schema, stats))
    return records, stats


# ---------------------------------------------------------------- selection


def select_features(record: FlowRecord, subset: Sequence[str]) -> FlowRecord:
    """Project the feature vector onto subset, in subset order."""
    try:
        idx = [record.feature_names.index(name) for name in subset]
    except ValueError:
        missing = [n for n in subset if n not in record.feature_names]
        raise ConfigurationError(f"unknown canonical feature names {missing}") from None
    feats = record.features[idx].copy()
    feats.flags.writeable = False
    return replace(record, features=feats, feature_names=tuple(subset))


# ---------------------------------------------------------------- standardizer


class Standardizer:
    """Per-feature z-score transform fitted on training records only.

    Features whose training variance is zero are dropped and listed in
    ``dropped`` so the caller can report them.
    """

    # Identical values can leave variance dust around 1e-17; below this the
    # feature carries no signal and dividing by it would explode.
    _MIN_STD = 1e-12

    def __init__(self, feature_names: Sequence[str], mean: np.ndarray,
                 std: np.ndarray, dropped: Sequence[str]):
        self.feature_names = tuple(feature_names)
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        self.dropped = tuple(dropped)
        if np.any(self.std <= 0):
            raise ConfigurationError("standardizer std entries must be positive")

    @classmethod
    def fit(cls, records: Sequence[FlowRecord]) -> "Standardizer":
        if len(records) < 2:
            raise DataError(f"standardizer needs at least 2 records, got {len(records)}")
        names = records[0].feature_names
        x = np.stack([r.features for r in records])
        mean = x.mean(axis=0)
        std = x.std(axis=0)  # population, matches the two-point {1,3} -> std 1 case
        keep = std > cls._MIN_STD
        dropped = [n for n, k in zip(names, keep) if not k]
        kept_names = [n for n, k in zip(names, keep) if k]
        return cls(kept_names, mean[keep], std[keep], dropped)

    def transform_matrix(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != len(self.feature_names):
            raise ConfigurationError(
                f"expected {len(self.feature_names)} features, got {x.shape[1]}"
            )
        return (x - self.mean) / self.std

    def transform(self, records: Iterable[FlowRecord]) -> List[FlowRecord]:
        out = []
        for r in records:
            sel = r if r.feature_names == self.feature_names else select_features(
                r, self.feature_names
            )
            feats = (sel.features - self.mean) / self.std
            feats.flags.writeable = False
            out.append(replace(sel, features=feats))
        return out

    def to_json(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "dropped": list(self.dropped),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Standardizer":
        return cls(doc["feature_names"], np.array(doc["mean"]),
                   np.array(doc["std"]), doc["dropped"])


def fit_standardizer(records: Sequence[FlowRecord]) -> Standardizer:
    return Standardizer.fit(records)


def apply_standardizer(records: Iterable[FlowRecord], s: Standardizer) -> List[FlowRecord]:
    return s.transform(records)


# ---------------------------------------------------------------- labels


def apply_label_policy(label: str, policy: str) -> Optional[str]:
    """Fold a canonical label per policy; None means the record is excluded."""
    if policy not in LABEL_POLICIES:
        raise ConfigurationError(f"unknown label policy {policy!r}")
    if label not in CANONICAL_LABELS:
        raise DataError(f"unknown canonical label {label!r}")
    if label != SUSPICIOUS or policy == POLICY_THREE_CLASS:
        return label
    if policy == POLICY_SUSPICIOUS_AS_ATTACK:
        return ATTACK
    if policy == POLICY_SUSPICIOUS_AS_BENIGN:
        return BENIGN
    return None  # drop_suspicious


def map_label(source_label: str, schema: FeatureSchema,
              policy: str = POLICY_SUSPICIOUS_AS_ATTACK) -> Optional[str]:
    return apply_label_policy(schema.map_source_label(source_label), policy)


def label_to_target(label: str) -> float:
    if label == ATTACK:
        return 1.0
    if label == BENIGN:
        return 0.0
    raise DataError(f"label {label!r} has no binary target; fold it with a policy first")


# ---------------------------------------------------------------- re-export


def write_canonical_jsonl(records: Iterable[FlowRecord], path: str) -> int:
    """Dump records as line-delimited JSON with canonical feature names."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            doc = {
                "flow_id": r.flow_id,
                "src_ip": r.src_ip,
                "dst_ip": r.dst_ip,
                "src_port": r.src_port,
                "dst_port": r.dst_port,
                "protocol": r.protocol,
                "timestamp_us": r.timestamp,
                "features": {n_: float(v) for n_, v in zip(r.feature_names, r.features)},
                "label": r.label,
            }
            fh.write(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")
            n += 1
    return n


def read_canonical_jsonl(path: str) -> List[FlowRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{line_no}: bad JSON ({e})") from None
            names = tuple(doc["features"].keys())
            feats = np.array([doc["features"][n] for n in names])
            feats.flags.writeable = False
            out.append(
                FlowRecord(
                    flow_id=doc["flow_id"],
                    src_ip=doc["src_ip"],
                    dst_ip=doc["dst_ip"],
                    src_port=doc["src_port"],
                    dst_port=doc["dst_port"],
                    protocol=doc["protocol"],
                    timestamp=doc["timestamp_us"],
                    features=feats,
                    label=doc.get("label", UNLABELED),
                    feature_names=names,
                )
            )
    return out
