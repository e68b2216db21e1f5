"""Append-only hash-chained scoring log with byte-level tamper evidence.

Every line is canonical JSON (sorted keys, compact separators) carrying its
sequence number, the previous line's chain hash, and its own hash over the
canonical encoding of the line minus the hash field. Verification requires
each raw line to round-trip byte-identically through the canonical encoder,
so any single-byte change is caught even when it would parse to the same
value (e.g. '1e-07' vs '1E-07').
"""
from __future__ import annotations

import hashlib
import json
import os
from typing import Optional, Tuple

from ..errors import ConfigurationError

GENESIS = "0" * 64


def _canonical(doc: dict) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _chain_hash(doc: dict) -> str:
    return hashlib.sha256(_canonical(doc)).hexdigest()


class ForensicWriter:
    """Writes the chained log; sequence 0 is a self-hashed header."""

    def __init__(self, path: str, header: Optional[dict] = None,
                 algorithm: str = "sha256"):
        if algorithm != "sha256":
            raise ConfigurationError(
                f"unsupported chain hash algorithm {algorithm!r}")
        self.path = path
        self._seq = 0
        self._prev = GENESIS
        self._fh = open(path, "w", encoding="utf-8")
        head = {"kind": "header", "algorithm": algorithm}
        head.update(header or {})
        self._emit(head)

    def _emit(self, fields: dict) -> int:
        doc = dict(fields)
        doc["seq"] = self._seq
        doc["prev"] = self._prev
        doc["hash"] = _chain_hash(doc)
        self._fh.write(_canonical(doc).decode("utf-8") + "\n")
        self._prev = doc["hash"]
        seq = self._seq
        self._seq += 1
        return seq

    def append(self, record: dict) -> int:
        if "seq" in record or "prev" in record or "hash" in record:
            raise ConfigurationError(
                "seq/prev/hash are chain-managed fields")
        doc = {"kind": "record"}
        doc.update(record)
        return self._emit(doc)

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def verify_forensic_log(path: str) -> Tuple[bool, Optional[int]]:
    """Recompute the chain; return (True, None) or (False, first bad seq).

    The reported sequence is the line's position, since the stored seq
    field itself may be what was corrupted. An empty log verifies.
    """
    prev = GENESIS
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw == b"":
        return (True, None)
    lines = raw.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    for i, line in enumerate(lines):
        try:
            doc = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            return (False, i)
        if not isinstance(doc, dict) or "hash" not in doc:
            return (False, i)
        # Byte-identity with the canonical encoding closes reencoding
        # loopholes; then the chain fields and hash must agree.
        if _canonical(doc) != line:
            return (False, i)
        stored = doc.pop("hash")
        if doc.get("seq") != i or doc.get("prev") != prev:
            return (False, i)
        if _chain_hash(doc) != stored:
            return (False, i)
        prev = stored
    return (True, None)
