"""Run-directory layout and the append-only stores the API serves from.

A run directory holds:
  run.json           summary written at the end of a replay
  forensic.jsonl     hash-chained scoring log
  predictions.jsonl  one {flow_id, p, label} line per scored flow
  alerts.jsonl       grey-zone alerts with saliency and subgraph payloads
  flows.jsonl        canonical record dump used by the feedback export
  feedback.jsonl     analyst verdicts and amendments
"""
from __future__ import annotations

import json
import os
import time
from typing import Dict, List, Optional, Tuple

from ..errors import ConfigurationError, NotFoundError
from ..ingest import ATTACK, BENIGN, FlowRecord, read_canonical_jsonl

VALID_FEEDBACK_ACTIONS = ("approve", "block", "rate_limit")

RUN_JSON = "run.json"
FORENSIC = "forensic.jsonl"
PREDICTIONS = "predictions.jsonl"
ALERTS = "alerts.jsonl"
FLOWS = "flows.jsonl"
FEEDBACK = "feedback.jsonl"


class RunStore:
    def __init__(self, run_dir: str, create: bool = False):
        self.run_dir = run_dir
        if create:
            os.makedirs(run_dir, exist_ok=True)
        elif not os.path.isdir(run_dir):
            raise ConfigurationError(f"run directory {run_dir!r} does not exist")

    def path(self, name: str) -> str:
        return os.path.join(self.run_dir, name)

    # ------------------------------------------------------------- summary

    def write_summary(self, doc: dict) -> None:
        with open(self.path(RUN_JSON), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)
            fh.write("\n")

    def read_summary(self) -> dict:
        try:
            with open(self.path(RUN_JSON), encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            raise NotFoundError(f"no run summary in {self.run_dir!r}")

    # ------------------------------------------------------------- jsonl

    def append_jsonl(self, name: str, doc: dict) -> None:
        with open(self.path(name), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(doc, sort_keys=True) + "\n")

    def read_jsonl(self, name: str) -> List[dict]:
        try:
            with open(self.path(name), encoding="utf-8") as fh:
                return [json.loads(line) for line in fh if line.strip()]
        except FileNotFoundError:
            return []

    # ------------------------------------------------------------- alerts

    def alerts(self) -> List[dict]:
        """Alerts in scoring order (the API reverses for newest-first)."""
        return self.read_jsonl(ALERTS)

    def alert_by_id(self, alert_id: str) -> dict:
        for alert in self.alerts():
            if alert["alert_id"] == alert_id:
                return alert
        raise NotFoundError(f"no alert {alert_id!r}")

    # ------------------------------------------------------------- feedback

    def feedback(self) -> List[dict]:
        return self.read_jsonl(FEEDBACK)

    def feedback_for(self, alert_id: str) -> List[dict]:
        return [f for f in self.feedback() if f["alert_id"] == alert_id]

    def verdict_for(self, alert_id: str) -> Optional[dict]:
        """The binding (first) verdict, or None while the alert is open."""
        for f in self.feedback():
            if f["alert_id"] == alert_id and not f.get("amendment"):
                return f
        return None

    def add_feedback(self, alert_id: str, action: str, rationale: str,
                     analyst_id: str) -> Tuple[dict, bool]:
        """Record feedback; first verdict wins, later ones become
        amendments. Returns (record, is_first)."""
        if action not in VALID_FEEDBACK_ACTIONS:
            raise ConfigurationError(f"invalid feedback action {action!r}")
        if not rationale.strip():
            raise ConfigurationError("rationale must be non-empty")
        self.alert_by_id(alert_id)  # not-found propagates
        first = self.verdict_for(alert_id) is None
        record = {
            "alert_id": alert_id,
            "flow_id": self.alert_by_id(alert_id)["flow_id"],
            "action": action,
            "rationale": rationale,
            "analyst_id": analyst_id,
            "timestamp": time.time(),
            "amendment": not first,
        }
        self.append_jsonl(FEEDBACK, record)
        return record, first

    # ------------------------------------------------------------- flows

    def flows(self) -> List[FlowRecord]:
        p = self.path(FLOWS)
        if not os.path.exists(p):
            return []
        return read_canonical_jsonl(p)


_FEEDBACK_LABEL = {"approve": BENIGN, "block": ATTACK}


def export_feedback(run_dir: str,
                    out_path: Optional[str] = None
                    ) -> Tuple[List[FlowRecord], int]:
    """Join binding verdicts with the original flow records, producing a
    labeled corpus for retraining. approve -> benign, block -> attack,
    rate_limit -> excluded as uncertain. Returns (records, skipped)."""
    from dataclasses import replace

    from ..ingest import write_canonical_jsonl

    store = RunStore(run_dir)
    by_id: Dict[str, FlowRecord] = {r.flow_id: r for r in store.flows()}
    out: List[FlowRecord] = []
    skipped = 0
    for fb in store.feedback():
        if fb.get("amendment"):
            continue
        label = _FEEDBACK_LABEL.get(fb["action"])
        if label is None:  # rate_limit: uncertain, not training data
            continue
        rec = by_id.get(fb["flow_id"])
        if rec is None:
            skipped += 1
            continue
        out.append(replace(rec, label=label))
    if out_path is not None:
        write_canonical_jsonl(out, out_path)
    return out, skipped
