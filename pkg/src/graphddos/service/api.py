"""JSON-over-HTTP surface for the analyst console, versioned under /v1.

Read endpoints serve straight from the append-only run store; the only
mutation is feedback submission, serialized per process by a lock with
first-verdict-wins semantics (later submissions become amendments and
return a conflict carrying the binding verdict).
"""
from __future__ import annotations

import os
import threading
from typing import Literal, Optional

from fastapi import FastAPI, HTTPException, Query
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from ..errors import NotFoundError
from .store import RunStore


class FeedbackIn(BaseModel):
    action: Literal["approve", "block", "rate_limit"]
    rationale: str = Field(min_length=1)
    analyst_id: str = "analyst"


def _alert_summary(alert: dict, verdict: Optional[dict]) -> dict:
    return {
        "alert_id": alert["alert_id"],
        "flow_id": alert["flow_id"],
        "p": alert["p"],
        "window_index": alert["window_index"],
        "issued_at": alert["issued_at"],
        "action": alert["action"],
        "metadata": alert["metadata"],
        "status": "adjudicated" if verdict else "open",
        "verdict": verdict,
    }


def create_app(run_dir: str, static_dir: Optional[str] = None) -> FastAPI:
    store = RunStore(run_dir)
    feedback_lock = threading.Lock()
    app = FastAPI(title="graphddos analyst API", version="1")

    @app.get("/v1/health")
    def health() -> dict:
        try:
            run_id = store.read_summary().get("run_id")
        except NotFoundError:
            run_id = None
        return {"status": "ok", "run_id": run_id}

    @app.get("/v1/summary")
    def summary() -> dict:
        try:
            return store.read_summary()
        except NotFoundError:
            raise HTTPException(status_code=404, detail="no completed run")

    @app.get("/v1/alerts")
    def list_alerts(page: int = Query(1, ge=1),
                    page_size: int = Query(20, ge=1, le=200),
                    status: Optional[Literal["open", "adjudicated"]] = None
                    ) -> dict:
        alerts = list(reversed(store.alerts()))  # newest first
        verdicts = {a["alert_id"]: store.verdict_for(a["alert_id"])
                    for a in alerts}
        rows = [_alert_summary(a, verdicts[a["alert_id"]]) for a in alerts]
        if status is not None:
            rows = [r for r in rows if r["status"] == status]
        total = len(rows)
        start = (page - 1) * page_size
        return {"alerts": rows[start:start + page_size], "page": page,
                "page_size": page_size, "total": total}

    @app.get("/v1/alerts/{alert_id}")
    def alert_detail(alert_id: str) -> dict:
        try:
            alert = store.alert_by_id(alert_id)
        except NotFoundError:
            raise HTTPException(status_code=404,
                                detail=f"no alert {alert_id!r}")
        verdict = store.verdict_for(alert_id)
        doc = dict(alert)
        doc["status"] = "adjudicated" if verdict else "open"
        doc["verdict"] = verdict
        doc["amendments"] = [f for f in store.feedback_for(alert_id)
                             if f.get("amendment")]
        return doc

    @app.post("/v1/alerts/{alert_id}/feedback", status_code=201)
    def submit_feedback(alert_id: str, body: FeedbackIn) -> dict:
        with feedback_lock:
            try:
                record, first = store.add_feedback(
                    alert_id, body.action, body.rationale, body.analyst_id)
            except NotFoundError:
                raise HTTPException(status_code=404,
                                    detail=f"no alert {alert_id!r}")
            if not first:
                raise HTTPException(
                    status_code=409,
                    detail={"message": "alert already adjudicated; "
                                       "recorded as amendment",
                            "verdict": store.verdict_for(alert_id)})
            return {"feedback": record, "status": "adjudicated"}

    if static_dir and os.path.isdir(static_dir):
        app.mount("/", StaticFiles(directory=static_dir, html=True),
                  name="console")

    return app
