from .api import create_app
from .decisions import (
    ACTION_ALERT,
    ACTION_BLOCK,
    ACTION_NONE,
    ACTION_RATE_LIMIT,
    DecisionConfig,
    DecisionThresholds,
    Verdict,
    auto_verdict,
    decide,
    is_grey_zone,
    severity,
)
from .forensic import ForensicWriter, verify_forensic_log
from .pipeline import RunSummary, extract_subgraph, model_version_of, run_pipeline
from .store import RunStore, export_feedback

__all__ = [
    "ACTION_ALERT",
    "ACTION_BLOCK",
    "ACTION_NONE",
    "ACTION_RATE_LIMIT",
    "DecisionConfig",
    "DecisionThresholds",
    "ForensicWriter",
    "RunStore",
    "RunSummary",
    "Verdict",
    "auto_verdict",
    "create_app",
    "decide",
    "export_feedback",
    "extract_subgraph",
    "is_grey_zone",
    "model_version_of",
    "run_pipeline",
    "severity",
    "verify_forensic_log",
]
