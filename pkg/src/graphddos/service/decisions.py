"""Probability-to-action tiering for the passive detection pipeline."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from ..errors import ConfigurationError

ACTION_NONE = "none"
ACTION_ALERT = "alert"
ACTION_RATE_LIMIT = "rate_limit"
ACTION_BLOCK = "block"

_SEVERITY = {ACTION_NONE: 0, ACTION_ALERT: 1, ACTION_RATE_LIMIT: 2,
             ACTION_BLOCK: 3}

SOURCE_AUTO = "auto"
SOURCE_ANALYST = "analyst"

DEFAULT_NOTIFY_FLOOR = 0.2
DEFAULT_EXPIRY_SECONDS = 300.0


def severity(action: str) -> int:
    if action not in _SEVERITY:
        raise ConfigurationError(f"unknown action {action!r}")
    return _SEVERITY[action]


@dataclass(frozen=True)
class DecisionThresholds:
    tau_analyst: float
    tau_auto: float

    def __post_init__(self):
        if not (0.0 <= self.tau_analyst < self.tau_auto <= 1.0):
            raise ConfigurationError(
                f"need 0 <= tau_analyst < tau_auto <= 1, got "
                f"({self.tau_analyst}, {self.tau_auto})")


@dataclass(frozen=True)
class DecisionConfig:
    thresholds: DecisionThresholds
    notify_floor: float = DEFAULT_NOTIFY_FLOOR
    # Grey-zone flows always raise an analyst alert; this toggle decides
    # whether they also get a provisional rate-limit or are tag-only.
    grey_zone_rate_limit: bool = True
    expiry_seconds: float = DEFAULT_EXPIRY_SECONDS

    def __post_init__(self):
        if not 0.0 <= self.notify_floor <= 1.0:
            raise ConfigurationError(
                f"notify_floor must be in [0, 1], got {self.notify_floor}")
        if self.expiry_seconds <= 0:
            raise ConfigurationError(
                f"expiry_seconds must be positive, got {self.expiry_seconds}")


def decide(p: float, cfg: DecisionConfig) -> str:
    """Pure, total action tiering: monotone in p for fixed config.

    p >= tau_auto blocks (closed bound); the grey zone
    [tau_analyst, tau_auto) rate-limits (or merely tags, per config) and
    alerts an analyst; scores at or above the notify floor alert only.
    """
    t = cfg.thresholds
    if p >= t.tau_auto:
        return ACTION_BLOCK
    if p >= t.tau_analyst:
        return ACTION_RATE_LIMIT if cfg.grey_zone_rate_limit else ACTION_ALERT
    if p >= cfg.notify_floor:
        return ACTION_ALERT
    return ACTION_NONE


def is_grey_zone(p: float, cfg: DecisionConfig) -> bool:
    t = cfg.thresholds
    return t.tau_analyst <= p < t.tau_auto


@dataclass(frozen=True)
class Verdict:
    flow_id: str
    p: float
    action: str
    issued_at: int  # epoch microseconds, from the stream's logical clock
    expires_at: Optional[int]
    source: str = SOURCE_AUTO

    def as_dict(self) -> dict:
        return {"flow_id": self.flow_id, "p": self.p, "action": self.action,
                "issued_at": self.issued_at, "expires_at": self.expires_at,
                "source": self.source}


def auto_verdict(flow_id: str, p: float, cfg: DecisionConfig,
                 issued_at: int) -> Verdict:
    """Automatic verdict with expiry on every acting tier; expiry uses the
    logical clock so replays stay byte-identical."""
    action = decide(p, cfg)
    expires = None
    if action != ACTION_NONE:
        expires = issued_at + int(cfg.expiry_seconds * 1_000_000)
    return Verdict(flow_id=flow_id, p=p, action=action, issued_at=issued_at,
                   expires_at=expires, source=SOURCE_AUTO)
