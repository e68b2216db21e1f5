"""Heterogeneous graph flow classifier for DDoS detection and triage."""

__version__ = "0.1.0"
