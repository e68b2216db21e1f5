"""scikit-learn style facade over the native graph pipeline.

These wrappers exist so the package slots into sklearn tooling
(get_params/set_params, clone, pipelines that pass object sequences).
X is a sequence of FlowRecord, not a numeric matrix: the classifier
builds windowed host/flow graphs internally, which is the whole point
of the model. sklearn's check_estimator suite is therefore not a target.
"""
from __future__ import annotations

from dataclasses import replace
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .errors import ConfigurationError, DataError
from .ingest import ATTACK, BENIGN, FlowRecord, Standardizer
from .model import HGUNet, ModelConfig
from .training import (
    build_window_graphs,
    evaluate,
    time_sorted,
    train_model,
)
from .windows import WindowConfig


class FlowStandardizer(TransformerMixin, BaseEstimator):
    """Zero-mean/unit-variance scaling on flow records (population std,
    near-constant features dropped). Array API: fit/transform take a
    sequence of FlowRecord and return a 2-D float matrix."""

    def fit(self, X: Sequence[FlowRecord], y=None):
        self.standardizer_ = Standardizer.fit(list(X))
        self.feature_names_out_ = self.standardizer_.feature_names
        return self

    def transform(self, X: Sequence[FlowRecord]) -> np.ndarray:
        self._check_fitted()
        recs = self.standardizer_.transform(list(X))
        return np.stack([r.features for r in recs]) if recs else \
            np.zeros((0, len(self.feature_names_out_)))

    def _check_fitted(self):
        if not hasattr(self, "standardizer_"):
            raise NotFittedError("FlowStandardizer is not fitted yet")


def _as_binary_label(value) -> str:
    if value in (0, 0.0, "0", BENIGN):
        return BENIGN
    if value in (1, 1.0, "1", ATTACK):
        return ATTACK
    raise DataError(f"cannot interpret {value!r} as a binary flow label")


class HeteroGraphUNetClassifier(ClassifierMixin, BaseEstimator):
    """Binary flow classifier over windowed host/flow graphs.

    fit(X, y=None): X is a sequence of FlowRecord; labels come from y if
    given, otherwise from the records. predict/predict_proba return rows
    aligned with the input order (flows are re-matched by id after
    windowing reorders them).
    """

    def __init__(self, hidden_dim: int = 16, heads: int = 4, depth: int = 3,
                 pool_ratios=(0.5, 0.4, 0.32), dropout_rate: float = 0.1,
                 pool_noise_std: float = 0.01, head_dims=(16, 8, 1),
                 bottleneck_layers: int = 1, host_width: int = 4,
                 delta_t: float = 30.0, max_flows: int = 64,
                 epochs: int = 15, lr: float = 3e-3, patience: int = 10,
                 val_fraction: float = 0.2, use_memory: bool = True,
                 seed: int = 0):
        self.hidden_dim = hidden_dim
        self.heads = heads
        self.depth = depth
        self.pool_ratios = pool_ratios
        self.dropout_rate = dropout_rate
        self.pool_noise_std = pool_noise_std
        self.head_dims = head_dims
        self.bottleneck_layers = bottleneck_layers
        self.host_width = host_width
        self.delta_t = delta_t
        self.max_flows = max_flows
        self.epochs = epochs
        self.lr = lr
        self.patience = patience
        self.val_fraction = val_fraction
        self.use_memory = use_memory
        self.seed = seed

    # ------------------------------------------------------------- helpers

    def _window_config(self) -> WindowConfig:
        return WindowConfig(delta_t=self.delta_t, max_flows=self.max_flows)

    def _graphs(self, records) -> list:
        return build_window_graphs(
            time_sorted(records), self._window_config(),
            d_h=self.host_width, use_memory=self.use_memory)

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "HeteroGraphUNetClassifier is not fitted yet")

    # ------------------------------------------------------------- sklearn API

    def fit(self, X: Sequence[FlowRecord], y=None):
        records = list(X)
        if not records:
            raise ConfigurationError("cannot fit on an empty record sequence")
        if y is not None:
            y = np.asarray(y)
            if y.shape[0] != len(records):
                raise ConfigurationError("y length does not match X")
            records = [replace(r, label=_as_binary_label(v))
                       for r, v in zip(records, y)]
        for r in records:
            if r.label not in (BENIGN, ATTACK):
                raise DataError(
                    f"flow {r.flow_id!r} has unusable label {r.label!r}")

        # Stratified train/validation carve-out on records, then scaling
        # fitted on the training side only.
        rng = np.random.default_rng(self.seed)
        labels = np.array([r.label for r in records])
        val_idx = []
        for cls in sorted(set(labels.tolist())):
            idx = rng.permutation(np.flatnonzero(labels == cls))
            val_idx.extend(idx[:max(1, int(round(self.val_fraction * idx.size)))])
        val_mask = np.zeros(len(records), dtype=bool)
        val_mask[np.array(val_idx, dtype=int)] = True
        train_recs = [r for r, m in zip(records, val_mask) if not m]
        val_recs = [r for r, m in zip(records, val_mask) if m]

        self.standardizer_ = Standardizer.fit(train_recs)
        config = ModelConfig(
            flow_width=len(self.standardizer_.feature_names),
            host_width=self.host_width, hidden_dim=self.hidden_dim,
            heads=self.heads, depth=self.depth,
            pool_ratios=tuple(self.pool_ratios),
            dropout_rate=self.dropout_rate,
            pool_noise_std=self.pool_noise_std,
            head_dims=tuple(self.head_dims),
            bottleneck_layers=self.bottleneck_layers, seed=self.seed)
        self.model_ = HGUNet(config)
        gtr = self._graphs(self.standardizer_.transform(train_recs))
        gva = self._graphs(self.standardizer_.transform(val_recs))
        self.train_result_ = train_model(
            self.model_, gtr, gva, epochs=self.epochs, lr=self.lr,
            patience=self.patience, seed=self.seed)
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X: Sequence[FlowRecord]) -> np.ndarray:
        self._check_fitted()
        records = list(X)
        if not records:
            return np.zeros((0, 2))
        p_by_id = {}
        graphs = self._graphs(self.standardizer_.transform(records))
        for g in graphs:
            scores = self.model_.predict(g)
            for fid, p in zip(scores.flow_ids, scores.probabilities):
                p_by_id[fid] = float(p)
        try:
            p1 = np.array([p_by_id[r.flow_id] for r in records])
        except KeyError as missing:
            raise DataError(f"flow {missing.args[0]!r} was not scored; "
                            "duplicate flow ids in X?") from None
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X: Sequence[FlowRecord]) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)

    def score_metrics(self, X: Sequence[FlowRecord]):
        """Full confusion-matrix metrics on labeled records (native API)."""
        self._check_fitted()
        graphs = self._graphs(self.standardizer_.transform(list(X)))
        return evaluate(self.model_, graphs)[0]
