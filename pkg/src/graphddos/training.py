"""Training loop, stratified cross-validation, and evaluation metrics."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from dataclasses import replace as dc_replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, ConsistencyError, DataError, DivergenceError
from .graph import HeteroGraph, SlidingWindowMemory, build_graph
from .ingest import (
    ATTACK,
    FlowRecord,
    Standardizer,
    apply_standardizer,
    fit_standardizer,
    label_to_target,
    select_features,
)
from .model import HGUNet, ModelConfig
from .nn import Adam, RngStream
from .windows import WindowConfig, window_batches

VAL_FRACTION = 0.2  # of the non-test remainder


# --------------------------------------------------------------------------- folds


@dataclass(frozen=True)
class Fold:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


@dataclass(frozen=True)
class FoldPlan:
    n: int
    k: int
    seed: int
    folds: Tuple[Fold, ...]

    def check(self) -> None:
        """Test sets partition [0, n); train/val/test are pairwise disjoint."""
        seen = np.concatenate([f.test for f in self.folds])
        if sorted(seen.tolist()) != list(range(self.n)):
            raise ConsistencyError("test folds do not partition the dataset")
        for i, f in enumerate(self.folds):
            parts = np.concatenate([f.train, f.val, f.test])
            if np.unique(parts).size != parts.size:
                raise ConsistencyError(f"fold {i} has overlapping splits")
            if parts.size != self.n:
                raise ConsistencyError(f"fold {i} does not cover the dataset")


def _largest_remainder(quotas: Sequence[float], total: int) -> List[int]:
    """Integer apportionment: floor everything, hand extras to the largest
    fractional parts (ties favor the larger quota, then position)."""
    base = [int(np.floor(q)) for q in quotas]
    extras = total - sum(base)
    frac = [(q - np.floor(q)) for q in quotas]
    order = sorted(range(len(quotas)),
                   key=lambda i: (-frac[i], -quotas[i], i))
    for i in order[:max(0, extras)]:
        base[i] += 1
    return base


def make_folds(labels: Sequence, k: int = 10, seed: int = 0) -> FoldPlan:
    """Stratified k-fold split with a stratified 20% validation carve-out
    from each fold's remainder. Deterministic in (labels, k, seed)."""
    labels = np.asarray(labels)
    n = int(labels.size)
    if k < 2:
        raise ConfigurationError(f"need k >= 2 folds, got {k}")
    rng = np.random.default_rng(seed)
    classes = sorted({str(v) for v in labels.tolist()})
    order: Dict[str, np.ndarray] = {}
    for c in classes:
        idx = np.flatnonzero(labels.astype(str) == c)
        if idx.size < k:
            raise ConfigurationError(
                f"class {c!r} has {idx.size} members; stratified {k}-fold needs >= {k}")
        order[c] = rng.permutation(idx)

    # Per-class chunk sizes; extras go to the currently least-loaded folds so
    # overall fold sizes stay within one of each other.
    loads = [0] * k
    sizes: Dict[str, List[int]] = {}
    for c in classes:
        base, extra = divmod(order[c].size, k)
        row = [base] * k
        for f in sorted(range(k), key=lambda f: (loads[f], f))[:extra]:
            row[f] += 1
        sizes[c] = row
        for f in range(k):
            loads[f] += row[f]

    chunks: Dict[str, List[np.ndarray]] = {}
    for c in classes:
        pos, out = 0, []
        for f in range(k):
            out.append(order[c][pos:pos + sizes[c][f]])
            pos += sizes[c][f]
        chunks[c] = out

    folds = []
    for f in range(k):
        test = np.concatenate([chunks[c][f] for c in classes])
        rest = {c: np.concatenate([chunks[c][g] for g in range(k) if g != f])
                for c in classes}
        n_rest = sum(r.size for r in rest.values())
        target = int(np.floor(VAL_FRACTION * n_rest + 0.5))
        quota = _largest_remainder([VAL_FRACTION * rest[c].size for c in classes],
                                   target)
        val_parts, train_parts = [], []
        for c, q in zip(classes, quota):
            val_parts.append(rest[c][:q])
            train_parts.append(rest[c][q:])
        folds.append(Fold(
            train=np.sort(np.concatenate(train_parts)).astype(np.int64),
            val=np.sort(np.concatenate(val_parts)).astype(np.int64),
            test=np.sort(test).astype(np.int64),
        ))
    plan = FoldPlan(n=n, k=k, seed=seed, folds=tuple(folds))
    plan.check()
    return plan


# --------------------------------------------------------------------------- metrics


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def precision(self) -> float:
        # Convention: 0 when nothing was predicted positive.
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if (p + r) > 0 else 0.0

    def as_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "accuracy": self.accuracy, "precision": self.precision,
            "recall": self.recall, "f1": self.f1,
        }

    @classmethod
    def from_predictions(cls, y_true: Sequence[int], p: Sequence[float],
                         threshold: float = 0.5) -> "Metrics":
        y = np.asarray(y_true, dtype=int)
        pred = (np.asarray(p, dtype=float) >= threshold).astype(int)
        if y.shape != pred.shape:
            raise ConfigurationError("label/probability length mismatch")
        tp = int(np.sum((pred == 1) & (y == 1)))
        fp = int(np.sum((pred == 1) & (y == 0)))
        tn = int(np.sum((pred == 0) & (y == 0)))
        fn = int(np.sum((pred == 0) & (y == 1)))
        return cls(tp=tp, fp=fp, tn=tn, fn=fn)


@dataclass(frozen=True)
class PredictionRow:
    flow_id: str
    p: float
    label: Optional[int]  # None when the flow had no usable label

    def as_dict(self) -> dict:
        return {"flow_id": self.flow_id, "p": self.p, "label": self.label}


def metrics_from_dump(rows: Iterable[PredictionRow],
                      threshold: float = 0.5) -> Metrics:
    """Recount the confusion matrix from a prediction dump. Used as the
    independent check against Metrics reported by evaluate()."""
    labeled = [(r.label, r.p) for r in rows if r.label is not None]
    if not labeled:
        return Metrics(0, 0, 0, 0)
    y, p = zip(*labeled)
    return Metrics.from_predictions(y, p, threshold)


# --------------------------------------------------------------------------- graphs


def time_sorted(records: Sequence[FlowRecord]) -> List[FlowRecord]:
    return sorted(records, key=lambda r: r.timestamp)


def build_window_graphs(records: Sequence[FlowRecord], wcfg: WindowConfig, *,
                        d_h: int = 8, use_memory: bool = True,
                        per_host_cap: int = 8,
                        global_cap: int = 4096) -> List[HeteroGraph]:
    """Window a time-ordered record stream and build one graph per window,
    threading the sliding-window memory through in stream order."""
    memory = SlidingWindowMemory(per_host_cap, global_cap) if use_memory else None
    graphs = []
    for batch in window_batches(records, wcfg):
        graphs.append(build_graph(batch.records, memory=memory, d_h=d_h))
        if memory is not None:
            memory.update(batch.records)
    return graphs


def class_weights_from_graphs(graphs: Sequence[HeteroGraph]) -> Tuple[float, float]:
    """Inverse-frequency (w_neg, w_pos) over labeled in-window flows."""
    n_pos = n_neg = 0
    for g in graphs:
        labels = g.flow_labels[~g.historical_mask]
        labels = labels[np.isfinite(labels)]
        n_pos += int(np.sum(labels > 0.5))
        n_neg += int(np.sum(labels <= 0.5))
    n = n_pos + n_neg
    if n == 0 or n_pos == 0 or n_neg == 0:
        return (1.0, 1.0)
    return (n / (2.0 * n_neg), n / (2.0 * n_pos))


# --------------------------------------------------------------------------- training


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    val_f1: float


@dataclass
class TrainResult:
    best_epoch: int
    best_val_f1: float
    epochs_run: int
    stopped_early: bool
    history: List[EpochLog] = field(default_factory=list)


def _snapshot(bag) -> Dict[str, np.ndarray]:
    return {name: bag[name].value.copy() for name in bag.names()}


def _restore(bag, snap: Dict[str, np.ndarray]) -> None:
    for name, value in snap.items():
        bag[name].value[...] = value


def train_model(model: HGUNet, train_graphs: Sequence[HeteroGraph],
                val_graphs: Sequence[HeteroGraph], *, epochs: int,
                lr: float = 1e-3, patience: int = 10, seed: int = 0,
                class_weights: Optional[Tuple[float, float]] = None,
                threshold: float = 0.5) -> TrainResult:
    """Epochs over shuffled training windows with one optimizer step per
    window; keeps the parameters from the best-validation-F1 epoch. A
    zero-epoch budget leaves the freshly initialized parameters in place."""
    if epochs < 0:
        raise ConfigurationError(f"epoch budget must be >= 0, got {epochs}")
    if patience < 1:
        raise ConfigurationError(f"patience must be >= 1, got {patience}")
    if epochs > 0 and not train_graphs:
        raise ConfigurationError("no training windows")
    if epochs > 0 and not val_graphs:
        raise ConfigurationError("no validation windows")
    if class_weights is None:
        class_weights = class_weights_from_graphs(train_graphs)

    opt = Adam(model.bag, lr=lr)
    root = RngStream(seed)
    best = _snapshot(model.bag)
    best_f1 = -np.inf
    best_epoch = 0
    stale = 0
    history: List[EpochLog] = []
    stopped_early = False
    epochs_run = 0

    for epoch in range(1, epochs + 1):
        erng = root.spawn(f"epoch/{epoch}")
        order = erng.permutation(len(train_graphs))
        drop_rng = erng.spawn("dropout")
        total = 0.0
        windows = 0
        for gi in order:
            g = train_graphs[int(gi)]
            model.bag.zero_grads()
            loss, n_labeled = model.loss_backward(
                g, rng=drop_rng, training=True, class_weights=class_weights)
            if loss is None:
                continue
            if not np.isfinite(loss):
                raise DivergenceError("training loss is not finite",
                                      epoch=epoch, lr=lr)
            opt.step()
            total += float(loss)
            windows += 1
        mean_loss = total / windows if windows else float("nan")
        val_metrics, _ = evaluate(model, val_graphs, threshold=threshold)
        history.append(EpochLog(epoch, mean_loss, val_metrics.f1))
        epochs_run = epoch
        if val_metrics.f1 > best_f1:
            best_f1 = val_metrics.f1
            best_epoch = epoch
            best = _snapshot(model.bag)
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                stopped_early = True
                break

    _restore(model.bag, best)
    return TrainResult(best_epoch=best_epoch,
                       best_val_f1=float(best_f1) if np.isfinite(best_f1) else 0.0,
                       epochs_run=epochs_run, stopped_early=stopped_early,
                       history=history)


def predict_rows(model: HGUNet,
                 graphs: Sequence[HeteroGraph]) -> List[PredictionRow]:
    rows: List[PredictionRow] = []
    for g in graphs:
        scores = model.predict(g)
        labels = g.flow_labels[~g.historical_mask]
        for fid, p, y in zip(scores.flow_ids, scores.probabilities, labels):
            rows.append(PredictionRow(
                flow_id=fid, p=float(p),
                label=int(y > 0.5) if np.isfinite(y) else None))
    return rows


def evaluate(model: HGUNet, graphs: Sequence[HeteroGraph],
             threshold: float = 0.5) -> Tuple[Metrics, List[PredictionRow]]:
    """Score every in-window flow and accumulate the confusion matrix over
    the labeled ones at the given threshold."""
    if not graphs:
        raise ConfigurationError("no windows to evaluate")
    rows = predict_rows(model, graphs)
    return metrics_from_dump(rows, threshold), rows


# --------------------------------------------------------------------------- aggregation

METRIC_NAMES = ("accuracy", "precision", "recall", "f1")


@dataclass(frozen=True)
class AggregateCell:
    mean: float
    std: float

    def render(self) -> str:
        return f"{self.mean:.3f} ± {self.std:.3f}"


def aggregate_folds(per_fold: Sequence[Metrics]) -> Dict[str, AggregateCell]:
    """Arithmetic mean and sample (n-1) standard deviation per metric."""
    if len(per_fold) < 2:
        raise ConfigurationError("aggregation needs >= 2 folds")
    out = {}
    for name in METRIC_NAMES:
        vals = np.array([getattr(m, name) for m in per_fold], dtype=float)
        out[name] = AggregateCell(mean=float(vals.mean()),
                                  std=float(vals.std(ddof=1)))
    return out


def render_markdown(per_fold: Sequence[Metrics],
                    agg: Dict[str, AggregateCell]) -> str:
    lines = ["| fold | accuracy | precision | recall | f1 |",
             "|------|----------|-----------|--------|----|"]
    for i, m in enumerate(per_fold):
        lines.append(f"| {i} | {m.accuracy:.3f} | {m.precision:.3f} "
                     f"| {m.recall:.3f} | {m.f1:.3f} |")
    lines.append("| mean ± std | " +
                 " | ".join(agg[n].render() for n in METRIC_NAMES) + " |")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------- protocol


@dataclass
class FoldReport:
    fold_index: int
    metrics: Metrics
    rows: List[PredictionRow]
    train_result: TrainResult


@dataclass
class CrossvalReport:
    plan: FoldPlan
    fold_reports: List[FoldReport]
    aggregate: Dict[str, AggregateCell]

    def markdown(self) -> str:
        return render_markdown([f.metrics for f in self.fold_reports],
                               self.aggregate)


def _guard_no_leakage(fold: Fold) -> None:
    # The standardizer is fit on fold.train only; assert the fit set cannot
    # touch validation or test indices.
    if np.intersect1d(fold.train, fold.val).size:
        raise ConsistencyError("train/val index overlap")
    if np.intersect1d(fold.train, fold.test).size:
        raise ConsistencyError("train/test index overlap")
    if np.intersect1d(fold.val, fold.test).size:
        raise ConsistencyError("val/test index overlap")


def run_fold(records: Sequence[FlowRecord], fold: Fold, fold_index: int, *,
             model_config: ModelConfig, wcfg: WindowConfig, epochs: int,
             lr: float = 1e-3, patience: int = 10, seed: int = 0,
             threshold: float = 0.5, use_memory: bool = True,
             out_dir: Optional[str] = None) -> FoldReport:
    _guard_no_leakage(fold)
    train_recs = [records[int(i)] for i in fold.train]
    std = fit_standardizer(train_recs)
    # The scaler may drop constant columns; the model width follows it.
    model_config = dc_replace(model_config,
                              flow_width=len(std.feature_names))

    def prep(ix: np.ndarray) -> List[HeteroGraph]:
        recs = apply_standardizer([records[int(i)] for i in ix], std)
        return build_window_graphs(time_sorted(recs), wcfg,
                                   d_h=model_config.host_width,
                                   use_memory=use_memory)

    gtr, gva, gte = prep(fold.train), prep(fold.val), prep(fold.test)
    model = HGUNet(model_config)
    result = train_model(model, gtr, gva, epochs=epochs, lr=lr,
                         patience=patience, seed=seed * 10007 + fold_index,
                         threshold=threshold)
    metrics, rows = evaluate(model, gte, threshold=threshold)
    if metrics_from_dump(rows, threshold) != metrics:
        raise ConsistencyError(
            f"fold {fold_index}: prediction dump disagrees with reported metrics")
    if out_dir:
        fdir = os.path.join(out_dir, f"fold_{fold_index}")
        os.makedirs(fdir, exist_ok=True)
        model.save(os.path.join(fdir, "checkpoint.json"))
        with open(os.path.join(fdir, "standardizer.json"), "w") as fh:
            json.dump(std.to_json(), fh, sort_keys=True)
        with open(os.path.join(fdir, "predictions.jsonl"), "w") as fh:
            for row in rows:
                fh.write(json.dumps(row.as_dict(), sort_keys=True) + "\n")
        with open(os.path.join(fdir, "metrics.json"), "w") as fh:
            json.dump(metrics.as_dict(), fh, sort_keys=True, indent=2)
    return FoldReport(fold_index=fold_index, metrics=metrics, rows=rows,
                      train_result=result)


def run_crossval(records: Sequence[FlowRecord], *, k: int = 10, seed: int = 0,
                 model_config: ModelConfig, wcfg: WindowConfig, epochs: int,
                 lr: float = 1e-3, patience: int = 10, threshold: float = 0.5,
                 use_memory: bool = True, folds: Optional[Sequence[int]] = None,
                 out_dir: Optional[str] = None) -> CrossvalReport:
    """Full stratified k-fold protocol: per fold, fit the scaler on train
    only, window each split in time order, train, evaluate on test."""
    labels = []
    for r in records:
        if r.label is None:
            raise DataError(f"flow {r.flow_id!r} is unlabeled; "
                            "apply a label policy before cross-validation")
        labels.append(r.label)
    plan = make_folds(labels, k=k, seed=seed)
    wanted = list(range(k)) if folds is None else [int(f) for f in folds]
    reports = [run_fold(records, plan.folds[f], f, model_config=model_config,
                        wcfg=wcfg, epochs=epochs, lr=lr, patience=patience,
                        seed=seed, threshold=threshold, use_memory=use_memory,
                        out_dir=out_dir)
               for f in wanted]
    agg = aggregate_folds([r.metrics for r in reports]) if len(reports) >= 2 \
        else {}
    report = CrossvalReport(plan=plan, fold_reports=reports, aggregate=agg)
    if out_dir and agg:
        with open(os.path.join(out_dir, "aggregate.md"), "w") as fh:
            fh.write(report.markdown())
        with open(os.path.join(out_dir, "aggregate.json"), "w") as fh:
            json.dump({n: {"mean": c.mean, "std": c.std}
                       for n, c in agg.items()}, fh, sort_keys=True, indent=2)
    return report
