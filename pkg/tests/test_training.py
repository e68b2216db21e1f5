import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphddos.errors import ConfigurationError, ConsistencyError, DivergenceError
from graphddos.ingest import ATTACK, BENIGN, FlowRecord
from graphddos.model import HGUNet, ModelConfig
from graphddos.synthetic import (
    cloud_corpus,
    fan_in_by_destination,
    learnable_corpus,
    stratified_subsample,
)
from graphddos.training import (
    AggregateCell,
    Fold,
    Metrics,
    PredictionRow,
    _guard_no_leakage,
    aggregate_folds,
    build_window_graphs,
    class_weights_from_graphs,
    evaluate,
    make_folds,
    metrics_from_dump,
    run_crossval,
    train_model,
)
from graphddos.windows import WindowConfig

TINY = ModelConfig(flow_width=8, host_width=4, hidden_dim=8, heads=2,
                   depth=3, dropout_rate=0.0, head_dims=(8, 4, 1), seed=5)


# ---------------------------------------------------------------- folds


def test_balanced_100_items_k10():
    labels = ["a"] * 50 + ["b"] * 50
    plan = make_folds(labels, k=10, seed=1)
    labels = np.array(labels)
    for f in plan.folds:
        assert f.test.size == 10
        assert np.sum(labels[f.test] == "a") == 5
        assert np.sum(labels[f.test] == "b") == 5
        assert f.val.size == 18
        assert f.train.size == 72


def test_fold_fractions_within_one():
    rng = np.random.default_rng(3)
    labels = np.where(rng.random(997) < 0.2, "attack", "benign")
    plan = make_folds(labels, k=10, seed=7)
    n = labels.size
    for f in plan.folds:
        assert abs(f.test.size - 0.10 * n) <= 1 + n // 10 - (n - 1) // 10
        rest = n - f.test.size
        assert abs(f.val.size - 0.2 * rest) <= 1
        assert f.train.size + f.val.size + f.test.size == n
    sizes = [f.test.size for f in plan.folds]
    assert max(sizes) - min(sizes) <= 1
    plan.check()


def test_fold_determinism_and_seed_sensitivity():
    labels = ["a"] * 40 + ["b"] * 60
    p1 = make_folds(labels, k=5, seed=9)
    p2 = make_folds(labels, k=5, seed=9)
    for f1, f2 in zip(p1.folds, p2.folds):
        np.testing.assert_array_equal(f1.train, f2.train)
        np.testing.assert_array_equal(f1.val, f2.val)
        np.testing.assert_array_equal(f1.test, f2.test)
    p3 = make_folds(labels, k=5, seed=10)
    assert any(not np.array_equal(a.test, b.test)
               for a, b in zip(p1.folds, p3.folds))


def test_fold_small_class_rejected():
    with pytest.raises(ConfigurationError, match="class"):
        make_folds(["a"] * 3 + ["b"] * 50, k=5)
    with pytest.raises(ConfigurationError):
        make_folds(["a"] * 10, k=1)


def test_fold_val_is_stratified():
    labels = np.array(["a"] * 200 + ["b"] * 800)
    plan = make_folds(labels, k=10, seed=2)
    for f in plan.folds:
        frac = np.mean(labels[f.val] == "a")
        assert 0.15 <= frac <= 0.25


def test_leakage_guard():
    good = Fold(train=np.array([0, 1]), val=np.array([2]), test=np.array([3]))
    _guard_no_leakage(good)
    bad = Fold(train=np.array([0, 1]), val=np.array([1]), test=np.array([3]))
    with pytest.raises(ConsistencyError):
        _guard_no_leakage(bad)


# ---------------------------------------------------------------- metrics


def test_metrics_worked_example():
    m = Metrics(tp=9, fp=1, tn=89, fn=1)
    assert m.precision == 0.9
    assert m.recall == 0.9
    assert abs(m.f1 - 0.9) < 1e-12
    assert m.accuracy == 0.98
    assert m.total == 100


def test_metrics_all_benign_convention():
    y = [1, 1, 0, 0]
    p = [0.1, 0.2, 0.1, 0.3]
    m = Metrics.from_predictions(y, p, threshold=0.5)
    assert m.recall == 0.0
    assert m.precision == 0.0
    assert m.f1 == 0.0


@settings(max_examples=200, deadline=None)
@given(tp=st.integers(0, 50), fp=st.integers(0, 50),
       tn=st.integers(0, 50), fn=st.integers(0, 50))
def test_metrics_harmonic_mean_identity(tp, fp, tn, fn):
    m = Metrics(tp=tp, fp=fp, tn=tn, fn=fn)
    p, r = m.precision, m.recall
    if p + r > 0:
        assert abs(m.f1 - 2 * p * r / (p + r)) < 1e-12
    else:
        assert m.f1 == 0.0
    assert m.total == tp + fp + tn + fn


def test_metrics_recount_matches():
    rng = np.random.default_rng(5)
    rows = [PredictionRow(flow_id=f"f{i}", p=float(rng.random()),
                          label=int(rng.integers(0, 2)) if i % 7 else None)
            for i in range(200)]
    m = metrics_from_dump(rows)
    labeled = [(r.label, r.p) for r in rows if r.label is not None]
    y, p = zip(*labeled)
    assert m == Metrics.from_predictions(y, p)
    assert m.total == len(labeled)


# ---------------------------------------------------------------- aggregation


def test_aggregate_two_point_example():
    ms = [Metrics(tp=0, fp=0, tn=0, fn=0)] * 2
    vals = [0.95, 0.97]
    cells = {"f1": AggregateCell(mean=float(np.mean(vals)),
                                 std=float(np.std(vals, ddof=1)))}
    assert cells["f1"].render() == "0.960 ± 0.014"
    # Cross-check against the stdlib's independent implementation.
    assert abs(cells["f1"].std - statistics.stdev(vals)) < 1e-15


def test_aggregate_identical_folds_zero_std():
    m = Metrics(tp=9, fp=1, tn=89, fn=1)
    agg = aggregate_folds([m, m, m])
    for cell in agg.values():
        assert cell.std == 0.0
        assert cell.render().endswith("0.000")
    assert agg["accuracy"].mean == 0.98


def test_aggregate_needs_two_folds():
    with pytest.raises(ConfigurationError):
        aggregate_folds([Metrics(1, 1, 1, 1)])


def test_aggregate_matches_stdlib_recomputation():
    rng = np.random.default_rng(11)
    ms = [Metrics(tp=int(rng.integers(1, 50)), fp=int(rng.integers(1, 50)),
                  tn=int(rng.integers(1, 50)), fn=int(rng.integers(1, 50)))
          for _ in range(6)]
    agg = aggregate_folds(ms)
    for name in ("accuracy", "precision", "recall", "f1"):
        vals = [getattr(m, name) for m in ms]
        assert abs(agg[name].mean - statistics.fmean(vals)) < 1e-12
        assert abs(agg[name].std - statistics.stdev(vals)) < 1e-12


# ---------------------------------------------------------------- corpus


def test_learnable_corpus_shape_and_fan_in():
    recs = learnable_corpus(n_flows=1000, seed=4)
    assert len(recs) == 1000
    labels = [r.label for r in recs]
    assert labels.count(ATTACK) == 250
    assert labels.count(BENIGN) == 750
    ts = [r.timestamp for r in recs]
    assert ts == sorted(ts)
    fan = fan_in_by_destination(recs)
    by_label = {}
    for r in recs:
        by_label.setdefault(r.dst_ip, set()).add(r.label)
    for dst, kinds in by_label.items():
        assert len(kinds) == 1  # victim and service pools are disjoint
        if kinds == {ATTACK}:
            assert fan[dst] >= 20
        else:
            assert fan[dst] <= 3


def test_learnable_corpus_deterministic():
    a = learnable_corpus(n_flows=300, seed=8)
    b = learnable_corpus(n_flows=300, seed=8)
    for ra, rb in zip(a, b):
        assert ra.flow_id == rb.flow_id
        assert ra.timestamp == rb.timestamp
        assert ra.features.tobytes() == rb.features.tobytes()
    c = learnable_corpus(n_flows=300, seed=9)
    assert any(ra.features.tobytes() != rc.features.tobytes()
               for ra, rc in zip(a, c))


def test_cloud_corpus_has_three_labels():
    recs = cloud_corpus(n_flows=900, seed=1)
    labels = {r.label for r in recs}
    assert labels == {"benign", "attack", "suspicious"}
    n_susp = sum(1 for r in recs if r.label == "suspicious")
    assert abs(n_susp - 0.15 * 900) <= 1


def test_stratified_subsample():
    recs = learnable_corpus(n_flows=1000, seed=2)
    sub = stratified_subsample(recs, 100, seed=3)
    assert len(sub) == 100
    labels = [r.label for r in sub]
    assert abs(labels.count(ATTACK) - 25) <= 1
    ts = [r.timestamp for r in sub]
    assert ts == sorted(ts)
    again = stratified_subsample(recs, 100, seed=3)
    assert [r.flow_id for r in again] == [r.flow_id for r in sub]


# ---------------------------------------------------------------- training loop


def graphs_from(records, max_flows=32, delta_t=60.0):
    return build_window_graphs(records, WindowConfig(delta_t=delta_t,
                                                     max_flows=max_flows),
                               d_h=4)


def test_memory_threads_between_windows():
    recs = learnable_corpus(n_flows=200, seed=6)
    graphs = graphs_from(recs, max_flows=20)
    assert len(graphs) >= 2
    assert any(g.historical_mask.any() for g in graphs[1:])
    lone = build_window_graphs(recs, WindowConfig(delta_t=60.0, max_flows=20),
                               d_h=4, use_memory=False)
    assert not any(g.historical_mask.any() for g in lone)


def test_class_weights_inverse_frequency():
    recs = learnable_corpus(n_flows=400, seed=7)
    graphs = graphs_from(recs)
    w_neg, w_pos = class_weights_from_graphs(graphs)
    n_pos = sum(1 for r in recs if r.label == ATTACK)
    n_neg = len(recs) - n_pos
    assert w_neg == pytest.approx(400 / (2 * n_neg))
    assert w_pos == pytest.approx(400 / (2 * n_pos))
    assert w_pos > w_neg  # minority class weighs more


def test_zero_epoch_budget_keeps_initial_parameters():
    recs = learnable_corpus(n_flows=120, seed=10)
    graphs = graphs_from(recs)
    model = HGUNet(TINY)
    before = {n: model.bag[n].value.copy() for n in model.bag.names()}
    result = train_model(model, graphs, graphs, epochs=0, seed=0)
    assert result.epochs_run == 0
    assert result.best_epoch == 0
    for n in model.bag.names():
        np.testing.assert_array_equal(model.bag[n].value, before[n])


def test_training_is_deterministic():
    recs = learnable_corpus(n_flows=160, seed=11)
    graphs = graphs_from(recs, max_flows=24)
    split = max(1, len(graphs) - 2)
    losses = []
    for _ in range(2):
        model = HGUNet(TINY)
        res = train_model(model, graphs[:split], graphs[split:],
                          epochs=3, lr=3e-3, seed=21)
        losses.append(res.history[-1].mean_loss)
    assert f"{losses[0]:.12f}" == f"{losses[1]:.12f}"


def test_training_reduces_loss_and_restores_best():
    recs = learnable_corpus(n_flows=240, seed=12)
    graphs = graphs_from(recs, max_flows=24)
    split = max(1, int(len(graphs) * 0.8))
    model = HGUNet(TINY)
    res = train_model(model, graphs[:split], graphs[split:],
                      epochs=8, lr=3e-3, seed=2)
    assert res.history[-1].mean_loss < res.history[0].mean_loss
    m, _ = evaluate(model, graphs[split:])
    assert m.f1 == pytest.approx(res.best_val_f1)


def test_patience_stops_training():
    # All-benign validation keeps F1 at zero, so no epoch ever improves
    # on the first and patience expires exactly.
    recs = [r for r in learnable_corpus(n_flows=200, seed=13)
            if r.label == BENIGN][:120]
    graphs = graphs_from(recs, max_flows=24)
    split = len(graphs) - 1
    model = HGUNet(TINY)
    res = train_model(model, graphs[:split], graphs[split:],
                      epochs=30, patience=3, seed=1)
    assert res.stopped_early
    assert res.epochs_run == 4  # epoch 1 sets best, 3 stale epochs follow


def test_divergence_aborts_with_diagnostics():
    recs = learnable_corpus(n_flows=120, seed=14)
    graphs = graphs_from(recs)
    model = HGUNet(TINY)
    model.bag["embed.flow.w"].value[0, 0] = np.nan
    with pytest.raises(DivergenceError) as err:
        train_model(model, graphs, graphs, epochs=2, lr=0.05, seed=0)
    assert err.value.epoch == 1
    assert err.value.lr == 0.05


def test_evaluate_empty_rejected():
    model = HGUNet(TINY)
    with pytest.raises(ConfigurationError):
        evaluate(model, [])


def test_evaluate_dump_matches_metrics():
    recs = learnable_corpus(n_flows=150, seed=15)
    graphs = graphs_from(recs)
    model = HGUNet(TINY)
    metrics, rows = evaluate(model, graphs)
    assert metrics == metrics_from_dump(rows)
    assert len(rows) == 150  # every in-window flow appears in the dump
    assert all(r.label is not None for r in rows)


# ---------------------------------------------------------------- protocol


def test_crossval_smoke(tmp_path):
    recs = learnable_corpus(n_flows=240, seed=16)
    report = run_crossval(
        recs, k=3, seed=0, model_config=TINY,
        wcfg=WindowConfig(delta_t=120.0, max_flows=24),
        epochs=2, lr=3e-3, out_dir=str(tmp_path))
    assert len(report.fold_reports) == 3
    assert set(report.aggregate) == {"accuracy", "precision", "recall", "f1"}
    md = report.markdown()
    assert "mean ± std" in md
    assert (tmp_path / "aggregate.md").exists()
    assert (tmp_path / "fold_0" / "checkpoint.json").exists()
    assert (tmp_path / "fold_0" / "predictions.jsonl").exists()
    assert (tmp_path / "fold_0" / "standardizer.json").exists()
    # Test rows cover exactly the fold's test indices.
    n_rows = sum(len(f.rows) for f in report.fold_reports)
    assert n_rows == len(recs)


def test_crossval_rejects_unlabeled():
    recs = learnable_corpus(n_flows=150, seed=17)
    bad = recs[0]
    object.__setattr__(bad, "label", None)
    from graphddos.errors import DataError
    with pytest.raises(DataError):
        run_crossval(recs, k=2, seed=0, model_config=TINY,
                     wcfg=WindowConfig(delta_t=60.0, max_flows=16), epochs=0)
