"""Release gate: one test per externally promised behavior.

Each test pins a tolerance or budget that downstream users rely on. Do not
loosen a bound here to make a refactor pass; fix the regression instead.
Every expected value is recomputed in-test by an independent route (direct
scans, exact rational arithmetic, stdlib re-tallies) rather than read back
from the code under test.
"""

import dataclasses
import json
import math
import os
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient

from graphddos.cli import load_records
from graphddos.graph import build_graph
from graphddos.ingest import (
    ATTACK,
    BENIGN,
    POLICY_SUSPICIOUS_AS_ATTACK,
    FlowRecord,
    apply_label_policy,
    apply_standardizer,
    fit_standardizer,
)
from graphddos.model import HGUNet, ModelConfig
from graphddos.model.conv import GraphView, HeteroAttentionConv
from graphddos.model.net import FlowHead
from graphddos.model.pool import kept_count
from graphddos.nn import (
    LayerNorm,
    Linear,
    ParameterBag,
    RngStream,
    check_gradients,
)
from graphddos.service import (
    DecisionConfig,
    DecisionThresholds,
    ForensicWriter,
    create_app,
    decide,
    export_feedback,
    run_pipeline,
    severity,
    verify_forensic_log,
)
from graphddos.synthetic import (
    cloud_corpus,
    fan_in_by_destination,
    learnable_corpus,
    stratified_subsample,
)
from graphddos.training import make_folds, run_fold
from graphddos.windows import WindowConfig, window_batches

# --------------------------------------------------------------- helpers


def flow(fid, src, dst, feats, label=BENIGN, t=1_000_000):
    return FlowRecord(
        flow_id=fid, src_ip=src, dst_ip=dst, src_port=1000, dst_port=80,
        protocol=6, timestamp=t, features=np.asarray(feats, dtype=float),
        label=label, feature_names=tuple(f"x{i}" for i in range(len(feats))),
    )


def random_records(seed, n_flows, n_hosts, d_f=3):
    rng = np.random.default_rng(seed)
    return [
        flow(f"f{i}",
             f"h{rng.integers(0, n_hosts)}",
             f"h{rng.integers(0, n_hosts)}",
             rng.normal(size=d_f),
             label=ATTACK if rng.random() < 0.5 else BENIGN,
             t=1_000_000 + i)
        for i in range(n_flows)
    ]


def five_fold_mean_f1(records, *, epochs, seed=0):
    """The fixed cross-validation protocol used by both dataset checks:
    stratified 5 folds, scaler fit on train only, identical model recipe."""
    plan = make_folds([r.label for r in records], k=5, seed=seed)
    mcfg = ModelConfig(flow_width=len(records[0].feature_names), host_width=4,
                       hidden_dim=16, heads=4, dropout_rate=0.1,
                       head_dims=(16, 8, 1), seed=seed)
    wcfg = WindowConfig(delta_t=30.0, max_flows=64)
    f1s = []
    for f in range(5):
        rep = run_fold(records, plan.folds[f], f, model_config=mcfg,
                       wcfg=wcfg, epochs=epochs, lr=3e-3, patience=10,
                       seed=seed)
        f1s.append(rep.metrics.f1)
    return sum(f1s) / len(f1s)


# ------------------------------------------------- 1. gradient fidelity


def test_gradient_fidelity_layers_and_full_model():
    """Analytic gradients track central differences: every standalone layer
    within 1e-4, the assembled model within 1e-3 on five random graphs of
    at most 20 nodes, all inside a two-minute budget."""
    t0 = time.time()

    # Standalone layers, 1e-4 each.
    bag = ParameterBag()
    rng = RngStream(61)
    lin = Linear(bag, "lin", 4, 3, rng)
    x = rng.uniform((5, 4), -2, 2)

    def lin_loss():
        bag.zero_grads()
        out, cache = lin.forward(x)
        lin.backward(cache, 2.0 * out)
        return float(np.sum(out * out))

    assert check_gradients(lin_loss, bag).max_rel_err < 1e-4

    bag = ParameterBag()
    ln = LayerNorm(bag, "ln", 6)
    xn = rng.uniform((4, 6), -2, 2)

    def ln_loss():
        bag.zero_grads()
        out, cache = ln.forward(xn)
        ln.backward(cache, 2.0 * out)
        return float(np.sum(out * out))

    assert check_gradients(ln_loss, bag).max_rel_err < 1e-4

    bag = ParameterBag()
    conv = HeteroAttentionConv(bag, "c", 8, 2, 0.2, 0.0, rng.spawn("conv"))
    edges = {
        "src_to_flow": np.array([[0, 1], [0, 1]]),
        "flow_to_dst": np.array([[0, 1], [1, 2]]),
        "dst_to_flow": np.array([[1, 2], [0, 1]]),
        "flow_to_src": np.array([[0, 1], [0, 1]]),
    }
    view = GraphView(n_host=3, n_flow=2, edges=edges)
    h = {"host": rng.uniform((3, 8), -1, 1), "flow": rng.uniform((2, 8), -1, 1)}

    def conv_loss():
        bag.zero_grads()
        out, cache = conv.forward(view, h, training=False, rng=None)
        conv.backward(cache, {k: 2.0 * out[k] for k in out})
        return float(sum(np.sum(out[k] ** 2) for k in out))

    assert check_gradients(conv_loss, bag).max_rel_err < 1e-4

    bag = ParameterBag()
    head = FlowHead(bag, "h", 4, (4, 2, 1), 0.2, 0.0, rng.spawn("head"))
    xh = rng.uniform((6, 4), -2, 2)

    def head_loss():
        bag.zero_grads()
        logits, cache = head.forward(xh, training=False, rng=None)
        head.backward(cache, 2.0 * logits)
        return float(np.sum(logits * logits))

    assert check_gradients(head_loss, bag).max_rel_err < 1e-4

    # Full model on five random graphs, each under 20 nodes total.
    cfg = ModelConfig(flow_width=3, host_width=4, hidden_dim=4, heads=2,
                      dropout_rate=0.0, head_dims=(4, 2, 1), seed=11)
    shapes = [(8, 4), (12, 6), (14, 5), (10, 8), (15, 5)]
    for gi, (nf, nh) in enumerate(shapes):
        assert nf + nh <= 20
        model = HGUNet(dataclasses.replace(cfg, seed=11 + gi))
        g = build_graph(random_records(100 + gi, nf, nh), d_h=4)

        def loss_and_grad():
            model.bag.zero_grads()
            loss, _ = model.loss_backward(g, training=False)
            return loss

        report = check_gradients(loss_and_grad, model.bag,
                                 max_entries_per_param=3,
                                 rng=RngStream(500 + gi))
        assert report.max_rel_err <= 1e-3, f"graph {gi}: {report}"
        worst_layer = max(report.per_param.values())
        assert worst_layer <= 1e-4, f"graph {gi} per-layer: {report.per_param}"

    assert time.time() - t0 < 120.0


# ------------------------------------------------- 2. pooling schedule


def test_pool_keep_counts_follow_ceiling_rule():
    """Kept node count per level is max(1, ceil(r*n)) for the fixed ratio
    ladder 0.5 -> 0.4 -> 0.32, checked over 200 random sizes with exact
    rational arithmetic, and observed in real forward passes."""
    ratios = (0.5, 0.4, 0.32)
    exact = {r: Fraction(str(r)) for r in ratios}

    def oracle(r, n):
        if n == 0:
            return 0
        return max(1, math.ceil(exact[r] * n))

    rng = np.random.default_rng(17)
    sizes = [int(v) for v in rng.integers(0, 5000, size=200)]
    for n in sizes:
        chain = n
        for r in ratios:
            expect = oracle(r, chain)
            assert kept_count(r, chain) == expect, (r, chain)
            chain = expect

    # Anchor chains worked out by hand.
    def chain_of(n):
        out = []
        for r in ratios:
            n = kept_count(r, n)
            out.append(n)
        return out

    assert chain_of(100) == [50, 20, 7]
    assert chain_of(40) == [20, 8, 3]
    assert chain_of(1) == [1, 1, 1]
    assert chain_of(0) == [0, 0, 0]

    # The live model must realize the same schedule on both node types.
    model = HGUNet(ModelConfig(flow_width=3, host_width=4, hidden_dim=4,
                               heads=2, dropout_rate=0.0, head_dims=(4, 2, 1),
                               seed=23))
    for seed, nf, nh in [(1, 9, 5), (2, 16, 6), (3, 4, 2)]:
        g = build_graph(random_records(seed, nf, nh), d_h=4)
        _, record = model.forward(g)
        counts = {"host": g.n_hosts, "flow": g.n_flows}
        for level, r in zip(record.levels, ratios):
            for kind in ("host", "flow"):
                assert level.pre_counts[kind] == counts[kind]
                expect = oracle(r, counts[kind])
                assert len(level.kept[kind]) == expect
                counts[kind] = expect


# --------------------------------------- 3. permutation equivariance


def test_eval_scores_commute_with_record_permutation():
    """Evaluation scores are a function of graph structure only: on 50
    random graphs, shuffling the input records leaves every per-flow
    probability bitwise identical."""
    model = HGUNet(ModelConfig(flow_width=3, host_width=4, hidden_dim=4,
                               heads=2, dropout_rate=0.0, head_dims=(4, 2, 1),
                               seed=7))
    rng = np.random.default_rng(99)
    for trial in range(50):
        nf = int(rng.integers(1, 13))
        nh = int(rng.integers(1, 7))
        records = random_records(1000 + trial, nf, nh)
        perm = rng.permutation(len(records))
        shuffled = [records[int(i)] for i in perm]

        a = model.predict(build_graph(records, d_h=4))
        b = model.predict(build_graph(shuffled, d_h=4))
        pa = dict(zip(a.flow_ids, a.probabilities))
        pb = dict(zip(b.flow_ids, b.probabilities))
        assert set(pa) == set(pb)
        for fid in pa:
            assert np.float64(pa[fid]).tobytes() == np.float64(pb[fid]).tobytes(), \
                (trial, fid)


# --------------------------------------------------- 4. window batching


def test_window_batches_match_direct_scan_oracle():
    """1,000 random streams: batches partition the stream, each batch spans
    at most delta_t and holds at most max_flows, and the recorded close
    reason agrees with an index-arithmetic scan over the raw timestamps."""

    def direct_scan(ts, dt_us, cap):
        bounds = []
        i, n = 0, len(ts)
        while i < n:
            j = i
            while j + 1 < n and ts[j + 1] - ts[i] < dt_us and (j + 1 - i) < cap:
                j += 1
            size = j - i + 1
            if size == cap:
                reason = "count"
            elif j + 1 < n:
                reason = "time"
            else:
                reason = "end"
            bounds.append((i, j + 1, reason))
            i = j + 1
        return bounds

    rng = np.random.default_rng(4242)
    feats = np.zeros(1)
    names = ("v",)
    for stream in range(1000):
        n = int(rng.integers(0, 50))
        dt = float(rng.uniform(0.5, 12.0))
        cap = int(rng.integers(1, 11))
        cfg = WindowConfig(delta_t=dt, max_flows=cap)
        gaps = rng.exponential(dt * 2e5, size=n).astype(np.int64)
        gaps[rng.random(n) < 0.25] = 0  # duplicate timestamps happen
        ts = np.cumsum(gaps) + 1_000_000
        records = [
            FlowRecord(flow_id=f"s{stream}f{i}", src_ip="a", dst_ip="b",
                       src_port=1, dst_port=2, protocol=6,
                       timestamp=int(ts[i]), features=feats, label=BENIGN,
                       feature_names=names)
            for i in range(n)
        ]

        batches = list(window_batches(records, cfg))
        expected = direct_scan([int(v) for v in ts], cfg.delta_t_us, cap)

        assert len(batches) == len(expected), stream
        seen = []
        for batch, (lo, hi, reason) in zip(batches, expected):
            assert [r.flow_id for r in batch.records] == \
                [r.flow_id for r in records[lo:hi]]
            assert batch.close_reason == reason
            assert len(batch) <= cap
            assert batch.end_ts - batch.start_ts <= cfg.delta_t_us
            seen.extend(r.flow_id for r in batch.records)
        assert seen == [r.flow_id for r in records]


# --------------------------------------------- 5. synthetic learnability


def test_synthetic_corpus_learned_within_budget():
    """5,000 generated flows whose attack side differs in timing/size
    statistics and fan-in (>= 20 flows per victim vs <= 3 benign): test F1
    reaches 0.95 within 30 epochs and well under ten minutes."""
    t0 = time.time()
    records = learnable_corpus(n_flows=5000, seed=0)

    fanin = fan_in_by_destination(records)
    labels_at = {}
    for r in records:
        labels_at.setdefault(r.dst_ip, set()).add(r.label)
    attack_dsts = [d for d, ls in labels_at.items() if ATTACK in ls]
    benign_dsts = [d for d, ls in labels_at.items() if ls == {BENIGN}]
    assert attack_dsts and benign_dsts
    assert min(fanin[d] for d in attack_dsts) >= 20
    assert max(fanin[d] for d in benign_dsts) <= 3

    plan = make_folds([r.label for r in records], k=5, seed=0)
    mcfg = ModelConfig(flow_width=len(records[0].feature_names), host_width=4,
                       hidden_dim=16, heads=4, dropout_rate=0.1,
                       head_dims=(16, 8, 1), seed=0)
    wcfg = WindowConfig(delta_t=30.0, max_flows=64)
    rep = run_fold(records, plan.folds[0], 0, model_config=mcfg, wcfg=wcfg,
                   epochs=30, lr=3e-3, patience=10, seed=0)

    assert rep.train_result.epochs_run <= 30
    assert rep.metrics.f1 >= 0.95, rep.metrics.as_dict()
    assert time.time() - t0 < 600.0


# ------------------------------------------------- 6. dataset protocol


@pytest.mark.skipif(
    "BCCC_CPACKET_CSV" not in os.environ,
    reason="set BCCC_CPACKET_CSV to the dataset CSV to run the 20k-flow "
           "five-fold protocol (suspicious folded into attack)")
def test_cloud_ddos_corpus_subsample_five_fold():
    """Stratified 20,000-flow subsample of the referenced cloud DDoS corpus,
    five folds, mean F1 >= 0.90. The same harness runs the full corpus at
    k=10 via the crossval CLI when resources allow; nothing here is scaled
    down except the input."""
    path = os.environ["BCCC_CPACKET_CSV"]
    schema = os.environ.get("BCCC_CPACKET_SCHEMA", "ntlflowlyzer")
    records = load_records(path, schema, POLICY_SUSPICIOUS_AS_ATTACK)
    records = stratified_subsample(records, 20_000, seed=0)
    assert five_fold_mean_f1(records, epochs=15) >= 0.90


def test_five_fold_protocol_on_generated_cloud_mix():
    """The identical five-fold protocol, exercised unconditionally on the
    generated three-label mix (suspicious folded into attack) so the
    protocol path stays green without the external corpus."""
    raw = cloud_corpus(n_flows=4000, seed=7)
    records = [
        dataclasses.replace(r, label=apply_label_policy(
            r.label, POLICY_SUSPICIOUS_AS_ATTACK))
        for r in raw
    ]
    assert five_fold_mean_f1(records, epochs=6) >= 0.90


# ----------------------------------------------------- 7. metric oracle


def test_reported_metrics_match_dump_recount_and_split_shape(tmp_path):
    """Metrics recomputed from the per-flow prediction dump by a separate
    tally match the written report exactly, and stratified folds realize
    the 72/18/10 split within one record."""
    records = learnable_corpus(n_flows=400, seed=9)
    plan = make_folds([r.label for r in records], k=5, seed=3)
    mcfg = ModelConfig(flow_width=len(records[0].feature_names), host_width=4,
                       hidden_dim=8, heads=2, dropout_rate=0.0,
                       head_dims=(8, 4, 1), seed=3)
    out = tmp_path / "fold_run"
    run_fold(records, plan.folds[0], 0, model_config=mcfg,
             wcfg=WindowConfig(delta_t=30.0, max_flows=64), epochs=2,
             lr=3e-3, patience=10, seed=3, out_dir=str(out))

    reported = json.loads((out / "fold_0" / "metrics.json").read_text())
    tp = fp = tn = fn = 0
    with open(out / "fold_0" / "predictions.jsonl") as fh:
        for line in fh:
            row = json.loads(line)
            hit = row["p"] >= 0.5
            truth = row["label"] == 1
            if hit and truth:
                tp += 1
            elif hit:
                fp += 1
            elif truth:
                fn += 1
            else:
                tn += 1
    assert (tp, fp, tn, fn) == (reported["tp"], reported["fp"],
                                reported["tn"], reported["fn"])
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    assert precision == reported["precision"]
    assert recall == reported["recall"]
    assert f1 == reported["f1"]
    assert (tp + tn) / (tp + fp + tn + fn) == reported["accuracy"]

    # Split shape at k=10 over several corpus sizes.
    for n in (100, 240, 997):
        rng = np.random.default_rng(n)
        labels = [ATTACK if rng.random() < 0.4 else BENIGN for _ in range(n)]
        shape_plan = make_folds(labels, k=10, seed=1)
        for fold in shape_plan.folds:
            assert abs(len(fold.train) - 0.72 * n) <= 1.0 + 1e-9
            assert abs(len(fold.val) - 0.18 * n) <= 1.0 + 1e-9
            assert abs(len(fold.test) - 0.10 * n) <= 1.0 + 1e-9


# ----------------------------------------------------- 8. decision tiers


def test_decision_tier_boundaries_and_monotonicity():
    """Exact action at every threshold boundary, including block at exactly
    the auto threshold, plus severity monotone over 10,000 random scores."""
    tau_a, tau_auto = 0.35, 0.8
    eps = 1e-9
    cfg = DecisionConfig(DecisionThresholds(tau_a, tau_auto))

    expected = {
        0.0: "none",                  # below the notify floor
        tau_a - eps: "alert",         # floored notification zone
        tau_a: "rate_limit",          # grey zone is closed on the left
        tau_auto - eps: "rate_limit",  # grey zone is open on the right
        tau_auto: "block",            # auto tier is closed on the left
        1.0: "block",
    }
    for p, action in expected.items():
        assert decide(p, cfg) == action, (p, action)

    tagged = dataclasses.replace(cfg, grey_zone_rate_limit=False)
    assert decide(tau_a, tagged) == "alert"
    assert decide(tau_auto, tagged) == "block"

    rng = np.random.default_rng(5150)
    ps = np.sort(rng.random(10_000))
    for variant in (cfg, tagged):
        sev = [severity(decide(float(p), variant)) for p in ps]
        assert all(a <= b for a, b in zip(sev, sev[1:]))


# ------------------------------------------------- 9. forensic tampering


def test_single_byte_tamper_detected_at_exact_seq(tmp_path):
    """Any single-byte mutation of a 1,000-record chained log is reported
    at the sequence number of the line containing the mutated byte."""
    path = tmp_path / "forensic.log"
    with ForensicWriter(str(path), header={"run_id": "tamper"}) as w:
        for i in range(1000):
            w.append({"flow_id": f"f{i:04d}", "p": round(0.001 * i, 6),
                      "verdict": "none" if i % 3 else "alert"})

    pristine = path.read_bytes()
    assert pristine.count(b"\n") == 1001  # header + 1000 records
    assert verify_forensic_log(str(path)) == (True, None)

    rng = np.random.default_rng(8)
    target = tmp_path / "mutated.log"
    for trial in range(150):
        off = int(rng.integers(0, len(pristine)))
        old = pristine[off]
        new = int(rng.integers(0, 256))
        while new == old:
            new = int(rng.integers(0, 256))
        mutated = pristine[:off] + bytes([new]) + pristine[off + 1:]
        target.write_bytes(mutated)
        expected_seq = pristine[:off].count(b"\n")
        assert verify_forensic_log(str(target)) == (False, expected_seq), \
            (trial, off, old, new)


# ------------------------------------------------ 10. replay determinism


def test_replay_runs_are_byte_identical(tmp_path):
    """Two replays of the same input with the same checkpoint and config
    produce byte-identical forensic logs, prediction dumps, and alerts."""
    records = learnable_corpus(n_flows=150, seed=42)
    model = HGUNet(ModelConfig(flow_width=len(records[0].feature_names),
                               host_width=4, hidden_dim=8, heads=2,
                               dropout_rate=0.0, head_dims=(8, 4, 1), seed=5))
    std = fit_standardizer(records)
    model = HGUNet(dataclasses.replace(model.config,
                                       flow_width=len(std.feature_names)))
    wcfg = WindowConfig(delta_t=60.0, max_flows=25)
    dcfg = DecisionConfig(DecisionThresholds(0.45, 0.55))

    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        run_pipeline(records, model, std, wcfg, dcfg, str(d), run_id="replay")

    for name in ("forensic.jsonl", "predictions.jsonl", "alerts.jsonl"):
        first = (dirs[0] / name).read_bytes()
        second = (dirs[1] / name).read_bytes()
        assert first == second, name
        assert len(first) > 0


# ------------------------------------------- 11. console round trip


FRONTEND_DIST = Path(__file__).resolve().parent.parent / "frontend" / "dist"


def test_console_round_trip(tmp_path):
    """Analyst console integration: a fixture replay yields at least three
    grey-zone alerts and the queue endpoint returns them on the first poll
    (well inside two default 2 s poll intervals); an approve verdict posted
    through the UI's feedback call shows up in the feedback export with the
    benign label. Empty rationales are blocked inside the client by the
    form gating (frontend/tests/form.test.ts); the service's 422 backstop
    is asserted here too.
    """
    records = learnable_corpus(n_flows=150, seed=42)
    std = fit_standardizer(records)
    model = HGUNet(ModelConfig(flow_width=len(std.feature_names),
                               host_width=4, hidden_dim=8, heads=2,
                               dropout_rate=0.0, head_dims=(8, 4, 1), seed=5))
    run_dir = tmp_path / "run"
    run_pipeline(records, model, std, WindowConfig(60.0, 25),
                 DecisionConfig(DecisionThresholds(0.45, 0.55)),
                 str(run_dir), run_id="console-fixture")

    static = str(FRONTEND_DIST) if FRONTEND_DIST.is_dir() else None
    client = TestClient(create_app(str(run_dir), static_dir=static))

    # The first poll of the queue must already carry the grey alerts.
    t0 = time.time()
    page = client.get("/v1/alerts", params={"page_size": 200}).json()
    assert time.time() - t0 < 4.0  # two default poll intervals
    grey = [a for a in page["alerts"]
            if a["action"] in ("rate_limit", "alert") and a["status"] == "open"]
    assert len(grey) >= 3
    assert page["alerts"] == sorted(page["alerts"],
                                    key=lambda a: a["issued_at"], reverse=True)

    # Approve through the same endpoint the form submits to.
    chosen = grey[0]
    res = client.post(f"/v1/alerts/{chosen['alert_id']}/feedback",
                      json={"action": "approve",
                            "rationale": "matches a known load test",
                            "analyst_id": "ana"})
    assert res.status_code == 201

    exported, skipped = export_feedback(str(run_dir))
    assert skipped == 0
    by_id = {r.flow_id: r.label for r in exported}
    assert by_id[chosen["flow_id"]] == BENIGN

    # Server-side backstop for the client-side rationale gate.
    empty = client.post(f"/v1/alerts/{chosen['alert_id']}/feedback",
                        json={"action": "approve", "rationale": ""})
    assert empty.status_code == 422

    if static is None:
        pytest.skip("console static bundle not built; run "
                    "`npm install && npm run build` in frontend/ to cover "
                    "static serving")
    assert "Alert triage" in client.get("/").text
    assert client.get("/js/app.js").status_code == 200
    assert client.get("/js/form.js").status_code == 200
    assert client.get("/styles.css").status_code == 200
