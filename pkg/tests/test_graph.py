import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphddos.errors import ConfigurationError, ConsistencyError
from graphddos.graph import (
    EDGE_TYPES,
    HIST_PREFIX,
    SlidingWindowMemory,
    build_graph,
    update_memory,
)
from graphddos.ingest import ATTACK, BENIGN, UNLABELED, FlowRecord


def flow(fid, src, dst, t=1_000_000, label=BENIGN, feats=(0.5, -0.5)):
    return FlowRecord(
        flow_id=fid,
        src_ip=src,
        dst_ip=dst,
        src_port=1000,
        dst_port=80,
        protocol=6,
        timestamp=t,
        features=np.array(feats, dtype=float),
        label=label,
        feature_names=("x", "y"),
    )


def edge_keys(g):
    """Index-free edge multiset for isomorphism comparison."""
    out = []
    for etype, arr in g.edges.items():
        src_kind, dst_kind = ("host", "flow") if etype.endswith("to_flow") else ("flow", "host")
        for a, b in arr.T:
            fr = g.host_ids[a] if src_kind == "host" else g.flow_ids[a]
            to = g.flow_ids[b] if dst_kind == "flow" else g.host_ids[b]
            out.append((etype, fr, to))
    return sorted(out)


def test_two_flow_batch_counts():
    g = build_graph([flow("f1", "A", "B"), flow("f2", "A", "C")], d_h=4)
    assert sorted(g.host_ids) == ["A", "B", "C"]
    assert g.n_flows == 2
    forward = g.edges["src_to_flow"].shape[1] + g.edges["flow_to_dst"].shape[1]
    reverse = g.edges["dst_to_flow"].shape[1] + g.edges["flow_to_src"].shape[1]
    assert forward == 4 and reverse == 4
    assert g.host_features.shape == (3, 4)
    assert np.all(g.host_features == 1.0)


def test_in_window_flow_degree_four():
    g = build_graph([flow("f1", "A", "B"), flow("f2", "B", "C"), flow("f3", "C", "A")])
    deg = np.zeros(g.n_flows)
    for etype, arr in g.edges.items():
        row = arr[1] if etype.endswith("to_flow") else arr[0]
        np.add.at(deg, row, 1)
    assert np.all(deg == 4)


def test_self_loop_flow_keeps_four_edges():
    g = build_graph([flow("f1", "A", "A")])
    assert g.host_ids == ["A"]
    total = sum(arr.shape[1] for arr in g.edges.values())
    assert total == 4
    g.check()


def test_labels_and_masks():
    g = build_graph([
        flow("f1", "A", "B", label=ATTACK),
        flow("f2", "A", "C", label=BENIGN),
        flow("f3", "A", "D", label=UNLABELED),
    ])
    np.testing.assert_array_equal(g.flow_labels[:2], [1.0, 0.0])
    assert np.isnan(g.flow_labels[2])
    assert not g.historical_mask.any()


def test_duplicate_flow_id_rejected():
    with pytest.raises(ConsistencyError):
        build_graph([flow("f1", "A", "B"), flow("f1", "A", "C")])


def test_empty_batch_rejected():
    with pytest.raises(ConfigurationError):
        build_graph([])


def test_historical_node_linked_only_to_present_host():
    mem = SlidingWindowMemory(per_host_cap=4, global_cap=100)
    mem.add(flow("old1", "A", "Z", t=500_000))
    g = build_graph([flow("f1", "A", "B"), flow("f2", "A", "C")], memory=mem)
    assert g.n_flows == 3
    assert g.historical_mask.sum() == 1
    hist_idx = int(np.flatnonzero(g.historical_mask)[0])
    assert g.flow_ids[hist_idx] == HIST_PREFIX + "old1"
    assert "Z" not in g.host_ids
    # A was the source of old1: only the source-side edge pair may appear.
    keys = edge_keys(g)
    hist_edges = [k for k in keys if HIST_PREFIX + "old1" in (k[1], k[2])]
    assert sorted(e[0] for e in hist_edges) == ["flow_to_src", "src_to_flow"]
    for e in hist_edges:
        assert "A" in (e[1], e[2])
    assert np.isnan(g.flow_labels[hist_idx])
    assert g.records[hist_idx] is None


def test_historical_node_attaches_to_both_recurring_endpoints():
    mem = SlidingWindowMemory()
    mem.add(flow("old1", "A", "B", t=500_000))
    g = build_graph([flow("f1", "A", "C"), flow("f2", "B", "C")], memory=mem)
    hist_edges = [k for k in edge_keys(g) if HIST_PREFIX + "old1" in (k[1], k[2])]
    assert sorted(e[0] for e in hist_edges) == sorted(EDGE_TYPES)
    g.check()


def test_flow_already_in_window_not_duplicated_as_history():
    mem = SlidingWindowMemory()
    r = flow("f1", "A", "B")
    mem.add(r)
    g = build_graph([r], memory=mem)
    assert g.n_flows == 1
    assert not g.historical_mask.any()


def test_node_count_formula():
    mem = SlidingWindowMemory(per_host_cap=2, global_cap=100)
    for i in range(3):
        mem.add(flow(f"old{i}", "A", f"H{i}", t=100_000 + i))
    batch = [flow("f1", "A", "B"), flow("f2", "B", "A"), flow("f3", "C", "C")]
    g = build_graph(batch, memory=mem)
    assert g.n_hosts == len({ip for r in batch for ip in (r.src_ip, r.dst_ip)})
    # Ring cap 2 keeps old1, old2; neither H1 nor H2 is in the window so both
    # attach through A alone.
    assert g.n_flows == len(batch) + 2
    g.check()


def test_memory_per_host_cap_keeps_newest():
    mem = SlidingWindowMemory(per_host_cap=2, global_cap=100)
    for i in range(3):
        mem.add(flow(f"f{i}", "A", f"B{i}", t=1000 + i))
    ids = [e.flow_id for e in mem.history_for("A")]
    assert ids == ["f1", "f2"]


def test_memory_both_endpoints_hold_flow():
    mem = SlidingWindowMemory()
    mem.add(flow("f1", "A", "B"))
    assert [e.flow_id for e in mem.history_for("A")] == ["f1"]
    assert [e.flow_id for e in mem.history_for("B")] == ["f1"]
    assert mem.size == 1


def test_memory_global_cap_evicts_oldest():
    mem = SlidingWindowMemory(per_host_cap=10, global_cap=3)
    for i in range(5):
        mem.add(flow(f"f{i}", f"S{i}", "D", t=1000 + i))
    assert mem.size == 3
    assert [e.flow_id for e in mem.history_for("D")] == ["f2", "f3", "f4"]
    assert mem.history_for("S0") == []


def test_memory_refcount_keeps_shared_flow_alive():
    mem = SlidingWindowMemory(per_host_cap=1, global_cap=100)
    mem.add(flow("f1", "A", "B", t=1000))
    mem.add(flow("f2", "A", "C", t=2000))  # evicts f1 from A's ring only
    assert mem.history_for("A")[0].flow_id == "f2"
    assert [e.flow_id for e in mem.history_for("B")] == ["f1"]
    assert mem.size == 2


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_memory_size_bound_property(data):
    k = data.draw(st.integers(1, 4))
    g_cap = data.draw(st.integers(1, 12))
    mem = SlidingWindowMemory(per_host_cap=k, global_cap=g_cap)
    n = data.draw(st.integers(1, 60))
    for i in range(n):
        src = f"h{data.draw(st.integers(0, 5))}"
        dst = f"h{data.draw(st.integers(0, 5))}"
        mem.add(flow(f"f{i}", src, dst, t=1000 + i))
    hosts_seen = 6
    assert mem.size <= min(hosts_seen * k, g_cap)
    for h in range(hosts_seen):
        assert len(mem.history_for(f"h{h}")) <= k


def test_permutation_of_batch_gives_isomorphic_graph():
    batch = [
        flow("f1", "A", "B", label=ATTACK),
        flow("f2", "B", "C"),
        flow("f3", "C", "A"),
        flow("f4", "A", "A"),
    ]
    g1 = build_graph(batch, d_h=3)
    g2 = build_graph(list(reversed(batch)), d_h=3)
    assert sorted(g1.host_ids) == sorted(g2.host_ids)
    assert sorted(g1.flow_ids) == sorted(g2.flow_ids)
    assert edge_keys(g1) == edge_keys(g2)
    f1 = {fid: tuple(g1.flow_features[i]) for i, fid in enumerate(g1.flow_ids)}
    f2 = {fid: tuple(g2.flow_features[i]) for i, fid in enumerate(g2.flow_ids)}
    assert f1 == f2


def test_graph_json_stable():
    mem = SlidingWindowMemory()
    mem.add(flow("old", "A", "B", t=100))
    batch = [flow("f1", "A", "B"), flow("f2", "B", "A")]
    a = build_graph(batch, memory=mem).to_json()
    b = build_graph(batch, memory=mem).to_json()
    assert a == b
    assert '"edges"' in a and '"historical_mask"' in a


def test_update_memory_round():
    mem = SlidingWindowMemory(per_host_cap=2, global_cap=10)
    batch = [flow("f1", "A", "B"), flow("f2", "B", "C")]
    update_memory(mem, batch)
    assert mem.size == 2
    assert [e.flow_id for e in mem.history_for("B")] == ["f1", "f2"]
