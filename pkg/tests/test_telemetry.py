"""Metric formulas against a naive reference, and feature assembly."""

import random

import numpy as np
import pytest

from nettwin import netsim as NS, telemetry as TL, topology as T, traffic as TR


def make_topology(seed=1):
    g = T.gen_erdos_renyi(5, 0.6, seed=seed)
    return T.assign_roles(g, seed, link_bandwidth=2e7, core_bandwidth=8e6,
                          access_bandwidth=4.4e6)


def random_log(topo, rng, max_records=2000):
    """Synthetic event log over the topology's directed edges."""
    edges = [(u, v) for (u, v) in topo.links] + [(v, u) for (u, v) in topo.links]
    out = []
    for i in range(rng.randrange(10, max_records)):
        u, v = edges[rng.randrange(len(edges))]
        out.append(NS.PacketRecord(
            flow_id=f"f{i % 7}", u=u, v=v,
            arrival_t=round(rng.uniform(0.0, 10.0), 4),
            size=rng.randrange(1, 50_000),
            src_host=topo.hosts[0], dst_host=topo.hosts[-1]))
    return out


def naive_window_pass(events, topo, window):
    """Straightforward per-edge/per-vertex recomputation, kept independent
    of the implementation's single-pass bookkeeping."""
    t0, t1 = window
    inside = [r for r in events if t0 <= r.arrival_t < t1]
    core = set(topo.core_vertices())
    edges = {}
    for e in set((r.u, r.v) for r in inside) | set(topo.directed_core_edges()):
        recs = sorted([r for r in inside if (r.u, r.v) == e], key=lambda r: r.arrival_t)
        times = [r.arrival_t for r in recs]
        size = sum(r.size for r in recs)
        if len(times) >= 2:
            gaps = [b - a for a, b in zip(times, times[1:])]
            delay = sum(gaps) / len(gaps)
            span = times[-1] - times[0]
        else:
            delay = None
            span = 0.0
        thr = size / span if span > 0 else None
        cap = topo.link(*e).bandwidth_bytes_per_s
        cong = None if thr is None else min(100.0, thr / cap * 100.0)
        edges[e] = {"delay": delay, "throughput": thr, "congestion": cong, "size": size}
    core_dir = topo.directed_core_edges()
    dvals = [edges[e]["delay"] or 0.0 for e in core_dir]
    cvals = [edges[e]["congestion"] or 0.0 for e in core_dir]

    def norm(vals):
        lo, hi = min(vals), max(vals)
        return [0.0 if hi == lo else (v - lo) / (hi - lo) for v in vals]

    for e, dn, cn in zip(core_dir, norm(dvals), norm(cvals)):
        edges[e]["cost"] = 0.5 * dn + 0.5 * cn
    verts = {}
    for v in core:
        ins = [r.arrival_t for r in inside if r.v == v]
        outs = [r.arrival_t for r in inside if r.u == v]
        size = sum(r.size for r in inside if v in (r.u, r.v))
        if ins and outs and max(outs) >= min(ins):
            span = max(outs) - min(ins)
            thr = size / span if span > 0 else None
        else:
            span, thr = None, None
        verts[v] = {"delay": span, "throughput": thr, "size": size}
    peak = max((d["throughput"] for d in verts.values() if d["throughput"]), default=0.0)
    for d in verts.values():
        d["congestion"] = (None if d["throughput"] is None or peak <= 0
                           else min(100.0, d["throughput"] / peak * 100.0))
    return edges, verts


def assert_close(a, b, rel=1e-9):
    if a is None or b is None:
        assert a == b
    else:
        assert a == pytest.approx(b, rel=rel, abs=1e-12)


class TestPrimitives:
    def test_edge_delay_examples(self):
        assert TL.edge_delay([0.0, 0.1, 0.3]) == pytest.approx(0.15)
        assert TL.edge_delay([5.0, 6.0]) == pytest.approx(1.0)
        uniform = [0.2 * i for i in range(10)]
        assert TL.edge_delay(uniform) == pytest.approx(0.2)
        assert TL.edge_delay([1.0]) is None
        assert TL.edge_delay([]) is None

    def test_vertex_delay(self):
        assert TL.vertex_delay(1.0, 1.5) == pytest.approx(0.5)
        assert TL.vertex_delay(2.0, 2.0) == 0.0
        with pytest.raises(ValueError):
            TL.vertex_delay(2.0, 1.0)

    def test_throughput(self):
        assert TL.throughput(1000, 2.0) == pytest.approx(500.0)
        assert TL.throughput(0, 1.0) == 0.0
        assert TL.throughput(1e6, 0.5) == pytest.approx(2e6)
        assert TL.throughput(10, 0.0) is None
        assert TL.throughput(10, -1.0) is None

    def test_congestion(self):
        assert TL.congestion(50, 200) == pytest.approx(25.0)
        assert TL.congestion(200, 200) == pytest.approx(100.0)
        assert TL.congestion(0, 100) == 0.0
        assert TL.congestion(5, 0) is None
        clamps = [0]
        assert TL.congestion(300, 200, clamps) == 100.0
        assert clamps == [1]

    def test_edge_cost(self):
        assert TL.edge_cost(0.2, 0.6) == pytest.approx(0.4)
        assert TL.edge_cost(0.0, 0.0) == 0.0
        assert TL.edge_cost(1.0, 1.0) == 1.0

    def test_minmax_degenerate(self):
        assert TL.minmax_normalize([3.0, 3.0, 3.0]) == [0.0, 0.0, 0.0]
        assert TL.minmax_normalize([]) == []
        assert TL.minmax_normalize([1.0, 3.0]) == [0.0, 1.0]

    def test_constant_delay_population_costs_from_congestion(self):
        # equal delays normalise to zero, so cost reduces to half the
        # normalised congestion
        d_norm = TL.minmax_normalize([2.0, 2.0, 2.0])
        c_norm = TL.minmax_normalize([0.0, 50.0, 100.0])
        costs = [TL.edge_cost(d, c) for d, c in zip(d_norm, c_norm)]
        assert costs == [0.0, 0.25, 0.5]


class TestWindowMetrics:
    def test_matches_naive_reference(self):
        topo = make_topology()
        rng = random.Random(0)
        for trial in range(10):
            events = random_log(topo, rng)
            window = (2.0, 8.0)
            wm = TL.window_metrics(events, topo, window)
            ref_edges, ref_verts = naive_window_pass(events, topo, window)
            for e, ref in ref_edges.items():
                m = wm.edges[e]
                assert_close(m.delay, ref["delay"])
                assert_close(m.throughput, ref["throughput"])
                assert_close(m.congestion, ref["congestion"])
                assert m.data_size == ref["size"]
                if "cost" in ref:
                    assert_close(m.cost, ref["cost"])
            for v, ref in ref_verts.items():
                m = wm.vertices[v]
                assert_close(m.delay, ref["delay"])
                assert_close(m.throughput, ref["throughput"])
                assert_close(m.congestion, ref["congestion"])
                assert m.data_size == ref["size"]

    def test_ranges_always_hold(self):
        topo = make_topology(seed=4)
        rng = random.Random(7)
        for _ in range(5):
            wm = TL.window_metrics(random_log(topo, rng), topo, (0.0, 10.0))
            for m in wm.edges.values():
                if m.congestion is not None:
                    assert 0.0 <= m.congestion <= 100.0
                if m.cost is not None:
                    assert 0.0 <= m.cost <= 1.0

    def test_bytes_tie_out_to_simulator(self):
        topo = make_topology(seed=2)
        tasks = TR.build_schedule(topo, 1, seed=2)
        res = NS.run(NS.Scenario(topology=topo, tasks=tasks, tick=0.01, horizon=30.0),
                     NS.build_routing_tables(topo))
        window = (0.0, res.end_t + 0.01)
        wm = TL.window_metrics(res.events, topo, window)
        per_edge_total = sum(m.data_size for m in wm.edges.values())
        drained = sum(r.size for r in res.events)
        assert per_edge_total == drained == wm.bytes_total


class TestFeatures:
    def test_shapes(self):
        core = T.CoreGraph(n=5, edges=((0, 1), (0, 2), (0, 3), (1, 2), (2, 3),
                                       (2, 4), (3, 4)), model="manual", seed=0)
        topo = T.assign_roles(core, 0)
        bundle = TL.build_features([], topo, (0.0, 1.0))
        assert bundle.x_vertices.shape == (5, 3)
        assert bundle.x_edges.shape == (14, 3)
        assert bundle.edge_index.shape == (2, 14)

    def test_quiescent_all_zeros(self):
        topo = make_topology()
        bundle = TL.build_features([], topo, (0.0, 1.0))
        assert not bundle.x_vertices.any()
        assert not bundle.x_edges.any()
        assert bundle.edge_list == topo.directed_core_edges()

    def test_single_active_edge(self):
        topo = make_topology()
        u, v = topo.core.edges[0]
        events = [
            NS.PacketRecord(flow_id="f", u=u, v=v, arrival_t=0.1 * i, size=1000,
                            src_host=topo.hosts[0], dst_host=topo.hosts[-1])
            for i in range(1, 5)
        ]
        bundle = TL.build_features(events, topo, (0.0, 1.0))
        nonzero_rows = np.flatnonzero(bundle.x_edges.any(axis=1))
        assert len(nonzero_rows) == 1
        assert bundle.edge_list[nonzero_rows[0]] == (u, v)

    def test_purity(self):
        topo = make_topology(seed=3)
        rng = random.Random(1)
        events = random_log(topo, rng)
        a = TL.build_features(events, topo, (0.0, 10.0))
        b = TL.build_features(events, topo, (0.0, 10.0))
        assert np.array_equal(a.x_vertices, b.x_vertices)
        assert np.array_equal(a.x_edges, b.x_edges)
        assert np.array_equal(a.edge_index, b.edge_index)

    def test_json_round_trip(self):
        topo = make_topology(seed=5)
        rng = random.Random(2)
        bundle = TL.build_features(random_log(topo, rng), topo, (0.0, 10.0))
        back = TL.FeatureBundle.from_json(bundle.to_json())
        assert np.allclose(back.x_vertices, bundle.x_vertices)
        assert np.allclose(back.x_edges, bundle.x_edges)
        assert np.array_equal(back.edge_index, bundle.edge_index)
        assert back.edge_list == bundle.edge_list


def test_metrics_csv(tmp_path):
    topo = make_topology(seed=6)
    rng = random.Random(3)
    wm = TL.window_metrics(random_log(topo, rng), topo, (0.0, 10.0))
    path = tmp_path / "metrics.csv"
    TL.metrics_to_csv(wm, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("kind,id_u,id_v")
    assert len(lines) > len(topo.core.edges) * 2
