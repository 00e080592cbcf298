"""Per-window edge and vertex metrics plus model feature assembly.

From an event log the module derives, per directed edge: mean packet
inter-arrival delay, throughput over the edge's active span, congestion as
a percentage of link capacity, transported bytes, and a [0,1] cost blending
min-max-normalised delay and congestion at equal weight.  Per core vertex:
the first-ingress-to-last-egress span, combined ingress+egress bytes,
throughput, and congestion relative to the busiest vertex of the window.

Feature bundles carry raw values in fixed column order
[delay, congestion, throughput]; idle elements are zero.  Standardisation
happens at model input, not here.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .netsim import PacketRecord
from .topology import Topology


@dataclass
class EdgeMetrics:
    edge: tuple[int, int]
    window: tuple[float, float]
    delay: float | None  # mean inter-arrival gap, seconds
    throughput: float | None  # bytes/s over the active span
    congestion: float | None  # percent of link capacity
    data_size: int
    cost: float | None = None  # set for core edges once the window population is known


@dataclass
class VertexMetrics:
    vertex: int
    window: tuple[float, float]
    delay: float | None
    throughput: float | None
    congestion: float | None
    data_size: int


@dataclass
class WindowMetrics:
    window: tuple[float, float]
    edges: dict[tuple[int, int], EdgeMetrics]
    vertices: dict[int, VertexMetrics]
    clamped: int  # throughput readings above capacity, clamped to 100%
    misaligned: int  # vertices whose egress ended before ingress began
    bytes_total: int


@dataclass
class FeatureBundle:
    """Raw metric triples for the core subgraph, one row per vertex / directed edge."""

    vertex_ids: list[int]
    edge_list: list[tuple[int, int]]
    x_vertices: np.ndarray  # (V, 3) columns [delay, congestion, throughput]
    x_edges: np.ndarray  # (E, 3) same column order
    edge_index: np.ndarray  # (2, E) rows: source ids, target ids

    def to_json(self) -> str:
        return json.dumps({
            "vertex_ids": self.vertex_ids,
            "edge_list": [list(e) for e in self.edge_list],
            "x_vertices": self.x_vertices.tolist(),
            "x_edges": self.x_edges.tolist(),
            "edge_index": self.edge_index.tolist(),
        }, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "FeatureBundle":
        d = json.loads(text)
        return FeatureBundle(
            vertex_ids=list(d["vertex_ids"]),
            edge_list=[tuple(e) for e in d["edge_list"]],
            x_vertices=np.asarray(d["x_vertices"], dtype=float).reshape(len(d["vertex_ids"]), 3),
            x_edges=np.asarray(d["x_edges"], dtype=float).reshape(len(d["edge_list"]), 3),
            edge_index=np.asarray(d["edge_index"], dtype=int).reshape(2, len(d["edge_list"])),
        )


# ---------------------------------------------------------------------------
# metric primitives

def edge_delay(arrivals: list[float]) -> float | None:
    """Mean gap between successive arrivals; None when fewer than two packets."""
    if len(arrivals) < 2:
        return None
    return (arrivals[-1] - arrivals[0]) / (len(arrivals) - 1)


def vertex_delay(first_ingress_t: float, last_egress_t: float) -> float:
    span = last_egress_t - first_ingress_t
    if span < 0:
        raise ValueError(
            f"window misalignment: egress {last_egress_t} precedes ingress {first_ingress_t}")
    return span


def throughput(data_size: float, interval: float) -> float | None:
    if interval <= 0:
        return None
    return data_size / interval


def congestion(rate: float, ceiling: float, clamps: list[int] | None = None) -> float | None:
    """Utilisation percentage; readings above the ceiling clamp to 100 and are counted."""
    if ceiling <= 0:
        return None
    pct = rate / ceiling * 100.0
    if pct > 100.0:
        if clamps is not None:
            clamps[0] += 1
        return 100.0
    return pct


def edge_cost(delay_norm: float, congestion_norm: float) -> float:
    return 0.5 * delay_norm + 0.5 * congestion_norm


def minmax_normalize(values: list[float]) -> list[float]:
    """Rescale to [0,1]; a constant population normalises to all zeros."""
    if not values:
        return []
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.0 for _ in values]
    return [(v - lo) / (hi - lo) for v in values]


# ---------------------------------------------------------------------------
# window aggregation

def window_metrics(events: list[PacketRecord], topology: Topology,
                   window: tuple[float, float]) -> WindowMetrics:
    t0, t1 = window
    core = set(topology.core_vertices())
    arrivals: dict[tuple[int, int], list[float]] = {}
    sizes: dict[tuple[int, int], int] = {}
    v_in_first: dict[int, float] = {}
    v_out_last: dict[int, float] = {}
    v_bytes: dict[int, int] = {}
    bytes_total = 0

    for r in events:
        if not (t0 <= r.arrival_t < t1):
            continue
        e = (r.u, r.v)
        arrivals.setdefault(e, []).append(r.arrival_t)
        sizes[e] = sizes.get(e, 0) + r.size
        bytes_total += r.size
        if r.v in core:
            if r.v not in v_in_first or r.arrival_t < v_in_first[r.v]:
                v_in_first[r.v] = r.arrival_t
            v_bytes[r.v] = v_bytes.get(r.v, 0) + r.size
        if r.u in core:
            if r.u not in v_out_last or r.arrival_t > v_out_last[r.u]:
                v_out_last[r.u] = r.arrival_t
            v_bytes[r.u] = v_bytes.get(r.u, 0) + r.size

    clamps = [0]
    core_dir = topology.directed_core_edges()
    edge_keys = sorted(set(core_dir) | set(arrivals))
    edges: dict[tuple[int, int], EdgeMetrics] = {}
    for e in edge_keys:
        times = sorted(arrivals.get(e, []))
        size = sizes.get(e, 0)
        d = edge_delay(times)
        span = times[-1] - times[0] if len(times) >= 2 else 0.0
        t = throughput(size, span) if span > 0 else None
        cap = topology.link(*e).bandwidth_bytes_per_s
        c = congestion(t, cap, clamps) if t is not None else None
        edges[e] = EdgeMetrics(edge=e, window=window, delay=d, throughput=t,
                               congestion=c, data_size=size)

    # cost needs the whole core-edge population for normalisation
    delay_pop = [edges[e].delay or 0.0 for e in core_dir]
    cong_pop = [edges[e].congestion or 0.0 for e in core_dir]
    d_norm = minmax_normalize(delay_pop)
    c_norm = minmax_normalize(cong_pop)
    for e, dn, cn in zip(core_dir, d_norm, c_norm):
        edges[e].cost = edge_cost(dn, cn)

    misaligned = 0
    vertices: dict[int, VertexMetrics] = {}
    for v in sorted(core):
        if v in v_in_first and v in v_out_last:
            if v_out_last[v] < v_in_first[v]:
                misaligned += 1
                vertices[v] = VertexMetrics(vertex=v, window=window, delay=None,
                                            throughput=None, congestion=None,
                                            data_size=v_bytes.get(v, 0))
                continue
            span = vertex_delay(v_in_first[v], v_out_last[v])
            size = v_bytes.get(v, 0)
            t = throughput(size, span) if span > 0 else None
            vertices[v] = VertexMetrics(vertex=v, window=window, delay=span,
                                        throughput=t, congestion=None, data_size=size)
        else:
            vertices[v] = VertexMetrics(vertex=v, window=window, delay=None,
                                        throughput=None, congestion=None,
                                        data_size=v_bytes.get(v, 0))

    # vertex congestion is relative to the busiest vertex of the window
    rates = [m.throughput for m in vertices.values() if m.throughput is not None]
    peak = max(rates) if rates else 0.0
    if peak > 0:
        for m in vertices.values():
            if m.throughput is not None:
                m.congestion = congestion(m.throughput, peak, clamps)

    return WindowMetrics(window=window, edges=edges, vertices=vertices,
                         clamped=clamps[0], misaligned=misaligned,
                         bytes_total=bytes_total)


def build_features(events: list[PacketRecord], topology: Topology,
                   window: tuple[float, float],
                   metrics: WindowMetrics | None = None) -> FeatureBundle:
    """Assemble raw metric triples for core vertices and directed core edges."""
    wm = metrics if metrics is not None else window_metrics(events, topology, window)
    vertex_ids = sorted(topology.core_vertices())
    edge_list = topology.directed_core_edges()

    xv = np.zeros((len(vertex_ids), 3), dtype=float)
    for i, v in enumerate(vertex_ids):
        m = wm.vertices[v]
        xv[i] = [m.delay or 0.0, m.congestion or 0.0, m.throughput or 0.0]

    xe = np.zeros((len(edge_list), 3), dtype=float)
    for i, e in enumerate(edge_list):
        m = wm.edges[e]
        xe[i] = [m.delay or 0.0, m.congestion or 0.0, m.throughput or 0.0]

    idx = np.zeros((2, len(edge_list)), dtype=int)
    for i, (u, v) in enumerate(edge_list):
        idx[0, i] = vertex_ids.index(u)
        idx[1, i] = vertex_ids.index(v)
    return FeatureBundle(vertex_ids=vertex_ids, edge_list=edge_list,
                         x_vertices=xv, x_edges=xe, edge_index=idx)


# ---------------------------------------------------------------------------
# serialization

METRIC_FIELDS = ["kind", "id_u", "id_v", "window_t0", "window_t1", "delay_s",
                 "throughput_Bps", "congestion_pct", "data_bytes", "cost"]


def metrics_to_csv(wm: WindowMetrics, path) -> None:
    def fmt(x):
        return "" if x is None else repr(x)

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for e in sorted(wm.edges):
            m = wm.edges[e]
            w.writerow(["edge", e[0], e[1], repr(wm.window[0]), repr(wm.window[1]),
                        fmt(m.delay), fmt(m.throughput), fmt(m.congestion),
                        m.data_size, fmt(m.cost)])
        for v in sorted(wm.vertices):
            m = wm.vertices[v]
            w.writerow(["vertex", v, "", repr(wm.window[0]), repr(wm.window[1]),
                        fmt(m.delay), fmt(m.throughput), fmt(m.congestion),
                        m.data_size, ""])
