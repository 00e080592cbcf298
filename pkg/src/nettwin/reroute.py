"""Turn per-edge congestion classes into loop-safe policy routing rules.

At each core vertex the out-edge classes are bucketed; when both congested
and uncongested edges exist (and the vertex has more than two), a diversion
percentage is computed from category weights, capped at 50.  Source-
destination pairs are picked from the vertex's traffic history in ascending
share order until the percentage budget is hit, spread evenly over the
uncongested edges, and emitted as rules, each validated by tracing the
pair on a scratch state so loops or dead ends are dropped rather than
installed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .mpnn import CongestionClass
from .netsim import (PacketRecord, PbrRule, RoutingState, apply_pbr, reachable,
                     trace_route, ForwardingLoop, Unreachable)
from .topology import Topology

HIGH_WEIGHT_RATIO = 1.0
MODERATE_WEIGHT_RATIO = 0.75
PERCENTAGE_CAP = 50.0

UNCONGESTED_CLASSES = (CongestionClass.BALANCED, CongestionClass.UNCONGESTED)


@dataclass(frozen=True)
class CategoryCounts:
    """Out-edge tallies at one vertex, one bucket per congestion class."""

    underutilized: int
    balanced: int
    moderate: int
    high: int

    @property
    def total(self) -> int:
        return self.underutilized + self.balanced + self.moderate + self.high

    @property
    def uncongested(self) -> int:
        return self.underutilized + self.balanced

    @property
    def congested(self) -> int:
        return self.moderate + self.high


@dataclass(frozen=True)
class SdShare:
    src_host: int
    dst_host: int
    share: float  # percent of the vertex's forwarded bytes

    @property
    def pair(self) -> tuple[int, int]:
        return (self.src_host, self.dst_host)


@dataclass
class EmitOutcome:
    rules: list[PbrRule]
    skipped: int  # pairs terminating in a LAN attached at this vertex
    dropped: int  # candidates that looped or broke reachability


@dataclass
class CycleReport:
    rules: list[PbrRule]
    vertices_considered: int
    vertices_rerouting: int
    skipped: int
    dropped: int
    per_vertex: dict[int, dict] = field(default_factory=dict)


def categorize(vertex: int, edge_classes: dict[tuple[int, int], CongestionClass]) -> CategoryCounts:
    """Count the vertex's out-edges per class; classes come one per directed edge."""
    for (u, _v), _c in edge_classes.items():
        if u != vertex:
            raise ValueError(f"edge ({u}, {_v}) is not an out-edge of vertex {vertex}")
    buckets = {c: 0 for c in CongestionClass}
    for c in edge_classes.values():
        buckets[CongestionClass(c)] += 1
    return CategoryCounts(
        underutilized=buckets[CongestionClass.UNCONGESTED],
        balanced=buckets[CongestionClass.BALANCED],
        moderate=buckets[CongestionClass.MODERATELY_CONGESTED],
        high=buckets[CongestionClass.HIGHLY_CONGESTED],
    )


def should_reroute(counts: CategoryCounts) -> bool:
    """Rerouting needs congested and uncongested edges to coexist on >2 edges."""
    t = counts.total
    if t == 2 or t == counts.uncongested or t == counts.congested:
        return False
    return counts.uncongested >= 1 and counts.congested >= 1 and t > 2


def reroute_percentage(counts: CategoryCounts) -> float:
    """Share of inflow to divert, from category weights, capped at 50.

    Each congested category contributes weight
    ratio * (100 - 100 * count / total), so scarcer congested edges divert
    more, and the sum is averaged over the congested edge count.  Empty
    categories contribute nothing.
    """
    if not should_reroute(counts):
        raise ValueError(f"rerouting is not feasible for counts {counts}")
    t = counts.total
    w_high = HIGH_WEIGHT_RATIO * (100.0 - (counts.high / t) * 100.0) if counts.high > 0 else 0.0
    w_mod = (MODERATE_WEIGHT_RATIO * (100.0 - (counts.moderate / t) * 100.0)
             if counts.moderate > 0 else 0.0)
    pct = (w_mod + w_high) / (counts.moderate + counts.high)
    return min(pct, PERCENTAGE_CAP)


def traffic_shares(events: list[PacketRecord], vertex: int,
                   window: tuple[float, float]) -> list[SdShare]:
    """Byte share per S-D pair of everything the vertex forwarded in the window."""
    t0, t1 = window
    by_pair: dict[tuple[int, int], int] = {}
    total = 0
    for r in events:
        if r.u != vertex or not (t0 <= r.arrival_t < t1):
            continue
        by_pair[(r.src_host, r.dst_host)] = by_pair.get((r.src_host, r.dst_host), 0) + r.size
        total += r.size
    if total <= 0:
        return []
    return [SdShare(src_host=s, dst_host=d, share=100.0 * b / total)
            for (s, d), b in sorted(by_pair.items())]


def select_sd_pairs(shares: list[SdShare], budget_pct: float) -> list[SdShare]:
    """Greedy ascending-share prefix whose cumulative share stays within budget."""
    if not (0.0 < budget_pct <= PERCENTAGE_CAP):
        raise ValueError(f"budget must be in (0, {PERCENTAGE_CAP}], got {budget_pct}")
    ranked = sorted(shares, key=lambda s: (s.share, s.pair))
    out: list[SdShare] = []
    cum = 0.0
    for s in ranked:
        if cum + s.share > budget_pct:
            break
        out.append(s)
        cum += s.share
    return out


def distribute(selected: list[SdShare],
               uncongested_edges: list[tuple[int, int]]) -> dict[tuple[int, int], list[SdShare]]:
    """Deal pairs over edges evenly: floor(|S|/|E|) each, remainder from the lowest edge id."""
    if not selected:
        return {}
    if not uncongested_edges:
        raise ValueError("distribution needs at least one uncongested edge")
    edges = sorted(uncongested_edges)
    ranked = sorted(selected, key=lambda s: (s.share, s.pair))
    out: dict[tuple[int, int], list[SdShare]] = {e: [] for e in edges}
    for i, s in enumerate(ranked):
        out[edges[i % len(edges)]].append(s)
    return {e: v for e, v in out.items() if v}


def emit_rules(vertex: int, assignment: dict[tuple[int, int], list[SdShare]],
               state: RoutingState, evidence: dict | None = None) -> EmitOutcome:
    """Materialise rules, skipping local-LAN pairs and dropping unsafe candidates.

    Candidates are validated cumulatively: each is applied to a scratch copy
    carrying the rules accepted so far, then the pair is traced end to end.
    Loops and unreachable outcomes are counted, not raised.
    """
    topo = state.topology
    local_lans = {lan for lan in range(topo.lan_count()) if topo.gateway_of_lan(lan) == vertex}
    outcome = EmitOutcome(rules=[], skipped=0, dropped=0)
    working = state
    for edge in sorted(assignment):
        for s in assignment[edge]:
            if topo.lan.get(s.dst_host) in local_lans:
                outcome.skipped += 1
                continue
            rule = PbrRule(router=vertex, src_host=s.src_host, dst_host=s.dst_host,
                           next_hop=edge[1], evidence=dict(evidence or {}))
            try:
                scratch = apply_pbr(working, [rule])
                trace_route(scratch, s.src_host, s.dst_host)
            except (ForwardingLoop, Unreachable, ValueError):
                outcome.dropped += 1
                continue
            working = scratch
            outcome.rules.append(rule)
    return outcome


def plan_rules(topology: Topology, base_state: RoutingState,
               edge_classes: dict[tuple[int, int], CongestionClass],
               events: list[PacketRecord],
               window: tuple[float, float]) -> CycleReport:
    """One control cycle: fresh rules for every core vertex from this window's evidence.

    Rules are planned against the base tables (previous cycles' rules are
    replaced, not stacked) and validated cumulatively in ascending vertex
    order so the final set is loop-free as a whole.
    """
    report = CycleReport(rules=[], vertices_considered=0, vertices_rerouting=0,
                         skipped=0, dropped=0)
    state = base_state
    for v in topology.core_vertices():
        out_classes = {e: c for e, c in edge_classes.items() if e[0] == v}
        if not out_classes:
            continue
        report.vertices_considered += 1
        counts = categorize(v, out_classes)
        if not should_reroute(counts):
            continue
        pct = reroute_percentage(counts)
        shares = traffic_shares(events, v, window)
        if not shares:
            continue
        chosen = select_sd_pairs(shares, pct)
        if not chosen:
            continue
        safe_edges = sorted(e for e, c in out_classes.items() if c in UNCONGESTED_CLASSES)
        assignment = distribute(chosen, safe_edges)
        evidence = {
            "percentage": pct,
            "counts": {"underutilized": counts.underutilized, "balanced": counts.balanced,
                       "moderate": counts.moderate, "high": counts.high},
            "window": list(window),
        }
        outcome = emit_rules(v, assignment, state, evidence)
        report.skipped += outcome.skipped
        report.dropped += outcome.dropped
        if outcome.rules:
            report.vertices_rerouting += 1
            report.rules.extend(outcome.rules)
            state = apply_pbr(state, outcome.rules)
        report.per_vertex[v] = {
            "percentage": pct,
            "selected": len(chosen),
            "installed": len(outcome.rules),
            "skipped": outcome.skipped,
            "dropped": outcome.dropped,
        }
    for rule in report.rules:
        assert edge_classes.get((rule.router, rule.next_hop)) in UNCONGESTED_CLASSES, (
            f"rule at {rule.router} steers onto a congested edge "
            f"({rule.router}, {rule.next_hop})")
    return report
