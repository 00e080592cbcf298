"""Deterministic time-stepped fluid simulator over a role-assigned topology.

Forwarding follows minimum-hop tables built per destination LAN, optionally
overridden by per-router policy rules matched on (source host, destination
host).  Each active transfer injects bytes at its host's access-link rate;
every directed link drains at most capacity*tick per tick, split across
flows in proportion to their queued backlog.  Drained bytes become eligible
at the next hop after the link's propagation delay and may traverse several
hops within one tick when delays allow, so end-to-end timing tracks the
ideal pipe model to within a couple of ticks.

Byte accounting is integral and loss-free: at any instant
injected == delivered + queued.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

from .topology import Topology
from .traffic import FailureCause, TaskState, TransferTask, fail_and_respawn


class RoutingBuildError(RuntimeError):
    """A destination LAN is unreachable from some vertex."""


class ForwardingLoop(RuntimeError):
    def __init__(self, vertex: int, path: list[int]):
        super().__init__(f"forwarding loop: vertex {vertex} repeated on path {path}")
        self.vertex = vertex
        self.path = path


class Unreachable(RuntimeError):
    pass


@dataclass(frozen=True)
class PbrRule:
    """Divert flows matching (src_host, dst_host) at `router` to `next_hop`."""

    router: int
    src_host: int
    dst_host: int
    next_hop: int
    evidence: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True, slots=True)
class PacketRecord:
    flow_id: str
    u: int
    v: int
    arrival_t: float
    size: int
    src_host: int
    dst_host: int


class RoutingState:
    """Immutable-by-convention forwarding state: base tables plus rule overlays."""

    def __init__(self, topology: Topology, next_hop: dict[tuple[int, int], int],
                 rules: dict[int, tuple[PbrRule, ...]] | None = None):
        self.topology = topology
        self.next_hop = next_hop
        self.rules = rules or {}

    def forward(self, vertex: int, src_host: int, dst_host: int) -> int | None:
        """Next hop for a flow at `vertex`; None when the flow has arrived."""
        if vertex == dst_host:
            return None
        for r in self.rules.get(vertex, ()):
            if r.src_host == src_host and r.dst_host == dst_host:
                return r.next_hop
        lan = self.topology.lan[dst_host]
        if vertex == self.topology.switch_of_lan(lan):
            return dst_host
        try:
            return self.next_hop[(vertex, lan)]
        except KeyError:
            raise Unreachable(f"no route from vertex {vertex} to LAN {lan}") from None

    def with_rules(self, rules: list[PbrRule]) -> "RoutingState":
        merged = {r: list(v) for r, v in self.rules.items()}
        for rule in rules:
            merged.setdefault(rule.router, []).append(rule)
        return RoutingState(self.topology, self.next_hop,
                            {r: tuple(v) for r, v in merged.items()})

    def rule_list(self) -> list[PbrRule]:
        return [r for v in sorted(self.rules) for r in self.rules[v]]


def build_routing_tables(topology: Topology) -> RoutingState:
    """Minimum-hop next hops toward every LAN's switch, ties to the lowest neighbour id."""
    adj = topology.adjacency()
    next_hop: dict[tuple[int, int], int] = {}
    for lan_id in range(topology.lan_count()):
        target = topology.switch_of_lan(lan_id)
        dist = {target: 0}
        frontier = [target]
        while frontier:
            nxt = []
            for v in frontier:
                for u in sorted(adj[v]):
                    if u not in dist:
                        dist[u] = dist[v] + 1
                        nxt.append(u)
            frontier = nxt
        for v in topology.vertices():
            if v == target:
                continue
            if v not in dist:
                raise RoutingBuildError(f"vertex {v} cannot reach LAN {lan_id}")
            best = min((u for u in adj[v] if dist.get(u, 1 << 30) == dist[v] - 1),
                       default=None)
            if best is None:
                raise RoutingBuildError(f"vertex {v} has no downhill neighbour to LAN {lan_id}")
            next_hop[(v, lan_id)] = best
    return RoutingState(topology, next_hop)


def apply_pbr(state: RoutingState, rules: list[PbrRule]) -> RoutingState:
    """Overlay rules onto a copy of the state; earlier rules win on a match."""
    adj = state.topology.adjacency()
    for r in rules:
        if r.router not in adj:
            raise ValueError(f"rule router {r.router} does not exist")
        if r.next_hop not in adj[r.router]:
            raise ValueError(f"rule at router {r.router}: next hop {r.next_hop} "
                             f"is not adjacent")
    return state.with_rules(rules)


def trace_route(state: RoutingState, src_host: int, dst_host: int) -> list[int]:
    """Forwarding path under current rules; raises on loops or missing routes."""
    if src_host not in state.topology.roles or dst_host not in state.topology.roles:
        raise Unreachable(f"unknown endpoint in pair ({src_host}, {dst_host})")
    if dst_host not in state.topology.lan:
        raise Unreachable(f"destination {dst_host} is not a host")
    path = [src_host]
    seen = {src_host}
    v = src_host
    while v != dst_host:
        nxt = state.forward(v, src_host, dst_host)
        if nxt in seen:
            raise ForwardingLoop(nxt, path)
        path.append(nxt)
        seen.add(nxt)
        v = nxt
    return path


def reachable(state: RoutingState, src_host: int, dst_host: int) -> bool:
    try:
        trace_route(state, src_host, dst_host)
        return True
    except (ForwardingLoop, Unreachable):
        return False


# ---------------------------------------------------------------------------
# scenario and run result

@dataclass
class Scenario:
    topology: Topology
    tasks: list[TransferTask]
    tick: float = 0.01
    horizon: float = 60.0

    def validate(self):
        if self.tick <= 0:
            raise ValueError(f"tick must be positive, got {self.tick}")
        if self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        lan = self.topology.lan
        for t in self.tasks:
            if t.src_host not in lan or t.dst_host not in lan:
                raise ValueError(f"task {t.id}: endpoints must be hosts")
            if lan[t.src_host] == lan[t.dst_host]:
                raise ValueError(f"task {t.id}: endpoints share LAN {lan[t.src_host]}")


@dataclass
class TaskOutcome:
    task: TransferTask
    state: TaskState
    failure_cause: FailureCause | None
    start_t: float
    end_t: float | None
    injected: int
    delivered: int


@dataclass
class RunResult:
    events: list[PacketRecord]
    outcomes: dict[str, TaskOutcome]
    injected: int
    delivered: int
    queued: int
    end_t: float
    iteration_spans: dict[int, tuple[float, float]]

    def conserved(self) -> bool:
        return self.injected == self.delivered + self.queued


class _Flow:
    __slots__ = ("task", "path", "next_edge", "first_edge", "inject_rate",
                 "remaining", "carry", "injected", "delivered", "start_t",
                 "done", "fail_at")

    def __init__(self, task: TransferTask, path: list[int], topology: Topology,
                 start_t: float):
        self.task = task
        self.path = path
        self.first_edge = (path[0], path[1])
        self.next_edge: dict[tuple[int, int], tuple[int, int] | None] = {}
        for i in range(1, len(path)):
            edge = (path[i - 1], path[i])
            self.next_edge[edge] = (path[i], path[i + 1]) if i + 1 < len(path) else None
        self.inject_rate = topology.link(path[0], path[1]).bandwidth_bytes_per_s
        self.remaining = task.size
        self.carry = 0.0
        self.injected = 0
        self.delivered = 0
        self.start_t = start_t
        self.done = False
        self.fail_at = (int(task.scripted_failure[0] * task.size), task.scripted_failure[1]) \
            if task.scripted_failure else None


def _split_proportional(amount: int, backlog: dict[str, int], order: list[str]) -> dict[str, int]:
    """Largest-remainder split of `amount` across flows, proportional to backlog."""
    total = sum(backlog[f] for f in order)
    if total <= 0:
        return {}
    floors: dict[str, int] = {}
    rems: list[tuple[float, str]] = []
    acc = 0
    for f in order:
        ideal = amount * backlog[f] / total
        fl = min(int(ideal), backlog[f])
        floors[f] = fl
        acc += fl
        rems.append((ideal - fl, f))
    leftover = amount - acc
    # hand out remainders by largest fractional part, flow id as tie-break
    for _, f in sorted(rems, key=lambda t: (-t[0], t[1])):
        if leftover <= 0:
            break
        if floors[f] < backlog[f]:
            floors[f] += 1
            leftover -= 1
    return floors


def run(scenario: Scenario, state: RoutingState) -> RunResult:
    """Execute all tasks; iteration groups start once the previous group finishes."""
    scenario.validate()
    topo = scenario.topology
    tick = scenario.tick
    max_ticks = int(scenario.horizon / tick + 1e-9)

    groups: dict[int, list[TransferTask]] = {}
    for t in scenario.tasks:
        groups.setdefault(t.iteration, []).append(t)
    group_order = sorted(groups)

    events: list[PacketRecord] = []
    outcomes: dict[str, TaskOutcome] = {}
    iteration_spans: dict[int, tuple[float, float]] = {}

    # queues[edge][flow_id] -> list of [bytes, eligible_at], FIFO
    queues: dict[tuple[int, int], dict[str, list[list[float]]]] = {}
    flows: dict[str, _Flow] = {}
    budget_carry: dict[tuple[int, int], float] = {}
    n_vertices = len(topo.roles)

    injected_total = 0
    delivered_total = 0

    def start_flow(task: TransferTask, start_t: float):
        try:
            path = trace_route(state, task.src_host, task.dst_host)
        except ForwardingLoop as exc:
            raise RuntimeError(
                f"aborting run: forwarding loop for task {task.id} "
                f"({task.src_host}->{task.dst_host}) under rules {state.rule_list()}"
            ) from exc
        if len(path) > n_vertices:
            raise RuntimeError(
                f"aborting run: path longer than vertex count for task {task.id} "
                f"under rules {state.rule_list()}")
        flows[task.id] = _Flow(task, path, topo, start_t)

    group_idx = 0
    active_group: int | None = None
    pending_in_group: set[str] = set()
    end_t = 0.0

    for tick_idx in range(max_ticks):
        t0 = tick_idx * tick
        t1 = (tick_idx + 1) * tick

        if active_group is None and group_idx < len(group_order):
            active_group = group_order[group_idx]
            iteration_spans[active_group] = (t0, t0)
            pending_in_group = set()
            for task in groups[active_group]:
                start_flow(task, t0)
                pending_in_group.add(task.id)

        if active_group is None and not queues:
            break
        end_t = t1

        # inject at the source access rate
        for fid in sorted(flows):
            fl = flows[fid]
            if fl.done or fl.remaining <= 0:
                continue
            amt_f = fl.inject_rate * tick + fl.carry
            amt = int(amt_f)
            fl.carry = amt_f - amt
            amt = min(amt, fl.remaining)
            if amt <= 0:
                continue
            fl.remaining -= amt
            fl.injected += amt
            injected_total += amt
            queues.setdefault(fl.first_edge, {}).setdefault(fid, []).append([amt, t0])

        # drain passes: a chunk may advance several hops within one tick,
        # each hop charging that link's remaining budget
        drained_this_tick: dict[tuple[tuple[int, int], str], int] = {}
        budgets: dict[tuple[int, int], int] = {}
        for _ in range(n_vertices + 2):
            progressed = False
            for edge in sorted(queues):
                per_flow = queues[edge]
                if not per_flow:
                    continue
                if edge not in budgets:
                    cap = topo.link(*edge).bandwidth_bytes_per_s
                    raw = cap * tick + budget_carry.get(edge, 0.0)
                    b = int(raw)
                    budget_carry[edge] = raw - b
                    budgets[edge] = b
                budget = budgets[edge]
                if budget <= 0:
                    continue
                order = sorted(per_flow)
                eligible: dict[str, int] = {}
                for fid in order:
                    tot = 0
                    for chunk in per_flow[fid]:
                        if chunk[1] < t1:
                            tot += int(chunk[0])
                        else:
                            break  # eligibility times are FIFO-monotone
                    if tot:
                        eligible[fid] = tot
                if not eligible:
                    continue
                drain = min(budget, sum(eligible.values()))
                shares = _split_proportional(drain, eligible, sorted(eligible))
                prop = topo.link(*edge).prop_delay_s
                moved = 0
                for fid in sorted(shares):
                    take = shares[fid]
                    if take <= 0:
                        continue
                    fl = flows[fid]
                    nxt = fl.next_edge[edge]
                    chunks = per_flow[fid]
                    while take > 0:
                        head = chunks[0]
                        piece = min(take, int(head[0]))
                        el = head[1]
                        if piece == head[0]:
                            chunks.pop(0)
                        else:
                            head[0] -= piece
                        take -= piece
                        moved += piece
                        drained_this_tick[(edge, fid)] = (
                            drained_this_tick.get((edge, fid), 0) + piece)
                        if nxt is None:
                            fl.delivered += piece
                            delivered_total += piece
                        else:
                            arrive = max(el, t0) + prop
                            q = queues.setdefault(nxt, {}).setdefault(fid, [])
                            q.append([piece, arrive])
                    if not chunks:
                        del per_flow[fid]
                if not per_flow:
                    del queues[edge]
                if moved:
                    budgets[edge] -= moved
                    progressed = True
            if not progressed:
                break

        for (edge, fid), size in sorted(drained_this_tick.items()):
            fl = flows[fid]
            events.append(PacketRecord(flow_id=fid, u=edge[0], v=edge[1],
                                       arrival_t=t1, size=size,
                                       src_host=fl.task.src_host,
                                       dst_host=fl.task.dst_host))

        # completion / scripted faults, deterministically ordered
        for fid in sorted(flows):
            fl = flows[fid]
            if fl.done:
                continue
            if fl.fail_at is not None and fl.delivered >= fl.fail_at[0] \
                    and fl.delivered < fl.task.size:
                cause = fl.fail_at[1]
                fl.done = True
                failed, respawn = fail_and_respawn(fl.task, cause)
                outcomes[fid] = TaskOutcome(task=failed, state=TaskState.FAILED,
                                            failure_cause=cause, start_t=fl.start_t,
                                            end_t=t1, injected=fl.injected,
                                            delivered=fl.delivered)
                pending_in_group.discard(fid)
                start_flow(respawn, t1)
                pending_in_group.add(respawn.id)
                continue
            if fl.delivered >= fl.task.size:
                fl.done = True
                done_task = replace(fl.task, state=TaskState.COMPLETED,
                                    start_t=fl.start_t, end_t=t1)
                outcomes[fid] = TaskOutcome(task=done_task, state=TaskState.COMPLETED,
                                            failure_cause=None, start_t=fl.start_t,
                                            end_t=t1, injected=fl.injected,
                                            delivered=fl.delivered)
                pending_in_group.discard(fid)

        if active_group is not None and not pending_in_group:
            iteration_spans[active_group] = (iteration_spans[active_group][0], t1)
            active_group = None
            group_idx += 1

    # horizon exhausted: whatever is still open times out
    for fid in sorted(flows):
        fl = flows[fid]
        if fl.done:
            continue
        failed = replace(fl.task, state=TaskState.FAILED,
                         failure_cause=FailureCause.TIMEOUT)
        outcomes[fid] = TaskOutcome(task=failed, state=TaskState.FAILED,
                                    failure_cause=FailureCause.TIMEOUT,
                                    start_t=fl.start_t, end_t=None,
                                    injected=fl.injected, delivered=fl.delivered)
    if active_group is not None:
        iteration_spans[active_group] = (iteration_spans[active_group][0], end_t)

    queued = sum(int(c[0]) for per_flow in queues.values()
                 for chunks in per_flow.values() for c in chunks)
    result = RunResult(events=events, outcomes=outcomes, injected=injected_total,
                       delivered=delivered_total, queued=queued, end_t=end_t,
                       iteration_spans=iteration_spans)
    assert result.conserved(), (
        f"byte conservation violated: injected={result.injected} "
        f"delivered={result.delivered} queued={result.queued}")
    return result


def transfer_records(result: RunResult) -> list:
    """One workload log line per terminal task state (completions and failures)."""
    from .traffic import TransferRecord

    out = []
    for tid in sorted(result.outcomes):
        o = result.outcomes[tid]
        duration = (o.end_t - o.start_t) if (o.end_t is not None
                                             and o.state == TaskState.COMPLETED) else None
        rate = (o.task.size / duration) if duration else None
        out.append(TransferRecord(
            task_id=tid, src_host=o.task.src_host, dst_host=o.task.dst_host,
            size=o.task.size, duration_s=duration, rate_bytes_per_s=rate,
            status=o.state.value if o.failure_cause is None
            else f"{o.state.value}:{o.failure_cause.value}",
            timestamp=o.end_t if o.end_t is not None else result.end_t))
    return out


# ---------------------------------------------------------------------------
# serialization

EVENT_FIELDS = ["flow_id", "edge_u", "edge_v", "arrival_t", "size_bytes",
                "src_host", "dst_host"]


def events_to_csv(events: list[PacketRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVENT_FIELDS)
        for r in events:
            w.writerow([r.flow_id, r.u, r.v, repr(r.arrival_t), r.size,
                        r.src_host, r.dst_host])


def events_from_csv(path) -> list[PacketRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(PacketRecord(
                flow_id=row["flow_id"], u=int(row["edge_u"]), v=int(row["edge_v"]),
                arrival_t=float(row["arrival_t"]), size=int(row["size_bytes"]),
                src_host=int(row["src_host"]), dst_host=int(row["dst_host"])))
    return out


def outcomes_to_json(result: RunResult) -> str:
    payload = {
        "injected": result.injected,
        "delivered": result.delivered,
        "queued": result.queued,
        "end_t": result.end_t,
        "iteration_spans": {str(k): list(v) for k, v in result.iteration_spans.items()},
        "tasks": {
            tid: {
                "state": o.state.value,
                "failure_cause": o.failure_cause.value if o.failure_cause else None,
                "start_t": o.start_t,
                "end_t": o.end_t,
                "injected": o.injected,
                "delivered": o.delivered,
                "size": o.task.size,
                "src": o.task.src_host,
                "dst": o.task.dst_host,
                "iteration": o.task.iteration,
            }
            for tid, o in sorted(result.outcomes.items())
        },
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def rules_to_json(rules: list[PbrRule]) -> str:
    payload = [
        {"router": r.router, "match": {"src": r.src_host, "dst": r.dst_host},
         "next_hop": r.next_hop, "evidence": r.evidence}
        for r in rules
    ]
    return json.dumps(payload, indent=2, sort_keys=True)


def rules_from_json(text: str) -> list[PbrRule]:
    return [
        PbrRule(router=d["router"], src_host=d["match"]["src"],
                dst_host=d["match"]["dst"], next_hop=d["next_hop"],
                evidence=d.get("evidence", {}))
        for d in json.loads(text)
    ]
