"""Degree-constrained random core graphs plus edge-network role attachment.

Core graphs model a WAN of provider (P) routers.  Three generators are
supported (uniform random, preferential attachment, rewired ring lattice),
all post-processed by a deterministic repair loop that enforces a
min/max vertex degree window, simplicity, and connectivity.  Around the
core, `assign_roles` grows the access side: PE gateways, their paired CE
routers, one switch per CE, and three hosts per switch (one LAN per
switch).
"""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass, field

MIN_DEGREE_DEFAULT = 2
MAX_DEGREE_DEFAULT = 9
DEFAULT_BANDWIDTH = 10_000_000.0  # bytes/s
DEFAULT_PROP_DELAY = 0.001  # seconds
PATH_ENUMERATION_CEILING = 1_000_000
HOSTS_PER_SWITCH = 3

MODEL_ERDOS_RENYI = "erdos_renyi"
MODEL_BARABASI_ALBERT = "barabasi_albert"
MODEL_WATTS_STROGATZ = "watts_strogatz"

ROLE_P = "P"
ROLE_PE = "PE"
ROLE_CE = "CE"
ROLE_SWITCH = "Switch"
ROLE_HOST = "Host"


class GenerationError(RuntimeError):
    """Raised when repeated generate-and-repair attempts cannot satisfy the degree window."""


class PathCountExceeded(RuntimeError):
    """Raised when simple-path enumeration passes the configured ceiling."""


@dataclass(frozen=True)
class DegreeBounds:
    """Inclusive per-vertex degree window.  Minimum 2 keeps every router dual-homed."""

    min_deg: int = MIN_DEGREE_DEFAULT
    max_deg: int = MAX_DEGREE_DEFAULT

    def __post_init__(self):
        if not (2 <= self.min_deg <= self.max_deg):
            raise ValueError(f"degree bounds must satisfy 2 <= min <= max, got {self}")

    def cap(self, n: int) -> int:
        # a simple graph on n vertices cannot exceed degree n-1
        return min(self.max_deg, n - 1)


@dataclass(frozen=True)
class CoreGraph:
    """Simple connected undirected graph over vertices 0..n-1."""

    n: int
    edges: tuple[tuple[int, int], ...]
    model: str
    seed: int
    params: dict = field(default_factory=dict)
    bounds: DegreeBounds = field(default_factory=DegreeBounds)

    def adjacency(self) -> dict[int, set[int]]:
        adj: dict[int, set[int]] = {v: set() for v in range(self.n)}
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        return adj

    def degree(self, v: int) -> int:
        return sum(1 for e in self.edges if v in e)

    def degrees(self) -> dict[int, int]:
        deg = {v: 0 for v in range(self.n)}
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg


@dataclass(frozen=True)
class LinkParams:
    bandwidth_bytes_per_s: float
    prop_delay_s: float


@dataclass
class Topology:
    """Core graph plus PE/CE/switch/host attachment chains.

    Vertex ids are allocated contiguously: P routers first (0..n-1), then
    PE routers, CE routers, switches, and finally hosts.  `lan` maps each
    host to its LAN index; hosts of one LAN share one switch.
    """

    core: CoreGraph
    roles: dict[int, str]
    lan: dict[int, int]
    pe_routers: list[int]
    ce_routers: list[int]
    switches: list[int]
    hosts: list[int]
    gateways: list[int]  # gateway P vertex per PE, index-aligned with pe_routers
    links: dict[tuple[int, int], LinkParams]  # undirected, key sorted

    def vertices(self) -> list[int]:
        return sorted(self.roles)

    def neighbors(self, v: int) -> list[int]:
        out = []
        for (a, b) in self.links:
            if a == v:
                out.append(b)
            elif b == v:
                out.append(a)
        return sorted(out)

    def adjacency(self) -> dict[int, set[int]]:
        adj: dict[int, set[int]] = {v: set() for v in self.roles}
        for a, b in self.links:
            adj[a].add(b)
            adj[b].add(a)
        return adj

    def link(self, u: int, v: int) -> LinkParams:
        return self.links[(u, v) if u < v else (v, u)]

    def core_vertices(self) -> list[int]:
        return list(range(self.core.n))

    def lan_count(self) -> int:
        return len(self.switches)

    def switch_of_lan(self, lan_id: int) -> int:
        return self.switches[lan_id]

    def gateway_of_lan(self, lan_id: int) -> int:
        return self.gateways[lan_id]

    def hosts_in_lan(self, lan_id: int) -> list[int]:
        return [h for h in self.hosts if self.lan[h] == lan_id]

    def directed_core_edges(self) -> list[tuple[int, int]]:
        out = []
        for u, v in self.core.edges:
            out.append((u, v))
            out.append((v, u))
        return sorted(out)


@dataclass(frozen=True)
class TopologyStats:
    edge_count: int
    path_count: int
    avg_hop_length: float


# ---------------------------------------------------------------------------
# repair loop

def _components(adj: dict[int, set[int]]) -> list[set[int]]:
    seen: set[int] = set()
    comps = []
    for start in sorted(adj):
        if start in seen:
            continue
        comp = {start}
        stack = [start]
        while stack:
            v = stack.pop()
            for u in adj[v]:
                if u not in comp:
                    comp.add(u)
                    stack.append(u)
        seen |= comp
        comps.append(comp)
    return comps


def _connected_without(adj: dict[int, set[int]], u: int, v: int) -> bool:
    # BFS from u avoiding the edge (u, v); graph stays connected iff v is reached
    seen = {u}
    stack = [u]
    while stack:
        w = stack.pop()
        for x in adj[w]:
            if w == u and x == v:
                continue
            if x not in seen:
                if x == v:
                    return True
                seen.add(x)
                stack.append(x)
    return False


def _repair(n: int, edges: set[tuple[int, int]], bounds: DegreeBounds,
            max_rounds: int = 100) -> set[tuple[int, int]] | None:
    """Deterministically push a graph into the degree window and connect it.

    Each round: (a) raise deficient vertices by linking them to the
    lowest-degree non-neighbours, (b) shed edges from overloaded vertices
    (highest-degree neighbour first) when removal keeps the graph connected
    and both endpoints above the minimum, (c) splice components together via
    their lowest-degree vertices.  Returns None if no compliant graph is
    reached within `max_rounds`.
    """
    cap = bounds.cap(n)
    adj: dict[int, set[int]] = {v: set() for v in range(n)}
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)

    def ok() -> bool:
        if any(not (bounds.min_deg <= len(adj[v]) <= cap) for v in adj):
            return False
        return len(_components(adj)) == 1

    for _ in range(max_rounds):
        if ok():
            break
        changed = False

        for v in range(n):
            while len(adj[v]) < bounds.min_deg:
                cands = sorted(
                    (u for u in range(n) if u != v and u not in adj[v]),
                    key=lambda u: (len(adj[u]), u),
                )
                if not cands:
                    return None
                pick = next((u for u in cands if len(adj[u]) < cap), cands[0])
                adj[v].add(pick)
                adj[pick].add(v)
                changed = True

        for v in range(n):
            if len(adj[v]) <= cap:
                continue
            for u in sorted(adj[v], key=lambda u: (-len(adj[u]), u)):
                if len(adj[v]) <= cap:
                    break
                if len(adj[u]) - 1 < bounds.min_deg:
                    continue
                if not _connected_without(adj, v, u):
                    continue
                adj[v].discard(u)
                adj[u].discard(v)
                changed = True

        comps = _components(adj)
        while len(comps) > 1:
            comps.sort(key=lambda c: min((len(adj[v]), v) for v in c))
            a = min(comps[0], key=lambda v: (len(adj[v]), v))
            b = min(comps[1], key=lambda v: (len(adj[v]), v))
            adj[a].add(b)
            adj[b].add(a)
            changed = True
            comps = _components(adj)

        if not changed:
            return None

    if not ok():
        return None
    return {(min(u, v), max(u, v)) for u in adj for v in adj[u]}


def _finish(n: int, raw_edges: set[tuple[int, int]], model: str, seed: int,
            attempt_seed: int, params: dict, bounds: DegreeBounds) -> CoreGraph | None:
    repaired = _repair(n, raw_edges, bounds)
    if repaired is None:
        return None
    return CoreGraph(n=n, edges=tuple(sorted(repaired)), model=model,
                     seed=seed, params=dict(params), bounds=bounds)


MAX_GENERATION_ATTEMPTS = 100


# ---------------------------------------------------------------------------
# generators

def gen_erdos_renyi(n: int, p: float, bounds: DegreeBounds | None = None,
                    seed: int = 0) -> CoreGraph:
    """Uniform random graph: each vertex pair is linked independently with probability p."""
    bounds = bounds or DegreeBounds()
    if n < 3:
        raise ValueError(f"need n >= 3 to satisfy minimum degree {bounds.min_deg}, got n={n}")
    if not (0.0 < p <= 1.0):
        raise ValueError(f"edge probability must be in (0, 1], got {p}")
    for attempt in range(MAX_GENERATION_ATTEMPTS):
        rng = random.Random(seed + attempt)
        raw = {(u, v) for u, v in itertools.combinations(range(n), 2) if rng.random() < p}
        got = _finish(n, raw, MODEL_ERDOS_RENYI, seed, seed + attempt, {"p": p}, bounds)
        if got is not None:
            return got
    raise GenerationError(f"could not repair erdos_renyi(n={n}, p={p}) within "
                          f"{MAX_GENERATION_ATTEMPTS} seeded attempts")


def gen_barabasi_albert(n: int, m: int, bounds: DegreeBounds | None = None,
                        seed: int = 0) -> CoreGraph:
    """Growth with preferential attachment: each new vertex links to m existing ones."""
    bounds = bounds or DegreeBounds()
    if n < 3:
        raise ValueError(f"need n >= 3 to satisfy minimum degree {bounds.min_deg}, got n={n}")
    if not (1 <= m < n):
        raise ValueError(f"attachment count must satisfy 1 <= m < n, got m={m}, n={n}")
    for attempt in range(MAX_GENERATION_ATTEMPTS):
        rng = random.Random(seed + attempt)
        raw: set[tuple[int, int]] = set()
        # chips holds one entry per endpoint, so sampling it is degree-proportional
        chips: list[int] = []
        for v in range(m, n):
            if not chips:
                targets = list(range(m))  # first arrival attaches to the whole seed set
            else:
                targets = []
                guard = 0
                while len(targets) < m and guard < 1000:
                    t = chips[rng.randrange(len(chips))]
                    guard += 1
                    if t != v and t not in targets:
                        targets.append(t)
            for t in targets:
                raw.add((min(v, t), max(v, t)))
                chips.append(v)
                chips.append(t)
        got = _finish(n, raw, MODEL_BARABASI_ALBERT, seed, seed + attempt, {"m": m}, bounds)
        if got is not None:
            return got
    raise GenerationError(f"could not repair barabasi_albert(n={n}, m={m}) within "
                          f"{MAX_GENERATION_ATTEMPTS} seeded attempts")


def gen_watts_strogatz(n: int, k: int, p: float, bounds: DegreeBounds | None = None,
                       seed: int = 0) -> CoreGraph:
    """Ring lattice of k nearest neighbours, each edge rewired with probability p."""
    bounds = bounds or DegreeBounds()
    if n < 3:
        raise ValueError(f"need n >= 3 to satisfy minimum degree {bounds.min_deg}, got n={n}")
    if k % 2 != 0 or k < 2:
        raise ValueError(f"ring neighbour count must be even and >= 2, got k={k}")
    if k >= n:
        raise ValueError(f"ring neighbour count must satisfy k < n, got k={k}, n={n}")
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"rewire probability must be in [0, 1], got {p}")
    for attempt in range(MAX_GENERATION_ATTEMPTS):
        rng = random.Random(seed + attempt)
        raw: set[tuple[int, int]] = set()
        for v in range(n):
            for j in range(1, k // 2 + 1):
                u = (v + j) % n
                raw.add((min(u, v), max(u, v)))
        for v in range(n):
            for j in range(1, k // 2 + 1):
                if rng.random() >= p:
                    continue
                u = (v + j) % n
                old = (min(u, v), max(u, v))
                if old not in raw:
                    continue  # already rewired away
                adjacent = {a for e in raw for a in e if v in e} - {v}
                choices = [w for w in range(n) if w != v and w not in adjacent]
                if not choices:
                    continue
                w = choices[rng.randrange(len(choices))]
                raw.discard(old)
                raw.add((min(v, w), max(v, w)))
        got = _finish(n, raw, MODEL_WATTS_STROGATZ, seed, seed + attempt,
                      {"k": k, "p": p}, bounds)
        if got is not None:
            return got
    raise GenerationError(f"could not repair watts_strogatz(n={n}, k={k}, p={p}) within "
                          f"{MAX_GENERATION_ATTEMPTS} seeded attempts")


GENERATORS = {
    MODEL_ERDOS_RENYI: gen_erdos_renyi,
    MODEL_BARABASI_ALBERT: gen_barabasi_albert,
    MODEL_WATTS_STROGATZ: gen_watts_strogatz,
}


# ---------------------------------------------------------------------------
# role assignment

def pe_count_for(p_routers: int) -> int:
    return max(2, p_routers // 5 + 1)


def assign_roles(core: CoreGraph, seed: int = 0, *,
                 link_bandwidth: float = DEFAULT_BANDWIDTH,
                 link_prop_delay: float = DEFAULT_PROP_DELAY,
                 core_bandwidth: float | None = None,
                 access_bandwidth: float | None = None) -> Topology:
    """Attach PE/CE/switch/host chains to the core.

    PE gateways land on distinct P vertices, highest degree first (ties to
    the lowest id).  Each PE gets one CE, each CE one switch, each switch
    three hosts forming one LAN.  `core_bandwidth` overrides the capacity of
    P-P and PE-P links; `access_bandwidth` overrides host-switch links; all
    other links use `link_bandwidth`.  `seed` is recorded for provenance
    only; attachment is fully deterministic.
    """
    del seed  # reserved; attachment has no random component
    n = core.n
    k = pe_count_for(n)
    if k > n:
        raise ValueError(f"cannot place {k} PE routers on {n} distinct P vertices")
    core_bw = core_bandwidth if core_bandwidth is not None else link_bandwidth
    access_bw = access_bandwidth if access_bandwidth is not None else link_bandwidth

    deg = core.degrees()
    gateways = sorted(range(n), key=lambda v: (-deg[v], v))[:k]

    roles = {v: ROLE_P for v in range(n)}
    lan: dict[int, int] = {}
    links: dict[tuple[int, int], LinkParams] = {}

    def add_link(u: int, v: int, bw: float):
        key = (u, v) if u < v else (v, u)
        links[key] = LinkParams(bandwidth_bytes_per_s=bw, prop_delay_s=link_prop_delay)

    for u, v in core.edges:
        add_link(u, v, core_bw)

    next_id = n
    pe_routers, ce_routers, switches, hosts = [], [], [], []
    for i in range(k):
        pe = next_id
        next_id += 1
        roles[pe] = ROLE_PE
        pe_routers.append(pe)
        add_link(gateways[i], pe, link_bandwidth)
    for i in range(k):
        ce = next_id
        next_id += 1
        roles[ce] = ROLE_CE
        ce_routers.append(ce)
        add_link(pe_routers[i], ce, link_bandwidth)
    for i in range(k):
        sw = next_id
        next_id += 1
        roles[sw] = ROLE_SWITCH
        switches.append(sw)
        add_link(ce_routers[i], sw, link_bandwidth)
    for i in range(k):
        for _ in range(HOSTS_PER_SWITCH):
            h = next_id
            next_id += 1
            roles[h] = ROLE_HOST
            lan[h] = i
            hosts.append(h)
            add_link(switches[i], h, access_bw)

    return Topology(core=core, roles=roles, lan=lan, pe_routers=pe_routers,
                    ce_routers=ce_routers, switches=switches, hosts=hosts,
                    gateways=gateways, links=links)


# ---------------------------------------------------------------------------
# structural statistics

def topology_stats(core: CoreGraph, gateways: list[int], *,
                   ceiling: int = PATH_ENUMERATION_CEILING) -> TopologyStats:
    """Exhaustive simple-path census between all gateway pairs on the core."""
    adj = core.adjacency()
    for g in gateways:
        if g not in adj:
            raise ValueError(f"gateway {g} is not a core vertex")
    count = 0
    total_hops = 0
    for s, t in itertools.combinations(sorted(set(gateways)), 2):
        # iterative DFS over simple paths
        stack: list[tuple[int, list[int]]] = [(s, [s])]
        while stack:
            v, path = stack.pop()
            if v == t:
                count += 1
                total_hops += len(path) - 1
                if count > ceiling:
                    raise PathCountExceeded(
                        f"simple-path enumeration exceeded ceiling {ceiling}")
                continue
            for u in sorted(adj[v], reverse=True):
                if u not in path:
                    stack.append((u, path + [u]))
    avg = (total_hops / count) if count else 0.0
    return TopologyStats(edge_count=len(core.edges), path_count=count, avg_hop_length=avg)


# ---------------------------------------------------------------------------
# serialization

def topology_to_json(topo: Topology) -> str:
    payload = {
        "model": topo.core.model,
        "seed": topo.core.seed,
        "params": topo.core.params,
        "n_core": topo.core.n,
        "vertices": [
            {"id": v, "role": topo.roles[v], "lan": topo.lan.get(v)}
            for v in sorted(topo.roles)
        ],
        "edges": [
            {"u": u, "v": v,
             "bandwidth_bytes_per_s": lp.bandwidth_bytes_per_s,
             "prop_delay_s": lp.prop_delay_s}
            for (u, v), lp in sorted(topo.links.items())
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def topology_from_json(text: str) -> Topology:
    data = json.loads(text)
    n = data["n_core"]
    roles = {v["id"]: v["role"] for v in data["vertices"]}
    lan = {v["id"]: v["lan"] for v in data["vertices"] if v["lan"] is not None}
    links = {
        (min(e["u"], e["v"]), max(e["u"], e["v"])): LinkParams(
            bandwidth_bytes_per_s=e["bandwidth_bytes_per_s"],
            prop_delay_s=e["prop_delay_s"])
        for e in data["edges"]
    }
    core_edges = tuple(sorted((u, v) for (u, v) in links if u < n and v < n))
    core = CoreGraph(n=n, edges=core_edges, model=data["model"], seed=data["seed"],
                     params=data.get("params", {}))
    pe_routers = sorted(v for v, r in roles.items() if r == ROLE_PE)
    ce_routers = sorted(v for v, r in roles.items() if r == ROLE_CE)
    switches = sorted(v for v, r in roles.items() if r == ROLE_SWITCH)
    hosts = sorted(v for v, r in roles.items() if r == ROLE_HOST)
    gateways = []
    for pe in pe_routers:
        attached = [u for (u, v) in links if v == pe and roles[u] == ROLE_P]
        attached += [v for (u, v) in links if u == pe and roles[v] == ROLE_P]
        gateways.append(attached[0])
    return Topology(core=core, roles=roles, lan=lan, pe_routers=pe_routers,
                    ce_routers=ce_routers, switches=switches, hosts=hosts,
                    gateways=gateways, links=links)
