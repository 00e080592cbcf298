"""Two-phase experiment driver, comparison statistics, and exports.

Phase one runs every scenario under plain shortest-path forwarding,
harvesting labelled telemetry windows and a baseline metric series.  Phase
two replays the same scenarios with the classifier in the loop: after each
iteration the previous window is classified, a fresh rule set is planned
and swapped in, and the next iteration runs under it.  Reports pair up by
(model, n, seed, iteration) for percentage-delta comparison and CSV/JSON
export.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import mpnn, netsim, reroute, telemetry, topology, traffic

METRICS = ["delay", "delay_p95", "edge_delay", "transfer_rate", "throughput",
           "congestion", "cost", "vertex_utilization", "edge_utilization"]

# Improvement figures reported for the emulated-router deployment of this
# optimisation scheme; exported for context only, never asserted against.
REFERENCE_DELTAS_PCT = {
    "transfer_rate": 180.5,
    "delay": -51.89,
    "congestion": -73.36,
    "cost": -40.98,
}


@dataclass
class SimSettings:
    # Two hosts sharing one core link overcommit it (2 * access > core), so
    # shared edges queue while a lone flow stays in the moderate band.
    tick: float = 0.01
    horizon: float = 120.0
    access_bandwidth: float = 4_400_000.0  # host uplink; also the injection rate
    lan_bandwidth: float = 20_000_000.0  # switch/CE/PE chain
    core_bandwidth: float = 8_000_000.0  # P-P links
    prop_delay: float = 0.001
    failure_prob: float = 0.0  # seeded per-task mid-transfer fault probability


@dataclass
class TrainSettings:
    lr: float = 0.02
    epochs: int = 260
    batch: int = 1
    seed: int = 7
    layers: int = 2
    balance_classes: bool = False


@dataclass
class ExperimentConfig:
    models: tuple[str, ...] = (topology.MODEL_ERDOS_RENYI,
                               topology.MODEL_BARABASI_ALBERT,
                               topology.MODEL_WATTS_STROGATZ)
    sizes: tuple[int, ...] = (5, 10)
    iterations: int = 6
    train_seeds: tuple[int, ...] = (101, 202, 303)
    eval_seeds: tuple[int, ...] = (11, 22, 33, 44)
    sim: SimSettings = field(default_factory=SimSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    er_p: dict[int, float] = field(default_factory=lambda: {5: 0.6, 10: 0.45, 15: 0.3})
    ba_m: int = 2
    ws_k: int = 4
    ws_p: float = 0.3
    # evaluate on the training seeds instead of the held-out ones (the original
    # deployment measured on the very networks it trained on)
    eval_on_train: bool = False

    def evaluation_seeds(self) -> tuple[int, ...]:
        return self.train_seeds if self.eval_on_train else self.eval_seeds

    def graph_params(self, model: str, n: int) -> dict:
        if model == topology.MODEL_ERDOS_RENYI:
            return {"p": self.er_p.get(n, min(0.9, 3.0 / n))}
        if model == topology.MODEL_BARABASI_ALBERT:
            return {"m": self.ba_m}
        if model == topology.MODEL_WATTS_STROGATZ:
            return {"k": self.ws_k, "p": self.ws_p}
        raise ValueError(f"unknown graph model {model!r}")


def config_from_json(text: str) -> ExperimentConfig:
    d = json.loads(text)
    cfg = ExperimentConfig()
    if "models" in d:
        cfg.models = tuple(d["models"])
    if "sizes" in d:
        cfg.sizes = tuple(d["sizes"])
    if "iterations" in d:
        cfg.iterations = int(d["iterations"])
    if "train_seeds" in d:
        cfg.train_seeds = tuple(d["train_seeds"])
    if "eval_seeds" in d:
        cfg.eval_seeds = tuple(d["eval_seeds"])
    for section, target in (("sim", cfg.sim), ("train", cfg.train)):
        for k, v in d.get(section, {}).items():
            if not hasattr(target, k):
                raise ValueError(f"unknown {section} option {k!r}")
            setattr(target, k, v)
    if "er_p" in d:
        cfg.er_p = {int(k): float(v) for k, v in d["er_p"].items()}
    for k in ("ba_m", "ws_k", "ws_p", "eval_on_train"):
        if k in d:
            setattr(cfg, k, d[k])
    return cfg


@dataclass
class ReportRow:
    model: str
    n: int
    seed: int
    iteration: int
    delay: float  # mean completed-transfer duration, s
    delay_p95: float
    edge_delay: float  # mean packet inter-arrival gap over active core edges, s
    transfer_rate: float  # mean bytes/s over completed transfers
    throughput: float  # delivered bytes / iteration span
    congestion: float  # mean % over active directed core edges
    cost: float  # summed edge cost over directed core edges
    vertex_utilization: float  # % of core vertices that forwarded bytes
    edge_utilization: float  # % of directed core edges that carried bytes
    completed: int
    failed: int
    rules_active: int

    def key(self) -> tuple:
        return (self.model, self.n, self.seed, self.iteration)


@dataclass
class ExperimentReport:
    phase: str
    rows: list[ReportRow] = field(default_factory=list)

    def by_key(self) -> dict[tuple, ReportRow]:
        return {r.key(): r for r in self.rows}


def build_topology(config: ExperimentConfig, model: str, n: int, seed: int) -> topology.Topology:
    gen = topology.GENERATORS[model]
    params = config.graph_params(model, n)
    core = gen(n, seed=seed, **params)
    return topology.assign_roles(
        core, seed,
        link_bandwidth=config.sim.lan_bandwidth,
        link_prop_delay=config.sim.prop_delay,
        core_bandwidth=config.sim.core_bandwidth,
        access_bandwidth=config.sim.access_bandwidth,
    )


def _iteration_tasks(schedule: list[traffic.TransferTask], iteration: int) -> list[traffic.TransferTask]:
    return [t for t in schedule if t.iteration == iteration]


def _row_from_run(result: netsim.RunResult, wm: telemetry.WindowMetrics,
                  topo: topology.Topology, *, model: str, n: int, seed: int,
                  iteration: int, rules_active: int) -> ReportRow:
    durations = []
    rates = []
    completed = 0
    failed = 0
    for o in result.outcomes.values():
        if o.state == traffic.TaskState.COMPLETED:
            completed += 1
            durations.append(o.end_t - o.start_t)
            rates.append(traffic.transfer_rate(o.task.size, o.end_t - o.start_t))
        else:
            failed += 1
    span = max(result.end_t, 1e-12)
    core_dir = topo.directed_core_edges()
    active = [wm.edges[e] for e in core_dir if wm.edges[e].data_size > 0]
    congestion_vals = [m.congestion for m in active if m.congestion is not None]
    edge_delay_vals = [m.delay for m in active if m.delay is not None]
    cost_total = sum(wm.edges[e].cost or 0.0 for e in core_dir)
    core_v = topo.core_vertices()
    forwarding = {e[0] for e in core_dir if wm.edges[e].data_size > 0}
    # attachment egress counts as forwarding too
    for v in core_v:
        m = wm.vertices[v]
        if m.data_size > 0 and v not in forwarding:
            forwarding.add(v)
    return ReportRow(
        model=model, n=n, seed=seed, iteration=iteration,
        delay=float(np.mean(durations)) if durations else 0.0,
        delay_p95=float(np.percentile(durations, 95)) if durations else 0.0,
        edge_delay=float(np.mean(edge_delay_vals)) if edge_delay_vals else 0.0,
        transfer_rate=float(np.mean(rates)) if rates else 0.0,
        throughput=result.delivered / span,
        congestion=float(np.mean(congestion_vals)) if congestion_vals else 0.0,
        cost=cost_total,
        vertex_utilization=100.0 * len(forwarding) / len(core_v),
        edge_utilization=100.0 * sum(1 for e in core_dir if wm.edges[e].data_size > 0)
                         / max(len(core_dir), 1),
        completed=completed, failed=failed, rules_active=rules_active,
    )


def _labels_for(wm: telemetry.WindowMetrics, topo: topology.Topology) -> np.ndarray:
    vals = []
    for e in topo.directed_core_edges():
        c = wm.edges[e].congestion
        vals.append(int(mpnn.label_oracle(c if c is not None else 0.0)))
    return np.asarray(vals, dtype=int)


@dataclass
class ScenarioArtifacts:
    model: str
    n: int
    seed: int
    rows: list[ReportRow]
    samples: list[mpnn.TrainingSample]
    iteration_metrics: list[telemetry.WindowMetrics]
    iteration_events: list[list[netsim.PacketRecord]]
    rule_counts: list[int]


def run_scenario(config: ExperimentConfig, model: str, n: int, seed: int, *,
                 params: mpnn.ModelParams | None = None,
                 collect_samples: bool = True) -> ScenarioArtifacts:
    """Simulate all iterations of one scenario.

    Without `params` this is the baseline: plain shortest-path forwarding
    throughout.  With `params` each finished iteration is classified and the
    next one runs under a freshly planned rule set (previous rules are
    replaced, not stacked).
    """
    topo = build_topology(config, model, n, seed)
    schedule = traffic.build_schedule(topo, config.iterations, seed,
                                      failure_prob=config.sim.failure_prob)
    base_state = netsim.build_routing_tables(topo)
    state = base_state
    art = ScenarioArtifacts(model=model, n=n, seed=seed, rows=[], samples=[],
                            iteration_metrics=[], iteration_events=[], rule_counts=[])
    rules_active = 0
    for it in range(config.iterations):
        tasks = _iteration_tasks(schedule, it)
        scenario = netsim.Scenario(topology=topo, tasks=tasks, tick=config.sim.tick,
                                   horizon=config.sim.horizon)
        result = netsim.run(scenario, state)
        window = (0.0, result.end_t + scenario.tick)
        wm = telemetry.window_metrics(result.events, topo, window)
        art.rows.append(_row_from_run(result, wm, topo, model=model, n=n, seed=seed,
                                      iteration=it, rules_active=rules_active))
        art.iteration_metrics.append(wm)
        art.iteration_events.append(result.events)
        art.rule_counts.append(rules_active)
        if collect_samples:
            bundle = telemetry.build_features(result.events, topo, window, metrics=wm)
            art.samples.append(mpnn.TrainingSample(
                bundle=bundle, labels=_labels_for(wm, topo),
                provenance={"model": model, "n": n, "seed": seed, "iteration": it}))
        if params is not None:
            bundle = telemetry.build_features(result.events, topo, window, metrics=wm)
            classes = mpnn.classify(params, bundle)
            edge_classes = dict(zip(bundle.edge_list, classes))
            plan = reroute.plan_rules(topo, base_state, edge_classes,
                                      result.events, window)
            state = netsim.apply_pbr(base_state, plan.rules)
            rules_active = len(plan.rules)
    if collect_samples and config.iterations > 0:
        # one quiescent window per scenario so the idle pattern is labelled too
        quiet = telemetry.build_features([], topo, (0.0, 1.0))
        art.samples.append(mpnn.TrainingSample(
            bundle=quiet,
            labels=np.full(len(quiet.edge_list), int(mpnn.CongestionClass.UNCONGESTED),
                           dtype=int),
            provenance={"model": model, "n": n, "seed": seed, "iteration": -1}))
    return art


def scenario_grid(config: ExperimentConfig, seeds) -> list[tuple[str, int, int]]:
    return [(m, n, s) for m in config.models for n in config.sizes for s in seeds]


def run_phase1(config: ExperimentConfig, seeds=None) -> tuple[list[mpnn.TrainingSample], ExperimentReport]:
    """Baseline runs: shortest-path forwarding only, labelled windows collected."""
    seeds = tuple(seeds) if seeds is not None else config.train_seeds
    samples: list[mpnn.TrainingSample] = []
    report = ExperimentReport(phase="baseline")
    for model, n, seed in scenario_grid(config, seeds):
        art = run_scenario(config, model, n, seed, params=None, collect_samples=True)
        samples.extend(art.samples)
        report.rows.extend(art.rows)
    return samples, report


def run_phase2(config: ExperimentConfig, params: mpnn.ModelParams,
               seeds=None) -> ExperimentReport:
    """Closed-loop runs: classify each window, swap rules, run the next iteration."""
    seeds = tuple(seeds) if seeds is not None else config.eval_seeds
    report = ExperimentReport(phase="optimized")
    for model, n, seed in scenario_grid(config, seeds):
        art = run_scenario(config, model, n, seed, params=params, collect_samples=False)
        report.rows.extend(art.rows)
    return report


def train_model(config: ExperimentConfig, samples: list[mpnn.TrainingSample]) -> mpnn.ModelParams:
    t = config.train
    return mpnn.train(samples, lr=t.lr, epochs=t.epochs, batch=t.batch,
                      seed=t.seed, layers=t.layers,
                      balance_classes=t.balance_classes)


# ---------------------------------------------------------------------------
# comparison

@dataclass
class ComparisonRow:
    key: tuple
    metric: str
    baseline: float
    optimized: float
    delta: float
    delta_pct: float | None


@dataclass
class ComparisonSummary:
    rows: list[ComparisonRow]
    aggregates: dict


def percent_change(base: float, new: float) -> float | None:
    if base == 0:
        return None
    return 100.0 * (new - base) / base


def compare(baseline: ExperimentReport, optimized: ExperimentReport) -> ComparisonSummary:
    """Per-key metric deltas; percentage deltas use the baseline as denominator."""
    b = baseline.by_key()
    o = optimized.by_key()
    if set(b) != set(o):
        missing = sorted(set(b) ^ set(o))
        raise ValueError(f"reports cover different scenarios; unmatched keys: {missing}")
    rows: list[ComparisonRow] = []
    for key in sorted(b):
        for metric in METRICS:
            bv = getattr(b[key], metric)
            ov = getattr(o[key], metric)
            rows.append(ComparisonRow(key=key, metric=metric, baseline=bv,
                                      optimized=ov, delta=ov - bv,
                                      delta_pct=percent_change(bv, ov)))

    def agg(keys) -> dict:
        out = {}
        for metric in METRICS:
            sel = [r for r in rows if r.metric == metric and r.key in keys]
            bm = float(np.mean([r.baseline for r in sel])) if sel else 0.0
            om = float(np.mean([r.optimized for r in sel])) if sel else 0.0
            out[metric] = {"baseline_mean": bm, "optimized_mean": om,
                           "delta_mean": om - bm, "delta_pct": percent_change(bm, om)}
        return out

    all_keys = set(b)
    aggregates = {"overall": agg(all_keys)}
    for model in sorted({k[0] for k in all_keys}):
        aggregates[f"model={model}"] = agg({k for k in all_keys if k[0] == model})
    for n in sorted({k[1] for k in all_keys}):
        aggregates[f"n={n}"] = agg({k for k in all_keys if k[1] == n})
    aggregates["reference_deltas_pct"] = dict(REFERENCE_DELTAS_PCT)
    return ComparisonSummary(rows=rows, aggregates=aggregates)


# ---------------------------------------------------------------------------
# export

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def export_report(report: ExperimentReport, out_dir: str) -> list[str]:
    """One CSV per metric plus a summary; output is byte-stable for fixed input."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    rows = sorted(report.rows, key=lambda r: r.key())
    for metric in METRICS:
        path = os.path.join(out_dir, f"{metric}.csv")
        lines = ["model,n,seed,iteration,value"]
        for r in rows:
            lines.append(f"{r.model},{r.n},{r.seed},{r.iteration},{_fmt(getattr(r, metric))}")
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
        written.append(path)
    summary = {
        "phase": report.phase,
        "scenarios": len({(r.model, r.n, r.seed) for r in rows}),
        "rows": len(rows),
        "completed": sum(r.completed for r in rows),
        "failed": sum(r.failed for r in rows),
    }
    path = os.path.join(out_dir, "summary.json")
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(path)
    return written


def export_comparison(cmp: ComparisonSummary, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    by_metric: dict[str, list[ComparisonRow]] = {}
    for r in cmp.rows:
        by_metric.setdefault(r.metric, []).append(r)
    for metric in METRICS:
        path = os.path.join(out_dir, f"{metric}.csv")
        lines = ["model,n,seed,iteration,baseline,optimized,delta,delta_pct"]
        for r in sorted(by_metric.get(metric, []), key=lambda r: r.key):
            m, n, s, i = r.key
            lines.append(f"{m},{n},{s},{i},{_fmt(r.baseline)},{_fmt(r.optimized)},"
                         f"{_fmt(r.delta)},{_fmt(r.delta_pct)}")
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
        written.append(path)
    path = os.path.join(out_dir, "summary.json")
    with open(path, "w") as fh:
        json.dump(cmp.aggregates, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(path)
    return written


# ---------------------------------------------------------------------------
# constructed bottleneck fixture

def bottleneck_fixture(config: ExperimentConfig | None = None,
                       iterations: int = 2) -> tuple[topology.Topology, list[traffic.TransferTask]]:
    """Two LANs forced through one core path while two parallel paths idle.

    The gateways (vertices 0 and 2) each have three core neighbours; the
    shortest-path tie-break concentrates everything on the path through
    vertex 1, leaving 3 and 4 as the diversion targets.
    """
    cfg = config or ExperimentConfig()
    core = topology.CoreGraph(
        n=5,
        edges=((0, 1), (0, 3), (0, 4), (1, 2), (2, 3), (2, 4)),
        model="fixture", seed=0, params={})
    topo = topology.assign_roles(
        core, 0,
        link_bandwidth=cfg.sim.lan_bandwidth,
        link_prop_delay=cfg.sim.prop_delay,
        core_bandwidth=cfg.sim.core_bandwidth,
        access_bandwidth=cfg.sim.access_bandwidth)
    schedule = traffic.build_schedule(topo, iterations, seed=5)
    return topo, schedule


def hot_edge_congestion(wm: telemetry.WindowMetrics, edge: tuple[int, int]) -> float:
    m = wm.edges[edge]
    return m.congestion if m.congestion is not None else 0.0


def run_fixture_cycle(config: ExperimentConfig,
                      params: mpnn.ModelParams) -> dict:
    """Drive the fixture for two iterations and report hot-edge relief."""
    topo, schedule = bottleneck_fixture(config, iterations=2)
    base_state = netsim.build_routing_tables(topo)
    hot_edge = (0, 1)

    tasks0 = [t for t in schedule if t.iteration == 0]
    res0 = netsim.run(netsim.Scenario(topology=topo, tasks=tasks0, tick=config.sim.tick,
                                      horizon=config.sim.horizon), base_state)
    win0 = (0.0, res0.end_t + config.sim.tick)
    wm0 = telemetry.window_metrics(res0.events, topo, win0)
    bundle0 = telemetry.build_features(res0.events, topo, win0, metrics=wm0)
    classes = mpnn.classify(params, bundle0)
    plan = reroute.plan_rules(topo, base_state, dict(zip(bundle0.edge_list, classes)),
                              res0.events, win0)
    ruled = netsim.apply_pbr(base_state, plan.rules)

    tasks1 = [replace(t, iteration=0) for t in schedule if t.iteration == 1]
    res1 = netsim.run(netsim.Scenario(topology=topo, tasks=tasks1, tick=config.sim.tick,
                                      horizon=config.sim.horizon), ruled)
    win1 = (0.0, res1.end_t + config.sim.tick)
    wm1 = telemetry.window_metrics(res1.events, topo, win1)

    before = hot_edge_congestion(wm0, hot_edge)
    after = hot_edge_congestion(wm1, hot_edge)
    core_dir = topo.directed_core_edges()
    active0 = sum(1 for e in core_dir if wm0.edges[e].data_size > 0)
    active1 = sum(1 for e in core_dir if wm1.edges[e].data_size > 0)
    return {
        "hot_edge": hot_edge,
        "before": before,
        "after": after,
        "relative_drop": (before - after) / before if before > 0 else 0.0,
        "active_edges_before": active0,
        "active_edges_after": active1,
        "rules": plan.rules,
        "state": ruled,
        "topology": topo,
    }
