"""Command-line front end: generate, simulate, train, evaluate, reroute, experiment, compare."""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import harness, mpnn, netsim, reroute, telemetry, topology, traffic

MODEL_ALIASES = {
    "er": topology.MODEL_ERDOS_RENYI,
    "ba": topology.MODEL_BARABASI_ALBERT,
    "ws": topology.MODEL_WATTS_STROGATZ,
}


def _cmd_gen(args) -> int:
    model = MODEL_ALIASES[args.model]
    bounds = topology.DegreeBounds(args.min_deg, args.max_deg)
    if model == topology.MODEL_ERDOS_RENYI:
        if args.p is None:
            raise SystemExit("--p is required for the er model")
        core = topology.gen_erdos_renyi(args.n, args.p, bounds, args.seed)
    elif model == topology.MODEL_BARABASI_ALBERT:
        if args.m is None:
            raise SystemExit("--m is required for the ba model")
        core = topology.gen_barabasi_albert(args.n, args.m, bounds, args.seed)
    else:
        if args.k is None:
            raise SystemExit("--k is required for the ws model")
        core = topology.gen_watts_strogatz(args.n, args.k, args.p if args.p is not None else 0.0,
                                           bounds, args.seed)
    topo = topology.assign_roles(core, args.seed)
    with open(args.out, "w") as fh:
        fh.write(topology.topology_to_json(topo))
        fh.write("\n")
    stats = topology.topology_stats(core, topo.gateways)
    print(f"wrote {args.out}: {core.n} core vertices, {stats.edge_count} core edges, "
          f"{stats.path_count} gateway paths, mean hop {stats.avg_hop_length:.2f}")
    return 0


def _cmd_simulate(args) -> int:
    with open(args.topology) as fh:
        topo = topology.topology_from_json(fh.read())
    with open(args.schedule) as fh:
        tasks, tick, horizon = traffic.schedule_from_json(fh.read())
    state = netsim.build_routing_tables(topo)
    if args.rules:
        with open(args.rules) as fh:
            state = netsim.apply_pbr(state, netsim.rules_from_json(fh.read()))
    scenario = netsim.Scenario(topology=topo, tasks=tasks,
                               tick=args.tick or tick or 0.01,
                               horizon=args.horizon or horizon or 60.0)
    result = netsim.run(scenario, state)
    os.makedirs(args.out, exist_ok=True)
    netsim.events_to_csv(result.events, os.path.join(args.out, "events.csv"))
    traffic.records_to_csv(netsim.transfer_records(result),
                           os.path.join(args.out, "transfers.csv"))
    window = (0.0, result.end_t + scenario.tick)
    wm = telemetry.window_metrics(result.events, topo, window)
    telemetry.metrics_to_csv(wm, os.path.join(args.out, "metrics.csv"))
    with open(os.path.join(args.out, "outcomes.json"), "w") as fh:
        fh.write(netsim.outcomes_to_json(result))
        fh.write("\n")
    print(f"simulated {len(result.outcomes)} tasks: injected={result.injected} "
          f"delivered={result.delivered} queued={result.queued} end={result.end_t:.2f}s")
    return 0


def _cmd_train(args) -> int:
    with open(os.path.join(args.data, "dataset.json")) as fh:
        samples = mpnn.samples_from_json(fh.read())
    params = mpnn.train(samples, lr=args.lr, epochs=args.epochs, seed=args.seed,
                        layers=args.layers, balance_classes=args.balance)
    with open(args.out, "w") as fh:
        fh.write(mpnn.params_to_json(params))
        fh.write("\n")
    curve = os.path.splitext(args.out)[0] + "_history.csv"
    mpnn.history_to_csv(params, curve)
    acc, total = mpnn.evaluate_accuracy(params, samples)
    print(f"trained on {len(samples)} windows ({total} edges): "
          f"train accuracy {acc:.3f}; weights -> {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    with open(args.model) as fh:
        params = mpnn.params_from_json(fh.read())
    with open(os.path.join(args.data, "dataset.json")) as fh:
        samples = mpnn.samples_from_json(fh.read())
    acc, total = mpnn.evaluate_accuracy(params, samples)
    print(f"accuracy {acc:.4f} over {total} labelled edges in {len(samples)} windows")
    return 0 if total else 1


def _cmd_reroute(args) -> int:
    with open(args.model) as fh:
        params = mpnn.params_from_json(fh.read())
    with open(args.topology) as fh:
        topo = topology.topology_from_json(fh.read())
    events = netsim.events_from_csv(os.path.join(args.telemetry, "events.csv"))
    t_max = max((r.arrival_t for r in events), default=0.0)
    window = (0.0, t_max + 1e-9)
    bundle = telemetry.build_features(events, topo, window)
    classes = mpnn.classify(params, bundle)
    base = netsim.build_routing_tables(topo)
    plan = reroute.plan_rules(topo, base, dict(zip(bundle.edge_list, classes)),
                              events, window)
    with open(args.out, "w") as fh:
        fh.write(netsim.rules_to_json(plan.rules))
        fh.write("\n")
    print(f"planned {len(plan.rules)} rules "
          f"({plan.vertices_rerouting}/{plan.vertices_considered} vertices, "
          f"skipped {plan.skipped}, dropped {plan.dropped}) -> {args.out}")
    return 0


def _cmd_experiment(args) -> int:
    if args.config:
        with open(args.config) as fh:
            config = harness.config_from_json(fh.read())
    else:
        config = harness.ExperimentConfig()
    os.makedirs(args.out, exist_ok=True)
    params = None
    baseline = None
    if args.phase in ("1", "both"):
        samples, _train_report = harness.run_phase1(config, config.train_seeds)
        with open(os.path.join(args.out, "dataset.json"), "w") as fh:
            fh.write(mpnn.samples_to_json(samples))
            fh.write("\n")
        _eval_samples, baseline = harness.run_phase1(config, config.evaluation_seeds())
        del _eval_samples
        harness.export_report(baseline, os.path.join(args.out, "baseline"))
        if args.phase == "both":
            params = harness.train_model(config, samples)
            with open(os.path.join(args.out, "model.json"), "w") as fh:
                fh.write(mpnn.params_to_json(params))
                fh.write("\n")
        print(f"phase 1 complete: {len(baseline.rows)} baseline rows")
    if args.phase in ("2", "both"):
        if params is None:
            model_path = args.model or os.path.join(args.out, "model.json")
            with open(model_path) as fh:
                params = mpnn.params_from_json(fh.read())
        optimized = harness.run_phase2(config, params, config.evaluation_seeds())
        harness.export_report(optimized, os.path.join(args.out, "optimized"))
        print(f"phase 2 complete: {len(optimized.rows)} optimized rows")
        if args.phase == "both" and baseline is not None:
            summary = harness.compare(baseline, optimized)
            harness.export_comparison(summary, os.path.join(args.out, "comparison"))
            overall = summary.aggregates["overall"]
            print("overall deltas: " + ", ".join(
                f"{m}={overall[m]['delta_pct']:.1f}%" for m in
                ("delay", "congestion", "transfer_rate", "edge_utilization")
                if overall[m]["delta_pct"] is not None))
    return 0


def _load_report(path: str, phase: str) -> harness.ExperimentReport:
    report = harness.ExperimentReport(phase=phase)
    import csv as _csv

    per_key: dict[tuple, dict] = {}
    for metric in harness.METRICS:
        fp = os.path.join(path, f"{metric}.csv")
        with open(fp, newline="") as fh:
            for row in _csv.DictReader(fh):
                key = (row["model"], int(row["n"]), int(row["seed"]), int(row["iteration"]))
                per_key.setdefault(key, {})[metric] = float(row["value"])
    for key in sorted(per_key):
        m, n, s, i = key
        vals = per_key[key]
        report.rows.append(harness.ReportRow(
            model=m, n=n, seed=s, iteration=i,
            delay=vals["delay"], delay_p95=vals["delay_p95"],
            edge_delay=vals["edge_delay"],
            transfer_rate=vals["transfer_rate"], throughput=vals["throughput"],
            congestion=vals["congestion"], cost=vals["cost"],
            vertex_utilization=vals["vertex_utilization"],
            edge_utilization=vals["edge_utilization"],
            completed=0, failed=0, rules_active=0))
    return report


def _cmd_compare(args) -> int:
    baseline = _load_report(args.baseline, "baseline")
    optimized = _load_report(args.optimized, "optimized")
    summary = harness.compare(baseline, optimized)
    harness.export_comparison(summary, args.out)
    overall = summary.aggregates["overall"]
    for metric in harness.METRICS:
        pct = overall[metric]["delta_pct"]
        print(f"{metric}: baseline {overall[metric]['baseline_mean']:.4g} -> "
              f"optimized {overall[metric]['optimized_mean']:.4g}"
              + (f" ({pct:+.1f}%)" if pct is not None else ""))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nettwin",
                                description="Network twin workbench CLI")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate a role-assigned topology")
    g.add_argument("--model", choices=sorted(MODEL_ALIASES), required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--p", type=float, default=None)
    g.add_argument("--m", type=int, default=None)
    g.add_argument("--k", type=int, default=None)
    g.add_argument("--min-deg", type=int, default=topology.MIN_DEGREE_DEFAULT)
    g.add_argument("--max-deg", type=int, default=topology.MAX_DEGREE_DEFAULT)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen)

    s = sub.add_parser("simulate", help="run a schedule over a topology")
    s.add_argument("--topology", required=True)
    s.add_argument("--schedule", required=True)
    s.add_argument("--rules", default=None)
    s.add_argument("--tick", type=float, default=None)
    s.add_argument("--horizon", type=float, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_simulate)

    t = sub.add_parser("train", help="train the edge classifier on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--lr", type=float, default=0.02)
    t.add_argument("--epochs", type=int, default=260)
    t.add_argument("--seed", type=int, default=7)
    t.add_argument("--layers", type=int, default=2)
    t.add_argument("--balance", action="store_true",
                   help="weight the loss by inverse class frequency")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("evaluate", help="score a trained model against a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(func=_cmd_evaluate)

    r = sub.add_parser("reroute", help="plan policy rules from telemetry")
    r.add_argument("--model", required=True)
    r.add_argument("--telemetry", required=True)
    r.add_argument("--topology", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=_cmd_reroute)

    x = sub.add_parser("experiment", help="run the two-phase experiment")
    x.add_argument("--config", default=None)
    x.add_argument("--phase", choices=["1", "2", "both"], default="both")
    x.add_argument("--model", default=None, help="weights file for --phase 2")
    x.add_argument("--out", required=True)
    x.set_defaults(func=_cmd_experiment)

    c = sub.add_parser("compare", help="compare exported baseline/optimized reports")
    c.add_argument("--baseline", required=True)
    c.add_argument("--optimized", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=_cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
