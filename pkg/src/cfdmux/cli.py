"""Command-line front end.

    cfdmux gen-traces  --out traces/
    cfdmux analyze     traces/ --out report/
    cfdmux plan        --weights reference --budget 5900 --sims 5
    cfdmux predict     points.csv --out model/
    cfdmux simulate    scenario.yaml --out sim/
    cfdmux control     controller.yaml --out ctl/
    cfdmux emit        pod --sim A --rank 0 --cpu 67

Exit status: 0 success, 2 bad input, 3 budget/capacity violation, 1 other.
Set CFDMUX_LOG=DEBUG (or INFO) for verbose logging.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import alloc, controller, decomp, k8s, model, scenario, sim, trace
from .errors import ConstraintError, InputError

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_INPUT = 2
EXIT_CONSTRAINT = 3

log = logging.getLogger("cfdmux")


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _cluster(args) -> alloc.ClusterSpec:
    return alloc.ClusterSpec(args.nodes, args.vcpus, args.price)


def _add_cluster_flags(p):
    p.add_argument("--nodes", type=int, default=12, help="worker nodes (default 12)")
    p.add_argument("--vcpus", type=int, default=8, help="vCPUs per node (default 8)")
    p.add_argument("--price", type=float, default=4.12, help="cluster price per hour (default 4.12)")


def _parse_floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise InputError(f"cannot parse number list {text!r}") from None


def _parse_weights(text):
    if text == "reference":
        return list(decomp.REFERENCE_WEIGHTS)
    vals = _parse_floats(text)
    return [int(v) if v.is_integer() else v for v in vals]


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- subcommands -------------------------------------------------------------

def cmd_gen_traces(args):
    duties = trace.reference_duties() if args.duties is None else dict(enumerate(_parse_floats(args.duties)))
    paths = trace.gen_synthetic_trace(duties, args.iterations, args.wall, args.seed, args.out, args.jitter)
    print(f"wrote {len(paths)} trace files to {args.out}")


def cmd_analyze(args):
    traces = trace.load_trace_dir(args.trace_dir)
    ranks = sorted(t.rank for t in traces)
    if args.weights:
        weights = _parse_weights(args.weights)
    elif len(ranks) == len(decomp.REFERENCE_WEIGHTS):
        weights = list(decomp.REFERENCE_WEIGHTS)
    else:
        weights = [1] * len(ranks)
    if len(weights) != len(ranks):
        raise InputError(f"{len(weights)} weights for {len(ranks)} ranks")
    groups = trace.groups_from_weights(weights)
    groups = {k: tuple(ranks[i] for i in v) for k, v in groups.items()}
    report = trace.analyze(traces, args.skip, groups)

    equal = {r: 1000 for r in ranks}
    prop_plan = alloc.proportional_requests(weights, args.budget)
    prop = {r: prop_plan.per_rank_millicpu[i] for i, r in enumerate(ranks)}
    caps = {"equal": trace.reclaimable(report.per_rank, equal),
            "proportional": trace.reclaimable(report.per_rank, prop)}

    text = trace.render_report(report, caps)
    out = _out_dir(args.out)
    (out / "duty_report.txt").write_text(text)
    doc = report.to_dict()
    doc["reclaimable"] = {k: {"total_millicpu": c.total, "fraction_of_budget": c.fraction_of_budget,
                              "per_rank": {str(r): v for r, v in c.per_rank.items()}}
                          for k, c in caps.items()}
    (out / "duty_report.json").write_text(json.dumps(doc, indent=2) + "\n")
    sys.stdout.write(text)


def cmd_plan(args):
    cluster = _cluster(args)
    if args.duties_from:
        doc = json.loads(Path(args.duties_from).read_text())
        duties = {int(r): float(d) for r, d in doc["per_rank"].items()}
        plan = alloc.duty_proportional_requests(duties, args.budget)
    elif args.duties:
        plan = alloc.duty_proportional_requests(dict(enumerate(_parse_floats(args.duties))), args.budget)
    else:
        plan = alloc.proportional_requests(_parse_weights(args.weights), args.budget)
    quota = alloc.QuotaSpec(args.quota) if args.quota else None
    agg = alloc.aggregate_check([plan] * args.sims, cluster, quota)
    doc = plan.to_dict()
    doc["aggregate"] = {"sims": args.sims, "total_millicpu": agg.total_millicpu,
                        "fraction_of_cluster": agg.fraction_of_cluster, "fits": agg.fits}
    print(f"per-rank requests (m): {list(plan.per_rank_millicpu.values())}")
    print(f"plan total {plan.total}m of budget {plan.budget}m; "
          f"{args.sims} sim(s) -> {agg.total_millicpu}m = {agg.fraction_of_cluster:.1%} of cluster")
    if args.out:
        out = _out_dir(args.out)
        (out / "plan.json").write_text(json.dumps(doc, indent=2) + "\n")
        if args.manifests:
            for i in range(args.sims):
                sid = chr(ord("A") + i)
                k8s.write_plan_manifests(sid, plan, out / "manifests", args.image)
    if not agg.fits:
        raise ConstraintError(f"{agg.total_millicpu}m exceeds the {agg.limit_millicpu}m limit")


def _read_points(path, ranks):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"points file not found: {path}")
    pts = []
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for i, row in enumerate(rows, start=2):
        try:
            pts.append(model.MeasuredPoint(int(row["N"]), float(row["makespan"]), ranks))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path}: row {i}: {exc}") from None
    if not pts:
        raise InputError(f"{path}: no points")
    return pts


def cmd_predict(args):
    cluster = _cluster(args)
    pts = _read_points(args.points, args.ranks)
    rows, knee = model.pareto_table(pts, args.t1)
    t1 = args.t1 or next(p.makespan for p in pts if p.n == 1)
    fit_all = model.fit_beta(pts, t1, cluster)
    fits = {"all_points": fit_all}
    if any(p.n == 2 for p in pts):
        fits["n2_only"] = model.fit_beta([p for p in pts if p.n == 2], t1, cluster)

    out = _out_dir(args.out)
    pred_rows = []
    for name, f in fits.items():
        m = model.ContentionModel(t1, max(f.beta, 0.0), args.ranks, cluster)
        for p in model.prediction_table(m, pts, args.extrapolate):
            pred_rows.append((name, f"{f.beta:.4f}", p.n, f"{p.predicted:.1f}",
                              "" if p.measured is None else f"{p.measured:.1f}",
                              "" if p.error is None else f"{p.error:+.4f}",
                              "illustrative" if p.illustrative else "measured"))
    _write_csv(out / "predictions.csv",
               ("fit", "beta", "N", "predicted_s", "measured_s", "error", "kind"), pred_rows)
    _write_csv(out / "pareto.csv", ("N", "throughput", "efficiency", "degradation", "makespan_s"),
               [(r.n, f"{r.throughput:.4f}", f"{r.efficiency:.4f}", f"{r.degradation:.4f}",
                 f"{r.makespan:.1f}") for r in rows])
    costs = model.cost_table(pts, t1, cluster)
    _write_csv(out / "cost.csv", ("N", "total_time_s", "total_cost", "cost_per_sim", "saving"),
               [(c.n, f"{c.total_time:.0f}", f"{c.total_cost:.4f}", f"{c.cost_per_sim:.4f}",
                 f"{c.saving_vs_single:.4f}") for c in costs])
    (out / "model.json").write_text(json.dumps({
        "t1": t1, "ranks": args.ranks, "rho1": model.cluster_load(1, args.ranks, cluster),
        "fits": {k: {"beta": f.beta, "stderr": f.stderr, "points": f.n_points} for k, f in fits.items()},
        "knee": knee,
    }, indent=2) + "\n")

    for name, f in fits.items():
        print(f"beta[{name}] = {f.beta:.3f} +/- {f.stderr:.3f}")
    print("\nprediction errors")
    for r in pred_rows:
        print(f"  {r[0]:<10} N={r[2]}  pred {r[3]:>7} s  meas {r[4] or '-':>7}  err {r[5] or '-':>8}  {r[6]}")
    print("\n  N  throughput  efficiency  degradation")
    for r in rows:
        print(f"  {r.n}  {r.throughput:9.2f}x  {r.efficiency:10.0%}  {r.degradation:11.1%}")
    print(f"  knee: N={knee}" if knee else "  knee: none")
    print("\n  N  total($)  $/sim  saving")
    for c in costs:
        saving = "baseline" if c.n == 1 else f"{c.saving_vs_single:.0%}"
        print(f"  {c.n}  {c.total_cost:8.2f}  {c.cost_per_sim:5.2f}  {saving}")


def cmd_simulate(args):
    sc = scenario.load_sim_scenario(args.scenario)
    placement = sim.place(sc.jobs, sc.cluster)
    engine = sim.build(sc.cluster, sc.jobs, placement, sc.seed, record=True)
    res = engine.run_to_completion()
    out = _out_dir(args.out)
    doc = res.to_dict()
    doc["pods_per_node"] = placement.pods_per_node()
    if len(sc.jobs) > 1:
        doc["fairness_ratio"] = sim.fairness(res, [j.job_id for j in sc.jobs])
    if sc.t1:
        doc["t1"] = sc.t1
        doc["inflation"] = max(res.per_job_duration.values()) / sc.t1 - 1.0
        doc["throughput"] = len(sc.jobs) * sc.t1 / max(res.per_job_duration.values())
    (out / "result.json").write_text(json.dumps(doc, indent=2) + "\n")
    series = engine.utilization_series(args.interval)
    _write_csv(out / "utilization.csv", ["t"] + [f"node{i}" for i in range(sc.cluster.nodes)],
               [[f"{t:.1f}"] + [f"{u:.4f}" for u in us] for t, us in series])
    for jid, d in res.per_job_duration.items():
        print(f"{jid}: {d:.1f} s")
    print(f"makespan {res.makespan:.1f} s, {res.event_count} events")
    if "inflation" in doc:
        print(f"inflation vs T1 {doc['inflation']:+.2%}, throughput {doc['throughput']:.2f}x")


def cmd_control(args):
    sc = scenario.load_control_scenario(args.scenario)
    act = controller.SimulatedActuator(sc.cluster, sc.calibration, seed=sc.seed,
                                       initial_request=sc.config.initial_request)
    result = controller.run_pipeline(act, sc.config)
    out = _out_dir(args.out)
    (out / "actions.jsonl").write_text(result.log.to_lines())
    controller.write_timeline(result, out / "timeline.csv")
    metrics = result.metrics(sc.t1)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
    c = result.log.counters
    print(f"profiling passes {c['profiling_pass']}, resizes {c['resize']}, deployments {c['deploy']}, "
          f"fairness adjustments {c['fairness_adjustment']}, restarts {result.restarts}")
    if "throughput" in metrics:
        print(f"{len(result.sims)} simulations, makespan {result.makespan:.1f} s, "
              f"throughput {metrics['throughput']:.2f}x")
    if result.aborted:
        raise ConstraintError(f"pipeline aborted: {result.aborted}")


def cmd_emit(args):
    if args.what == "pod":
        text = k8s.emit_pod_manifest(k8s.PodManifestSpec(args.sim, args.rank, args.cpu, args.image))
    elif args.what == "hostfile":
        text = k8s.emit_hostfile_configmap(args.sim, args.ips.split(",") if args.ips else [])
    elif args.what == "resize":
        text = k8s.emit_resize_patch(args.pod or k8s.pod_name(args.sim, args.rank), args.cpu)
    else:
        text = k8s.emit_mpirun_command(args.sim, args.ranks, args.hostfile) + "\n"
    sys.stdout.write(text)


def build_parser():
    ap = argparse.ArgumentParser(prog="cfdmux", description=__doc__.splitlines()[0] if __doc__ else None,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-traces", help="write a synthetic per-rank trace corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--duties", help="comma-separated duty per rank (default: 16-rank reference)")
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--wall", type=float, default=6.245, help="iteration wall time, s")
    p.add_argument("--jitter", type=float, default=0.0, help="compute jitter, fraction of wall (<= 0.01)")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_gen_traces)

    p = sub.add_parser("analyze", help="duty cycles and reclaimable capacity from traces")
    p.add_argument("trace_dir")
    p.add_argument("--out", default="report")
    p.add_argument("--weights", help="'reference' or comma-separated rank weights (groups ranks)")
    p.add_argument("--skip", type=float, default=0.10, help="startup fraction to skip")
    p.add_argument("--budget", type=int, default=alloc.DEFAULT_BUDGET)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("plan", help="per-rank CPU requests and cluster budget check")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--weights", default="reference")
    g.add_argument("--duties")
    g.add_argument("--duties-from", help="duty_report.json written by analyze")
    p.add_argument("--budget", type=int, default=alloc.DEFAULT_BUDGET)
    p.add_argument("--sims", type=int, default=1)
    p.add_argument("--quota", type=int, help="namespace quota, millicores")
    p.add_argument("--out")
    p.add_argument("--manifests", action="store_true", help="also write pod manifests under --out")
    p.add_argument("--image", default=k8s.DEFAULT_IMAGE)
    _add_cluster_flags(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("predict", help="fit the contention model; Pareto and cost tables")
    p.add_argument("points", help="CSV with columns N,makespan")
    p.add_argument("--out", default="model")
    p.add_argument("--ranks", type=int, default=16)
    p.add_argument("--t1", type=float, help="single-simulation makespan (default: the N=1 point)")
    p.add_argument("--extrapolate", type=int, default=1, help="extra N beyond the data")
    _add_cluster_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="run a co-location scenario in the simulator")
    p.add_argument("scenario")
    p.add_argument("--out", default="sim")
    p.add_argument("--interval", type=float, default=5.0, help="utilization sampling interval, s")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("control", help="run the dynamic controller against the simulator")
    p.add_argument("scenario")
    p.add_argument("--out", default="control")
    p.set_defaults(func=cmd_control)

    p = sub.add_parser("emit", help="print a Kubernetes document or launch command")
    p.add_argument("what", choices=("pod", "hostfile", "resize", "mpirun"))
    p.add_argument("--sim", default="A")
    p.add_argument("--rank", type=int, default=0)
    p.add_argument("--cpu", type=int, default=67, help="millicores")
    p.add_argument("--image", default=k8s.DEFAULT_IMAGE)
    p.add_argument("--ips", help="comma-separated pod IPs")
    p.add_argument("--pod")
    p.add_argument("--ranks", type=int, default=16)
    p.add_argument("--hostfile", default="/config/hostfile")
    p.set_defaults(func=cmd_emit)
    return ap


def main(argv=None) -> int:
    level = os.environ.get("CFDMUX_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConstraintError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONSTRAINT
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
