"""End-to-end acceptance checks, one test per criterion (AC01..AC13).

A PASS/FAIL line per criterion is printed in the terminal summary (see
conftest.py).
"""

import time
from pathlib import Path

import numpy as np
import pytest
import yaml

from cfdmux.alloc import (AllocationPlan, ClusterSpec, aggregate_check, equal_requests, overlap_probability,
                          proportional_requests)
from cfdmux.controller import ControllerConfig, SimulatedActuator, run_pipeline, static_throughput
from cfdmux.decomp import REFERENCE_WEIGHTS, concentric_assign, generate_cloud, zone_sizes
from cfdmux.errors import ConstraintError
from cfdmux.k8s import PodManifestSpec, emit_mpirun_command, emit_pod_manifest
from cfdmux.model import REFERENCE_POINTS, ContentionModel, MeasuredPoint, cost_table, fit_beta, pareto_table
from cfdmux.sim import Placement, SimJobSpec, build, calibrate, fairness, place, run
from cfdmux.trace import (IterationSlice, analyze, groups_from_weights, reclaimable, reference_duties,
                          steady_state_duty, synthesize_traces)

CLUSTER = ClusterSpec(12, 8, 4.12)
T1 = 1249.0
GOLDEN = Path(__file__).parent / "golden" / "of-worker-a-0.manifest"


def test_ac01_beta_single_point():
    """beta from T1, T2 alone is 0.773 +/- 0.005"""
    t0 = time.perf_counter()
    fit = fit_beta([MeasuredPoint(1, 1249), MeasuredPoint(2, 1410)], T1, CLUSTER)
    assert time.perf_counter() - t0 < 1.0
    assert fit.beta == pytest.approx(0.773, abs=0.005)


def test_ac02_beta_all_points():
    """beta over N=1..5 lies in [0.503, 0.550]"""
    t0 = time.perf_counter()
    fit = fit_beta(REFERENCE_POINTS, T1, CLUSTER)
    assert time.perf_counter() - t0 < 1.0
    assert 0.503 <= fit.beta <= 0.550


def test_ac03_prediction_within_4pct():
    """beta=0.524 predicts every N=1..5 within 4 %"""
    m = ContentionModel(T1, 0.524, 16, CLUSTER)
    for p in REFERENCE_POINTS:
        assert abs(m.predict_makespan(p.n) - p.makespan) / p.makespan <= 0.04


def test_ac04_blind_prediction_errors():
    """beta=0.773 errors at N=3,4,5 are +8.6/+8.0/+13.4 % (+/- 0.3 pp)"""
    m = ContentionModel(T1, 0.773, 16, CLUSTER)
    meas = {p.n: p.makespan for p in REFERENCE_POINTS}
    for n, want in ((3, 8.6), (4, 8.0), (5, 13.4)):
        err = 100 * (m.predict_makespan(n) - meas[n]) / meas[n]
        assert err == pytest.approx(want, abs=0.3)


def test_ac05_throughput_table():
    """throughput, efficiency, knee and degradation table"""
    rows, knee = pareto_table(REFERENCE_POINTS)
    by_n = {r.n: r for r in rows}
    for n, theta, eff in ((2, 1.77, 89), (3, 2.59, 86), (4, 3.11, 78), (5, 3.74, 75)):
        assert by_n[n].throughput == pytest.approx(theta, abs=0.01)
        assert 100 * by_n[n].efficiency == pytest.approx(eff, abs=1)
    assert knee == 3
    assert 100 * by_n[3].degradation == pytest.approx(16, abs=1)
    assert 100 * by_n[5].degradation == pytest.approx(34, abs=1)


def test_ac06_cost_table():
    """cost per simulation and savings at $4.12/h"""
    rows = cost_table(REFERENCE_POINTS, T1, CLUSTER)
    for r, want in zip(rows, (1.43, 0.81, 0.55, 0.46, 0.38)):
        assert r.cost_per_sim == pytest.approx(want, abs=0.01)
    for r, want in zip(rows[1:], (44, 62, 68, 73)):
        assert 100 * r.saving_vs_single == pytest.approx(want, abs=1)


def test_ac07_overlap_probability():
    """P(overlap) at K=6.7, d=0.12 and the K=1 case"""
    assert overlap_probability(6.7, 0.12) == pytest.approx(0.187, abs=0.005)
    for d in np.linspace(0, 1, 11):
        assert overlap_probability(1, float(d)) == 0.0


def test_ac08_allocation():
    """67/335/1005 m, 5896 m per simulation, 31 % vs 83 % for five"""
    plan = proportional_requests(REFERENCE_WEIGHTS, 5900)
    m = plan.per_rank_millicpu
    assert (m[0], m[8], m[12]) == (67, 335, 1005)
    assert plan.total == 5896
    prop = aggregate_check([plan] * 5, CLUSTER)
    assert prop.total_millicpu == 29480
    assert round(100 * prop.fraction_of_cluster) == 31
    eq = aggregate_check([equal_requests(16, 1000)] * 5, CLUSTER)
    assert eq.total_millicpu == 80000
    assert round(100 * eq.fraction_of_cluster) == 83


def test_ac09_trace_pipeline():
    """group duties recovered, skip behavior, reclaimable fraction bracket"""
    duties = reference_duties()
    groups = groups_from_weights(REFERENCE_WEIGHTS)
    targets = {"sparse": 0.050, "medium": 0.115, "dense": 0.194}
    clean = analyze(synthesize_traces(duties, 200, 6.245, seed=42, jitter=0.0), groups=groups)
    noisy = analyze(synthesize_traces(duties, 200, 6.245, seed=42, jitter=0.01), groups=groups)
    for g, want in targets.items():
        assert clean.groups[g] == pytest.approx(want, abs=0.001)
        assert noisy.groups[g] == pytest.approx(want, abs=0.005)
    transient = [IterationSlice(0, 10.0, 0.0)] + [IterationSlice(k, 1.0, 19.0) for k in range(1, 10)]
    assert steady_state_duty(transient, 0.10) == pytest.approx(9 / 180)
    assert steady_state_duty(transient, 0.0) == pytest.approx(19 / 190)
    frac = reclaimable(clean.per_rank, {r: 1000 for r in clean.per_rank}).fraction_of_budget
    assert 0.83 <= frac <= 0.91


def test_ac10_decomposition():
    """88-cell counts, zone fractions, invariants over 10 seeds"""
    a = concentric_assign(generate_cloud(88, 0), REFERENCE_WEIGHTS)
    assert a.counts().tolist() == list(REFERENCE_WEIGHTS)
    sizes = {w: s for w, _, s in zone_sizes(88, REFERENCE_WEIGHTS)}
    assert [round(100 * sizes[w] / 88) for w in (15, 5, 1)] == [68, 23, 9]
    w = np.array(REFERENCE_WEIGHTS)
    for seed in range(10):
        cloud = generate_cloud(2000, seed)
        a = concentric_assign(cloud, REFERENCE_WEIGHTS)
        assert a.counts().sum() == 2000 and np.all(a.counts() > 0)
        assert np.all(np.abs(a.counts() - 2000 * w / w.sum()) <= 3)
        d = cloud.distances()
        zone = w[a.owner]
        assert d[zone == 15].max() <= d[zone == 5].min()
        assert d[zone == 5].max() <= d[zone == 1].min()


def _one_rank(jid, weight):
    return SimJobSpec(jid, {0: 1.0}, 1, 0.0, AllocationPlan({0: weight}, weight))


def _reference_jobs(n, iterations=20):
    cal = calibrate(reference_duties(), T1 * iterations / 200, iterations)
    return [cal.job(chr(65 + i), proportional_requests(REFERENCE_WEIGHTS)) for i in range(n)]


def test_ac11_simulator_properties():
    """calibration identity, invariants, hand examples, monotonicity, fairness, inflation band"""
    cal = calibrate(reference_duties(), T1, 200)
    solo = run(CLUSTER, [cal.job("A", proportional_requests(REFERENCE_WEIGHTS))])
    assert solo.makespan == pytest.approx(T1, rel=1e-3)

    core = ClusterSpec(1, 1)
    for weights, want in (((500, 500), (2.0, 2.0)), ((750, 250), (4 / 3, 2.0))):
        jobs = [_one_rank("A", weights[0]), _one_rank("B", weights[1])]
        res = run(core, jobs, Placement({("A", 0): 0, ("B", 0): 0}, [0]))
        assert abs(res.per_job_completion["A"] - want[0]) <= 1e-9
        assert abs(res.per_job_completion["B"] - want[1]) <= 1e-9

    # work conservation and rate cap on randomized scenarios
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 20:
        nodes, cores = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        jobs = []
        for j in range(int(rng.integers(1, 4))):
            k = int(rng.integers(1, 6))
            compute = {r: float(rng.uniform(0, 2)) for r in range(k)}
            req = {r: int(rng.integers(10, 150)) for r in range(k)}
            jobs.append(SimJobSpec(f"J{j}", compute, int(rng.integers(1, 4)), float(rng.uniform(0, 1)),
                                   AllocationPlan(req, sum(req.values())), float(rng.uniform(0, 2))))
        cluster = ClusterSpec(nodes, cores)
        try:
            placement = place(jobs, cluster)
        except ConstraintError:
            continue
        checked += 1
        sim = build(cluster, jobs, placement, record=True)
        sim.run_to_completion()
        for _, _, idx, rates in sim.segments:
            assert np.all(rates <= 1.0 + 1e-12)
            per_node = np.bincount(sim.node[idx], weights=rates, minlength=nodes)
            assert np.allclose(per_node, np.minimum(cores, np.bincount(sim.node[idx], minlength=nodes)))
        for job in jobs:
            st = sim.jobs[job.job_id]
            for k in range(job.iterations):
                for pos, r in enumerate(job.ranks):
                    assert sim.work[(job.job_id, r)][k] == pytest.approx(st.demand[k][pos], abs=1e-7)

    # N-monotonicity on a cluster that oversubscribes
    spans = [run(ClusterSpec(4, 8), _reference_jobs(n)).makespan for n in range(1, 6)]
    assert all(b >= a - 1e-9 for a, b in zip(spans, spans[1:]))

    compact = ClusterSpec(2, 8)
    for offset in (0.0, 5.0, 15.0, 30.0):
        jobs = _reference_jobs(2, iterations=40)
        jobs[1].start_offset = offset
        assert fairness(run(compact, jobs), ["A", "B"]) <= 1.10

    t1 = run(compact, _reference_jobs(1)).makespan
    t2 = max(run(compact, _reference_jobs(2)).per_job_duration.values())
    assert 0.0 < (t2 - t1) / t1 < 0.30


def test_ac12_controller():
    """4 profiling passes, 64 resizes, 3 deployments, 0 restarts, budget safety, throughput"""
    cal = calibrate(reference_duties(), T1, 200)
    res = run_pipeline(SimulatedActuator(CLUSTER, cal), ControllerConfig(max_sims=4))
    c = res.log.counters
    assert c["profiling_pass"] == 4
    assert c["resize"] == 64
    assert c["deploy"] == 3
    assert res.restarts == 0
    assert all(e.total_requests <= CLUSTER.schedulable_millicpu for e in res.log.events)
    static = static_throughput(CLUSTER, cal, proportional_requests(REFERENCE_WEIGHTS), len(res.sims))
    assert res.throughput(T1) >= 0.95 * static


def test_ac13_manifest_golden():
    """pod manifest matches the golden file; mpirun uses tcp,self"""
    text = emit_pod_manifest(PodManifestSpec("A", 0, 67))
    assert text == GOLDEN.read_text()
    c = yaml.safe_load(text)["spec"]["containers"][0]
    assert "limits" not in c["resources"]
    assert c["resizePolicy"][0] == {"resourceName": "cpu", "restartPolicy": "NotRequired"}
    assert "--mca btl tcp,self" in emit_mpirun_command("A", 16, "/config/hostfile")
