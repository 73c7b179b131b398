"""Discrete-event simulation of bulk-synchronous jobs under proportional-share
CPU scheduling.

Every pod runs one single-threaded rank. A rank is either computing (wants
one core), waiting at its job's barrier (wants nothing) or finished. On a
node with more runnable pods than cores, cores are water-filled: each pod
gets a share proportional to its CPU request, capped at one core, and the
excess is redistributed until nothing exceeds the cap. Rates are constant
between events, so the simulation is exact up to float rounding.

After the last rank of a job finishes its compute, the job spends its
collective latency L and then all ranks start the next iteration together.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .alloc import AllocationPlan, ClusterSpec
from .errors import ConstraintError, InputError
from .trace import US, DutyCycleReport, RankTrace, TraceEvent

logger = logging.getLogger(__name__)

EPS = 1e-9  # s


@dataclass
class SimJobSpec:
    job_id: str
    per_rank_compute: dict[int, float]  # core-seconds per iteration
    iterations: int
    collective_latency: float
    requests: AllocationPlan
    start_offset: float = 0.0
    jitter: float = 0.0  # half-width of a uniform per-iteration demand factor

    def __post_init__(self):
        if self.iterations < 1:
            raise InputError(f"{self.job_id}: need at least one iteration")
        if self.collective_latency < 0:
            raise InputError(f"{self.job_id}: negative collective latency")
        if any(c < 0 for c in self.per_rank_compute.values()):
            raise InputError(f"{self.job_id}: negative compute demand")
        if set(self.per_rank_compute) != set(self.requests.per_rank_millicpu):
            raise InputError(f"{self.job_id}: compute and request rank sets differ")
        if not 0.0 <= self.jitter < 1.0:
            raise InputError(f"{self.job_id}: jitter must lie in [0, 1)")

    @property
    def ranks(self) -> list[int]:
        return sorted(self.per_rank_compute)


@dataclass
class Calibration:
    wall: float
    per_rank_compute: dict[int, float]
    collective_latency: float
    iterations: int

    def job(self, job_id, requests: AllocationPlan, start_offset=0.0, jitter=0.0) -> SimJobSpec:
        return SimJobSpec(job_id, dict(self.per_rank_compute), self.iterations,
                          self.collective_latency, requests, start_offset, jitter)


def calibrate(duties, t1: float, iterations: int) -> Calibration:
    """Turn steady-state duties into simulator demands such that an
    uncontended job takes exactly ``t1``."""
    if isinstance(duties, DutyCycleReport):
        duties = duties.per_rank
    if iterations < 1:
        raise InputError("need at least one iteration")
    if t1 <= 0:
        raise InputError("T1 must be positive")
    if not duties:
        raise InputError("no duties to calibrate from")
    if any(not 0.0 <= d <= 1.0 for d in duties.values()):
        raise InputError("duties must lie in [0, 1]")
    if max(duties.values()) >= 1.0:
        raise InputError("a rank with duty 1 leaves no room for the collective")
    wall = t1 / iterations
    compute = {r: d * wall for r, d in sorted(duties.items())}
    return Calibration(wall, compute, wall - max(compute.values()), iterations)


@dataclass
class Placement:
    node_of: dict[tuple[str, int], int]
    committed: list[int]  # millicores per node after placement

    def pods_per_node(self) -> list[int]:
        counts = [0] * len(self.committed)
        for n in self.node_of.values():
            counts[n] += 1
        return counts


def place(jobs: Sequence[SimJobSpec], cluster: ClusterSpec, committed: Sequence[int] | None = None) -> Placement:
    """Greedy spreading: each pod, in (job, rank) order, lands on the node
    with the least committed requests (lowest index on ties)."""
    committed = list(committed) if committed is not None else [0] * cluster.nodes
    total = sum(committed) + sum(j.requests.total for j in jobs)
    if total > cluster.schedulable_millicpu:
        raise ConstraintError(
            f"requests {total}m exceed schedulable capacity {cluster.schedulable_millicpu}m")
    node_of = {}
    for job in jobs:
        for r in job.ranks:
            req = job.requests.per_rank_millicpu[r]
            n = min(range(cluster.nodes), key=lambda i: (committed[i], i))
            if committed[n] + req > cluster.node_millicpu:
                raise ConstraintError(f"pod {job.job_id}/{r} ({req}m) fits on no node")
            committed[n] += req
            node_of[(job.job_id, r)] = n
    return Placement(node_of, committed)


def waterfill(weights: np.ndarray, cores: float) -> np.ndarray:
    """Weighted shares of ``cores`` with a one-core cap per pod."""
    n = len(weights)
    if n <= cores:
        return np.ones(n)
    rates = np.zeros(n)
    active = np.arange(n)
    cap = float(cores)
    while True:
        w = weights[active]
        share = cap * w / w.sum()
        over = share >= 1.0
        if not over.any():
            rates[active] = share
            return rates
        rates[active[over]] = 1.0
        cap -= over.sum()
        active = active[~over]


@dataclass
class SimResult:
    per_job_completion: dict[str, float]
    per_job_start: dict[str, float]
    makespan: float
    per_node_utilization: list[float]
    event_count: int

    @property
    def per_job_duration(self) -> dict[str, float]:
        return {j: self.per_job_completion[j] - self.per_job_start[j] for j in self.per_job_completion}

    def to_dict(self):
        return {
            "makespan": self.makespan,
            "per_job_completion": dict(self.per_job_completion),
            "per_job_start": dict(self.per_job_start),
            "per_job_duration": self.per_job_duration,
            "per_node_utilization": list(self.per_node_utilization),
            "event_count": self.event_count,
        }


def fairness(result: SimResult, group: Iterable[str]) -> float:
    """max/min elapsed time (completion minus start) over a job group."""
    group = list(group)
    if len(group) < 2:
        raise InputError("fairness needs at least two jobs")
    dur = result.per_job_duration
    vals = [dur[j] for j in group]
    return max(vals) / min(vals)


@dataclass
class _Job:
    spec: SimJobSpec
    pods: np.ndarray  # pod indices, in rank order
    start: float
    phase: str = "pending"  # pending | compute | latency | done
    k: int = 0
    release: float = 0.0
    completion: float | None = None
    iter_start: list[float] = field(default_factory=list)
    iter_end: list[float] = field(default_factory=list)
    finish: list[np.ndarray] = field(default_factory=list)  # per iteration, per rank
    demand: list[np.ndarray] = field(default_factory=list)


class Simulation:
    """Steppable simulator. Jobs may be added and requests changed while it
    runs; ``run`` wraps it for static scenarios."""

    def __init__(self, cluster: ClusterSpec, seed: int = 42, record: bool = False):
        self.cluster = cluster
        self.t = 0.0
        self.rng = np.random.default_rng(seed)
        self.record = record
        self.jobs: dict[str, _Job] = {}
        self.node = np.zeros(0, dtype=int)
        self.weight = np.zeros(0)
        self.remaining = np.zeros(0)
        self.pod_job: list[str] = []
        self.pod_rank: list[int] = []
        self.committed = [0] * cluster.nodes
        self.events = 0
        self.busy = np.zeros(cluster.nodes)  # integral of core usage per node
        # recorded when self.record: (t0, t1, runnable pod idx, rates)
        self.segments: list[tuple[float, float, np.ndarray, np.ndarray]] = []
        self.work: dict[tuple[str, int], list[float]] = {}

    # -- setup ---------------------------------------------------------------
    def add_job(self, spec: SimJobSpec, placement: Placement | None = None, start: float | None = None) -> Placement:
        if spec.job_id in self.jobs:
            raise InputError(f"duplicate job id {spec.job_id}")
        # resizes mutate the plan; keep caller objects untouched
        spec = replace(spec, per_rank_compute=dict(spec.per_rank_compute),
                       requests=AllocationPlan(dict(spec.requests.per_rank_millicpu), spec.requests.budget))
        if placement is None:
            placement = place([spec], self.cluster, self.committed)
        base = len(self.pod_job)
        nodes, weights = [], []
        for r in spec.ranks:
            n = placement.node_of[(spec.job_id, r)]
            if not 0 <= n < self.cluster.nodes:
                raise InputError(f"pod {spec.job_id}/{r} placed on unknown node {n}")
            nodes.append(n)
            weights.append(spec.requests.per_rank_millicpu[r])
            self.committed[n] += spec.requests.per_rank_millicpu[r]
            self.pod_job.append(spec.job_id)
            self.pod_rank.append(r)
        self.node = np.concatenate([self.node, np.array(nodes, dtype=int)])
        self.weight = np.concatenate([self.weight, np.array(weights, dtype=float)])
        self.remaining = np.concatenate([self.remaining, np.zeros(len(nodes))])
        start = self.t + spec.start_offset if start is None else start
        if start < self.t:
            raise InputError("cannot start a job in the past")
        pods = np.arange(base, base + len(nodes))
        self.jobs[spec.job_id] = _Job(spec, pods, start)
        self._settle()
        return placement

    def set_request(self, job_id: str, rank: int, millicpu: int) -> int:
        job = self.jobs[job_id]
        idx = job.pods[job.spec.ranks.index(rank)]
        old = int(self.weight[idx])
        self.weight[idx] = millicpu
        self.committed[self.node[idx]] += millicpu - old
        job.spec.requests.per_rank_millicpu[rank] = millicpu
        return old

    def requests_total(self) -> int:
        return int(sum(self.committed))

    # -- event loop ----------------------------------------------------------
    def _begin_iteration(self, job: _Job):
        spec = job.spec
        base = np.array([spec.per_rank_compute[r] for r in spec.ranks])
        if spec.jitter:
            base = base * self.rng.uniform(1 - spec.jitter, 1 + spec.jitter, size=len(base))
        job.phase = "compute"
        job.iter_start.append(self.t)
        job.demand.append(base)
        job.finish.append(np.full(len(base), np.nan))
        self.remaining[job.pods] = base
        zero = base <= 0
        job.finish[-1][zero] = self.t
        if self.record:
            for r in spec.ranks:
                self.work.setdefault((spec.job_id, r), []).append(0.0)

    def _settle(self):
        """Apply every state transition due at the current time."""
        changed = True
        while changed:
            changed = False
            for job in self.jobs.values():
                if job.phase == "pending" and job.start <= self.t + EPS:
                    self._begin_iteration(job)
                    self.events += 1
                    changed = True
                if job.phase == "compute" and not np.any(self.remaining[job.pods] > 0):
                    job.phase = "latency"
                    job.release = self.t + job.spec.collective_latency
                    changed = True
                if job.phase == "latency" and job.release <= self.t + EPS:
                    job.iter_end.append(self.t)
                    job.k += 1
                    self.events += 1
                    if job.k >= job.spec.iterations:
                        job.phase = "done"
                        job.completion = self.t
                    else:
                        self._begin_iteration(job)
                    changed = True

    def rates(self) -> tuple[np.ndarray, np.ndarray]:
        runnable = np.flatnonzero(self.remaining > 0)
        rates = np.ones(len(runnable))
        if len(runnable):
            nodes = self.node[runnable]
            counts = np.bincount(nodes, minlength=self.cluster.nodes)
            cores = self.cluster.vcpus_per_node
            for n in np.flatnonzero(counts > cores):
                sel = nodes == n
                rates[sel] = waterfill(self.weight[runnable[sel]], cores)
        return runnable, rates

    def next_event_time(self, runnable=None, rates=None) -> float:
        if runnable is None:
            runnable, rates = self.rates()
        cands = []
        if len(runnable):
            cands.append(self.t + float(np.min(self.remaining[runnable] / rates)))
        for job in self.jobs.values():
            if job.phase == "pending":
                cands.append(job.start)
            elif job.phase == "latency":
                cands.append(job.release)
        return min(cands) if cands else float("inf")

    def step(self, t_limit: float = float("inf")) -> bool:
        """Advance to the next event (or ``t_limit`` if sooner). Returns False
        when nothing is left to simulate."""
        runnable, rates = self.rates()
        t_next = self.next_event_time(runnable, rates)
        if t_next == float("inf"):
            return False
        stop_early = t_limit < t_next
        t_next = min(t_next, t_limit)
        dt = t_next - self.t
        if len(runnable):
            done = np.zeros(len(runnable), dtype=bool)
            if not stop_early:
                finish_at = self.t + self.remaining[runnable] / rates
                done = finish_at <= t_next + EPS
            used = np.where(done, self.remaining[runnable], rates * dt)
            self.remaining[runnable] -= used
            self.remaining[runnable[done]] = 0.0
            self.busy += np.bincount(self.node[runnable], weights=rates * dt, minlength=self.cluster.nodes)
            if self.record:
                self.segments.append((self.t, t_next, runnable.copy(), rates.copy()))
                for i, u in zip(runnable, used):
                    self.work[(self.pod_job[i], self.pod_rank[i])][-1] += u
            self.t = t_next
            for i in runnable[done]:
                job = self.jobs[self.pod_job[i]]
                pos = i - job.pods[0]
                job.finish[-1][pos] = self.t
                self.events += 1
        else:
            self.t = t_next
        self._settle()
        return True

    def advance_until(self, cond: Callable[["Simulation"], bool] | None = None, t: float | None = None) -> None:
        limit = float("inf") if t is None else t
        while not (cond is not None and cond(self)):
            if self.t >= limit - EPS:
                if t is not None:
                    self.t = max(self.t, t)
                return
            if not self.step(limit):
                return

    def run_to_completion(self) -> SimResult:
        while self.step():
            pass
        return self.result()

    # -- outputs -------------------------------------------------------------
    def all_done(self) -> bool:
        return all(j.phase == "done" for j in self.jobs.values())

    def progress(self, job_id: str) -> int:
        return self.jobs[job_id].k

    def result(self) -> SimResult:
        comp = {}
        for jid, job in self.jobs.items():
            if job.completion is None:
                raise InputError(f"job {jid} has not finished")
            comp[jid] = job.completion
        makespan = max(comp.values()) if comp else 0.0
        util = (self.busy / makespan).tolist() if makespan > 0 else [0.0] * self.cluster.nodes
        starts = {jid: job.start for jid, job in self.jobs.items()}
        return SimResult(comp, starts, makespan, util, self.events)

    def rank_traces(self, job_id: str, last: int | None = None) -> list[RankTrace]:
        """PMPI-style traces for the completed iterations of a job.

        Each iteration becomes compute, an Allreduce up to 90 % of the wait
        and a closing Barrier, so the trace analyzer sees the same duty the
        simulator produced.
        """
        job = self.jobs[job_id]
        n_done = len(job.iter_end)
        first = 0 if last is None else max(0, n_done - last)
        traces = []
        for pos, r in enumerate(job.spec.ranks):
            events = []
            for k in range(first, n_done):
                s, e, f = job.iter_start[k], job.iter_end[k], job.finish[k][pos]
                f_us, e_us = round(f * US), round(e * US)
                m_us = round((f + 0.9 * (e - f)) * US)
                events.append(TraceEvent(r, "Allreduce", f_us, m_us))
                events.append(TraceEvent(r, "Barrier", m_us, e_us))
            t0 = round(job.iter_start[first] * US) if n_done > first else None
            traces.append(RankTrace(r, tuple(events), t0))
        return traces

    def utilization_series(self, interval: float = 5.0) -> list[tuple[float, list[float]]]:
        """Mean cores in use per node over consecutive ``interval`` bins.
        Needs ``record=True``."""
        if not self.segments:
            return []
        end = self.segments[-1][1]
        n_bins = int(np.ceil(end / interval)) or 1
        acc = np.zeros((n_bins, self.cluster.nodes))
        for t0, t1, idx, rates in self.segments:
            per_node = np.bincount(self.node[idx], weights=rates, minlength=self.cluster.nodes)
            b0 = int(t0 // interval)
            while t0 < t1 - 1e-12:
                edge = min(t1, (b0 + 1) * interval)
                acc[min(b0, n_bins - 1)] += per_node * (edge - t0)
                t0 = edge
                b0 += 1
        return [(i * interval, (acc[i] / interval).tolist()) for i in range(n_bins)]


def run(cluster: ClusterSpec, jobs: Sequence[SimJobSpec], placement: Placement | None = None,
        seed: int = 42, record: bool = False) -> SimResult:
    return build(cluster, jobs, placement, seed, record).run_to_completion()


def build(cluster: ClusterSpec, jobs: Sequence[SimJobSpec], placement: Placement | None = None,
          seed: int = 42, record: bool = False) -> Simulation:
    if placement is None:
        placement = place(jobs, cluster)
    sim = Simulation(cluster, seed, record)
    for job in jobs:
        sim.add_job(job, placement, start=job.start_offset)
    return sim
