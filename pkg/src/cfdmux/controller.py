"""Profile -> resize -> pack -> monitor control loop.

The controller talks to a cluster only through an :class:`Actuator`. The
shipped backend, :class:`SimulatedActuator`, drives :class:`~cfdmux.sim.Simulation`.
A live-cluster backend would implement the same methods and must make
resizes restart-free (pods carry a ``NotRequired`` resize policy).
"""

from __future__ import annotations

import abc
import json
import logging
import math
import string
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from . import k8s
from .alloc import (MIN_REQUEST, AllocationPlan, ClusterSpec, duty_proportional_requests,
                    equal_requests)
from .errors import CfdmuxError, ConstraintError, InputError
from .sim import Calibration, SimJobSpec, Simulation, place
from .trace import RankTrace, analyze, segment_iterations

logger = logging.getLogger(__name__)


@dataclass
class ControllerConfig:
    profile_window: int = 50
    fairness_threshold: float = 1.10
    per_sim_budget: int = 5900
    max_sims: int = 4
    adjustment_cap: float = 0.20
    min_request: int = MIN_REQUEST
    initial_request: int = 1000
    skip_fraction: float = 0.10

    def __post_init__(self):
        if self.profile_window < 2:
            raise InputError("profile window must cover at least 2 iterations")
        if self.fairness_threshold <= 1.0:
            raise InputError("fairness threshold must exceed 1")
        if self.max_sims < 1:
            raise InputError("max_sims must be at least 1")
        if self.adjustment_cap <= 0:
            raise InputError("adjustment cap must be positive")


class Actuator(abc.ABC):
    """What the controller needs from a cluster."""

    @abc.abstractmethod
    def now(self) -> float: ...

    @abc.abstractmethod
    def capacity_millicpu(self) -> int: ...

    @abc.abstractmethod
    def list_pods(self) -> dict[str, dict[int, int]]:
        """sim id -> rank -> current CPU request (millicores)."""

    @abc.abstractmethod
    def read_trace_window(self, sim_id: str, iterations: int) -> list[RankTrace]:
        """Trace the next ``iterations`` iterations of a simulation."""

    @abc.abstractmethod
    def resize(self, sim_id: str, rank: int, millicpu: int) -> None: ...

    @abc.abstractmethod
    def deploy(self, sim_id: str, plan: AllocationPlan) -> None:
        """Decompose and launch a new simulation with the given requests."""

    @abc.abstractmethod
    def progress(self, sim_id: str) -> int:
        """Completed iterations."""

    @abc.abstractmethod
    def is_complete(self, sim_id: str) -> bool: ...

    @abc.abstractmethod
    def wait(self, seconds: float) -> None: ...

    @abc.abstractmethod
    def restart_count(self) -> int: ...

    def active_sims(self) -> list[str]:
        return [s for s in self.list_pods() if not self.is_complete(s)]


class SimulatedActuator(Actuator):
    """Actuator over the discrete-event simulator.

    ``job_factory(sim_id, plan)`` builds the job for each deployment; by
    default every simulation is a copy of ``calibration``.
    """

    def __init__(self, cluster: ClusterSpec, calibration: Calibration | None = None,
                 initial_sim: str = "A", initial_request: int = 1000, seed: int = 42,
                 job_factory: Callable[[str, AllocationPlan], SimJobSpec] | None = None,
                 n_ranks: int | None = None):
        if job_factory is None:
            if calibration is None:
                raise InputError("need a calibration or a job factory")
            job_factory = lambda sid, plan: calibration.job(sid, plan)  # noqa: E731
            n_ranks = len(calibration.per_rank_compute)
        if n_ranks is None:
            raise InputError("n_ranks is required with a custom job factory")
        self.cluster = cluster
        self.sim = Simulation(cluster, seed)
        self.job_factory = job_factory
        self.restarts = 0
        self._launch(initial_sim, equal_requests(n_ranks, initial_request))

    def _launch(self, sim_id, plan):
        spec = self.job_factory(sim_id, plan)
        spec.requests = AllocationPlan(dict(plan.per_rank_millicpu), plan.budget)
        spec.start_offset = 0.0
        self.sim.add_job(spec, place([spec], self.cluster, self.sim.committed))

    def now(self):
        return self.sim.t

    def capacity_millicpu(self):
        return self.cluster.schedulable_millicpu

    def list_pods(self):
        return {jid: dict(job.spec.requests.per_rank_millicpu) for jid, job in self.sim.jobs.items()}

    def read_trace_window(self, sim_id, iterations):
        target = self.sim.progress(sim_id) + iterations
        self.sim.advance_until(lambda s: s.progress(sim_id) >= target or s.jobs[sim_id].phase == "done")
        return self.sim.rank_traces(sim_id, last=iterations)

    def resize(self, sim_id, rank, millicpu):
        if millicpu < MIN_REQUEST:
            raise ConstraintError(f"resize below {MIN_REQUEST}m")
        # in place: the pod keeps running, nothing restarts
        self.sim.set_request(sim_id, rank, int(millicpu))

    def deploy(self, sim_id, plan):
        self._launch(sim_id, plan)

    def progress(self, sim_id):
        return self.sim.progress(sim_id)

    def is_complete(self, sim_id):
        return self.sim.jobs[sim_id].phase == "done"

    def wait(self, seconds):
        self.sim.advance_until(t=self.sim.t + seconds)

    def wait_all(self):
        self.sim.advance_until(lambda s: s.all_done())

    def restart_count(self):
        return self.restarts

    def durations(self) -> dict[str, float]:
        return {jid: job.completion - job.start for jid, job in self.sim.jobs.items()
                if job.completion is not None}


@dataclass
class LogEvent:
    t: float
    kind: str  # profiling_pass | resize | deploy | fairness_adjustment
    sim: str
    pod: str | None = None
    old: int | None = None
    new: int | None = None
    factor: float | None = None
    total_requests: int = 0

    def to_json(self) -> str:
        return json.dumps({k: v for k, v in asdict(self).items() if v is not None})


@dataclass
class ActionLog:
    events: list[LogEvent] = field(default_factory=list)

    def add(self, ev: LogEvent):
        if self.events and ev.t < self.events[-1].t:
            raise RuntimeError("log timestamps must not decrease")
        self.events.append(ev)
        logger.info("t=%.1f %s %s", ev.t, ev.kind, ev.pod or ev.sim)

    def count(self, kind: str) -> int:
        return sum(1 for e in self.events if e.kind == kind)

    @property
    def counters(self) -> dict[str, int]:
        kinds = ("profiling_pass", "resize", "deploy", "fairness_adjustment")
        return {k: self.count(k) for k in kinds}

    def to_lines(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.events)


@dataclass
class Adjustment:
    sim_id: str
    factor: float
    ratio: float


@dataclass
class PipelineResult:
    log: ActionLog
    sims: list[str]
    durations: dict[str, float]
    start_times: dict[str, float]
    restarts: int
    aborted: str | None = None

    @property
    def makespan(self) -> float:
        return max(self.durations.values()) if self.durations else 0.0

    def throughput(self, t1: float) -> float:
        """N * T1 / slowest per-simulation elapsed time."""
        return len(self.durations) * t1 / self.makespan if self.durations else 0.0

    def metrics(self, t1: float | None = None) -> dict:
        out = {
            "sims": self.sims,
            "counters": self.log.counters,
            "restarts": self.restarts,
            "durations": self.durations,
            "start_times": self.start_times,
            "makespan": self.makespan,
            "aborted": self.aborted,
        }
        if t1 is not None and self.durations:
            out["t1"] = t1
            out["throughput"] = self.throughput(t1)
        return out


def headroom_check(current_plans: Sequence[AllocationPlan], next_plan: AllocationPlan,
                   cluster: ClusterSpec | int) -> bool:
    cap = cluster if isinstance(cluster, int) else cluster.schedulable_millicpu
    return sum(p.total for p in current_plans) + next_plan.total <= cap


def fairness_step(progress: Mapping[str, int], config: ControllerConfig) -> Adjustment | None:
    """Bump the most-lagging simulation when max/min progress exceeds the
    threshold. Only simulations with at least one iteration count."""
    live = {s: p for s, p in progress.items() if p >= 1}
    if len(live) < 2:
        return None
    slow = min(live, key=lambda s: (live[s], s))
    ratio = max(live.values()) / live[slow]
    if ratio <= config.fairness_threshold:
        return None
    return Adjustment(slow, 1.0 + config.adjustment_cap, ratio)


def _sim_ids():
    for c in string.ascii_uppercase:
        yield c
    i = 0
    while True:
        yield f"S{i}"
        i += 1


def run_pipeline(actuator: Actuator, config: ControllerConfig) -> PipelineResult:
    log = ActionLog()
    pods = actuator.list_pods()
    running = actuator.active_sims()
    if len(running) != 1 or len(pods) != 1:
        raise InputError("pipeline must start from exactly one running simulation")
    sims = [running[0]]
    ids = (s for s in _sim_ids() if s not in pods)
    cap = actuator.capacity_millicpu()
    starts = {sims[0]: actuator.now()}
    n_ranks = len(pods[sims[0]])
    newest = sims[0]
    wall = None

    def total():
        return sum(sum(p.values()) for p in actuator.list_pods().values())

    def record(**kw):
        log.add(LogEvent(t=actuator.now(), total_requests=total(), **kw))

    aborted = None
    try:
        while True:
            # (A) profile
            traces = actuator.read_trace_window(newest, config.profile_window)
            report = analyze(traces, config.skip_fraction)
            slices = segment_iterations(traces[0])
            wall = sum(s.wall for s in slices) / len(slices)
            record(kind="profiling_pass", sim=newest)
            # (B) resize
            plan = duty_proportional_requests(report.per_rank, config.per_sim_budget, config.min_request)
            current = actuator.list_pods()[newest]
            for rank, m in plan.per_rank_millicpu.items():
                if current[rank] == m:
                    continue
                actuator.resize(newest, rank, m)
                record(kind="resize", sim=newest, pod=k8s.pod_name(newest, rank), old=current[rank], new=m)
            # (C) pack
            if len(sims) >= config.max_sims:
                break
            next_plan = equal_requests(n_ranks, config.initial_request)
            current_plans = [AllocationPlan(p, sum(p.values())) for p in actuator.list_pods().values()
                             if p]
            if not headroom_check(current_plans, next_plan, cap):
                logger.info("no headroom for another simulation")
                break
            sid = next(ids)
            actuator.deploy(sid, next_plan)
            starts[sid] = actuator.now()
            sims.append(sid)
            newest = sid
            record(kind="deploy", sim=sid)

        # (D) monitor
        interval = config.profile_window * wall
        while actuator.active_sims():
            before = {s: actuator.progress(s) for s in actuator.active_sims()}
            actuator.wait(interval)
            live = [s for s in before if not actuator.is_complete(s)]
            delta = {s: actuator.progress(s) - before[s] for s in live}
            adj = fairness_step(delta, config)
            if adj is None:
                continue
            reqs = actuator.list_pods()[adj.sim_id]
            own = sum(reqs.values())
            others = total() - own
            factor = min(adj.factor, (cap - others) / own)
            if factor <= 1.0:
                continue
            for rank, m in reqs.items():
                actuator.resize(adj.sim_id, rank, max(config.min_request, math.floor(m * factor)))
            record(kind="fairness_adjustment", sim=adj.sim_id, factor=factor)
    except CfdmuxError as exc:
        aborted = str(exc)
        logger.error("pipeline aborted: %s", exc)

    durations = {}
    if aborted is None and isinstance(actuator, SimulatedActuator):
        durations = actuator.durations()
    return PipelineResult(log, sims, durations, starts, actuator.restart_count(), aborted)


def static_throughput(cluster: ClusterSpec, calibration: Calibration, plan: AllocationPlan,
                      n: int, seed: int = 42) -> float:
    """Throughput of n simulations launched together with a fixed plan."""
    from .sim import run

    jobs = [calibration.job(f"S{i}", plan) for i in range(n)]
    res = run(cluster, jobs, seed=seed)
    t1 = calibration.wall * calibration.iterations
    return n * t1 / res.makespan


def write_timeline(result: PipelineResult, path) -> Path:
    """One row per action plus per-simulation solver spans, for plotting."""
    path = Path(path)
    lines = ["sim,kind,start,end"]
    for s in result.sims:
        st = result.start_times[s]
        end = st + result.durations.get(s, float("nan"))
        lines.append(f"{s},solver,{st:.3f},{end:.3f}")
    for e in result.log.events:
        lines.append(f"{e.sim},{e.kind},{e.t:.3f},{e.t:.3f}")
    path.write_text("\n".join(lines) + "\n")
    return path
