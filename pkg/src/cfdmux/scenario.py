"""YAML scenario documents for the ``simulate`` and ``control`` commands.

Simulation scenario::

    seed: 42
    cluster: {nodes: 2, vcpus_per_node: 8, price_per_hour: 4.12}
    workload: {t1: 1249, iterations: 200, duties: reference}
    jobs:
      - id: A
        allocation: proportional   # proportional | equal | duty | explicit
        start_offset: 0
      - id: B
        allocation: proportional
        start_offset: 30

``duties`` is ``reference``, a list (one per rank) or a mapping of rank to
duty. Explicit jobs give ``per_rank_compute``, ``collective_latency``,
``iterations`` and ``requests`` directly.

Controller scenario: the same ``seed``/``cluster``/``workload`` keys plus a
``config`` mapping of :class:`~cfdmux.controller.ControllerConfig` fields.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from .alloc import (DEFAULT_BUDGET, AllocationPlan, ClusterSpec, duty_proportional_requests,
                    equal_requests, proportional_requests)
from .controller import ControllerConfig
from .decomp import REFERENCE_WEIGHTS
from .errors import InputError
from .sim import Calibration, SimJobSpec, calibrate
from .trace import reference_duties

DEFAULT_SEED = 42


def load_yaml(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"scenario not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise InputError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise InputError(f"{path}: scenario must be a mapping")
    return doc


def parse_cluster(doc) -> ClusterSpec:
    doc = doc or {}
    try:
        return ClusterSpec(int(doc.get("nodes", 12)), int(doc.get("vcpus_per_node", 8)),
                           float(doc.get("price_per_hour", 4.12)))
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad cluster block: {exc}") from exc


def parse_duties(value) -> dict[int, float]:
    if value is None or value == "reference":
        return reference_duties()
    if isinstance(value, list):
        return {i: float(d) for i, d in enumerate(value)}
    if isinstance(value, dict):
        return {int(r): float(d) for r, d in value.items()}
    raise InputError(f"cannot read duties from {value!r}")


def workload_calibration(doc) -> Calibration:
    doc = doc or {}
    try:
        return calibrate(parse_duties(doc.get("duties")), float(doc.get("t1", 1249.0)),
                         int(doc.get("iterations", 200)))
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad workload block: {exc}") from exc


def job_plan(job: dict, duties: dict[int, float]) -> AllocationPlan:
    kind = job.get("allocation", "proportional")
    budget = int(job.get("budget", DEFAULT_BUDGET))
    n = len(duties)
    if kind == "proportional":
        weights = job.get("weights") or (list(REFERENCE_WEIGHTS) if n == 16 else [1] * n)
        if len(weights) != n:
            raise InputError(f"job {job.get('id')}: {len(weights)} weights for {n} ranks")
        return proportional_requests(weights, budget)
    if kind == "equal":
        return equal_requests(n, int(job.get("per_rank", 1000)))
    if kind == "duty":
        return duty_proportional_requests(duties, budget)
    raise InputError(f"unknown allocation {kind!r}")


@dataclass
class SimScenario:
    cluster: ClusterSpec
    jobs: list[SimJobSpec]
    seed: int
    t1: float | None


def load_sim_scenario(path) -> SimScenario:
    doc = load_yaml(path)
    cluster = parse_cluster(doc.get("cluster"))
    seed = int(doc.get("seed", DEFAULT_SEED))
    raw_jobs = doc.get("jobs")
    if not raw_jobs:
        raise InputError("scenario has no jobs")
    cal = None
    if "workload" in doc or any(j.get("allocation", "proportional") != "explicit" for j in raw_jobs):
        cal = workload_calibration(doc.get("workload"))
    jobs = []
    for i, j in enumerate(raw_jobs):
        jid = str(j.get("id", f"J{i}"))
        try:
            if j.get("allocation") == "explicit":
                compute = parse_duties(j["per_rank_compute"])
                req = j["requests"]
                req = {i: int(m) for i, m in enumerate(req)} if isinstance(req, list) else \
                    {int(r): int(m) for r, m in req.items()}
                jobs.append(SimJobSpec(jid, compute, int(j["iterations"]), float(j["collective_latency"]),
                                       AllocationPlan(req, sum(req.values())),
                                       float(j.get("start_offset", 0.0)), float(j.get("jitter", 0.0))))
            else:
                duties = parse_duties((doc.get("workload") or {}).get("duties"))
                jobs.append(cal.job(jid, job_plan(j, duties), float(j.get("start_offset", 0.0)),
                                    float(j.get("jitter", 0.0))))
        except KeyError as exc:
            raise InputError(f"job {jid}: missing {exc}") from None
        except (TypeError, ValueError) as exc:
            raise InputError(f"job {jid}: {exc}") from exc
    t1 = cal.wall * cal.iterations if cal else None
    return SimScenario(cluster, jobs, seed, t1)


@dataclass
class ControlScenario:
    cluster: ClusterSpec
    calibration: Calibration
    config: ControllerConfig
    seed: int

    @property
    def t1(self) -> float:
        return self.calibration.wall * self.calibration.iterations


def load_control_scenario(path) -> ControlScenario:
    doc = load_yaml(path)
    known = {f.name for f in fields(ControllerConfig)}
    cfg = doc.get("config") or {}
    unknown = set(cfg) - known
    if unknown:
        raise InputError(f"unknown controller settings: {sorted(unknown)}")
    return ControlScenario(parse_cluster(doc.get("cluster")), workload_calibration(doc.get("workload")),
                           ControllerConfig(**cfg), int(doc.get("seed", DEFAULT_SEED)))
