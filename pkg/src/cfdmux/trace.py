"""Per-rank MPI trace parsing and duty-cycle analysis.

Trace files are CSV, one per rank::

    # t_start_us=0
    rank,call,t_enter_us,t_exit_us
    0,Allreduce,312250,5018250
    0,Barrier,5018250,6245000

The leading ``# t_start_us=`` comment is optional. When present it marks the
start of iteration 0; otherwise the first event's entry time is used.
Timestamps are integer microseconds from a monotonic clock.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InputError, TraceFormatError

logger = logging.getLogger(__name__)

CALLS = ("Barrier", "Allreduce", "Alltoall", "Sendrecv", "Wait", "Waitall")
HEADER = ("rank", "call", "t_enter_us", "t_exit_us")
US = 1_000_000

# Group means of the 16-rank concentric run (sparse / medium / dense).
REFERENCE_GROUP_DUTIES = {"sparse": 0.050, "medium": 0.115, "dense": 0.194}
REFERENCE_GROUPS = {
    "sparse": tuple(range(0, 8)),
    "medium": tuple(range(8, 12)),
    "dense": tuple(range(12, 16)),
}


def reference_duties():
    """Per-rank duties for the 16-rank reference layout."""
    out = {}
    for label, ranks in REFERENCE_GROUPS.items():
        for r in ranks:
            out[r] = REFERENCE_GROUP_DUTIES[label]
    return dict(sorted(out.items()))


@dataclass(frozen=True)
class TraceEvent:
    rank: int
    call: str
    t_enter: int  # us
    t_exit: int  # us

    @property
    def duration(self) -> int:
        return self.t_exit - self.t_enter


@dataclass(frozen=True)
class RankTrace:
    rank: int
    events: tuple[TraceEvent, ...]
    t_start_us: int | None = None

    def __post_init__(self):
        prev_exit = None
        for i, ev in enumerate(self.events):
            if ev.rank != self.rank:
                raise TraceFormatError(f"event {i} has rank {ev.rank}, trace rank is {self.rank}")
            if ev.t_exit < ev.t_enter:
                raise TraceFormatError(f"event {i} exits before it enters")
            if prev_exit is not None and ev.t_enter < prev_exit:
                raise TraceFormatError(f"event {i} overlaps or precedes the previous event")
            prev_exit = ev.t_exit


@dataclass(frozen=True)
class IterationSlice:
    k: int
    t_compute: float  # s
    t_mpi: float  # s

    @property
    def wall(self) -> float:
        return self.t_compute + self.t_mpi


@dataclass
class DutyCycleReport:
    per_rank: dict[int, float]
    per_iteration: dict[int, list[float]]
    skip_fraction: float
    groups: dict[str, float] = field(default_factory=dict)
    group_ranks: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def to_dict(self):
        return {
            "skip_fraction": self.skip_fraction,
            "per_rank": {str(r): d for r, d in self.per_rank.items()},
            "groups": dict(self.groups),
            "group_ranks": {k: list(v) for k, v in self.group_ranks.items()},
            "iterations": {str(r): len(v) for r, v in self.per_iteration.items()},
        }


@dataclass
class ReclaimableCapacity:
    per_rank: dict[int, float]  # millicores
    total: float  # millicores
    fraction_of_budget: float


def _normalize_call(name: str) -> str:
    name = name.strip()
    if name.startswith("MPI_"):
        name = name[4:]
    for c in CALLS:
        if c.lower() == name.lower():
            return c
    raise KeyError(name)


def parse_trace(path) -> RankTrace:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"trace file not found: {path}")
    t_start = None
    header_seen = False
    rank = None
    events: list[TraceEvent] = []
    with open(path, newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("t_start_us="):
                    try:
                        t_start = int(body.split("=", 1)[1])
                    except ValueError:
                        raise TraceFormatError("unparsable t_start_us", lineno, path) from None
                continue
            cols = [c.strip() for c in next(csv.reader([line]))]
            if not header_seen:
                if tuple(cols) != HEADER:
                    raise TraceFormatError(f"expected header {','.join(HEADER)}", lineno, path)
                header_seen = True
                continue
            if len(cols) != 4:
                raise TraceFormatError(f"expected 4 columns, got {len(cols)}", lineno, path)
            try:
                r, t_in, t_out = int(cols[0]), int(cols[2]), int(cols[3])
            except ValueError:
                raise TraceFormatError("unparsable integer", lineno, path) from None
            try:
                call = _normalize_call(cols[1])
            except KeyError:
                raise TraceFormatError(f"unknown call {cols[1]!r}", lineno, path) from None
            if r < 0:
                raise TraceFormatError("negative rank", lineno, path)
            if rank is None:
                rank = r
            elif r != rank:
                raise TraceFormatError(f"rank {r} differs from file rank {rank}", lineno, path)
            if t_out < t_in:
                raise TraceFormatError("t_exit before t_enter", lineno, path)
            if events and t_in < events[-1].t_exit:
                raise TraceFormatError("event overlaps or is out of time order", lineno, path)
            events.append(TraceEvent(r, call, t_in, t_out))
    if not header_seen:
        raise TraceFormatError("missing header", path=path)
    if rank is None:
        raise TraceFormatError("no events", path=path)
    if t_start is not None and t_start > events[0].t_enter:
        raise TraceFormatError("t_start_us is after the first event", path=path)
    return RankTrace(rank, tuple(events), t_start)


def write_trace(trace: RankTrace, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            if trace.t_start_us is not None:
                fh.write(f"# t_start_us={trace.t_start_us}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HEADER)
            for ev in trace.events:
                w.writerow((ev.rank, ev.call, ev.t_enter, ev.t_exit))
    except OSError as exc:
        raise InputError(f"cannot write trace {path}: {exc}") from exc
    return path


def segment_iterations(trace: RankTrace, t_start_us: int | None = None) -> list[IterationSlice]:
    """Split a rank trace into solver iterations delimited by Barrier exits.

    Iteration k runs from the exit of Barrier k-1 (or the trace start) to the
    exit of Barrier k; the closing Barrier counts as MPI time.
    """
    if not any(ev.call == "Barrier" for ev in trace.events):
        raise InputError("no iteration boundaries (trace has no Barrier events)")
    if t_start_us is None:
        t_start_us = trace.t_start_us
    if t_start_us is None:
        t_start_us = trace.events[0].t_enter
    if t_start_us > trace.events[0].t_enter:
        raise InputError("trace start is after the first event")

    slices = []
    span_start = t_start_us
    mpi = 0
    pending = 0
    for ev in trace.events:
        mpi += ev.duration
        pending += 1
        if ev.call == "Barrier":
            span = ev.t_exit - span_start
            slices.append(IterationSlice(len(slices), (span - mpi) / US, mpi / US))
            span_start = ev.t_exit
            mpi = 0
            pending = 0
    if pending:
        logger.warning("rank %d: discarding %d events after the last Barrier", trace.rank, pending)
    return slices


def duty_cycle(s: IterationSlice) -> float:
    total = s.t_compute + s.t_mpi
    if total <= 0:
        raise ValueError(f"iteration {s.k} has zero length")
    return s.t_compute / total


def skipped_count(n: int, skip_fraction: float) -> int:
    if not 0.0 <= skip_fraction < 1.0:
        raise ValueError("skip_fraction must lie in [0, 1)")
    return math.floor(skip_fraction * n + 1e-9)


def steady_state_duty(slices: Sequence[IterationSlice], skip_fraction: float = 0.10) -> float:
    """Time-weighted duty over the slices left after dropping the first
    ``floor(skip_fraction * K)`` iterations."""
    k0 = skipped_count(len(slices), skip_fraction)
    kept = slices[k0:]
    if not kept:
        raise ValueError("no iterations left after the startup skip")
    compute = math.fsum(s.t_compute for s in kept)
    total = math.fsum(s.t_compute + s.t_mpi for s in kept)
    if total <= 0:
        raise ValueError("retained iterations have zero length")
    return compute / total


def groups_from_weights(weights: Sequence[int]) -> dict[str, tuple[int, ...]]:
    """Group ranks sharing a weight; three distinct weights get the
    sparse/medium/dense labels, other layouts ``w<weight>``."""
    distinct = sorted(set(weights))
    if len(distinct) == 3:
        names = dict(zip(distinct, ("sparse", "medium", "dense")))
    else:
        names = {w: f"w{w}" for w in distinct}
    return {names[w]: tuple(i for i, x in enumerate(weights) if x == w) for w in distinct}


def analyze(
    traces: Iterable[RankTrace],
    skip_fraction: float = 0.10,
    groups: Mapping[str, Sequence[int]] | None = None,
) -> DutyCycleReport:
    per_rank = {}
    per_iter = {}
    for tr in sorted(traces, key=lambda t: t.rank):
        if tr.rank in per_rank:
            raise InputError(f"duplicate trace for rank {tr.rank}")
        slices = segment_iterations(tr)
        per_iter[tr.rank] = [duty_cycle(s) for s in slices]
        per_rank[tr.rank] = steady_state_duty(slices, skip_fraction)
    if not per_rank:
        raise InputError("no traces to analyze")
    group_means = {}
    group_ranks = {}
    for label, ranks in (groups or {}).items():
        present = [r for r in ranks if r in per_rank]
        if present:
            group_ranks[label] = tuple(present)
            group_means[label] = float(np.mean([per_rank[r] for r in present]))
    return DutyCycleReport(per_rank, per_iter, skip_fraction, group_means, group_ranks)


def reclaimable(duties: Mapping[int, float], requests: Mapping[int, float]) -> ReclaimableCapacity:
    if set(duties) != set(requests):
        raise ValueError("duty and request mappings cover different ranks")
    per_rank = {r: requests[r] * (1.0 - duties[r]) for r in sorted(duties)}
    total = math.fsum(per_rank.values())
    budget = math.fsum(requests.values())
    frac = total / budget if budget > 0 else 0.0
    return ReclaimableCapacity(per_rank, total, frac)


def synthesize_traces(
    duties: Mapping[int, float] | Sequence[float],
    iterations: int,
    iteration_wall: float,
    seed: int = 42,
    jitter: float = 0.0,
    allreduce_share: float = 0.8,
) -> list[RankTrace]:
    """Build bulk-synchronous rank traces with the requested duty per rank.

    Every iteration is one compute gap followed by an Allreduce and a closing
    Barrier, all ranks sharing the same iteration wall time. ``jitter`` is the
    half-width of a uniform perturbation of the compute gap, as a fraction of
    the wall time (at most 0.01).
    """
    if not isinstance(duties, Mapping):
        duties = dict(enumerate(duties))
    if iterations < 2:
        raise ValueError("need at least 2 iterations")
    if not 0.0 <= jitter <= 0.01:
        raise ValueError("jitter must lie in [0, 0.01]")
    wall_us = int(round(iteration_wall * US))
    if wall_us < 10:
        raise ValueError("iteration wall too short")
    for r, d in duties.items():
        if not 0.0 < d < 1.0:
            raise ValueError(f"rank {r}: duty must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    traces = []
    for rank in sorted(duties):
        d = duties[rank]
        noise = rng.uniform(-jitter, jitter, size=iterations) if jitter else np.zeros(iterations)
        events = []
        for k in range(iterations):
            t0 = k * wall_us
            comp = int(round((d + noise[k]) * wall_us))
            comp = min(max(comp, 0), wall_us - 2)
            mpi = wall_us - comp
            ar = max(1, min(mpi - 1, int(round(allreduce_share * mpi))))
            events.append(TraceEvent(rank, "Allreduce", t0 + comp, t0 + comp + ar))
            events.append(TraceEvent(rank, "Barrier", t0 + comp + ar, t0 + wall_us))
        traces.append(RankTrace(rank, tuple(events), 0))
    return traces


def gen_synthetic_trace(
    duties,
    iterations: int,
    iteration_wall: float,
    seed: int,
    out_dir,
    jitter: float = 0.0,
) -> list[Path]:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create {out_dir}: {exc}") from exc
    paths = []
    for tr in synthesize_traces(duties, iterations, iteration_wall, seed, jitter):
        paths.append(write_trace(tr, out_dir / f"rank_{tr.rank:04d}.csv"))
    return paths


def load_trace_dir(trace_dir) -> list[RankTrace]:
    trace_dir = Path(trace_dir)
    if not trace_dir.is_dir():
        raise InputError(f"not a directory: {trace_dir}")
    files = sorted(trace_dir.glob("*.csv"))
    if not files:
        raise InputError(f"no trace files in {trace_dir}")
    return [parse_trace(p) for p in files]


def render_report(report: DutyCycleReport, capacities: Mapping[str, ReclaimableCapacity] | None = None) -> str:
    lines = ["[summary]", f"ranks = {len(report.per_rank)}", f"skip_fraction = {report.skip_fraction:.3f}"]
    lines += ["", "[per_rank]", "rank,iterations,duty"]
    for r, d in report.per_rank.items():
        lines.append(f"{r},{len(report.per_iteration[r])},{d:.6f}")
    if report.groups:
        lines += ["", "[groups]", "group,ranks,mean_duty"]
        for label, d in report.groups.items():
            ranks = report.group_ranks[label]
            lines.append(f"{label},{ranks[0]}-{ranks[-1]} ({len(ranks)}),{d:.6f}")
    for name, cap in (capacities or {}).items():
        lines += ["", f"[reclaimable.{name}]",
                  f"total_millicpu = {cap.total:.1f}",
                  f"fraction_of_budget = {cap.fraction_of_budget:.4f}"]
    return "\n".join(lines) + "\n"
