"""Linear contention model for co-located bulk-synchronous jobs.

Makespan of N concurrent jobs grows linearly with normalized cluster load:

    T_N = T_1 * (1 + beta * (rho_N - rho_1)),    rho_N = N * R / (M * C)

and throughput relative to running one job at a time is N * T_1 / T_N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .alloc import ClusterSpec
from .errors import InputError


@dataclass(frozen=True)
class MeasuredPoint:
    n: int
    makespan: float
    ranks: int = 16

    def __post_init__(self):
        if self.n < 1 or self.makespan <= 0 or self.ranks < 1:
            raise InputError(f"invalid measured point {self}")


@dataclass(frozen=True)
class ParetoRow:
    n: int
    throughput: float
    efficiency: float
    degradation: float
    makespan: float


@dataclass(frozen=True)
class CostRow:
    n: int
    total_time: float
    total_cost: float
    cost_per_sim: float
    saving_vs_single: float


@dataclass(frozen=True)
class BetaFit:
    beta: float
    stderr: float
    n_points: int


def cluster_load(n: int, ranks: int, cluster: ClusterSpec) -> float:
    if n <= 0 or ranks <= 0:
        raise InputError("n and ranks must be positive")
    if cluster.vcpus <= 0:
        raise InputError("cluster has no capacity")
    return n * ranks / cluster.vcpus


@dataclass(frozen=True)
class ContentionModel:
    t1: float
    beta: float
    ranks: int = 16
    cluster: ClusterSpec = ClusterSpec()

    def __post_init__(self):
        if self.t1 <= 0:
            raise InputError("T1 must be positive")
        if self.beta < 0:
            raise InputError(f"negative contention coefficient {self.beta}")

    @property
    def rho1(self) -> float:
        return cluster_load(1, self.ranks, self.cluster)

    def load(self, n: int) -> float:
        return cluster_load(n, self.ranks, self.cluster)

    def predict_makespan(self, n: int) -> float:
        return self.t1 * (1.0 + self.beta * (self.load(n) - self.rho1))

    def throughput(self, n: int) -> float:
        return n / (1.0 + self.beta * (self.load(n) - self.rho1))


def predict_makespan(model: ContentionModel, n: int) -> float:
    return model.predict_makespan(n)


def measured_throughput(n: int, t1: float, tn: float) -> float:
    if t1 <= 0 or tn <= 0 or n < 1:
        raise InputError("throughput needs positive inputs")
    return n * t1 / tn


def fit_beta(points: Sequence[MeasuredPoint], t1: float, cluster: ClusterSpec) -> BetaFit:
    """Least squares through the origin on x = rho_N - rho_1, y = T_N/T_1 - 1.

    T_1 is held fixed. Points at N=1 carry no information and are ignored.
    """
    if t1 <= 0:
        raise InputError("T1 must be positive")
    xs, ys = [], []
    for p in points:
        if p.n < 2:
            continue
        rho1 = cluster_load(1, p.ranks, cluster)
        xs.append(cluster_load(p.n, p.ranks, cluster) - rho1)
        ys.append(p.makespan / t1 - 1.0)
    if not xs:
        raise InputError("fitting needs at least one point with N >= 2")
    sxx = math.fsum(x * x for x in xs)
    beta = math.fsum(x * y for x, y in zip(xs, ys)) / sxx
    if len(xs) > 1:
        rss = math.fsum((y - beta * x) ** 2 for x, y in zip(xs, ys))
        stderr = math.sqrt(rss / (len(xs) - 1) / sxx)
    else:
        stderr = 0.0
    return BetaFit(beta, stderr, len(xs))


def _baseline(points: Sequence[MeasuredPoint], t1: float | None) -> float:
    if t1 is not None:
        return t1
    for p in points:
        if p.n == 1:
            return p.makespan
    raise InputError("missing the N=1 baseline")


def pareto_table(points: Sequence[MeasuredPoint], t1: float | None = None):
    """Returns (rows, knee). The knee is the N >= 2 whose efficiency drop to
    the next measured N is largest (smaller N on ties), or None when
    efficiency never drops."""
    pts = sorted(points, key=lambda p: p.n)
    if not any(p.n == 1 for p in pts):
        raise InputError("missing the N=1 baseline")
    t1 = _baseline(pts, t1)
    rows = []
    for p in pts:
        theta = measured_throughput(p.n, t1, p.makespan)
        rows.append(ParetoRow(p.n, theta, theta / p.n, (p.makespan - t1) / t1, p.makespan))
    knee = None
    best = 0.0
    for a, b in zip(rows, rows[1:]):
        if a.n < 2 or b.n != a.n + 1:
            continue
        drop = a.efficiency - b.efficiency
        if drop > best + 1e-12:
            best, knee = drop, a.n
    return rows, knee


def cost_table(points: Sequence[MeasuredPoint], t1: float | None, cluster: ClusterSpec) -> list[CostRow]:
    pts = sorted(points, key=lambda p: p.n)
    t1 = _baseline(pts, t1)
    base = t1 / 3600.0 * cluster.price_per_hour
    rows = []
    for p in pts:
        cost = p.makespan / 3600.0 * cluster.price_per_hour
        per_sim = cost / p.n
        saving = 1.0 - per_sim / base if base > 0 else 0.0
        rows.append(CostRow(p.n, p.makespan, cost, per_sim, saving))
    return rows


@dataclass(frozen=True)
class Prediction:
    n: int
    predicted: float
    measured: float | None
    error: float | None  # (pred - meas) / meas
    illustrative: bool


def prediction_table(model: ContentionModel, points: Sequence[MeasuredPoint], extra: int = 1) -> list[Prediction]:
    """Per-N predictions; N beyond the largest measured one are flagged as
    illustrative extrapolations."""
    measured = {p.n: p.makespan for p in points}
    max_n = max(measured)
    out = []
    for n in range(1, max_n + extra + 1):
        pred = model.predict_makespan(n)
        meas = measured.get(n)
        err = (pred - meas) / meas if meas is not None else None
        out.append(Prediction(n, pred, meas, err, n > max_n))
    return out


REFERENCE_POINTS = (
    MeasuredPoint(1, 1249.0),
    MeasuredPoint(2, 1410.0),
    MeasuredPoint(3, 1446.0),
    MeasuredPoint(4, 1604.0),
    MeasuredPoint(5, 1670.0),
)
