"""CPU request planning for requests-only (Burstable) pods."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import ConstraintError, InputError

MIN_REQUEST = 10  # millicores
DEFAULT_BUDGET = 5900  # millicores per simulation
QOS = "Burstable, requests-only"


@dataclass(frozen=True)
class ClusterSpec:
    nodes: int = 12
    vcpus_per_node: int = 8
    price_per_hour: float = 4.12

    def __post_init__(self):
        if self.nodes < 1 or self.vcpus_per_node < 1:
            raise InputError("cluster needs at least one node with one vCPU")
        if self.price_per_hour < 0:
            raise InputError("price must be non-negative")

    @property
    def vcpus(self) -> int:
        return self.nodes * self.vcpus_per_node

    @property
    def schedulable_millicpu(self) -> int:
        return self.vcpus * 1000

    @property
    def node_millicpu(self) -> int:
        return self.vcpus_per_node * 1000


@dataclass(frozen=True)
class QuotaSpec:
    max_millicpu: int

    def __post_init__(self):
        if self.max_millicpu <= 0:
            raise InputError("quota must be positive")


@dataclass
class AllocationPlan:
    per_rank_millicpu: dict[int, int]
    budget: int
    qos: str = field(default=QOS)

    @property
    def total(self) -> int:
        return sum(self.per_rank_millicpu.values())

    def to_dict(self):
        return {
            "qos": self.qos,
            "budget_millicpu": self.budget,
            "total_millicpu": self.total,
            "per_rank_millicpu": {str(r): m for r, m in self.per_rank_millicpu.items()},
        }

    @classmethod
    def from_dict(cls, doc):
        per_rank = {int(r): int(m) for r, m in doc["per_rank_millicpu"].items()}
        return cls(per_rank, int(doc.get("budget_millicpu", sum(per_rank.values()))))


def _floored_shares(shares: Mapping[int, float], budget: int, floor: int) -> dict[int, int]:
    """floor(budget * s_i / sum s), with ranks under ``floor`` pinned to it and
    the remaining budget re-split among the rest."""
    if budget < floor * len(shares):
        raise ConstraintError(f"budget {budget}m cannot give {len(shares)} ranks {floor}m each")
    pinned: dict[int, int] = {}
    free = dict(shares)
    while True:
        remaining = budget - floor * len(pinned)
        total = math.fsum(free.values())
        out = {}
        newly = []
        for r, s in free.items():
            m = math.floor(remaining * s / total + 1e-9) if total > 0 else 0
            if m < floor:
                newly.append(r)
            out[r] = m
        if not newly:
            break
        for r in newly:
            pinned[r] = floor
            del free[r]
        if not free:
            break
    plan = {**pinned, **(out if free else {})}
    return dict(sorted(plan.items()))


def proportional_requests(weights: Sequence[float], budget: int = DEFAULT_BUDGET,
                          floor: int = MIN_REQUEST) -> AllocationPlan:
    if not weights or any(w <= 0 for w in weights):
        raise InputError("weights must be positive")
    if all(float(w).is_integer() for w in weights):
        # exact integer path: B*w // sum(w)
        iw = [int(w) for w in weights]
        tot = sum(iw)
        raw = {i: budget * w // tot for i, w in enumerate(iw)}
        if min(raw.values()) >= floor:
            return AllocationPlan(raw, budget)
    return AllocationPlan(_floored_shares(dict(enumerate(weights)), budget, floor), budget)


def duty_proportional_requests(duties: Mapping[int, float], budget: int = DEFAULT_BUDGET,
                               floor: int = MIN_REQUEST) -> AllocationPlan:
    if not duties:
        raise InputError("no duties given")
    for r, d in duties.items():
        if not 0.0 <= d <= 1.0:
            raise InputError(f"rank {r}: duty {d} outside [0, 1]")
    if math.fsum(duties.values()) <= 0:
        return equal_requests(len(duties), budget // len(duties), ranks=sorted(duties))
    return AllocationPlan(_floored_shares(dict(duties), budget, floor), budget)


def equal_requests(n_ranks: int, per_rank: int = 1000, ranks=None) -> AllocationPlan:
    ranks = list(range(n_ranks)) if ranks is None else list(ranks)
    if per_rank < MIN_REQUEST:
        raise ConstraintError(f"{per_rank}m is below the {MIN_REQUEST}m floor")
    return AllocationPlan({r: per_rank for r in ranks}, per_rank * len(ranks))


@dataclass
class AggregateReport:
    total_millicpu: int
    fraction_of_cluster: float
    fits: bool
    limit_millicpu: int


def aggregate_check(plans: Sequence[AllocationPlan], cluster: ClusterSpec,
                    quota: QuotaSpec | None = None) -> AggregateReport:
    total = sum(p.total for p in plans)
    limit = cluster.schedulable_millicpu
    if quota is not None:
        limit = min(limit, quota.max_millicpu)
    return AggregateReport(total, total / cluster.schedulable_millicpu, total <= limit, limit)


def overlap_probability(k: float, d: float) -> float:
    """P(two or more of k pods compute at once), each computing with
    probability d independently. Non-integer k is accepted."""
    if k < 0 or not 0.0 <= d <= 1.0 or math.isnan(k):
        raise InputError("need k >= 0 and d in [0, 1]")
    if k <= 1:
        return 0.0
    q = 1.0 - d
    if q == 0.0:
        return 1.0
    p = 1.0 - q ** k - k * d * q ** (k - 1)
    return min(1.0, max(0.0, p))
