"""Synthetic cell clouds and rank assignment.

``concentric_assign`` hands the cells closest to the body centre to the
heaviest ranks: cells are sorted by distance, cut into one ring per distinct
weight (heaviest innermost), and each ring is cut by polar angle into
equal-count chunks, one per rank in that ring.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError

REFERENCE_WEIGHTS = (1, 1, 1, 1, 1, 1, 1, 1, 5, 5, 5, 5, 15, 15, 15, 15)
CENTER = (0.5, 0.0)
# Radii in chord units; far field at 20 chords.
R_INNER = 0.5
R_OUTER = 20.0


@dataclass(frozen=True)
class CellCloud:
    points: np.ndarray  # (n, 2)
    center: tuple[float, float] = CENTER

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0:
            raise InputError("cloud needs a non-empty (n, 2) point array")
        if not np.all(np.isfinite(pts)):
            raise InputError("cloud has non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def distances(self) -> np.ndarray:
        return np.hypot(self.points[:, 0] - self.center[0], self.points[:, 1] - self.center[1])

    def angles(self) -> np.ndarray:
        """Polar angle in [0, 2pi), counter-clockwise from +x."""
        a = np.arctan2(self.points[:, 1] - self.center[1], self.points[:, 0] - self.center[0])
        return np.mod(a, 2 * np.pi)


@dataclass(frozen=True)
class Assignment:
    owner: np.ndarray  # rank per cell
    n_ranks: int

    def counts(self) -> np.ndarray:
        return np.bincount(self.owner, minlength=self.n_ranks)


def generate_cloud(n_cells: int, seed: int = 42, min_cells: int = 16) -> CellCloud:
    """Sample cell centres in an annulus with log-uniform radius.

    Log-uniform radius gives density falling off as 1/r^2, a crude stand-in
    for near-wall mesh refinement.
    """
    if n_cells < min_cells:
        raise InputError(f"need at least {min_cells} cells, got {n_cells}")
    rng = np.random.default_rng(seed)
    u = rng.random(n_cells)
    r = R_INNER * (R_OUTER / R_INNER) ** u
    theta = rng.random(n_cells) * 2 * np.pi
    pts = np.column_stack((CENTER[0] + r * np.cos(theta), CENTER[1] + r * np.sin(theta)))
    return CellCloud(pts, CENTER)


def _angle_chunks(cloud: CellCloud, cells: np.ndarray, n_chunks: int) -> list[np.ndarray]:
    ang = cloud.angles()[cells]
    # lexsort: last key primary; cell index breaks ties
    order = cells[np.lexsort((cells, ang))]
    return np.array_split(order, n_chunks)


def zone_sizes(n_cells: int, weights: Sequence[int]) -> list[tuple[int, list[int], int]]:
    """(weight, ranks, cell count) per zone, heaviest zone first."""
    total = sum(weights)
    zones = []
    cum_w = 0
    prev_edge = 0
    for w in sorted(set(weights), reverse=True):
        ranks = [i for i, x in enumerate(weights) if x == w]
        cum_w += w * len(ranks)
        edge = (n_cells * cum_w + total // 2) // total
        zones.append((w, ranks, edge - prev_edge))
        prev_edge = edge
    return zones


def concentric_assign(cloud: CellCloud, weights: Sequence[int]) -> Assignment:
    weights = [int(w) for w in weights]
    if not weights or any(w <= 0 for w in weights):
        raise InputError("weights must be positive integers")
    n = len(cloud)
    if n < len(weights):
        raise InputError(f"{n} cells cannot cover {len(weights)} ranks")
    dist = cloud.distances()
    idx = np.arange(n)
    by_dist = idx[np.lexsort((idx, dist))]
    owner = np.full(n, -1, dtype=int)
    start = 0
    for w, ranks, size in zone_sizes(n, weights):
        if size < len(ranks):
            raise InputError(f"zone with weight {w} gets {size} cells for {len(ranks)} ranks")
        cells = by_dist[start:start + size]
        start += size
        for rank, chunk in zip(ranks, _angle_chunks(cloud, cells, len(ranks))):
            owner[chunk] = rank
    return Assignment(owner, len(weights))


def equal_assign(cloud: CellCloud, n_ranks: int) -> Assignment:
    if n_ranks < 1:
        raise InputError("need at least one rank")
    if len(cloud) < n_ranks:
        raise InputError(f"{len(cloud)} cells cannot cover {n_ranks} ranks")
    owner = np.empty(len(cloud), dtype=int)
    for rank, chunk in enumerate(_angle_chunks(cloud, np.arange(len(cloud)), n_ranks)):
        owner[chunk] = rank
    return Assignment(owner, n_ranks)


def counts_to_weights(assignment: Assignment) -> np.ndarray:
    counts = assignment.counts()
    if counts.sum() == 0:
        raise InputError("empty assignment")
    return counts / counts.sum()


def export_assignment(cloud: CellCloud, assignment: Assignment, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("cell", "x", "y", "rank"))
        for i, ((x, y), r) in enumerate(zip(cloud.points, assignment.owner)):
            w.writerow((i, f"{x:.6f}", f"{y:.6f}", int(r)))
    return path
