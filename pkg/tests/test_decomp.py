import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfdmux.decomp import (
    REFERENCE_WEIGHTS, R_INNER, R_OUTER, CellCloud, concentric_assign, counts_to_weights,
    equal_assign, export_assignment, generate_cloud, zone_sizes,
)
from cfdmux.errors import InputError


def test_cloud_deterministic():
    a, b = generate_cloud(1000, 7), generate_cloud(1000, 7)
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, generate_cloud(1000, 8).points)


def test_cloud_shape():
    c = generate_cloud(88, 1)
    assert c.points.shape == (88, 2)
    assert np.all(np.isfinite(c.points))


def test_cloud_density_law():
    # log-uniform radius: P(r <= (ri+ro)/2) = ln(((ri+ro)/2)/ri) / ln(ro/ri) ~ 0.82
    c = generate_cloud(20000, 3)
    half = (R_INNER + R_OUTER) / 2
    frac = np.mean(c.distances() <= half)
    assert frac >= 0.5
    assert frac == pytest.approx(np.log(half / R_INNER) / np.log(R_OUTER / R_INNER), abs=0.02)


def test_cloud_too_small():
    with pytest.raises(InputError):
        generate_cloud(10, 0)


def test_reference_vector_exact_counts():
    a = concentric_assign(generate_cloud(88, 1), REFERENCE_WEIGHTS)
    assert a.counts().tolist() == list(REFERENCE_WEIGHTS)


def test_reference_zone_fractions():
    sizes = {w: size for w, _, size in zone_sizes(88, REFERENCE_WEIGHTS)}
    assert sizes == {15: 60, 5: 20, 1: 8}
    assert round(100 * 60 / 88) == 68
    assert round(100 * 20 / 88) == 23
    assert round(100 * 8 / 88) == 9


def test_uniform_weights_balanced():
    a = concentric_assign(generate_cloud(1000, 2), [1] * 16)
    assert np.all(np.abs(a.counts() - 1000 / 16) <= 1)


def test_concentric_empty_zone():
    with pytest.raises(InputError):
        concentric_assign(generate_cloud(20, 0, min_cells=1), [1, 1, 1, 1, 1000])


def _zone_distance_bounds(cloud, a, weights):
    d = cloud.distances()
    bounds = {}
    for w in set(weights):
        ranks = [i for i, x in enumerate(weights) if x == w]
        mask = np.isin(a.owner, ranks)
        bounds[w] = (d[mask].min(), d[mask].max())
    return bounds


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(88, 3000))
def test_concentric_invariants(seed, n):
    cloud = generate_cloud(n, seed)
    a = concentric_assign(cloud, REFERENCE_WEIGHTS)
    # partition
    assert len(a.owner) == n and a.owner.min() >= 0 and a.owner.max() == 15
    assert a.counts().sum() == n
    # monotone rings
    b = _zone_distance_bounds(cloud, a, REFERENCE_WEIGHTS)
    assert b[15][1] <= b[5][0]
    assert b[5][1] <= b[1][0]
    # proportionality
    w = np.array(REFERENCE_WEIGHTS)
    assert np.all(np.abs(a.counts() - n * w / w.sum()) <= 3)


def test_tie_breaking_stable():
    pts = np.array([[1.5, 0.0]] * 4 + [[0.5, 1.0]] * 4)
    cloud = CellCloud(pts)
    a = concentric_assign(cloud, [1, 1, 3])
    # 8 cells: weight-3 rank takes the first 5 by (distance, index)
    assert a.owner.tolist() == [2, 2, 2, 2, 2, 0, 0, 1]


def test_equal_exact_division():
    a = equal_assign(generate_cloud(1600, 4), 16)
    assert a.counts().tolist() == [100] * 16


def test_equal_pigeonhole():
    c = equal_assign(generate_cloud(88, 4), 16).counts()
    assert c.max() - c.min() <= 1


@given(st.integers(16, 500), st.integers(1, 16), st.integers(0, 100))
@settings(deadline=None, max_examples=30)
def test_equal_is_partition(n, ranks, seed):
    a = equal_assign(generate_cloud(n, seed), ranks)
    assert sorted(np.bincount(a.owner, minlength=ranks).tolist()) == sorted(a.counts().tolist())
    assert a.counts().sum() == n
    assert np.all(a.counts() >= 1)


def test_equal_sectors_are_angle_contiguous():
    cloud = generate_cloud(400, 9)
    a = equal_assign(cloud, 4)
    ang = cloud.angles()
    ranges = sorted((ang[a.owner == r].min(), ang[a.owner == r].max()) for r in range(4))
    for (lo1, hi1), (lo2, hi2) in zip(ranges, ranges[1:]):
        assert hi1 <= lo2


def test_counts_to_weights():
    a = concentric_assign(generate_cloud(88, 1), REFERENCE_WEIGHTS)
    assert np.allclose(counts_to_weights(a), np.array(REFERENCE_WEIGHTS) / 88)
    e = equal_assign(generate_cloud(1600, 1), 16)
    assert np.allclose(counts_to_weights(e), 1 / 16)
    single = equal_assign(generate_cloud(20, 1), 1)
    assert counts_to_weights(single).tolist() == [1.0]


def test_export(tmp_path):
    cloud = generate_cloud(88, 1)
    p = export_assignment(cloud, concentric_assign(cloud, REFERENCE_WEIGHTS), tmp_path / "a.csv")
    lines = p.read_text().splitlines()
    assert lines[0] == "cell,x,y,rank"
    assert len(lines) == 89
