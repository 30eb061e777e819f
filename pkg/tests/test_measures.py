import csv
import math

import numpy as np
import pytest

from shadowkit.errors import ConfigError
from shadowkit.measures import (
    CSV_COLUMNS, MeasureParams, SuperpixelGraph, build_graph, compute_measures, connectivity,
    gaussian_affinity, geodesic_all_pairs, global_measures, local_measures, write_measures_csv,
)
from shadowkit.superpixels import BoundarySets, SuperpixelSegmentation, from_labels


def _seg(mean_lab, centroids=None, adjacency=None):
    mean_lab = np.asarray(mean_lab, dtype=float)
    n = len(mean_lab)
    if centroids is None:
        centroids = np.zeros((n, 2))
    if adjacency is None:
        adjacency = [[i, i + 1] for i in range(n - 1)]
    return SuperpixelSegmentation(
        labels=np.arange(n).reshape(1, n), mean_lab=mean_lab,
        centroids=np.asarray(centroids, dtype=float), areas=np.ones(n, dtype=np.int64),
        adjacency=np.asarray(adjacency, dtype=np.int64).reshape(-1, 2),
    )


def _graph(n, edges):
    pairs = np.array([[i, j] for i, j, _ in edges], dtype=np.int64).reshape(-1, 2)
    weights = np.array([w for _, _, w in edges], dtype=float)
    return SuperpixelGraph(n=n, pairs=pairs, weights=weights)


# ============================================================
#  GRAPH
# ============================================================

def test_edge_weight_is_lab_distance():
    graph = build_graph(_seg([[50, 0, 0], [53, 4, 0]]), BoundarySets())
    assert graph.weights.tolist() == [5.0]


def test_edges_across_shd_and_lit_are_cut():
    seg = _seg([[50, 0, 0], [53, 4, 0], [60, 0, 0]])
    graph = build_graph(seg, BoundarySets(shd={0}, lit={1}))
    assert math.isinf(graph.weights[0])
    assert np.isfinite(graph.weights[1])


def test_geodesic_two_nodes():
    geo = geodesic_all_pairs(_graph(2, [(0, 1, 5.0)]))
    np.testing.assert_array_equal(geo, [[0.0, 5.0], [5.0, 0.0]])


def test_geodesic_takes_the_cheaper_path():
    geo = geodesic_all_pairs(_graph(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 3.0)]))
    assert geo[0, 2] == 2.0


def test_geodesic_unreachable_is_inf():
    geo = geodesic_all_pairs(_graph(3, [(0, 1, 1.0), (1, 2, np.inf)]))
    assert math.isinf(geo[0, 2]) and math.isinf(geo[2, 1])
    assert geo[0, 1] == 1.0


def test_zero_weight_edges_connect():
    geo = geodesic_all_pairs(_graph(3, [(0, 1, 0.0), (1, 2, 0.0)]))
    np.testing.assert_array_equal(geo, np.zeros((3, 3)))


def _floyd_warshall(n, edges):
    dist = np.full((n, n), np.inf)
    np.fill_diagonal(dist, 0.0)
    for i, j, w in edges:
        dist[i, j] = dist[j, i] = min(dist[i, j], w)
    for k in range(n):
        dist = np.minimum(dist, dist[:, k:k + 1] + dist[k:k + 1, :])
    return dist


def test_geodesic_matches_brute_force(rng):
    for _ in range(100):
        n = int(rng.integers(2, 9))
        edges = []
        for i in range(n):
            for j in range(i + 1, n):
                if rng.random() < 0.4:
                    w = float(rng.integers(0, 10)) if rng.random() < 0.9 else np.inf
                    edges.append((i, j, w))
        geo = geodesic_all_pairs(_graph(n, edges))
        expected = _floyd_warshall(n, edges)
        np.testing.assert_array_equal(geo, expected)
        np.testing.assert_array_equal(geo, geo.T)


# ============================================================
#  MEASURES
# ============================================================

def test_connectivity_scalar_case():
    geo = geodesic_all_pairs(_graph(2, [(0, 1, 5.0)]))
    conn = connectivity(geo, BoundarySets(shd={0}), sigma_clr=5.0)
    e = math.exp(-0.5)
    assert conn.area[1] == pytest.approx(1.0 + e)
    assert conn.con_shd[1] == pytest.approx(e / math.sqrt(1.0 + e))
    assert conn.con_shd[1] == pytest.approx(0.4785, abs=1e-4)
    assert conn.con_shd[0] == pytest.approx(1.0 / math.sqrt(1.0 + e))
    np.testing.assert_array_equal(conn.con_lit, [0.0, 0.0])


def test_infinite_distance_has_zero_affinity():
    assert gaussian_affinity(np.array([np.inf]), 5.0)[0] == 0.0


def test_local_measure_values():
    gamma, pr = local_measures(np.array([0.0, 1.0, 2.0]), sigma_con=1.0)
    np.testing.assert_allclose(gamma, [1.0, math.exp(-0.5), math.exp(-1.0)])
    np.testing.assert_allclose(pr, 1.0 - gamma)
    squared, _ = local_measures(np.array([2.0]), sigma_con=1.0, squared=True)
    assert squared[0] == pytest.approx(math.exp(-2.0))


def test_local_measure_decreases_with_connectivity():
    con = np.linspace(0, 5, 21)
    gamma, _ = local_measures(con, sigma_con=1.0)
    assert np.all(np.diff(gamma) < 0)
    assert np.all((gamma > 0) & (gamma <= 1))


def test_empty_lit_set_gives_unit_local_measure():
    geo = geodesic_all_pairs(_graph(3, [(0, 1, 2.0), (1, 2, 2.0)]))
    conn = connectivity(geo, BoundarySets(shd={0}), sigma_clr=5.0)
    local_lit, _ = local_measures(conn.con_lit, 1.0)
    np.testing.assert_array_equal(local_lit, 1.0)


def test_identical_superpixels_average_uniformly():
    seg = _seg([[50, 0, 0]] * 3)
    gamma = np.array([0.2, 0.5, 0.8])
    spread, pr = global_measures(gamma, seg, sigma_app=10.0, sigma_spa=30.0)
    np.testing.assert_allclose(spread, 0.5)
    np.testing.assert_allclose(pr, 0.5)


def test_global_measure_stays_within_local_range(rng):
    for _ in range(1000):
        n = int(rng.integers(2, 12))
        seg = _seg(rng.normal(50, 20, size=(n, 3)), centroids=rng.uniform(0, 100, size=(n, 2)))
        gamma = rng.random(n)
        spread, _ = global_measures(gamma, seg, sigma_app=10.0, sigma_spa=25.0)
        assert np.all(spread >= gamma.min()) and np.all(spread <= gamma.max())


def test_distant_superpixels_barely_mix():
    seg = _seg([[20, 0, 0], [90, 0, 0]], centroids=[[0, 0], [0, 100]])
    spread, _ = global_measures(np.array([0.1, 0.9]), seg, sigma_app=10.0, sigma_spa=10.0)
    np.testing.assert_allclose(spread, [0.1, 0.9], atol=1e-6)


def test_params_reject_non_positive_sigmas():
    with pytest.raises(ConfigError):
        MeasureParams(sigma_clr=0.0)
    with pytest.raises(ConfigError):
        connectivity(np.zeros((1, 1)), BoundarySets(), sigma_clr=-1.0)
    assert MeasureParams().spatial_sigma((30, 40)) == pytest.approx(12.5)


def _strip_scene():
    values = [60, 70, 180, 190]
    image = np.zeros((20, 80, 3), dtype=np.uint8)
    labels = np.zeros((20, 80), dtype=np.int64)
    for k, v in enumerate(values):
        image[:, k * 20:(k + 1) * 20] = v
        labels[:, k * 20:(k + 1) * 20] = k
    return from_labels(labels, image)


def test_measures_separate_the_two_sides(tmp_path):
    seg = _strip_scene()
    bounds = BoundarySets(shd={1}, lit={2})
    measures = compute_measures(seg, bounds, MeasureParams(sigma_clr=20.0))
    # shadow-side superpixels are well connected to shd
    assert measures.con_shd[0] > measures.con_shd[3]
    assert measures.local_shd[0] < measures.local_shd[3]
    assert measures.local_lit[3] < measures.local_lit[0]
    for name in ('local_shd', 'local_lit', 'global_shd', 'global_lit'):
        values = getattr(measures, name)
        assert np.all((values > 0) & (values <= 1))

    path = tmp_path / 'superpixels.csv'
    write_measures_csv(measures, str(path), shadow_values=np.array([0.9, 0.8, 0.1, 0.0]))
    with open(path, newline='') as f:
        rows = list(csv.reader(f))
    assert rows[0] == CSV_COLUMNS + ['s']
    assert len(rows) == 5
    assert float(rows[1][-1]) == 0.9


def _random_connected_seg(rng, n):
    """Random colours and positions on a random spanning tree plus extra links."""
    adjacency = {(int(rng.integers(0, k)), k) for k in range(1, n)}
    for _ in range(n):
        i, j = sorted(rng.choice(n, size=2, replace=False))
        adjacency.add((int(i), int(j)))
    return _seg(rng.normal(50, 15, size=(n, 3)), centroids=rng.uniform(0, 100, size=(n, 2)),
                adjacency=sorted(adjacency))


def test_growing_shd_never_weakens_its_measures(rng):
    params = MeasureParams(sigma_clr=10.0, sigma_con=1.0, sigma_app=10.0, sigma_spa=30.0)
    tol = 1e-12
    for _ in range(1000):
        n = int(rng.integers(3, 12))
        seg = _random_connected_seg(rng, n)
        order = rng.permutation(n)
        small = BoundarySets(shd={int(order[0])})
        large = BoundarySets(shd={int(order[0]), int(order[1])})
        before = compute_measures(seg, small, params)
        after = compute_measures(seg, large, params)
        assert np.all(after.len_shd >= before.len_shd - tol)
        assert np.all(after.con_shd >= before.con_shd - tol)
        assert np.all(after.local_shd <= before.local_shd + tol)
        assert np.all(after.pr_loc_shd >= before.pr_loc_shd - tol)
        assert np.all(after.global_shd <= before.global_shd + tol)
