import numpy as np
import pytest
from scipy import sparse

from shadowkit.errors import ConfigError, NonFiniteSystemError, SolverError
from shadowkit.measures import MeasureParams, MeasureSet, compute_measures
from shadowkit.shadowopt import (
    EnergyWeights, assemble_system, build_weights, energy, optimize_shadows, rasterize,
    residual_norm, solve,
)
from shadowkit.superpixels import BoundarySets, from_labels


def _random_weights(rng, n_max=12, lam=None, pair_max=2.0):
    n = int(rng.integers(1, n_max + 1))
    pairs = [[i, j] for i in range(n) for j in range(i + 1, n) if rng.random() < 0.4]
    pairs = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    anchored = rng.random(n) < 0.3
    return EnergyWeights(
        w_shd=rng.uniform(0.01, 1.0, n), w_brt=rng.uniform(0.01, 1.0, n),
        pairs=pairs, w_pair=rng.uniform(0.0, pair_max, len(pairs)),
        lam=float(rng.uniform(0, 2)) if lam is None else lam,
        anchored=anchored, anchor_values=(rng.random(n) < 0.5).astype(float) * anchored,
    )


def _bare_weights(n, w_shd, w_brt, lam=0.0):
    return EnergyWeights(
        w_shd=np.full(n, float(w_shd)), w_brt=np.full(n, float(w_brt)),
        pairs=np.zeros((0, 2), dtype=np.int64), w_pair=np.zeros(0), lam=lam,
        anchored=np.zeros(n, dtype=bool), anchor_values=np.zeros(n),
    )


def _two_strip_scene():
    image = np.full((10, 20, 3), 90, dtype=np.uint8)
    labels = np.zeros((10, 20), dtype=np.int64)
    labels[:, 10:] = 1
    return from_labels(labels, image)


# ============================================================
#  WEIGHTS AND SYSTEM
# ============================================================

def test_identical_neighbours_get_unit_affinity_plus_mu():
    seg = _two_strip_scene()
    ones = np.ones(2)
    measures = MeasureSet(*([ones] * 9))
    weights = build_weights(measures, seg, BoundarySets(shd={0}, lit={1}), mu=0.1)
    assert weights.w_pair == pytest.approx([1.1])
    assert weights.lam == 0.001
    assert weights.anchored.tolist() == [True, True]
    assert weights.anchor_values.tolist() == [1.0, 0.0]


def test_system_is_half_the_energy_gradient(rng):
    h = 1e-3
    for _ in range(100):
        weights = _random_weights(rng)
        A, b = assemble_system(weights)
        s = rng.normal(size=weights.n)
        grad = np.empty(weights.n)
        for k in range(weights.n):
            step = np.zeros(weights.n)
            step[k] = h
            grad[k] = (energy(weights, s + step) - energy(weights, s - step)) / (2 * h)
        stationarity = A @ s - b - weights.eps * s
        np.testing.assert_allclose(stationarity, 0.5 * grad, rtol=0, atol=1e-8)


def test_system_is_symmetric(rng):
    A, _ = assemble_system(_random_weights(rng))
    assert (A != A.T).nnz == 0


def test_pure_bright_pull():
    weights = _bare_weights(4, 0.0, 1.0)
    A, b = assemble_system(weights)
    np.testing.assert_allclose(A.toarray(), np.eye(4) * (1 + weights.eps))
    np.testing.assert_array_equal(b, 1.0)
    np.testing.assert_allclose(solve(A, b), 1.0, atol=1e-8)


@pytest.mark.parametrize('kwargs', [{'lam': -1.0}, {'eps': 0.0}])
def test_invalid_weights(kwargs):
    values = dict(w_shd=np.ones(1), w_brt=np.ones(1), pairs=np.zeros((0, 2)), w_pair=np.zeros(0),
                  lam=0.0, anchored=np.zeros(1, dtype=bool), anchor_values=np.zeros(1))
    values.update(kwargs)
    with pytest.raises(ConfigError):
        EnergyWeights(**values)


# ============================================================
#  SOLVER
# ============================================================

def test_identity_system():
    v = np.array([0.3, -2.0, 7.5])
    np.testing.assert_allclose(solve(sparse.identity(3), v), v)


def test_hand_solved_system():
    A = np.array([[2.0, -1.0], [-1.0, 2.0]])
    np.testing.assert_allclose(solve(A, np.array([1.0, 1.0])), [1.0, 1.0])


def test_solutions_meet_the_residual_target(rng):
    for _ in range(50):
        A, b = assemble_system(_random_weights(rng))
        assert residual_norm(A, solve(A, b), b) < 1e-8


def test_conjugate_gradient_path(rng):
    weights = _random_weights(rng, n_max=60)
    A, b = assemble_system(weights)
    s_cg = solve(A, b, dense_limit=0)
    assert residual_norm(A, s_cg, b) < 1e-8
    np.testing.assert_allclose(s_cg, solve(A, b), atol=1e-6)


def test_non_finite_system_rejected():
    A = sparse.csr_matrix(np.array([[1.0, np.nan], [np.nan, 1.0]]))
    with pytest.raises(NonFiniteSystemError):
        solve(A, np.ones(2))
    with pytest.raises(NonFiniteSystemError):
        solve(sparse.identity(2), np.array([1.0, np.inf]))


def test_indefinite_system_fails_cleanly():
    with pytest.raises(SolverError):
        solve(np.array([[1.0, 2.0], [2.0, 1.0]]), np.ones(2))


def test_solution_minimizes_the_energy(rng):
    for _ in range(20):
        weights = _random_weights(rng)
        A, b = assemble_system(weights)
        s = solve(A, b)
        best = energy(weights, s)
        for _ in range(100):
            delta = rng.normal(size=weights.n)
            delta *= 0.1 / np.linalg.norm(delta)
            assert best <= energy(weights, s + delta) + 1e-12


def test_strong_anchors_pin_boundary_values(rng):
    for _ in range(20):
        weights = _random_weights(rng, n_max=6, lam=1e3, pair_max=1.1)
        A, b = assemble_system(weights)
        s = solve(A, b)
        pinned = weights.anchored
        assert np.all(np.abs(s[pinned] - weights.anchor_values[pinned]) < 0.01)


# ============================================================
#  ENERGY AND RASTERIZATION
# ============================================================

def test_energy_examples():
    assert energy(_bare_weights(3, 0.0, 0.0), np.array([0.2, 0.9, 0.4])) == 0.0
    assert energy(_bare_weights(1, 1.0, 0.0), np.array([0.5])) == pytest.approx(0.25)


def test_constant_values_have_no_smoothness_cost():
    weights = EnergyWeights(
        w_shd=np.zeros(3), w_brt=np.zeros(3), pairs=np.array([[0, 1], [1, 2]]),
        w_pair=np.array([2.0, 5.0]), lam=0.0,
        anchored=np.zeros(3, dtype=bool), anchor_values=np.zeros(3),
    )
    assert energy(weights, np.full(3, 0.7)) == 0.0
    assert energy(weights, np.array([0.0, 1.0, 1.0])) == pytest.approx(2.0)


def test_rasterize_two_superpixels():
    labels = np.zeros((4, 6), dtype=np.int64)
    labels[:, 3:] = 1
    shadow = rasterize(np.array([0.2, 0.8]), labels)
    np.testing.assert_array_equal(shadow.mask, labels == 1)
    np.testing.assert_allclose(shadow.soft[labels == 0], 0.2)
    assert shadow.threshold == 0.5


def test_rasterize_clamps_and_fills():
    labels = np.array([[0, 1], [1, 0]])
    shadow = rasterize(np.array([1.7, -0.3]), labels)
    np.testing.assert_array_equal(shadow.soft, [[1.0, 0.0], [0.0, 1.0]])
    assert rasterize(np.ones(2), labels).mask.all()
    with pytest.raises(ConfigError):
        rasterize(np.ones(2), labels, threshold=1.5)


def test_shadow_side_scores_higher():
    values = [60, 70, 180, 190]
    image = np.zeros((20, 80, 3), dtype=np.uint8)
    labels = np.zeros((20, 80), dtype=np.int64)
    for k, v in enumerate(values):
        image[:, k * 20:(k + 1) * 20] = v
        labels[:, k * 20:(k + 1) * 20] = k
    seg = from_labels(labels, image)
    bounds = BoundarySets(shd={1}, lit={2})
    measures = compute_measures(seg, bounds, MeasureParams(sigma_clr=20.0))
    shadow, weights = optimize_shadows(seg, bounds, measures)
    s = shadow.values
    assert min(s[0], s[1]) > max(s[2], s[3])
    assert shadow.soft.shape == labels.shape
    A, b = assemble_system(weights)
    assert residual_norm(A, s, b) < 1e-8
