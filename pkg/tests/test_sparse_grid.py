"""One-dimensional knots, Smolyak index sets, sparse grids and collocation moments."""

import math

import numpy as np
import pytest

from conftest import ToyModel
from errors import NegativeVarianceError, QuadratureError, ValidationError
from field import PosteriorSummary
from forward_mc import mc_estimate
from qoi import QoIModel
from solver import SolverConfig
from sparse_grid import (
    KnotRule,
    MultiIndexSet,
    build_sparse_grid,
    collocation_point_counts,
    combination_coefficients,
    count_points,
    gauss_hermite_knots,
    grid_for_posterior,
    interpolate,
    leja_quadrature_weights,
    level_to_knots,
    moments_from_grid,
    sc_convergence,
    sc_moments,
    smolyak_index_set,
    standard_leja_sequence,
    weighted_leja_knots,
)

LEJA_TWO_STEP = KnotRule("weighted-leja", "two-step")
LEJA_LINEAR = KnotRule("weighted-leja", "linear")
GH_LINEAR = KnotRule("gauss-hermite", "linear")


def normal_moment(k: int) -> float:
    """E[Y^k] for Y ~ N(0, 1)."""
    return 0.0 if k % 2 else float(math.prod(range(k - 1, 0, -2)))


# ==============================================================================
# ONE-DIMENSIONAL RULES
# ==============================================================================

def test_level_to_knots():
    assert [level_to_knots(i, "linear") for i in range(5)] == [0, 1, 2, 3, 4]
    assert [level_to_knots(i, "two-step") for i in range(5)] == [0, 1, 3, 5, 7]
    with pytest.raises(ValidationError):
        level_to_knots(-1)


def test_gauss_hermite_small_rules():
    x, w = gauss_hermite_knots(1, mu=0.3, sigma=2.0)
    np.testing.assert_allclose(x, [0.3])
    np.testing.assert_allclose(w, [1.0])
    x, w = gauss_hermite_knots(2)
    np.testing.assert_allclose(np.sort(x), [-1.0, 1.0], atol=1e-14)
    np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-14)


def test_gauss_hermite_exactness():
    x, w = gauss_hermite_knots(5)
    for k in range(10):
        assert np.dot(w, x**k) == pytest.approx(normal_moment(k), abs=1e-10)


def test_gauss_hermite_rejects_bad_scale():
    with pytest.raises(ValidationError):
        gauss_hermite_knots(3, sigma=0.0)


def test_leja_sequence_is_nested():
    short = standard_leja_sequence(5)
    long = standard_leja_sequence(12)
    np.testing.assert_array_equal(long[:5], short)
    assert long[0] == 0.0
    assert abs(abs(long[1]) - math.sqrt(2.0)) < 1e-6
    assert np.unique(long).size == 12
    np.testing.assert_allclose(weighted_leja_knots(3, mu=1.0, sigma=0.5), 1.0 + 0.5 * long[:3])


@pytest.mark.parametrize("n", [1, 2, 3, 5, 7, 10, 15])
def test_leja_weights_integrate_polynomials(n):
    y = standard_leja_sequence(n)
    w = leja_quadrature_weights(y)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    for k in range(n):
        assert np.dot(w, y**k) == pytest.approx(normal_moment(k), rel=1e-8, abs=1e-8)


def test_leja_weights_three_point_example():
    np.testing.assert_allclose(leja_quadrature_weights([0.0, 1.0, -1.0]), [0.0, 0.5, 0.5], atol=1e-14)


def test_leja_weights_rejections():
    with pytest.raises(QuadratureError):
        leja_quadrature_weights(np.linspace(-3, 3, 41))
    with pytest.raises(ValidationError, match="distinct"):
        leja_quadrature_weights([0.0, 1.0, 1.0])


# ==============================================================================
# INDEX SETS
# ==============================================================================

def test_smolyak_index_set_examples():
    assert list(smolyak_index_set(2, 0)) == [(1, 1)]
    assert set(smolyak_index_set(2, 1)) == {(1, 1), (2, 1), (1, 2)}
    assert len(smolyak_index_set(7, 3)) == math.comb(10, 7) == 120


def test_downward_closure_is_enforced():
    with pytest.raises(ValidationError, match="downward-closed"):
        MultiIndexSet(((1, 1), (1, 3)))
    with pytest.raises(ValidationError):
        MultiIndexSet(((0, 1),))


def test_combination_coefficients_examples():
    assert combination_coefficients(smolyak_index_set(2, 0)) == {(1, 1): 1}
    gammas = combination_coefficients(smolyak_index_set(2, 1))
    assert gammas == {(1, 1): -1, (1, 2): 1, (2, 1): 1}


def random_downward_closed(rng, N, max_size, max_level=6):
    indices = {(1,) * N}
    target = int(rng.integers(1, max_size + 1))
    while len(indices) < target:
        candidates = set()
        for i in indices:
            for n in range(N):
                if i[n] < max_level:
                    candidates.add(i[:n] + (i[n] + 1,) + i[n + 1:])
        admissible = sorted(
            c for c in candidates - indices
            if all(c[:n] + (c[n] - 1,) + c[n + 1:] in indices for n in range(N) if c[n] > 1)
        )
        if not admissible:
            break
        indices.add(admissible[int(rng.integers(len(admissible)))])
    return MultiIndexSet(tuple(indices))


def test_random_sets_coefficients_sum_to_one():
    rng = np.random.default_rng(0)
    for _ in range(200):
        I = random_downward_closed(rng, int(rng.integers(1, 5)), 30)
        assert sum(combination_coefficients(I).values()) == 1


def test_interpolation_reproduces_polynomials_in_index_space():
    rng = np.random.default_rng(1)
    for _ in range(200):
        N = int(rng.integers(2, 5))
        I = random_downward_closed(rng, N, 30)
        exponents = np.array([[v - 1 for v in i] for i in I])
        coefficients = rng.standard_normal(len(I))

        def u(points):
            points = np.atleast_2d(points)
            return (coefficients * np.prod(points[:, None, :] ** exponents[None], axis=-1)).sum(axis=1)

        grid = build_sparse_grid(N, LEJA_LINEAR, I)
        values = u(grid.points)
        for p in rng.standard_normal((10, N)):
            scale = np.abs(coefficients * np.prod(p ** exponents, axis=-1)).sum()
            assert interpolate(grid, values, p) == pytest.approx(u(p)[0], rel=1e-8, abs=1e-9 * max(1.0, scale))


# ==============================================================================
# GRIDS
# ==============================================================================

def test_single_point_grid():
    grid = build_sparse_grid(1, LEJA_TWO_STEP, smolyak_index_set(1, 0), mu=[0.4], sigma=[0.1])
    np.testing.assert_allclose(grid.points, [[0.4]])
    np.testing.assert_allclose(grid.weights, [1.0])


def test_level_one_grid_in_two_dimensions():
    grid = build_sparse_grid(2, LEJA_LINEAR, smolyak_index_set(2, 1))
    assert grid.num_points == 3
    assert grid.weights.sum() == pytest.approx(1.0)
    assert (np.count_nonzero(grid.points, axis=1) <= 1).all()


def test_gauss_hermite_grid_has_no_duplicates():
    grid = build_sparse_grid(3, KnotRule("gauss-hermite", "two-step"), smolyak_index_set(3, 2))
    diffs = np.abs(grid.points[:, None, :] - grid.points[None, :, :]).max(axis=-1)
    np.fill_diagonal(diffs, np.inf)
    assert diffs.min() > 1e-12
    assert grid.weights.sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("w, expected", [(3, 575), (4, 2241), (5, 7183)])
def test_seven_dimensional_leja_point_counts(w, expected):
    assert count_points(7, LEJA_TWO_STEP, smolyak_index_set(7, w)) == expected


def test_counted_points_match_built_grid():
    for rule in (LEJA_TWO_STEP, LEJA_LINEAR):
        I = smolyak_index_set(4, 3)
        assert count_points(4, rule, I) == build_sparse_grid(4, rule, I).num_points
    assert build_sparse_grid(7, LEJA_TWO_STEP, smolyak_index_set(7, 3)).num_points == 575


def test_collocation_point_counts_table():
    table = collocation_point_counts(7, [3, 4], [LEJA_TWO_STEP, GH_LINEAR])
    assert list(table.columns) == ["family", "level_to_knots", "level", "points"]
    assert len(table) == 4
    assert table.iloc[0]["points"] == 575


def test_grid_for_posterior_rejects_zero_variance():
    post = PosteriorSummary(mu=np.array([0.1, 0.2]), var=np.array([0.01, 0.0]))
    with pytest.raises(ValidationError, match="sigma > 0"):
        grid_for_posterior(post, 2, LEJA_TWO_STEP)


def test_grid_frame_layout():
    grid = build_sparse_grid(2, LEJA_TWO_STEP, smolyak_index_set(2, 2))
    frame = grid.to_frame()
    assert list(frame.columns) == ["point_index", "p_1", "p_2", "weight"]
    assert len(frame) == grid.num_points


# ==============================================================================
# COLLOCATION MOMENTS
# ==============================================================================

def test_square_of_standard_normal():
    post = PosteriorSummary(mu=np.zeros(2), var=np.ones(2))
    moments = sc_moments(ToyModel(2, kind="square"), grid_for_posterior(post, 3, LEJA_TWO_STEP))
    assert moments.global_mean[0] == pytest.approx(1.0, abs=1e-8)
    assert moments.global_var[0] == pytest.approx(2.0, abs=1e-8)
    assert moments.global_mean[1] == pytest.approx(2.0, abs=1e-8)
    assert moments.global_var[1] == pytest.approx(8.0, abs=1e-8)


def test_constant_model_has_zero_variance():
    post = PosteriorSummary(mu=np.array([0.1, 0.2, 0.3]), var=np.array([0.01, 0.02, 0.03]))
    moments = sc_moments(ToyModel(3, kind="constant"), grid_for_posterior(post, 3, LEJA_TWO_STEP))
    np.testing.assert_allclose(moments.mean[:, 1:], [[0.7] * 3, [1.4] * 3], rtol=1e-12)
    assert (moments.variance >= 0).all()
    assert moments.variance.max() <= 1e-10


def test_negative_variance_beyond_tolerance_raises():
    grid = build_sparse_grid(2, GH_LINEAR, smolyak_index_set(2, 2))
    negative = grid.weights < 0
    assert negative.any()
    values = negative.astype(float)[:, None, None] * np.ones((1, 1, 2))
    with pytest.raises(NegativeVarianceError):
        moments_from_grid(grid, values, None, np.ones(1))


def test_interpolant_at_grid_points():
    grid = build_sparse_grid(2, LEJA_TWO_STEP, smolyak_index_set(2, 2), mu=[0.1, 0.2], sigma=[0.3, 0.4])
    values = np.sin(grid.points[:, 0]) + grid.points[:, 1] ** 3
    for k in range(grid.num_points):
        assert interpolate(grid, values, grid.points[k]) == pytest.approx(values[k], abs=1e-10)
    assert interpolate(grid, np.ones(grid.num_points), [0.5, -0.3]) == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ValidationError):
        interpolate(grid, values, [np.nan, 0.0])


def test_sc_convergence_table():
    post = PosteriorSummary(mu=np.array([0.1, 0.2]), var=np.array([0.01, 0.04]))
    result = sc_convergence(ToyModel(2), post, [1, 2], 3, LEJA_TWO_STEP)
    table = result.table
    assert len(table) == 2 * 2
    assert {"level", "points", "time", "seconds", "err_weighted_mean", "err_var_region_2"} <= set(table.columns)
    np.testing.assert_allclose(table["err_weighted_mean"], 0.0, atol=1e-12)
    # level 1 already has 3 knots per dimension, exact for the quadratic variance integrand
    assert table.loc[table["level"] == 1, "points"].unique().tolist() == [5]
    np.testing.assert_allclose(table["err_global_var"], 0.0, atol=1e-12)
    with pytest.raises(ValidationError):
        sc_convergence(ToyModel(2), post, [3], 3, LEJA_TWO_STEP)


# ==============================================================================
# FORWARD MODEL ACCEPTANCE
# ==============================================================================

@pytest.mark.slow
def test_sparse_grid_beats_monte_carlo_at_equal_cost(synthetic_graph, synthetic_c0, lobe_posterior):
    cfg = SolverConfig(dt=0.1, T=10.0, sample_times=(5.0, 10.0))
    model = QoIModel(synthetic_graph, synthetic_c0, cfg)
    reference = sc_moments(model, grid_for_posterior(lobe_posterior, 4, LEJA_TWO_STEP))
    grid = grid_for_posterior(lobe_posterior, 2, LEJA_TWO_STEP)
    sc = sc_moments(model, grid)
    mc = mc_estimate(model, lobe_posterior, grid.num_points, base_seed=2023)
    sc_err = np.abs(sc.weighted_mean - reference.weighted_mean).max()
    mc_err = np.abs(mc.weighted_mean - reference.weighted_mean).max()
    assert sc_err < mc_err / 10


@pytest.mark.slow
def test_sc_moments_converge_with_level(synthetic_graph, synthetic_c0, lobe_posterior):
    cfg = SolverConfig(dt=0.1, T=5.0, sample_times=(5.0,))
    model = QoIModel(synthetic_graph, synthetic_c0, cfg)
    result = sc_convergence(model, lobe_posterior, [1, 2, 3, 4], 6, LEJA_TWO_STEP)
    at_five = result.table[result.table["time"] == 5.0].sort_values("level")
    assert at_five["level"].tolist() == [1, 2, 3, 4]
    for column in ("err_weighted_mean", "err_weighted_var"):
        errors = at_five[column].to_numpy()
        assert (np.diff(errors) < 0).all(), f"{column} not decreasing: {errors}"


@pytest.mark.slow
def test_regional_variance_rises_then_falls(synthetic_graph, synthetic_c0, lobe_posterior):
    cfg = SolverConfig.every(0.25, 60.0, 2.5, include_zero=False)
    model = QoIModel(synthetic_graph, synthetic_c0, cfg)
    moments = sc_moments(model, grid_for_posterior(lobe_posterior.with_variance_scale(0.25), 2, LEJA_TWO_STEP))
    found = False
    for j in range(moments.num_regions):
        var = moments.regional_var[:, j]
        peak = int(np.argmax(var))
        if 0 < peak < var.size - 1 and var[-1] < 0.5 * var[peak] and moments.regional_mean[-1, j] > 0.8:
            found = True
    assert found
