"""
Sparse-Grid Stochastic Collocation
==================================

Smolyak combination technique for Gaussian parameters p_n ~ N(mu_n, sigma_n^2):

    S_I[u] = sum_{i in I} gamma_i  U^{i_1} x ... x U^{i_N} [u]
    gamma_i = sum_{j in {0,1}^N, i + j in I} (-1)^|j|

U^{i_n} interpolates on m(i_n) one-dimensional knots. Knot families:
  gauss-hermite    Gaussian quadrature nodes of N(mu, sigma^2) (not nested)
  weighted-leja    nested sequence y_1 = 0, y_{k+1} = argmax exp(-y^2/4) prod |y - y_j|

Level-to-knot maps: linear m(i) = i, two-step m(i) = 2i - 1 (m(0) = 0).
The index set is the isotropic Smolyak set I(w) = {i : sum_n (i_n - 1) <= w}.

Nested weighted Leja with the two-step map gives 575, 2 241, 7 183, 19 825,
48 639, 108 545 and 224 143 points in 7 dimensions for w = 3..9.

Usage:
    rule = KnotRule("weighted-leja", "two-step")
    grid = build_sparse_grid(7, rule, smolyak_index_set(7, 4), mu=post.mu, sigma=post.std)
    moments = sc_moments(model, grid)
"""

from __future__ import annotations

import itertools
import math
import threading
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Literal, Sequence

import numpy as np
import pandas as pd
from scipy import linalg, optimize, sparse, special
from scipy.interpolate import BarycentricInterpolator
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from config_paths import CONSOLE
from errors import NegativeVarianceError, QuadratureError, ValidationError
from field import PosteriorSummary
from forward_mc import MomentSeries, model_layout
from qoi import evaluate_many

Family = Literal["gauss-hermite", "weighted-leja"]
LevelToKnots = Literal["linear", "two-step"]

# ==============================================================================
# CONSTANTS
# ==============================================================================

LEJA_BOUND = 20.0
LEJA_CANDIDATES = 100_001
MAX_MOMENT_POINTS = 40
DEDUP_TOL = 1e-12
VARIANCE_CLAMP = 1e-8

# ==============================================================================
# ONE-DIMENSIONAL KNOTS
# ==============================================================================

def level_to_knots(level: int, kind: LevelToKnots = "linear") -> int:
    """m(0) = 0, m(1) = 1; strictly increasing afterwards."""
    if level < 0:
        raise ValidationError(f"level must be non-negative, got {level}")
    if level == 0:
        return 0
    if kind == "linear":
        return level
    if kind == "two-step":
        return 2 * level - 1
    raise ValidationError(f"unknown level-to-knot map {kind!r}")


def _check_scale(mu: float, sigma: float) -> None:
    if not (np.isfinite(mu) and np.isfinite(sigma)):
        raise ValidationError(f"non-finite knot location/scale ({mu}, {sigma})")
    if not sigma > 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")


@lru_cache(maxsize=None)
def _standard_hermite(n: int) -> tuple[np.ndarray, np.ndarray]:
    try:
        x, w = special.roots_hermitenorm(n)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise QuadratureError(f"Gauss-Hermite rule with {n} points failed: {exc}") from exc
    w = w / math.sqrt(2.0 * math.pi)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def gauss_hermite_knots(n: int, mu: float = 0.0, sigma: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gaussian quadrature for N(mu, sigma^2); weights sum to 1."""
    if n < 1:
        raise ValidationError(f"n must be at least 1, got {n}")
    _check_scale(mu, sigma)
    x, w = _standard_hermite(int(n))
    return mu + sigma * x, w.copy()


_LEJA_SEQUENCE: list[float] = [0.0]
_LEJA_LOCK = threading.Lock()
_LEJA_GRID = np.linspace(-LEJA_BOUND, LEJA_BOUND, LEJA_CANDIDATES)


def _leja_objective(y: np.ndarray | float, known: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore"):
        return -0.25 * y**2 + np.log(np.abs(y[..., None] - known)).sum(axis=-1)


def _extend_leja(n: int) -> None:
    while len(_LEJA_SEQUENCE) < n:
        known = np.array(_LEJA_SEQUENCE)
        values = _leja_objective(_LEJA_GRID, known)
        k = int(np.argmax(values))
        lo = _LEJA_GRID[max(k - 1, 0)]
        hi = _LEJA_GRID[min(k + 1, LEJA_CANDIDATES - 1)]
        res = optimize.minimize_scalar(
            lambda y: -float(_leja_objective(y, known)),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-14},
        )
        best = float(res.x) if -res.fun >= values[k] else float(_LEJA_GRID[k])
        _LEJA_SEQUENCE.append(best)


def standard_leja_sequence(n: int) -> np.ndarray:
    """First n weighted Leja points for the standard normal."""
    if n < 1:
        raise ValidationError(f"n must be at least 1, got {n}")
    with _LEJA_LOCK:
        _extend_leja(n)
        return np.array(_LEJA_SEQUENCE[:n])


def weighted_leja_knots(n: int, mu: float = 0.0, sigma: float = 1.0) -> np.ndarray:
    _check_scale(mu, sigma)
    return mu + sigma * standard_leja_sequence(n)


def leja_quadrature_weights(points: Sequence[float] | np.ndarray, mu: float = 0.0, sigma: float = 1.0) -> np.ndarray:
    """
    Interpolatory weights w with sum_j w_j f(y_j) = E[f] for every polynomial
    f of degree < n under N(mu, sigma^2).

    Solved in the orthonormal Hermite basis: sum_j w_j He_k(y_j) / sqrt(k!) = [k == 0].
    """
    _check_scale(mu, sigma)
    y = (np.asarray(points, dtype=float).ravel() - mu) / sigma
    n = y.size
    if n == 0:
        raise ValidationError("no quadrature points")
    if n > MAX_MOMENT_POINTS:
        raise QuadratureError(
            f"moment system with {n} points is ill-conditioned (limit {MAX_MOMENT_POINTS})"
        )
    if np.unique(y).size != n:
        raise ValidationError("quadrature points must be distinct")
    basis = np.array(
        [special.eval_hermitenorm(k, y) / math.sqrt(math.factorial(k)) for k in range(n)]
    )
    rhs = np.zeros(n)
    rhs[0] = 1.0
    try:
        w = linalg.solve(basis, rhs)
    except linalg.LinAlgError as exc:
        raise QuadratureError(f"singular moment system for {n} points: {exc}") from exc
    if not np.all(np.isfinite(w)) or np.abs(basis @ w - rhs).max() > 1e-8:
        raise QuadratureError(f"moment system for {n} points not solved to tolerance")
    return w


@lru_cache(maxsize=None)
def _standard_leja_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    y = standard_leja_sequence(n)
    return y, leja_quadrature_weights(y)


@dataclass(frozen=True)
class KnotRule:
    family: Family = "weighted-leja"
    level_to_knots: LevelToKnots = "two-step"

    def __post_init__(self) -> None:
        if self.family not in ("gauss-hermite", "weighted-leja"):
            raise ValidationError(f"unknown knot family {self.family!r}")
        if self.level_to_knots not in ("linear", "two-step"):
            raise ValidationError(f"unknown level-to-knot map {self.level_to_knots!r}")

    @property
    def nested(self) -> bool:
        return self.family == "weighted-leja"

    @property
    def label(self) -> str:
        return f"{self.family}/{self.level_to_knots}"

    def m(self, level: int) -> int:
        return level_to_knots(level, self.level_to_knots)

    def standard_knots(self, level: int) -> tuple[np.ndarray, np.ndarray]:
        """Knots and weights for N(0, 1) at a level >= 1."""
        n = self.m(level)
        if n < 1:
            raise ValidationError(f"level must be at least 1, got {level}")
        if self.family == "gauss-hermite":
            return _standard_hermite(n)
        return _standard_leja_rule(n)

    def knots(self, level: int, mu: float = 0.0, sigma: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
        _check_scale(mu, sigma)
        y, w = self.standard_knots(level)
        return mu + sigma * y, w.copy()

# ==============================================================================
# MULTI-INDEX SETS
# ==============================================================================

def _backward_neighbors(index: tuple[int, ...]) -> Iterable[tuple[int, ...]]:
    for n, value in enumerate(index):
        if value > 1:
            yield index[:n] + (value - 1,) + index[n + 1:]


@dataclass(frozen=True)
class MultiIndexSet:
    """Downward-closed set of multi-indices with entries >= 1 (sorted)."""

    indices: tuple[tuple[int, ...], ...]
    _lookup: frozenset = field(default=frozenset(), init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        indices = tuple(sorted({tuple(int(v) for v in i) for i in self.indices}))
        if not indices:
            raise ValidationError("empty multi-index set")
        N = len(indices[0])
        if N == 0 or any(len(i) != N for i in indices):
            raise ValidationError("multi-indices must share one positive dimension")
        if any(v < 1 for i in indices for v in i):
            raise ValidationError("multi-index entries must be >= 1")
        lookup = frozenset(indices)
        for i in indices:
            for back in _backward_neighbors(i):
                if back not in lookup:
                    raise ValidationError(f"not downward-closed: {i} present, {back} missing")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "_lookup", lookup)

    @property
    def dimension(self) -> int:
        return len(self.indices[0])

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, index) -> bool:
        return tuple(index) in self._lookup


def _bounded_indices(N: int, budget: int) -> Iterable[tuple[int, ...]]:
    if N == 0:
        yield ()
        return
    for k in range(budget + 1):
        for rest in _bounded_indices(N - 1, budget - k):
            yield (k + 1,) + rest


def smolyak_index_set(N: int, w: int) -> MultiIndexSet:
    """I(w) = {i in N+^N : sum_n (i_n - 1) <= w}."""
    if N < 1 or w < 0:
        raise ValidationError(f"need N >= 1 and w >= 0, got N={N}, w={w}")
    return MultiIndexSet(tuple(_bounded_indices(N, w)))


def combination_coefficients(I: MultiIndexSet) -> dict[tuple[int, ...], int]:
    """gamma_i for every i in I; zero entries may be dropped."""
    if not isinstance(I, MultiIndexSet):
        I = MultiIndexSet(tuple(I))
    shifts = list(itertools.product((0, 1), repeat=I.dimension))
    coefficients = {}
    for i in I:
        gamma = 0
        for j in shifts:
            if tuple(a + b for a, b in zip(i, j)) in I:
                gamma += -1 if sum(j) % 2 else 1
        coefficients[i] = gamma
    return coefficients

# ==============================================================================
# SPARSE GRID
# ==============================================================================

@dataclass(frozen=True)
class TensorTerm:
    index: tuple[int, ...]
    coefficient: int
    shape: tuple[int, ...]       # (m(i_1), ..., m(i_N))
    point_ids: np.ndarray        # global point id per tensor point, C order


@dataclass(frozen=True)
class SparseGrid:
    points: np.ndarray                   # (P, N)
    weights: np.ndarray                  # (P,)
    terms: tuple[TensorTerm, ...]
    rule: KnotRule
    index_set: MultiIndexSet
    mu: np.ndarray
    sigma: np.ndarray

    @property
    def num_points(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    def knots_1d(self, n: int, level: int) -> tuple[np.ndarray, np.ndarray]:
        return self.rule.knots(level, float(self.mu[n]), float(self.sigma[n]))

    def to_frame(self) -> pd.DataFrame:
        """CSV layout: point_index,p_1..p_N,weight."""
        df = pd.DataFrame(self.points, columns=[f"p_{n}" for n in range(1, self.dimension + 1)])
        df.insert(0, "point_index", np.arange(self.num_points))
        df["weight"] = self.weights
        return df


def _scales(N: int, mu, sigma) -> tuple[np.ndarray, np.ndarray]:
    mu = np.zeros(N) if mu is None else np.asarray(mu, dtype=float).ravel()
    sigma = np.ones(N) if sigma is None else np.asarray(sigma, dtype=float).ravel()
    if mu.size != N or sigma.size != N:
        raise ValidationError(f"mu/sigma must have length {N}, got {mu.size}/{sigma.size}")
    degenerate = np.flatnonzero(~(sigma > 0))
    if degenerate.size:
        raise ValidationError(
            f"sparse grids need sigma > 0; degenerate dimensions {(degenerate + 1).tolist()}"
        )
    return mu, sigma


def _tensor_positions(shape: tuple[int, ...]) -> np.ndarray:
    """All knot positions of a tensor grid, (prod shape, N), C order."""
    return np.indices(shape).reshape(len(shape), -1).T


def _dedup_by_tolerance(coords: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    tree = cKDTree(coords)
    pairs = tree.query_pairs(r=tol, p=np.inf, output_type="ndarray")
    n = coords.shape[0]
    adjacency = sparse.coo_matrix(
        (np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)
    ) if len(pairs) else sparse.coo_matrix((n, n))
    _, labels = connected_components(adjacency, directed=False)
    # First occurrence of each cluster represents it; ids follow first appearance
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return coords[np.sort(first)], rank[inverse]


def build_sparse_grid(
    N: int,
    rule: KnotRule,
    I: MultiIndexSet,
    mu: Sequence[float] | np.ndarray | None = None,
    sigma: Sequence[float] | np.ndarray | None = None,
) -> SparseGrid:
    """
    Union of the tensor grids with nonzero combination coefficient and the
    accumulated quadrature weight per unique point.
    """
    if I.dimension != N:
        raise ValidationError(f"index set has dimension {I.dimension}, expected {N}")
    mu, sigma = _scales(N, mu, sigma)
    gammas = {i: g for i, g in combination_coefficients(I).items() if g != 0}

    shapes, positions, weights = [], [], []
    for i, gamma in gammas.items():
        shape = tuple(rule.m(level) for level in i)
        pos = _tensor_positions(shape)
        w = np.full(pos.shape[0], float(gamma))
        for n, level in enumerate(i):
            w *= rule.standard_knots(level)[1][pos[:, n]]
        shapes.append((i, gamma, shape, pos))
        weights.append(w)

    stacked_weights = np.concatenate(weights)
    if rule.nested:
        # Leja levels are prefixes of one sequence: the knot position is an exact key
        keys = np.concatenate([pos for *_, pos in shapes])
        unique_keys, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        y = standard_leja_sequence(int(unique_keys.max()) + 1)
        points = mu + sigma * y[unique_keys]
    else:
        blocks = []
        for i, _, _, pos in shapes:
            block = np.empty(pos.shape, dtype=float)
            for n, level in enumerate(i):
                block[:, n] = rule.standard_knots(level)[0][pos[:, n]]
            blocks.append(block)
        coords, inverse = _dedup_by_tolerance(np.concatenate(blocks), DEDUP_TOL)
        points = mu + sigma * coords

    point_weights = np.zeros(points.shape[0])
    np.add.at(point_weights, inverse, stacked_weights)

    terms, start = [], 0
    for i, gamma, shape, pos in shapes:
        ids = inverse[start:start + pos.shape[0]]
        start += pos.shape[0]
        terms.append(TensorTerm(index=i, coefficient=int(gamma), shape=shape, point_ids=ids))

    total = point_weights.sum()
    if abs(total - 1.0) > 1e-10:
        raise QuadratureError(f"quadrature weights sum to {total!r}, expected 1")
    return SparseGrid(
        points=points, weights=point_weights, terms=tuple(terms), rule=rule,
        index_set=I, mu=mu, sigma=sigma,
    )


def count_points(N: int, rule: KnotRule, I: MultiIndexSet) -> int:
    """Number of unique collocation points of build_sparse_grid(N, rule, I)."""
    if rule.nested:
        # Each index contributes the knots new at its level in every dimension
        total = 0
        for i in I:
            total += math.prod(rule.m(level) - rule.m(level - 1) for level in i)
        return total
    return build_sparse_grid(N, rule, I).num_points


def collocation_point_counts(
    N: int, levels: Sequence[int], rules: Sequence[KnotRule]
) -> pd.DataFrame:
    """Point counts per (rule, level), used to match configurations to known grid sizes."""
    rows = []
    for rule in rules:
        for w in levels:
            rows.append(
                {
                    "family": rule.family,
                    "level_to_knots": rule.level_to_knots,
                    "level": int(w),
                    "points": count_points(N, rule, smolyak_index_set(N, int(w))),
                }
            )
    return pd.DataFrame(rows)

# ==============================================================================
# COLLOCATION
# ==============================================================================

def grid_for_posterior(post: PosteriorSummary, level: int, rule: KnotRule) -> SparseGrid:
    if post.is_degenerate:
        frozen = np.flatnonzero(post.var == 0) + 1
        raise ValidationError(f"zero posterior variance in components {frozen.tolist()}; collocation needs sigma > 0")
    N = post.dimension
    return build_sparse_grid(N, rule, smolyak_index_set(N, level), mu=post.mu, sigma=post.std)


def moments_from_grid(
    grid: SparseGrid,
    values: np.ndarray,
    times: np.ndarray | None,
    weights: np.ndarray,
    names: Sequence[str] = (),
) -> MomentSeries:
    """E ~ Q_I[Q], V ~ Q_I[Q^2] - Q_I[Q]^2 with small negative variances clamped to 0."""
    values = np.asarray(values, dtype=float)
    mean = np.tensordot(grid.weights, values, axes=1)
    second = np.tensordot(grid.weights, values**2, axes=1)
    variance = second - mean**2
    worst = float(variance.min())
    if worst < -VARIANCE_CLAMP:
        raise NegativeVarianceError(
            f"sparse-grid variance {worst:.3e} below -{VARIANCE_CLAMP:g} "
            f"({grid.num_points:,} points, {grid.rule.label})"
        )
    clamped = int((variance < 0).sum())
    if clamped:
        CONSOLE.print(f"  ⚠ {clamped} slightly negative variances clamped to 0 (min {worst:.2e})")
    if times is None:
        times = np.arange(values.shape[1], dtype=float)
    return MomentSeries.from_moments(
        times=times,
        mean=mean,
        variance=np.maximum(variance, 0.0),
        num_samples=grid.num_points,
        region_weights=weights,
        region_names=names,
    )


def sc_moments(
    model: Callable,
    grid: SparseGrid,
    batch_size: int | None = None,
    threads: int = 1,
) -> MomentSeries:
    """One model evaluation per unique grid point, then sparse quadrature."""
    values = evaluate_many(model, grid.points, batch_size=batch_size, threads=threads)
    times, weights, names = model_layout(model, values.shape[-1])
    return moments_from_grid(grid, values, times, weights, names)


def _basis_values(x: np.ndarray, t: float) -> np.ndarray:
    if x.size == 1:
        return np.ones(1)
    return np.atleast_1d(BarycentricInterpolator(x, np.eye(x.size))(t)).ravel()


def interpolate(grid: SparseGrid, values: np.ndarray, p: Sequence[float] | np.ndarray) -> float | np.ndarray:
    """
    Evaluate the sparse-grid interpolant S_I[u](p).

    values: (P,) or (P, K) model values at grid.points; returns a float or a K-vector.
    """
    p = np.asarray(p, dtype=float).ravel()
    if p.size != grid.dimension:
        raise ValidationError(f"p has length {p.size}, grid has dimension {grid.dimension}")
    if not np.all(np.isfinite(p)):
        raise ValidationError(f"p has non-finite entries: {p}")
    values = np.asarray(values, dtype=float)
    scalar = values.ndim == 1
    values = values.reshape(grid.num_points, -1)

    basis: dict[tuple[int, int], np.ndarray] = {}
    total = np.zeros(values.shape[1])
    for term in grid.terms:
        tensor = values[term.point_ids].reshape(term.shape + (values.shape[1],))
        for n, level in enumerate(term.index):
            key = (n, level)
            if key not in basis:
                basis[key] = _basis_values(grid.knots_1d(n, level)[0], p[n])
            # Contract the leading axis; the remaining axes shift forward
            tensor = np.tensordot(basis[key], tensor, axes=(0, 0))
        total += term.coefficient * tensor
    return float(total[0]) if scalar else total

# ==============================================================================
# CONVERGENCE
# ==============================================================================

class _CachedModel:
    """Evaluates each distinct parameter point once across several grids."""

    def __init__(self, model: Callable, batch_size: int | None, threads: int):
        self.model = model
        self.batch_size = batch_size
        self.threads = threads
        self._cache: dict[bytes, np.ndarray] = {}

    def values(self, points: np.ndarray) -> np.ndarray:
        keys = [row.tobytes() for row in np.ascontiguousarray(points)]
        missing = [k for k, key in enumerate(keys) if key not in self._cache]
        if missing:
            fresh = evaluate_many(
                self.model, points[missing], batch_size=self.batch_size, threads=self.threads
            )
            for k, row in zip(missing, fresh):
                self._cache[keys[k]] = row
        return np.stack([self._cache[key] for key in keys])


@dataclass(frozen=True)
class ScConvergenceResult:
    table: pd.DataFrame
    reference: MomentSeries


def sc_convergence(
    model: Callable,
    post: PosteriorSummary,
    levels: Sequence[int],
    reference_level: int,
    rule: KnotRule,
    batch_size: int | None = None,
    threads: int = 1,
) -> ScConvergenceResult:
    """
    Errors of the SC moments at each level against a finer reference level.

    One row per (level, time): points, seconds, |d weighted mean|,
    |d weighted var|, global and per-region errors.
    """
    levels = [int(w) for w in levels]
    if not levels or max(levels) >= reference_level:
        raise ValidationError(f"levels {levels} must lie below the reference level {reference_level}")
    cached = _CachedModel(model, batch_size, threads)

    def run(level: int) -> tuple[SparseGrid, MomentSeries, float]:
        start = time.perf_counter()
        grid = grid_for_posterior(post, level, rule)
        values = cached.values(grid.points)
        times, weights, names = model_layout(model, values.shape[-1])
        moments = moments_from_grid(grid, values, times, weights, names)
        return grid, moments, time.perf_counter() - start

    ref_grid, reference, _ = run(reference_level)
    CONSOLE.print(f"  ✓ reference level {reference_level}: {ref_grid.num_points:,} points")

    rows = []
    for level in levels:
        grid, est, seconds = run(level)
        for k, t in enumerate(est.times):
            row = {
                "level": level,
                "points": grid.num_points,
                "time": t,
                "seconds": seconds,
                "err_weighted_mean": abs(est.weighted_mean[k] - reference.weighted_mean[k]),
                "err_weighted_var": abs(est.weighted_var[k] - reference.weighted_var[k]),
                "err_global_mean": abs(est.global_mean[k] - reference.global_mean[k]),
                "err_global_var": abs(est.global_var[k] - reference.global_var[k]),
            }
            for j, name in enumerate(est.region_names):
                row[f"err_mean_{name}"] = abs(est.regional_mean[k, j] - reference.regional_mean[k, j])
                row[f"err_var_{name}"] = abs(est.regional_var[k, j] - reference.regional_var[k, j])
            rows.append(row)
        CONSOLE.print(f"  ✓ level {level}: {grid.num_points:,} points ({seconds:.1f}s)")
    return ScConvergenceResult(table=pd.DataFrame(rows), reference=reference)
