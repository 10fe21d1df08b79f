"""
Forward Monte Carlo
===================

Propagates the calibrated Gaussian posterior through the forward model:

  1. draw Q i.i.d. samples p^(q) ~ N(mu, diag(var))
  2. evaluate the QoI series at every sample
  3. mu_Q = (1/Q) sum_q Q(p^(q)),  var_Q = sum_q (Q(p^(q)) - mu_Q)^2 / (Q - 1)

Sample q is drawn from its own generator keyed by (base_seed, q), so estimates
do not depend on evaluation order, batch size or thread count.

MomentSeries CSV layout:
    time, num_samples, global_mean, global_var, weighted_mean, weighted_var,
    mean_<region>..., var_<region>...
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from config_paths import CONSOLE
from errors import ValidationError
from field import PosteriorSummary
from qoi import evaluate_many, lobe_volume_weights

REPORT_TIMES = (5.0, 10.0, 15.0, 20.0)

# ==============================================================================
# MOMENT SERIES
# ==============================================================================

@dataclass(frozen=True)
class MomentSeries:
    """
    Per-time mean and variance of [global, region_1..R].

    weighted_mean / weighted_var are the lobe-volume-weighted averages of the
    regional moments.
    """

    times: np.ndarray            # (T,)
    mean: np.ndarray             # (T, 1 + R)
    variance: np.ndarray         # (T, 1 + R)
    weighted_mean: np.ndarray    # (T,)
    weighted_var: np.ndarray     # (T,)
    num_samples: int
    region_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float).ravel()
        mean = np.atleast_2d(np.asarray(self.mean, dtype=float))
        variance = np.atleast_2d(np.asarray(self.variance, dtype=float))
        if mean.shape != variance.shape or mean.shape[0] != times.size:
            raise ValidationError(
                f"moment shapes disagree: times {times.shape}, mean {mean.shape}, var {variance.shape}"
            )
        if np.any(variance < 0):
            raise ValidationError("moment variances must be non-negative")
        names = tuple(self.region_names) or tuple(
            f"region_{j}" for j in range(1, mean.shape[1])
        )
        if len(names) != mean.shape[1] - 1:
            raise ValidationError(f"{len(names)} region names for {mean.shape[1] - 1} regions")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", variance)
        object.__setattr__(self, "weighted_mean", np.asarray(self.weighted_mean, dtype=float).ravel())
        object.__setattr__(self, "weighted_var", np.asarray(self.weighted_var, dtype=float).ravel())
        object.__setattr__(self, "region_names", names)

    @classmethod
    def from_moments(
        cls,
        times: np.ndarray,
        mean: np.ndarray,
        variance: np.ndarray,
        num_samples: int,
        region_weights: np.ndarray | None = None,
        region_names: Sequence[str] = (),
    ) -> "MomentSeries":
        mean = np.atleast_2d(np.asarray(mean, dtype=float))
        variance = np.atleast_2d(np.asarray(variance, dtype=float))
        R = mean.shape[1] - 1
        if region_weights is None:
            region_weights = np.full(R, 1.0 / R)
        w = np.asarray(region_weights, dtype=float).ravel()
        if w.size != R:
            raise ValidationError(f"{w.size} region weights for {R} regions")
        return cls(
            times=times,
            mean=mean,
            variance=variance,
            weighted_mean=mean[:, 1:] @ w,
            weighted_var=variance[:, 1:] @ w,
            num_samples=int(num_samples),
            region_names=tuple(region_names),
        )

    @property
    def num_regions(self) -> int:
        return self.mean.shape[1] - 1

    @property
    def global_mean(self) -> np.ndarray:
        return self.mean[:, 0]

    @property
    def global_var(self) -> np.ndarray:
        return self.variance[:, 0]

    @property
    def regional_mean(self) -> np.ndarray:
        return self.mean[:, 1:]

    @property
    def regional_var(self) -> np.ndarray:
        return self.variance[:, 1:]

    def at_time(self, t: float) -> int:
        """Row index of report time t."""
        hits = np.flatnonzero(np.isclose(self.times, t, rtol=0.0, atol=1e-9))
        if hits.size == 0:
            raise ValidationError(f"time {t} not in moment series {self.times.tolist()}")
        return int(hits[0])

    def band(self) -> pd.DataFrame:
        """Mean and mean +/- std per time, weighted and per region."""
        std = np.sqrt(self.weighted_var)
        df = pd.DataFrame(
            {
                "time": self.times,
                "weighted_mean": self.weighted_mean,
                "weighted_lower": self.weighted_mean - std,
                "weighted_upper": self.weighted_mean + std,
            }
        )
        reg_std = np.sqrt(self.regional_var)
        for j, name in enumerate(self.region_names):
            df[f"lower_{name}"] = self.regional_mean[:, j] - reg_std[:, j]
            df[f"mean_{name}"] = self.regional_mean[:, j]
            df[f"upper_{name}"] = self.regional_mean[:, j] + reg_std[:, j]
        return df

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(
            {
                "time": self.times,
                "num_samples": self.num_samples,
                "global_mean": self.global_mean,
                "global_var": self.global_var,
                "weighted_mean": self.weighted_mean,
                "weighted_var": self.weighted_var,
            }
        )
        for j, name in enumerate(self.region_names):
            df[f"mean_{name}"] = self.regional_mean[:, j]
        for j, name in enumerate(self.region_names):
            df[f"var_{name}"] = self.regional_var[:, j]
        return df

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path

    @classmethod
    def from_csv(cls, path: str | Path) -> "MomentSeries":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Missing moments file: {path}")
        df = pd.read_csv(path, float_precision="round_trip")
        required = ["time", "num_samples", "global_mean", "global_var", "weighted_mean", "weighted_var"]
        missing = [c for c in required if c not in df.columns]
        if missing:
            raise ValidationError(f"{path.name}: missing columns {missing}")
        names = [c[len("mean_"):] for c in df.columns if c.startswith("mean_")]
        absent = [f"var_{n}" for n in names if f"var_{n}" not in df.columns]
        if absent:
            raise ValidationError(f"{path.name}: missing columns {absent}")
        mean = np.column_stack([df["global_mean"]] + [df[f"mean_{n}"] for n in names])
        var = np.column_stack([df["global_var"]] + [df[f"var_{n}"] for n in names])
        return cls(
            times=df["time"].to_numpy(),
            mean=mean,
            variance=var,
            weighted_mean=df["weighted_mean"].to_numpy(),
            weighted_var=df["weighted_var"].to_numpy(),
            num_samples=int(df["num_samples"].iloc[0]),
            region_names=tuple(names),
        )


def model_layout(model: Callable, num_outputs: int) -> tuple[np.ndarray | None, np.ndarray, tuple[str, ...]]:
    """(times, region weights, region names) for a forward model."""
    R = num_outputs - 1
    g = getattr(model, "g", None)
    if g is not None:
        weights = lobe_volume_weights(g, getattr(model, "mask", None))
        names = tuple(g.region_names)
    else:
        weights = getattr(model, "region_weights", np.full(R, 1.0 / R))
        names = tuple(getattr(model, "region_names", ()))
    times = getattr(model, "times", None)
    return (None if times is None else np.asarray(times, dtype=float)), np.asarray(weights), names

# ==============================================================================
# SAMPLING
# ==============================================================================

def sample_parameters(post: PosteriorSummary, sample_index: int, base_seed: int) -> np.ndarray:
    """p = mu + std * z with z from the generator keyed by (base_seed, sample_index)."""
    if sample_index < 0 or base_seed < 0:
        raise ValidationError("seed and sample index must be non-negative")
    z = np.random.default_rng([int(base_seed), int(sample_index)]).standard_normal(post.dimension)
    return post.mu + post.std * z


def sample_matrix(post: PosteriorSummary, count: int, base_seed: int, start: int = 0) -> np.ndarray:
    """Samples start..start+count-1 stacked into (count, N)."""
    return np.stack(
        [sample_parameters(post, q, base_seed) for q in range(start, start + count)]
    )


def moments_from_values(
    values: np.ndarray,
    times: np.ndarray | None,
    weights: np.ndarray,
    names: Sequence[str] = (),
) -> MomentSeries:
    """Sample mean and unbiased variance over axis 0 of (Q, T, 1 + R) values."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] < 2:
        raise ValidationError(f"at least 2 samples needed, got {values.shape[0]}")
    if times is None:
        times = np.arange(values.shape[1], dtype=float)
    return MomentSeries.from_moments(
        times=times,
        mean=values.mean(axis=0),
        variance=values.var(axis=0, ddof=1),
        num_samples=values.shape[0],
        region_weights=weights,
        region_names=names,
    )


def mc_estimate(
    model: Callable,
    post: PosteriorSummary,
    Q_count: int,
    base_seed: int,
    batch_size: int | None = None,
    threads: int = 1,
) -> MomentSeries:
    """Plain Monte Carlo moments from Q_count posterior samples."""
    if Q_count < 2:
        raise ValidationError(f"Q_count must be at least 2, got {Q_count}")
    params = sample_matrix(post, Q_count, base_seed)
    values = evaluate_many(model, params, batch_size=batch_size, threads=threads)
    times, weights, names = model_layout(model, values.shape[-1])
    return moments_from_values(values, times, weights, names)


@dataclass(frozen=True)
class ConvergenceResult:
    table: pd.DataFrame       # one row per (replicate, count, time)
    slopes: pd.DataFrame      # fitted log-log slope per QoI column
    mean_slope: float


def _error_columns(est: MomentSeries, ref: MomentSeries) -> dict[str, np.ndarray]:
    if est.mean.shape != ref.mean.shape:
        raise ValidationError(f"reference shape {ref.mean.shape} does not match {est.mean.shape}")
    cols = {
        "err_weighted_mean": np.abs(est.weighted_mean - ref.weighted_mean),
        "err_weighted_var": np.abs(est.weighted_var - ref.weighted_var),
        "err_global_mean": np.abs(est.global_mean - ref.global_mean),
        "err_global_var": np.abs(est.global_var - ref.global_var),
    }
    for j, name in enumerate(est.region_names):
        cols[f"err_mean_{name}"] = np.abs(est.regional_mean[:, j] - ref.regional_mean[:, j])
    return cols


def fit_loglog_slope(x: np.ndarray, err: np.ndarray) -> float:
    """Least-squares slope of log(err) against log(x); nan if any error is 0."""
    x = np.asarray(x, dtype=float)
    err = np.asarray(err, dtype=float)
    if np.any(err <= 0) or x.size < 2:
        return float("nan")
    return float(np.polyfit(np.log(x), np.log(err), 1)[0])


def mc_convergence(
    model: Callable,
    post: PosteriorSummary,
    counts: Sequence[int],
    reference: MomentSeries,
    base_seed: int,
    replicates: int = 1,
    batch_size: int | None = None,
    threads: int = 1,
) -> ConvergenceResult:
    """
    MC error against a reference for increasing sample counts.

    Estimates for smaller counts reuse the leading samples of the largest run.
    Slopes are fitted to the root-mean-square error over replicates
    (seeds base_seed, base_seed + 1, ...) for every mean column at every time
    and averaged into mean_slope.
    """
    counts = [int(c) for c in counts]
    if not counts or counts[0] < 2 or any(b <= a for a, b in zip(counts, counts[1:])):
        raise ValidationError(f"counts must be strictly increasing and >= 2, got {counts}")
    if replicates < 1:
        raise ValidationError("replicates must be at least 1")

    rows = []
    for r in range(replicates):
        seed = base_seed + r
        params = sample_matrix(post, counts[-1], seed)
        values = evaluate_many(model, params, batch_size=batch_size, threads=threads)
        times, weights, names = model_layout(model, values.shape[-1])
        for count in counts:
            est = moments_from_values(values[:count], times, weights, names)
            errors = _error_columns(est, reference)
            for k, t in enumerate(est.times):
                row = {"replicate": r, "seed": seed, "count": count, "time": t}
                row.update({key: float(err[k]) for key, err in errors.items()})
                rows.append(row)
        CONSOLE.print(f"  ✓ replicate {r + 1}/{replicates} (seed {seed})")

    table = pd.DataFrame(rows)
    mean_cols = [c for c in table.columns if c.startswith("err_") and "var" not in c]
    rms = table.groupby(["count", "time"])[mean_cols].apply(lambda df: np.sqrt((df**2).mean()))
    slope_rows = []
    for t in sorted(table["time"].unique()):
        sub = rms.xs(t, level="time").sort_index()
        for col in mean_cols:
            slope_rows.append(
                {"time": t, "qoi": col, "slope": fit_loglog_slope(sub.index.to_numpy(), sub[col].to_numpy())}
            )
    slopes = pd.DataFrame(slope_rows)
    finite = slopes["slope"].dropna()
    mean_slope = float(finite.mean()) if not finite.empty else float("nan")
    return ConvergenceResult(table=table, slopes=slopes, mean_slope=mean_slope)
