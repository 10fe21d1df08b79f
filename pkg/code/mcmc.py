"""
Metropolis-Hastings Calibration
===============================

Calibrates the region-wise reaction coefficients p from two scans:
scan 1 is the initial condition, scan 2 (outlier nodes masked out) gives the
regional data q_data the model must reproduce after `horizon` years.

  prior       p ~ U(a, b)                         (component-wise box)
  likelihood  q_data | p ~ N(Q(p), sigma^2 I)
  proposal    p* = p + delta,  delta ~ N(0, sigma_hat^2 I)
  accept      with probability min(1, rho), computed in log space

The chain starts at the box midpoint (a + b) / 2. Proposals outside the box
are rejected without a model evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd
from scipy import stats
from statsmodels.tsa.stattools import acf

from config_paths import CONSOLE
from connectome import Connectome
from errors import ModelEvaluationError, NumericalError, ValidationError
from field import PosteriorSummary, PriorBounds, log_prior
from qoi import Normalization, QoIModel, QoISeries
from solver import CALIBRATION_DT, SolverConfig

# ==============================================================================
# DEFAULTS
# ==============================================================================

DEFAULT_PROPOSAL_SIGMA = 1e-2
DEFAULT_LIKELIHOOD_SIGMA = 0.1
DEFAULT_CHAIN_LENGTH = 100_000
DEFAULT_BURN_IN = 10_000
DEFAULT_HORIZON = 7.0          # years between the two scans
STREAM_THRESHOLD = 5_000_000   # chain entries (steps x parameters) kept in RAM

# ==============================================================================
# TYPES
# ==============================================================================

@dataclass(frozen=True)
class McmcConfig:
    bounds: PriorBounds
    proposal_sigma: float = DEFAULT_PROPOSAL_SIGMA
    likelihood_sigma: float = DEFAULT_LIKELIHOOD_SIGMA
    chain_length: int = DEFAULT_CHAIN_LENGTH
    burn_in: int = DEFAULT_BURN_IN
    seed: int = 2023
    horizon: float = DEFAULT_HORIZON
    dt: float = CALIBRATION_DT
    stream_threshold: int = STREAM_THRESHOLD
    stream_path: Path | None = None
    progress: bool = True

    def __post_init__(self) -> None:
        if not self.proposal_sigma > 0:
            raise ValidationError(f"proposal_sigma must be positive, got {self.proposal_sigma}")
        if not self.likelihood_sigma > 0:
            raise ValidationError(f"likelihood_sigma must be positive, got {self.likelihood_sigma}")
        if self.chain_length < 1:
            raise ValidationError(f"chain_length must be positive, got {self.chain_length}")
        if not 0 <= self.burn_in < self.chain_length:
            raise ValidationError(
                f"burn_in must lie in [0, chain_length), got {self.burn_in} / {self.chain_length}"
            )
        if not self.horizon > 0:
            raise ValidationError(f"horizon must be positive, got {self.horizon}")


@dataclass
class Chain:
    samples: np.ndarray                 # (n_steps, N), possibly memory-mapped
    accepted: np.ndarray                # (n_steps,) bool
    model_failures: int = 0

    @property
    def length(self) -> int:
        return self.samples.shape[0]

    @property
    def dimension(self) -> int:
        return self.samples.shape[1]

    @property
    def accepted_count(self) -> int:
        return int(self.accepted.sum())

    @property
    def acceptance_rate(self) -> float:
        return self.accepted_count / self.length

    def to_frame(self) -> pd.DataFrame:
        """CSV layout: step,p_1..p_N,accepted."""
        df = pd.DataFrame(
            np.asarray(self.samples), columns=[f"p_{l}" for l in range(1, self.dimension + 1)]
        )
        df.insert(0, "step", np.arange(1, self.length + 1))
        df["accepted"] = self.accepted.astype(int)
        return df

    @classmethod
    def from_csv(cls, path: str | Path) -> "Chain":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Missing chain file: {path}")
        df = pd.read_csv(path, float_precision="round_trip")
        p_cols = [c for c in df.columns if c.startswith("p_")]
        if not p_cols or "accepted" not in df.columns:
            raise ValidationError(f"{path.name}: expected columns step,p_1..p_N,accepted")
        return cls(samples=df[p_cols].to_numpy(dtype=float),
                   accepted=df["accepted"].to_numpy(dtype=bool))

# ==============================================================================
# PROBABILITIES
# ==============================================================================

def log_likelihood(q_model: np.ndarray, q_data: np.ndarray, sigma: float) -> float:
    """Gaussian log-likelihood without additive constants."""
    q_model = np.asarray(q_model, dtype=float).ravel()
    q_data = np.asarray(q_data, dtype=float).ravel()
    if q_model.shape != q_data.shape:
        raise ValidationError(f"QoI length mismatch: {q_model.size} vs {q_data.size}")
    if not sigma > 0:
        raise ValidationError(f"likelihood sigma must be positive, got {sigma}")
    if not (np.all(np.isfinite(q_model)) and np.all(np.isfinite(q_data))):
        raise ValidationError("non-finite QoI in likelihood")
    residual = q_model - q_data
    return float(-np.dot(residual, residual) / (2.0 * sigma**2))


def acceptance_log_ratio(
    p_star: np.ndarray,
    p_prev: np.ndarray,
    q_star: np.ndarray | None,
    q_prev: np.ndarray,
    q_data: np.ndarray,
    cfg: McmcConfig,
) -> float:
    """log rho = likelihood difference + prior difference; -inf outside the box."""
    prior_star = log_prior(p_star, cfg.bounds)
    if prior_star == -math.inf:
        return -math.inf
    if q_star is None:
        raise ValidationError("q_star is required for an in-box proposal")
    prior_prev = log_prior(p_prev, cfg.bounds)
    sigma = cfg.likelihood_sigma
    return (log_likelihood(q_star, q_data, sigma) - log_likelihood(q_prev, q_data, sigma)) + (
        prior_star - prior_prev
    )

# ==============================================================================
# SAMPLER
# ==============================================================================

def make_calibration_model(
    g: Connectome,
    c0: np.ndarray,
    mask: np.ndarray | None,
    horizon: float = DEFAULT_HORIZON,
    dt: float = CALIBRATION_DT,
    normalization: Normalization = "region",
) -> QoIModel:
    """Forward model recording only the regional averages at the second scan."""
    cfg = SolverConfig(dt=dt, T=horizon, sample_times=(horizon,))
    return QoIModel(g, c0, cfg, mask=mask, normalization=normalization)


def _regional_qoi(model: Callable, p: np.ndarray) -> np.ndarray:
    out = model(p)
    if isinstance(out, QoISeries):
        out = out.regional_avg[-1]
    out = np.asarray(out, dtype=float).ravel()
    if not np.all(np.isfinite(out)):
        raise ModelEvaluationError("model returned non-finite QoI", parameters=p)
    return out


def _allocate_samples(cfg: McmcConfig, dimension: int) -> np.ndarray:
    shape = (cfg.chain_length, dimension)
    if cfg.stream_path is not None and cfg.chain_length * dimension > cfg.stream_threshold:
        path = Path(cfg.stream_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        CONSOLE.print(f"  ℹ chain backed by {path.name} ({shape[0]:,} x {shape[1]})")
        return np.lib.format.open_memmap(path, mode="w+", dtype=float, shape=shape)
    return np.empty(shape)


def run_mcmc(model: Callable, q_data: np.ndarray, cfg: McmcConfig) -> Chain:
    """
    Random-walk Metropolis-Hastings chain of length cfg.chain_length.

    Deterministic for a fixed seed. A model failure at a proposal counts as a
    rejection and is logged.
    """
    q_data = np.asarray(q_data, dtype=float).ravel()
    rng = np.random.default_rng(cfg.seed)
    dimension = cfg.bounds.dimension

    p_prev = cfg.bounds.midpoint.copy()
    q_prev = _regional_qoi(model, p_prev)
    if q_prev.shape != q_data.shape:
        raise ValidationError(f"model QoI has {q_prev.size} entries, data has {q_data.size}")

    samples = _allocate_samples(cfg, dimension)
    accepted = np.zeros(cfg.chain_length, dtype=bool)
    failures = 0
    report_every = max(1, cfg.chain_length // 10)

    for i in range(cfg.chain_length):
        p_star = p_prev + rng.normal(0.0, cfg.proposal_sigma, size=dimension)
        # u is drawn every step so the stream does not depend on rejections
        u = rng.random()
        log_u = math.log(u) if u > 0.0 else -math.inf

        log_rho = -math.inf
        if log_prior(p_star, cfg.bounds) == 0.0:
            try:
                q_star = _regional_qoi(model, p_star)
            except NumericalError as exc:
                failures += 1
                if failures <= 5:
                    CONSOLE.print(f"  ⚠ step {i + 1}: model failure, proposal rejected ({exc})")
            else:
                log_rho = acceptance_log_ratio(p_star, p_prev, q_star, q_prev, q_data, cfg)

        if log_u < min(0.0, log_rho):
            p_prev, q_prev = p_star, q_star
            accepted[i] = True
        samples[i] = p_prev

        if cfg.progress and (i + 1) % report_every == 0:
            rate = accepted[: i + 1].mean()
            CONSOLE.print(f"  step {i + 1:,}/{cfg.chain_length:,}  acceptance {rate:.3f}")

    if isinstance(samples, np.memmap):
        samples.flush()
    if failures:
        CONSOLE.print(f"  ⚠ {failures:,} proposals rejected after model failures")
    return Chain(samples=samples, accepted=accepted, model_failures=failures)


def posterior_summary(chain: Chain, burn_in: int) -> PosteriorSummary:
    """Mean and unbiased variance of the post-burn-in samples."""
    if not 0 <= burn_in < chain.length:
        raise ValidationError(f"burn_in {burn_in} must lie in [0, {chain.length})")
    kept = np.asarray(chain.samples[burn_in:])
    if kept.shape[0] < 2:
        raise ValidationError("fewer than 2 post-burn-in samples")
    mu = kept.mean(axis=0)
    var = kept.var(axis=0, ddof=1)
    # components that never moved are exact: mean rounding must not leak into var
    frozen = np.ptp(kept, axis=0) == 0.0
    mu[frozen] = kept[0, frozen]
    var[frozen] = 0.0
    return PosteriorSummary(mu=mu, var=var)

# ==============================================================================
# DIAGNOSTICS
# ==============================================================================

def effective_sample_size(x: np.ndarray) -> float:
    """
    n / tau with tau from the initial positive sequence of paired
    autocorrelations.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n < 4 or np.ptp(x) == 0.0:
        return float(n)
    rho = acf(x, nlags=n - 1, fft=True)
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(min(n, max(1.0, n / max(tau, 1e-12))))


def uniform_ks_check(samples: np.ndarray, bounds: PriorBounds, level: float = 0.01) -> pd.DataFrame:
    """
    Per-component Kolmogorov-Smirnov test of the samples against U(a, b), with
    the critical value taken at the effective (not the raw) sample size.
    """
    samples = np.asarray(samples, dtype=float)
    rows = []
    for l in range(samples.shape[1]):
        x = samples[:, l]
        a, b = bounds.a[l], bounds.b[l]
        statistic = stats.kstest(x, stats.uniform(loc=a, scale=b - a).cdf).statistic
        n_eff = effective_sample_size(x)
        critical = float(stats.kstwo.ppf(1.0 - level, max(1, int(round(n_eff)))))
        rows.append(
            {
                "component": l + 1,
                "ks_statistic": statistic,
                "effective_size": n_eff,
                "critical_value": critical,
                "passed": statistic < critical,
            }
        )
    return pd.DataFrame(rows)
