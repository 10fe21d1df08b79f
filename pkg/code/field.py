"""
Stochastic Reaction Field
=========================

The reaction coefficient is piecewise constant over the graph regions:
alpha(node k) = p[region(k)], with p the N = R dimensional parameter vector.

Before calibration p is uniform on a prior box [a, b]; after calibration each
component is described by an independent Gaussian N(mu_l, var_l).

JSON format shared by priors and posteriors:
    {"regions": [{"name": "frontal", "a": -0.07, "b": 0.43, "mu": 0.1801, "var": 0.0077}, ...]}
Entries may carry only the prior box (a, b), only the posterior (mu, var), or both.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from connectome import LOBE_NAMES, Connectome
from errors import FieldError

# ==============================================================================
# REFERENCE LOBE TABLES
# ==============================================================================

# Prior box per lobe (1/years)
LOBE_PRIOR_BOUNDS = {
    "frontal": (-0.07, 0.43),
    "temporal": (-0.11, 0.39),
    "parietal": (-0.19, 0.31),
    "insular": (-0.15, 0.35),
    "limbic": (-0.12, 0.38),
    "occipital": (-0.19, 0.31),
    "subcortical": (-0.15, 0.35),
}

# Calibrated (mean, variance) per lobe from a two-scan amyloid calibration
LOBE_POSTERIOR = {
    "frontal": (0.1801, 0.0077),
    "temporal": (0.1421, 0.0079),
    "parietal": (0.0627, 0.0060),
    "insular": (0.1005, 0.0070),
    "limbic": (0.1351, 0.0075),
    "occipital": (0.0545, 0.0086),
    "subcortical": (0.1147, 0.0093),
}

# ==============================================================================
# TYPES
# ==============================================================================

def as_parameter_vector(p: Sequence[float] | np.ndarray, length: int | None = None) -> np.ndarray:
    """Validate a parameter vector (finite entries, optional expected length)."""
    arr = np.asarray(p, dtype=float).ravel()
    if length is not None and arr.size != length:
        raise FieldError(f"parameter vector has length {arr.size}, expected {length}")
    if not np.all(np.isfinite(arr)):
        raise FieldError(f"parameter vector has non-finite entries: {arr}")
    return arr


@dataclass(frozen=True)
class PriorBounds:
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.a, dtype=float).ravel()
        b = np.asarray(self.b, dtype=float).ravel()
        if a.shape != b.shape:
            raise FieldError(f"prior bounds length mismatch: {a.size} vs {b.size}")
        bad = np.flatnonzero(~(a < b))
        if bad.size:
            k = int(bad[0])
            raise FieldError(f"prior bounds component {k + 1}: a={a[k]} is not below b={b[k]}")
        a.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def dimension(self) -> int:
        return self.a.size

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.a + self.b)

    def contains(self, p: np.ndarray) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all((self.a <= p) & (p <= self.b)))


@dataclass(frozen=True)
class PosteriorSummary:
    """
    Independent Gaussian marginals per region.

    var may be 0 for a degenerate (constant) chain; samplers then return mu.
    """

    mu: np.ndarray
    var: np.ndarray

    def __post_init__(self) -> None:
        mu = np.asarray(self.mu, dtype=float).ravel()
        var = np.asarray(self.var, dtype=float).ravel()
        if mu.shape != var.shape:
            raise FieldError(f"posterior length mismatch: {mu.size} vs {var.size}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(var))):
            raise FieldError("posterior moments must be finite")
        if np.any(var < 0):
            raise FieldError(f"posterior variance must be non-negative, got {var}")
        mu.flags.writeable = False
        var.flags.writeable = False
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "var", var)

    @property
    def dimension(self) -> int:
        return self.mu.size

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)

    @property
    def is_degenerate(self) -> bool:
        return bool(np.any(self.var == 0))

    def with_variance_scale(self, factor: float) -> "PosteriorSummary":
        if factor < 0:
            raise FieldError("variance scale must be non-negative")
        return PosteriorSummary(mu=self.mu, var=self.var * factor)


def reference_prior_bounds() -> PriorBounds:
    a, b = zip(*(LOBE_PRIOR_BOUNDS[name] for name in LOBE_NAMES))
    return PriorBounds(a=np.array(a), b=np.array(b))


def reference_posterior() -> PosteriorSummary:
    mu, var = zip(*(LOBE_POSTERIOR[name] for name in LOBE_NAMES))
    return PosteriorSummary(mu=np.array(mu), var=np.array(var))

# ==============================================================================
# OPERATIONS
# ==============================================================================

def assemble_reaction_vector(g: Connectome, p: Sequence[float] | np.ndarray) -> np.ndarray:
    """Node-wise reaction coefficient: alpha[k] = p[region(k)]."""
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != g.region_count:
        raise FieldError(
            f"parameter vector has length {p.shape[-1]}, graph has {g.region_count} regions"
        )
    # Works for a single vector (R,) and for a batch (S, R)
    return p[..., g.regions - 1]


def log_prior(p: Sequence[float] | np.ndarray, bounds: PriorBounds) -> float:
    """Unnormalized uniform log-prior: 0 inside the box, -inf outside."""
    p = np.asarray(p, dtype=float).ravel()
    if p.size != bounds.dimension:
        raise FieldError(f"parameter vector has length {p.size}, prior has {bounds.dimension}")
    return 0.0 if bounds.contains(p) else -math.inf


def gaussian_logpdf(y, mu, sigma):
    """Log density of N(mu, sigma^2) at y (scalar or array)."""
    sigma_arr = np.asarray(sigma, dtype=float)
    if np.any(sigma_arr <= 0):
        raise FieldError(f"sigma must be positive, got {sigma}")
    z = (np.asarray(y, dtype=float) - mu) / sigma_arr
    out = -0.5 * np.log(2.0 * np.pi * sigma_arr**2) - 0.5 * z**2
    return float(out) if np.ndim(out) == 0 else out

# ==============================================================================
# JSON I/O
# ==============================================================================

def save_field_json(
    path: str | Path,
    names: Sequence[str],
    bounds: PriorBounds | None = None,
    posterior: PosteriorSummary | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    regions = []
    for k, name in enumerate(names):
        entry: dict[str, object] = {"name": str(name)}
        if bounds is not None:
            entry["a"] = float(bounds.a[k])
            entry["b"] = float(bounds.b[k])
        if posterior is not None:
            entry["mu"] = float(posterior.mu[k])
            entry["var"] = float(posterior.var[k])
        regions.append(entry)
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"regions": regions}, f, indent=2)
    return path


def load_field_json(
    path: str | Path,
) -> tuple[list[str], PriorBounds | None, PosteriorSummary | None]:
    """Read names plus whichever of (prior box, posterior) the file carries."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Missing prior/posterior file: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            regions = json.load(f)["regions"]
        names = [str(r.get("name", f"region_{k + 1}")) for k, r in enumerate(regions)]
    except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
        raise FieldError(f"parse failure in {path.name}: {exc}") from exc

    def column(key: str) -> np.ndarray | None:
        present = [key in r for r in regions]
        if not any(present):
            return None
        if not all(present):
            raise FieldError(f"{path.name}: '{key}' given for some regions only")
        return np.array([float(r[key]) for r in regions])

    a, b, mu, var = column("a"), column("b"), column("mu"), column("var")
    bounds = PriorBounds(a=a, b=b) if a is not None and b is not None else None
    posterior = PosteriorSummary(mu=mu, var=var) if mu is not None and var is not None else None
    return names, bounds, posterior


def load_posterior(path: str | Path) -> PosteriorSummary:
    _, _, posterior = load_field_json(path)
    if posterior is None:
        raise FieldError(f"{Path(path).name} carries no posterior (mu/var)")
    return posterior


def load_prior_bounds(path: str | Path) -> PriorBounds:
    _, bounds, _ = load_field_json(path)
    if bounds is None:
        raise FieldError(f"{Path(path).name} carries no prior box (a/b)")
    return bounds
