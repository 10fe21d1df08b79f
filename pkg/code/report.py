"""
Report Bundles
==============

Turns run artifacts into the plot-ready tables behind the calibration and
uncertainty figures:

  histogram_<region>.csv    posterior histogram per region + fitted Gaussian overlay
  band.csv                  mean and mean +/- std against time
  convergence_t<time>.csv   error table per report time (one row per level / count)
  regions.csv               per-region node count and volume of the connectome
  connectogram.csv          edges kept at the connectogram threshold

With plots=True the same tables are also rendered as PNG files (matplotlib,
seaborn styling).
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns
from scipy import stats

from config_paths import CONSOLE
from connectome import DEFAULT_CONNECTOGRAM_FRACTION, Connectome, connectome_summary, threshold_connectogram
from errors import ValidationError
from forward_mc import MomentSeries
from mcmc import Chain

DEFAULT_BINS = 30

# ==============================================================================
# TABLES
# ==============================================================================

def histogram_table(samples: np.ndarray, bins: int = DEFAULT_BINS) -> pd.DataFrame:
    """
    Density histogram of one parameter plus N(mean, var) evaluated at the bin
    centres. A constant sample gives one bin and a flagged overlay.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise ValidationError("histogram needs a non-empty finite sample")
    if np.ptp(x) == 0.0:
        return pd.DataFrame(
            {
                "bin_left": [x[0]],
                "bin_right": [x[0]],
                "center": [x[0]],
                "count": [x.size],
                "density": [np.nan],
                "gaussian_density": [np.nan],
                "zero_variance": [True],
            }
        )
    counts, edges = np.histogram(x, bins=bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    density = counts / (x.size * np.diff(edges))
    std = x.std(ddof=1) if x.size > 1 else 0.0
    overlay = stats.norm.pdf(centers, loc=x.mean(), scale=std) if std > 0 else np.full(centers.size, np.nan)
    return pd.DataFrame(
        {
            "bin_left": edges[:-1],
            "bin_right": edges[1:],
            "center": centers,
            "count": counts,
            "density": density,
            "gaussian_density": overlay,
            "zero_variance": std == 0,
        }
    )


def chain_histograms(chain: Chain, burn_in: int, names: Sequence[str], bins: int = DEFAULT_BINS) -> dict[str, pd.DataFrame]:
    if not 0 <= burn_in < chain.length:
        raise ValidationError(f"burn_in {burn_in} must lie in [0, {chain.length})")
    if len(names) != chain.dimension:
        raise ValidationError(f"{len(names)} names for a {chain.dimension}-parameter chain")
    kept = np.asarray(chain.samples[burn_in:])
    return {name: histogram_table(kept[:, l], bins) for l, name in enumerate(names)}


def connectogram_table(g: Connectome, fraction: float = DEFAULT_CONNECTOGRAM_FRACTION) -> pd.DataFrame:
    edges = threshold_connectogram(g, fraction)
    regions = g.regions
    names = list(g.region_names)
    return pd.DataFrame(
        {
            "source": [e.i for e in edges],
            "target": [e.j for e in edges],
            "weight": [e.weight for e in edges],
            "source_region": [names[regions[e.i] - 1] for e in edges],
            "target_region": [names[regions[e.j] - 1] for e in edges],
        }
    )


def convergence_by_time(table: pd.DataFrame) -> dict[float, pd.DataFrame]:
    """
    Split a convergence table into one frame per report time.

    Monte Carlo tables (with replicates) are reduced to the root-mean-square
    error per sample count.
    """
    if "time" not in table.columns:
        raise ValidationError("convergence table has no 'time' column")
    err_cols = [c for c in table.columns if c.startswith("err_")]
    if "replicate" in table.columns:
        table = (
            table.groupby(["count", "time"])[err_cols]
            .apply(lambda df: np.sqrt((df**2).mean()))
            .reset_index()
        )
    out = {}
    for t, sub in table.groupby("time", sort=True):
        out[float(t)] = sub.drop(columns="time").reset_index(drop=True)
    return out

# ==============================================================================
# FIGURES
# ==============================================================================

def plot_histograms(hists: dict[str, pd.DataFrame], path: Path) -> Path:
    n = len(hists)
    cols = min(4, n)
    rows = int(np.ceil(n / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(4 * cols, 3.2 * rows), squeeze=False)
    for ax, (name, df) in zip(axes.flat, hists.items()):
        if bool(df["zero_variance"].iloc[0]):
            ax.axvline(df["center"].iloc[0], color="black")
        else:
            ax.bar(df["center"], df["density"], width=df["bin_right"] - df["bin_left"],
                   color="steelblue", edgecolor="black", alpha=0.7)
            ax.plot(df["center"], df["gaussian_density"], color="red", linewidth=1.5)
        ax.set_title(name, fontsize=11, fontweight="bold")
        ax.grid(True, alpha=0.3)
    for ax in list(axes.flat)[n:]:
        ax.set_visible(False)
    plt.tight_layout()
    plt.savefig(path, dpi=300, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_band(band: pd.DataFrame, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(10, 6))
    ax.plot(band["time"], band["weighted_mean"], color="blue", linewidth=2, label="mean")
    ax.fill_between(band["time"], band["weighted_lower"], band["weighted_upper"],
                    color="blue", alpha=0.2, label="mean ± std")
    ax.set_xlabel("Time (years)", fontsize=12)
    ax.set_ylabel("Concentration", fontsize=12)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="upper left")
    plt.tight_layout()
    plt.savefig(path, dpi=300, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_convergence(per_time: dict[float, pd.DataFrame], path: Path) -> Path:
    frames = []
    for t, df in per_time.items():
        x_col = "points" if "points" in df.columns else "count"
        frames.append(pd.DataFrame({"evaluations": df[x_col], "error": df["err_weighted_mean"], "time": t}))
    data = pd.concat(frames, ignore_index=True)
    data = data[data["error"] > 0]
    fig, ax = plt.subplots(figsize=(8, 6))
    sns.lineplot(data=data, x="evaluations", y="error", hue="time", marker="o", ax=ax)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("Model evaluations", fontsize=12)
    ax.set_ylabel("Error in weighted mean", fontsize=12)
    ax.grid(True, alpha=0.3, which="both")
    plt.tight_layout()
    plt.savefig(path, dpi=300, bbox_inches="tight")
    plt.close(fig)
    return path

# ==============================================================================
# BUNDLE
# ==============================================================================

def build_report(
    out_dir: Path,
    chain_path: Path | None = None,
    moments_path: Path | None = None,
    convergence_path: Path | None = None,
    burn_in: int = 0,
    names: Sequence[str] | None = None,
    bins: int = DEFAULT_BINS,
    plots: bool = False,
    graph: Connectome | None = None,
    connectogram_fraction: float = DEFAULT_CONNECTOGRAM_FRACTION,
) -> list[Path]:
    """Write every table the given inputs allow; returns the written paths."""
    if chain_path is None and moments_path is None and convergence_path is None and graph is None:
        raise ValidationError("report needs at least one of chain, moments, convergence or graph input")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    if graph is not None:
        if names is None:
            names = list(graph.region_names)
        path = out_dir / "regions.csv"
        connectome_summary(graph).to_csv(path, index=False)
        written.append(path)
        if graph.num_edges:
            path = out_dir / "connectogram.csv"
            connectogram_table(graph, connectogram_fraction).to_csv(path, index=False, float_format="%.17g")
            written.append(path)
        else:
            CONSOLE.print("  ⚠ graph has no edges, connectogram skipped")

    if chain_path is not None:
        chain = Chain.from_csv(chain_path)
        labels = list(names) if names else [f"p_{l}" for l in range(1, chain.dimension + 1)]
        hists = chain_histograms(chain, burn_in, labels, bins)
        for name, df in hists.items():
            path = out_dir / f"histogram_{name}.csv"
            df.to_csv(path, index=False)
            written.append(path)
            if bool(df["zero_variance"].iloc[0]):
                CONSOLE.print(f"  ⚠ {name}: constant samples, Gaussian overlay flagged")
        if plots:
            written.append(plot_histograms(hists, out_dir / "histograms.png"))

    if moments_path is not None:
        band = MomentSeries.from_csv(moments_path).band()
        path = out_dir / "band.csv"
        band.to_csv(path, index=False)
        written.append(path)
        if plots:
            written.append(plot_band(band, out_dir / "band.png"))

    if convergence_path is not None:
        convergence_path = Path(convergence_path)
        if not convergence_path.exists():
            raise FileNotFoundError(f"Missing convergence table: {convergence_path}")
        per_time = convergence_by_time(pd.read_csv(convergence_path, float_precision="round_trip"))
        for t, df in per_time.items():
            path = out_dir / f"convergence_t{t:g}.csv"
            df.to_csv(path, index=False)
            written.append(path)
        if plots:
            written.append(plot_convergence(per_time, out_dir / "convergence.png"))

    for path in written:
        CONSOLE.print(f"  ✓ Saved: {path.name}")
    return written
