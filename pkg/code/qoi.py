"""
Quantities of Interest
======================

Scalar and regional averages of the concentration field, and the forward
model p -> QoISeries that calibration and forward UQ both evaluate.

  spatial_average        (1/M) sum_k c_k            (unweighted, whole graph)
  regional_averages      sum_{k in j} c_k v_k / V_j (volume-weighted, per region,
                                                     optional node mask)

With normalization="total" the regional sums are divided by the total
(masked) volume instead of the region volume, for comparison only.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np
import pandas as pd

from connectome import Connectome, region_volumes
from errors import ModelEvaluationError, NumericalError, ValidationError
from field import assemble_reaction_vector
from solver import SolverConfig, solve_batch

Normalization = Literal["region", "total"]

# ==============================================================================
# AVERAGES
# ==============================================================================

def spatial_average(c: np.ndarray) -> float:
    """Unweighted mean over all nodes."""
    c = np.asarray(c, dtype=float).ravel()
    if c.size == 0:
        raise ValidationError("spatial average of an empty field")
    return float(c.mean())


def region_average_matrix(
    g: Connectome, mask: np.ndarray | None = None, normalization: Normalization = "region"
) -> np.ndarray:
    """
    (R, M) operator A with A @ c = regional averages of c.

    Masked-out nodes get zero weight and their volume leaves the normalization.
    """
    if normalization not in ("region", "total"):
        raise ValidationError(f"unknown normalization {normalization!r}")
    if mask is None:
        keep = np.ones(g.num_nodes, dtype=bool)
    else:
        keep = np.asarray(mask, dtype=bool).ravel()
        if keep.size != g.num_nodes:
            raise ValidationError(f"mask length {keep.size} does not match {g.num_nodes} nodes")

    vol = np.where(keep, g.volumes, 0.0)
    operator = np.zeros((g.region_count, g.num_nodes))
    operator[g.regions - 1, np.arange(g.num_nodes)] = vol

    per_region = operator.sum(axis=1)
    empty = np.flatnonzero(per_region == 0.0)
    if empty.size:
        names = [g.region_names[j] for j in empty]
        raise ValidationError(f"regions {names} have all nodes masked out")
    if normalization == "region":
        return operator / per_region[:, None]
    return operator / per_region.sum()


def regional_averages(
    g: Connectome,
    c: np.ndarray,
    mask: np.ndarray | None = None,
    normalization: Normalization = "region",
) -> np.ndarray:
    """Volume-weighted average of c on every region (R-vector; (..., R) for stacked fields)."""
    c = np.asarray(c, dtype=float)
    if c.shape[-1] != g.num_nodes:
        raise ValidationError(f"field length {c.shape[-1]} does not match {g.num_nodes} nodes")
    return c @ region_average_matrix(g, mask, normalization).T


def lobe_volume_weights(g: Connectome, mask: np.ndarray | None = None) -> np.ndarray:
    """V_j / sum V_j, the weights behind the lobe-averaged moments."""
    vol = region_volumes(g, mask)
    return vol / vol.sum()

# ==============================================================================
# QOI SERIES
# ==============================================================================

@dataclass(frozen=True)
class QoISeries:
    times: np.ndarray
    global_avg: np.ndarray       # (T,)
    regional_avg: np.ndarray     # (T, R)

    def as_array(self) -> np.ndarray:
        """(T, 1 + R) array with columns [global, region_1..R]."""
        return np.column_stack([self.global_avg, self.regional_avg])

    @classmethod
    def from_array(cls, times: np.ndarray, values: np.ndarray) -> "QoISeries":
        values = np.asarray(values, dtype=float)
        return cls(times=np.asarray(times, dtype=float), global_avg=values[:, 0],
                   regional_avg=values[:, 1:])

    def to_frame(self) -> pd.DataFrame:
        """CSV layout: time,global,region_1..region_R."""
        df = pd.DataFrame(
            self.regional_avg,
            columns=[f"region_{j}" for j in range(1, self.regional_avg.shape[1] + 1)],
        )
        df.insert(0, "global", self.global_avg)
        df.insert(0, "time", self.times)
        return df

# ==============================================================================
# FORWARD MODEL
# ==============================================================================

class QoIModel:
    """
    Forward model p -> QoISeries: assemble alpha(p), integrate from c0, and
    average the recorded states.

    Column 0 of every evaluation is the unweighted global average (never
    masked); columns 1..R are the regional averages (mask applied).
    """

    def __init__(
        self,
        g: Connectome,
        c0: np.ndarray,
        cfg: SolverConfig,
        mask: np.ndarray | None = None,
        normalization: Normalization = "region",
    ):
        self.g = g
        self.c0 = np.asarray(c0, dtype=float).ravel()
        self.cfg = cfg
        self.mask = None if mask is None else np.asarray(mask, dtype=bool).ravel()
        self.normalization = normalization
        self._operator = region_average_matrix(g, self.mask, normalization)

    @property
    def dimension(self) -> int:
        return self.g.region_count

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self.cfg.sample_times, dtype=float)

    @property
    def num_outputs(self) -> int:
        return 1 + self.g.region_count

    @property
    def default_batch_size(self) -> int:
        # Keeps the block-diagonal system around 2^14 unknowns
        return max(1, 16_384 // self.g.num_nodes)

    def evaluate_batch(self, params: np.ndarray) -> np.ndarray:
        """(S, N) parameters -> (S, n_times, 1 + R) QoI values."""
        params = np.atleast_2d(np.asarray(params, dtype=float))
        alphas = assemble_reaction_vector(self.g, params)
        states, _ = solve_batch(self.g, alphas, self.c0, self.cfg)
        regional = states @ self._operator.T
        global_avg = states.mean(axis=-1, keepdims=True)
        return np.concatenate([global_avg, regional], axis=-1)

    def __call__(self, p: np.ndarray) -> QoISeries:
        values = self.evaluate_batch(np.asarray(p, dtype=float)[None, :])[0]
        return QoISeries.from_array(self.times, values)


def _evaluate_rows(model: Callable, params: np.ndarray) -> np.ndarray:
    if hasattr(model, "evaluate_batch"):
        out = model.evaluate_batch(params)
    else:
        out = np.stack([np.asarray(model(p).as_array(), dtype=float) for p in params])
    if not np.all(np.isfinite(out)):
        raise NumericalError("model returned non-finite values")
    return out


def _evaluate_checked(model: Callable, params: np.ndarray) -> np.ndarray:
    try:
        return _evaluate_rows(model, params)
    except NumericalError:
        # Locate the first failing parameter point for the error report
        for p in params:
            try:
                _evaluate_rows(model, p[None, :])
            except NumericalError as exc:
                raise ModelEvaluationError(
                    f"model failed at p = {np.array2string(p, precision=6)}: {exc}", parameters=p
                ) from exc
        raise


def evaluate_many(
    model: Callable,
    params: np.ndarray,
    batch_size: int | None = None,
    threads: int = 1,
) -> np.ndarray:
    """
    Evaluate the model at every row of `params`.

    Batches are fixed by (len(params), batch_size) only and results are stored
    by row index, so the output does not depend on the number of threads.
    """
    params = np.atleast_2d(np.asarray(params, dtype=float))
    if batch_size is None:
        batch_size = getattr(model, "default_batch_size", 256)
    batch_size = max(1, int(batch_size))
    chunks = [params[k:k + batch_size] for k in range(0, params.shape[0], batch_size)]

    if threads <= 1 or len(chunks) == 1:
        results = [_evaluate_checked(model, chunk) for chunk in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda chunk: _evaluate_checked(model, chunk), chunks))
    return np.concatenate(results, axis=0)
