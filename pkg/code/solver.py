"""
Fisher-Kolmogorov Network Solver
================================

Time integration of the semi-discrete Fisher-Kolmogorov system on a graph

    dc/dt = -L c + alpha * c * (1 - c)

with a Crank-Nicolson scheme in which the nonlinear factor (1 - c) is
extrapolated to second order from the two previous levels:

    e        = 1 - 3/2 c^k + 1/2 c^(k-1)
    A        = I/dt + L/2 - diag(alpha * e)/2
    A c^(k+1) = c^k/dt - L c^k/2 + (alpha * e) * c^k / 2

The system matrix changes every step, so it is factorized every step
(sparse LU, natural ordering). The bootstrap level is c^(-1) = c^0.

Usage:
    cfg = SolverConfig(dt=0.02, T=20.0, sample_times=(5, 10, 15, 20))
    traj = solve_trajectory(g, assemble_reaction_vector(g, p), c0, cfg)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse import linalg as spla

from config_paths import CONSOLE
from connectome import Connectome
from errors import SolverError, ValidationError

# ==============================================================================
# CONSTANTS
# ==============================================================================

CALIBRATION_DT = 0.2      # years, calibration runs
FORWARD_DT = 0.02         # years, forward uncertainty propagation
RESIDUAL_TOL = 1e-10
BOUNDS_WARN_TOL = 1e-6
GRID_TOL = 1e-9

# ==============================================================================
# CONFIGURATION
# ==============================================================================

@dataclass(frozen=True)
class SolverConfig:
    """
    Uniform time grid {l * dt : l = 0..N_t} with N_t = T/dt.

    sample_times must lie on the grid; states are recorded only there.
    linear_solver: "direct" (sparse LU), "iterative" (ILU-preconditioned
    GMRES) or "auto" (direct up to `direct_limit` nodes per trajectory).
    """

    dt: float
    T: float
    sample_times: tuple[float, ...] = ()
    linear_solver: Literal["auto", "direct", "iterative"] = "auto"
    direct_limit: int = 20_000
    residual_tol: float = RESIDUAL_TOL

    def __post_init__(self) -> None:
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if not (np.isfinite(self.T) and self.T > 0):
            raise ValidationError(f"T must be positive, got {self.T}")
        ratio = self.T / self.dt
        n_steps = int(round(ratio))
        if n_steps < 1 or abs(ratio - n_steps) > GRID_TOL * max(1.0, ratio):
            raise ValidationError(f"T/dt = {ratio} is not a positive integer")
        if self.linear_solver not in ("auto", "direct", "iterative"):
            raise ValidationError(f"unknown linear_solver {self.linear_solver!r}")

        times = tuple(float(t) for t in self.sample_times) or (float(self.T),)
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError(f"sample_times must be strictly increasing: {times}")
        steps = []
        for t in times:
            if t < -GRID_TOL or t > self.T + GRID_TOL:
                raise ValidationError(f"sample time {t} outside [0, {self.T}]")
            l = int(round(t / self.dt))
            if abs(t / self.dt - l) > GRID_TOL * max(1.0, t / self.dt):
                raise ValidationError(f"sample time {t} is not on the grid of step {self.dt}")
            steps.append(l)
        object.__setattr__(self, "sample_times", times)
        object.__setattr__(self, "_steps", tuple(steps))
        object.__setattr__(self, "_n_steps", n_steps)

    @property
    def n_steps(self) -> int:
        return self._n_steps

    @property
    def sample_steps(self) -> tuple[int, ...]:
        return self._steps

    def uses_direct(self, num_nodes: int) -> bool:
        if self.linear_solver == "auto":
            return num_nodes <= self.direct_limit
        return self.linear_solver == "direct"

    @classmethod
    def every(cls, dt: float, T: float, interval: float, include_zero: bool = True, **kwargs):
        """Config sampling every `interval` years (interval must be a multiple of dt)."""
        count = int(round(T / interval))
        start = 0 if include_zero else 1
        times = tuple(k * interval for k in range(start, count + 1))
        return cls(dt=dt, T=T, sample_times=times, **kwargs)

# ==============================================================================
# TRAJECTORY
# ==============================================================================

@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray            # (n_times, M)
    bounds_violation: float = 0.0  # max distance of any state outside [0, 1]

    def __len__(self) -> int:
        return self.times.size

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def to_frame(self) -> pd.DataFrame:
        """Node-wise dump: time,node_0,...,node_{M-1}."""
        cols = [f"node_{k}" for k in range(self.states.shape[1])]
        df = pd.DataFrame(self.states, columns=cols)
        df.insert(0, "time", self.times)
        return df

    def regional_frame(self, g: Connectome) -> pd.DataFrame:
        """Volume-weighted regional averages: time,region_1,...,region_R."""
        from qoi import region_average_matrix

        averages = self.states @ region_average_matrix(g).T
        cols = [f"region_{j}" for j in range(1, g.region_count + 1)]
        df = pd.DataFrame(averages, columns=cols)
        df.insert(0, "time", self.times)
        return df

# ==============================================================================
# LINEAR ALGEBRA
# ==============================================================================

def _base_matrix(laplacian: sparse.spmatrix, dt: float, copies: int = 1) -> sparse.csc_matrix:
    m = laplacian.shape[0]
    single = (sparse.identity(m, format="csc") / dt + 0.5 * laplacian).tocsc()
    if copies == 1:
        return single
    return sparse.block_diag([single] * copies, format="csc")


def _condition_estimate(A: sparse.spmatrix) -> float:
    if A.shape[0] <= 2000:
        with np.errstate(all="ignore"):
            return float(np.linalg.cond(A.toarray(), 1))
    return float("inf")


def _solve(A: sparse.csc_matrix, rhs: np.ndarray, x0: np.ndarray, direct: bool, tol: float) -> np.ndarray:
    try:
        if direct:
            lu = spla.splu(A, permc_spec="NATURAL")
            x = lu.solve(rhs)
        else:
            ilu = spla.spilu(A)
            precond = spla.LinearOperator(A.shape, ilu.solve)
            x, info = spla.gmres(A, rhs, x0=x0, rtol=1e-12, atol=0.0, M=precond)
            if info != 0:
                raise SolverError(f"GMRES did not converge (info={info})")
    except RuntimeError as exc:
        if isinstance(exc, SolverError):
            raise
        raise SolverError(
            f"singular system matrix ({exc}); condition estimate {_condition_estimate(A):.3e}"
        ) from exc

    if not np.all(np.isfinite(x)):
        raise SolverError("non-finite state after linear solve")

    a_norm = float(abs(A).sum(axis=0).max())
    scale = np.linalg.norm(rhs) + a_norm * np.linalg.norm(x)
    residual = rhs - A @ x
    if np.linalg.norm(residual) > tol * max(scale, np.finfo(float).tiny):
        # One round of iterative refinement before giving up
        x = x + (lu.solve(residual) if direct else spla.gmres(A, residual, rtol=1e-12, atol=0.0)[0])
        residual = rhs - A @ x
        if np.linalg.norm(residual) > tol * max(scale, np.finfo(float).tiny):
            raise SolverError(
                f"relative residual {np.linalg.norm(residual) / scale:.3e} above {tol:.1e}; "
                f"condition estimate {_condition_estimate(A):.3e}"
            )
    return x


def _advance(
    base: sparse.csc_matrix,
    laplacian: sparse.spmatrix,
    alpha: np.ndarray,
    c_k: np.ndarray,
    c_km1: np.ndarray,
    dt: float,
    direct: bool,
    tol: float,
) -> np.ndarray:
    """One scheme step for S stacked trajectories (arrays of shape (S, M))."""
    e = 1.0 - 1.5 * c_k + 0.5 * c_km1
    r = alpha * e
    A = (base - sparse.diags(0.5 * r.ravel())).tocsc()
    rhs = c_k / dt - 0.5 * (laplacian @ c_k.T).T + 0.5 * r * c_k
    x = _solve(A, rhs.ravel(), c_k.ravel(), direct, tol)
    return x.reshape(c_k.shape)

# ==============================================================================
# PUBLIC API
# ==============================================================================

def step(
    c_k: np.ndarray,
    c_km1: np.ndarray,
    L: sparse.spmatrix,
    alpha: np.ndarray,
    dt: float,
    residual_tol: float = RESIDUAL_TOL,
) -> np.ndarray:
    """Advance one time level: returns c^(k+1) from c^k and c^(k-1)."""
    c_k = np.asarray(c_k, dtype=float).ravel()
    c_km1 = np.asarray(c_km1, dtype=float).ravel()
    alpha = np.asarray(alpha, dtype=float).ravel()
    m = L.shape[0]
    if not (c_k.size == c_km1.size == alpha.size == m):
        raise ValidationError(
            f"length mismatch: c_k={c_k.size}, c_km1={c_km1.size}, alpha={alpha.size}, L={m}"
        )
    if dt <= 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    if not (np.all(np.isfinite(c_k)) and np.all(np.isfinite(c_km1)) and np.all(np.isfinite(alpha))):
        raise SolverError("non-finite state or reaction coefficient")

    base = _base_matrix(sparse.csr_matrix(L), dt)
    out = _advance(base, L, alpha[None, :], c_k[None, :], c_km1[None, :], dt, True, residual_tol)
    return out[0]


def _integrate(
    laplacian: sparse.spmatrix, alphas: np.ndarray, c0: np.ndarray, cfg: SolverConfig
) -> tuple[np.ndarray, np.ndarray]:
    num_samples, m = alphas.shape
    direct = cfg.uses_direct(m)
    base = _base_matrix(laplacian, cfg.dt, copies=num_samples)
    record = {l: idx for idx, l in enumerate(cfg.sample_steps)}

    states = np.empty((num_samples, len(record), m))
    c_prev = c0.copy()
    c = c0.copy()
    violation = np.zeros(num_samples)
    if 0 in record:
        states[:, record[0], :] = c

    for k in range(cfg.n_steps):
        c_next = _advance(base, laplacian, alphas, c, c_prev, cfg.dt, direct, cfg.residual_tol)
        c_prev, c = c, c_next
        violation = np.maximum(violation, np.maximum(c - 1.0, -c).max(axis=1))
        if k + 1 in record:
            states[:, record[k + 1], :] = c
    return states, np.maximum(violation, 0.0)


def _check_inputs(g: Connectome, alphas: np.ndarray, c0: np.ndarray) -> None:
    m = g.num_nodes
    if alphas.shape[-1] != m or c0.shape[-1] != m:
        raise ValidationError(
            f"length mismatch: alpha={alphas.shape[-1]}, c0={c0.shape[-1]}, nodes={m}"
        )
    if not np.all(np.isfinite(alphas)):
        raise SolverError("non-finite reaction coefficient")
    if not np.all(np.isfinite(c0)) or c0.min() < 0.0 or c0.max() > 1.0:
        raise ValidationError("initial condition must be finite and lie in [0, 1]")


def solve_trajectory(
    g: Connectome, alpha: np.ndarray, c0: np.ndarray, cfg: SolverConfig
) -> Trajectory:
    """Integrate one trajectory over [0, T], recording cfg.sample_times."""
    alpha = np.asarray(alpha, dtype=float).ravel()
    c0 = np.asarray(c0, dtype=float).ravel()
    _check_inputs(g, alpha, c0)

    states, violation = _integrate(g.laplacian, alpha[None, :], c0[None, :], cfg)
    if violation[0] > BOUNDS_WARN_TOL:
        CONSOLE.print(f"  ⚠ solution left [0, 1] by {violation[0]:.2e}")
    return Trajectory(
        times=np.asarray(cfg.sample_times, dtype=float),
        states=states[0],
        bounds_violation=float(violation[0]),
    )


def solve_batch(
    g: Connectome, alphas: np.ndarray, c0: np.ndarray, cfg: SolverConfig
) -> tuple[np.ndarray, np.ndarray]:
    """
    Integrate S trajectories at once (one block-diagonal system per step).

    alphas: (S, M); c0: (M,) shared or (S, M).
    Returns states (S, n_times, M) and per-sample bounds violations (S,).
    """
    alphas = np.atleast_2d(np.asarray(alphas, dtype=float))
    c0 = np.asarray(c0, dtype=float)
    _check_inputs(g, alphas, c0)
    c0 = np.broadcast_to(c0, alphas.shape).copy()
    return _integrate(g.laplacian, alphas, c0, cfg)
