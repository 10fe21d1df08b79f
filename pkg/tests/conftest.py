"""Shared fixtures: small graphs, toy forward models and reference lobe tables."""

import sys
from pathlib import Path

import numpy as np
import pytest

CODE_DIR = Path(__file__).resolve().parents[1] / "code"
sys.path.insert(0, str(CODE_DIR))

from config_paths import set_quiet  # noqa: E402
from connectome import Connectome, Edge, Node, SyntheticSpec, generate_synthetic  # noqa: E402
from field import reference_posterior, reference_prior_bounds  # noqa: E402
from solver import SolverConfig  # noqa: E402

set_quiet(True)


def make_graph(region_of: list[int], edges: list[tuple[int, int, float]], volumes=None) -> Connectome:
    volumes = volumes or [1.0] * len(region_of)
    nodes = tuple(Node(id=k, region=r, volume=v) for k, (r, v) in enumerate(zip(region_of, volumes)))
    return Connectome(
        region_count=max(region_of),
        nodes=nodes,
        edges=tuple(Edge(i=i, j=j, weight=w) for i, j, w in edges),
    )


class ToyModel:
    """
    Cheap stand-in for the FK forward model with the same batch interface.

    Output columns [global, region_1..R] at every time are f(p) scaled by the
    time index + 1, with f chosen by `kind`:
      linear   global = p_1, region_j = p_j
      square   global = p_1^2, region_j = p_j^2
      constant everything = 0.7
    """

    def __init__(self, dim: int, kind: str = "linear", times=(1.0, 2.0)):
        self.dim = dim
        self.kind = kind
        self.times = np.asarray(times, dtype=float)
        self.default_batch_size = 64

    def evaluate_batch(self, params: np.ndarray) -> np.ndarray:
        params = np.atleast_2d(np.asarray(params, dtype=float))
        if self.kind == "linear":
            base = np.column_stack([params[:, 0], params])
        elif self.kind == "square":
            base = np.column_stack([params[:, 0], params]) ** 2
        else:
            base = np.full((params.shape[0], 1 + self.dim), 0.7)
        return np.stack([base * (k + 1) for k in range(self.times.size)], axis=1)


@pytest.fixture
def two_node_graph() -> Connectome:
    return make_graph([1, 1], [(0, 1, 2.0)])


@pytest.fixture
def path_graph() -> Connectome:
    return make_graph([1, 1, 1], [(0, 1, 1.0), (1, 2, 1.0)])


@pytest.fixture(scope="session")
def small_graph() -> Connectome:
    """7 regions x 3 nodes, connected."""
    return generate_synthetic(SyntheticSpec(nodes_per_region=(3,) * 7, intra_density=0.9), seed=7)


@pytest.fixture(scope="session")
def synthetic_graph() -> Connectome:
    """Default 7 regions x 6 nodes graph."""
    return generate_synthetic(seed=42)


@pytest.fixture(scope="session")
def synthetic_c0(synthetic_graph) -> np.ndarray:
    return np.random.default_rng(5).uniform(0.02, 0.2, size=synthetic_graph.num_nodes)


@pytest.fixture
def lobe_posterior():
    return reference_posterior()


@pytest.fixture
def lobe_bounds():
    return reference_prior_bounds()


@pytest.fixture
def short_cfg() -> SolverConfig:
    return SolverConfig(dt=0.1, T=1.0, sample_times=(0.5, 1.0))
