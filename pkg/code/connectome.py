"""
Connectome Graph Model
======================

Weighted undirected brain graph used as the discrete domain of the
Fisher-Kolmogorov model:

  - nodes carry a region index (1..R) and a volume,
  - edges carry a positive diffusion conductance (1/years),
  - the graph Laplacian L = D - W replaces the continuous diffusion operator.

Also handles scan ingestion (CSV -> rescaled concentration field), outlier
node filtering between two scans, connectogram thresholding for plots and a
seeded synthetic graph generator used in place of patient data.

Graph file (JSON):
    {"region_count": R,
     "region_names": [...],                       (optional)
     "nodes": [{"id": 0, "region": 1, "volume": 1.0, "pos": [x, y, z]}, ...],
     "edges": [{"i": 0, "j": 1, "weight": 0.05}, ...]}

Scan file (CSV): header `node_id,value`, one row per node.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from errors import ConnectomeError

# ==============================================================================
# CONSTANTS
# ==============================================================================

# Region grouping of the Brainnetome parcellation used for the lobe-wise reaction field
LOBE_NAMES = (
    "frontal",
    "temporal",
    "parietal",
    "insular",
    "limbic",
    "occipital",
    "subcortical",
)

DEFAULT_OUTLIER_TOL = 0.10
DEFAULT_CONNECTOGRAM_FRACTION = 0.05


def default_region_names(region_count: int) -> tuple[str, ...]:
    if region_count == len(LOBE_NAMES):
        return LOBE_NAMES
    return tuple(f"region_{j}" for j in range(1, region_count + 1))

# ==============================================================================
# DATA MODEL
# ==============================================================================

@dataclass(frozen=True)
class Node:
    id: int
    region: int
    volume: float
    pos: tuple[float, float, float] | None = None


@dataclass(frozen=True)
class Edge:
    i: int
    j: int
    weight: float


@dataclass(frozen=True)
class Connectome:
    """
    Validated, immutable graph. Nodes are stored sorted by id.

    Derived arrays (regions, volumes, Laplacian, ...) are computed once on
    first access and are read-only.
    """

    region_count: int
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    region_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda n: n.id)))
        object.__setattr__(self, "edges", tuple(self.edges))
        if not self.region_names:
            object.__setattr__(self, "region_names", default_region_names(self.region_count))
        else:
            object.__setattr__(self, "region_names", tuple(self.region_names))
        _validate(self)

    # --- sizes -----------------------------------------------------------------

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    # --- node-wise arrays ------------------------------------------------------

    @cached_property
    def regions(self) -> np.ndarray:
        """Region index (1..R) of every node."""
        return _readonly(np.array([n.region for n in self.nodes], dtype=int))

    @cached_property
    def volumes(self) -> np.ndarray:
        return _readonly(np.array([n.volume for n in self.nodes], dtype=float))

    @cached_property
    def edge_index(self) -> np.ndarray:
        return _readonly(np.array([(e.i, e.j) for e in self.edges], dtype=int).reshape(-1, 2))

    @cached_property
    def weights(self) -> np.ndarray:
        return _readonly(np.array([e.weight for e in self.edges], dtype=float))

    @cached_property
    def laplacian(self) -> sparse.csr_matrix:
        """Graph Laplacian, assembled once per graph. Treat as read-only."""
        return build_laplacian(self)


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def _validate(g: Connectome) -> None:
    """Check every Connectome invariant, naming the offending record."""
    if not isinstance(g.region_count, (int, np.integer)) or g.region_count < 1:
        raise ConnectomeError(f"region_count must be a positive integer, got {g.region_count!r}")
    if not g.nodes:
        raise ConnectomeError("graph has no nodes")
    if len(g.region_names) != g.region_count:
        raise ConnectomeError(
            f"region_names has {len(g.region_names)} entries, expected {g.region_count}"
        )

    ids = [n.id for n in g.nodes]
    seen: set[int] = set()
    for n in g.nodes:
        if n.id in seen:
            raise ConnectomeError(f"node {n.id}: duplicate node id")
        seen.add(n.id)
    if ids != list(range(len(ids))):
        missing = sorted(set(range(len(ids))) - seen)
        raise ConnectomeError(
            f"node ids must be exactly 0..{len(ids) - 1}; missing {missing[:5]}"
        )

    used_regions = set()
    for n in g.nodes:
        if not 1 <= n.region <= g.region_count:
            raise ConnectomeError(
                f"node {n.id}: region {n.region} outside [1, {g.region_count}]"
            )
        if not np.isfinite(n.volume) or n.volume <= 0:
            raise ConnectomeError(f"node {n.id}: non-positive volume {n.volume}")
        used_regions.add(n.region)
    gaps = sorted(set(range(1, g.region_count + 1)) - used_regions)
    if gaps:
        raise ConnectomeError(f"region gap: regions {gaps} have no nodes")

    num_nodes = len(g.nodes)
    pairs: set[tuple[int, int]] = set()
    for k, e in enumerate(g.edges):
        label = f"edge {k} ({e.i}-{e.j})"
        if not (0 <= e.i < num_nodes and 0 <= e.j < num_nodes):
            raise ConnectomeError(f"{label}: unknown node id")
        if e.i == e.j:
            raise ConnectomeError(f"{label}: self-loop")
        if not np.isfinite(e.weight) or e.weight <= 0:
            raise ConnectomeError(f"{label}: non-positive weight {e.weight}")
        key = (min(e.i, e.j), max(e.i, e.j))
        if key in pairs:
            raise ConnectomeError(f"{label}: duplicate edge")
        pairs.add(key)

# ==============================================================================
# FILE INGESTION
# ==============================================================================

def connectome_from_dict(data: dict[str, Any]) -> Connectome:
    """Build a Connectome from the parsed JSON schema."""
    try:
        nodes = []
        for raw in data["nodes"]:
            pos = raw.get("pos")
            nodes.append(
                Node(
                    id=int(raw["id"]),
                    region=int(raw["region"]),
                    volume=float(raw["volume"]),
                    pos=None if pos is None else tuple(float(x) for x in pos),
                )
            )
        edges = [
            Edge(i=int(raw["i"]), j=int(raw["j"]), weight=float(raw["weight"]))
            for raw in data.get("edges", [])
        ]
        region_count = int(data["region_count"])
        names = tuple(data.get("region_names") or ())
    except (KeyError, TypeError, ValueError) as exc:
        raise ConnectomeError(f"parse failure: {type(exc).__name__}: {exc}") from exc

    return Connectome(
        region_count=region_count, nodes=tuple(nodes), edges=tuple(edges), region_names=names
    )


def connectome_to_dict(g: Connectome) -> dict[str, Any]:
    nodes = []
    for n in g.nodes:
        record: dict[str, Any] = {"id": n.id, "region": n.region, "volume": n.volume}
        if n.pos is not None:
            record["pos"] = list(n.pos)
        nodes.append(record)
    return {
        "region_count": g.region_count,
        "region_names": list(g.region_names),
        "nodes": nodes,
        "edges": [{"i": e.i, "j": e.j, "weight": e.weight} for e in g.edges],
    }


def load_connectome(path: str | Path) -> Connectome:
    """Load and validate a graph file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Missing graph file: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConnectomeError(f"parse failure in {path.name}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConnectomeError(f"parse failure in {path.name}: top level must be an object")
    return connectome_from_dict(data)


def save_connectome(g: Connectome, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(connectome_to_dict(g), f, indent=2)
    return path

# ==============================================================================
# LAPLACIAN
# ==============================================================================

def build_laplacian(g: Connectome) -> sparse.csr_matrix:
    """
    Assemble L = D - W with W_ij = edge weight and D_ii = sum_j W_ij.

    L is symmetric with zero row sums, non-positive off-diagonals and a
    non-negative diagonal (positive semi-definite).
    """
    m = g.num_nodes
    if g.num_edges == 0:
        return sparse.csr_matrix((m, m), dtype=float)

    i, j = g.edge_index[:, 0], g.edge_index[:, 1]
    w = g.weights
    adjacency = sparse.coo_matrix(
        (np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
        shape=(m, m),
    ).tocsr()
    degree = np.asarray(adjacency.sum(axis=1)).ravel()
    laplacian = (sparse.diags(degree) - adjacency).tocsr()
    laplacian.sort_indices()
    return laplacian

# ==============================================================================
# SCANS
# ==============================================================================

def _as_node_vector(g: Connectome, values: Sequence[float] | np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.shape[0] != g.num_nodes:
        raise ConnectomeError(f"{name}: length {arr.shape[0]} does not match {g.num_nodes} nodes")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise ConnectomeError(f"{name}: non-finite value at node {bad}")
    return arr


def _rescale(raw: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi > lo:
        return (raw - lo) / (hi - lo)
    # Degenerate range: neutral concentration
    return np.full_like(raw, 0.5)


def project_scan(g: Connectome, raw: Sequence[float] | np.ndarray) -> np.ndarray:
    """Rescale raw per-node scan values to [0, 1] by (x - min) / (max - min)."""
    arr = _as_node_vector(g, raw, "scan")
    return _rescale(arr, float(arr.min()), float(arr.max()))


def project_scan_pair(
    g: Connectome, raw1: Sequence[float] | np.ndarray, raw2: Sequence[float] | np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Rescale two scans with a shared (min, max) so longitudinal change survives."""
    a = _as_node_vector(g, raw1, "scan1")
    b = _as_node_vector(g, raw2, "scan2")
    lo = float(min(a.min(), b.min()))
    hi = float(max(a.max(), b.max()))
    return _rescale(a, lo, hi), _rescale(b, lo, hi)


def read_scan_values(path: str | Path, g: Connectome) -> np.ndarray:
    """Read a `node_id,value` CSV into a node-ordered vector (no rescaling)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Missing scan file: {path}")
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise ConnectomeError(f"parse failure in {path.name}: {exc}") from exc

    missing_cols = {"node_id", "value"} - set(df.columns)
    if missing_cols:
        raise ConnectomeError(f"{path.name}: missing columns {sorted(missing_cols)}")
    if df["node_id"].duplicated().any():
        dup = int(df.loc[df["node_id"].duplicated(), "node_id"].iloc[0])
        raise ConnectomeError(f"{path.name}: duplicate row for node {dup}")
    expected = set(range(g.num_nodes))
    present = set(int(x) for x in df["node_id"])
    if present != expected:
        diff = sorted(expected.symmetric_difference(present))
        raise ConnectomeError(f"{path.name}: node ids do not match the graph (e.g. {diff[:5]})")

    values = df.sort_values("node_id")["value"].to_numpy(dtype=float)
    return _as_node_vector(g, values, path.name)


def load_scan(path: str | Path, g: Connectome, already_scaled: bool = False) -> np.ndarray:
    """Load a scan CSV and return the concentration field in [0, 1]."""
    values = read_scan_values(path, g)
    if not already_scaled:
        return project_scan(g, values)
    if values.min() < 0.0 or values.max() > 1.0:
        raise ConnectomeError(
            f"{Path(path).name}: flagged as already scaled but values lie in "
            f"[{values.min():.4g}, {values.max():.4g}]"
        )
    return values


def save_scan(values: Sequence[float] | np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(values, dtype=float).ravel()
    pd.DataFrame({"node_id": np.arange(arr.size), "value": arr}).to_csv(path, index=False)
    return path


def filter_outlier_nodes(
    scan1: Sequence[float] | np.ndarray,
    scan2: Sequence[float] | np.ndarray,
    tol: float = DEFAULT_OUTLIER_TOL,
) -> np.ndarray:
    """
    Inclusion mask for calibration: node k is excluded when its second-scan
    value dropped by more than `tol` relative to the first scan.

    Excluded nodes still take part in the dynamics; they are only dropped
    from the regional averages the calibration fits.
    """
    a = np.asarray(scan1, dtype=float).ravel()
    b = np.asarray(scan2, dtype=float).ravel()
    if a.shape != b.shape:
        raise ConnectomeError(f"scan length mismatch: {a.size} vs {b.size}")
    if not 0.0 <= tol <= 1.0:
        raise ConnectomeError(f"outlier tolerance must lie in [0, 1], got {tol}")
    return ~(b < a * (1.0 - tol))


def threshold_connectogram(
    g: Connectome, fraction: float = DEFAULT_CONNECTOGRAM_FRACTION
) -> list[Edge]:
    """Edges with weight >= fraction * max weight (for connectogram plots)."""
    if not 0.0 <= fraction <= 1.0:
        raise ConnectomeError(f"fraction must lie in [0, 1], got {fraction}")
    if g.num_edges == 0:
        raise ConnectomeError("empty edge set")
    cutoff = fraction * float(g.weights.max())
    return [e for e in g.edges if e.weight >= cutoff]


def region_volumes(g: Connectome, mask: np.ndarray | None = None) -> np.ndarray:
    """Total (optionally masked) volume of every region."""
    vol = g.volumes if mask is None else np.where(np.asarray(mask, dtype=bool), g.volumes, 0.0)
    return np.bincount(g.regions - 1, weights=vol, minlength=g.region_count)


def connectome_summary(g: Connectome) -> pd.DataFrame:
    """Per-region node count and volume, used by reports."""
    counts = np.bincount(g.regions - 1, minlength=g.region_count)
    return pd.DataFrame(
        {
            "region": np.arange(1, g.region_count + 1),
            "name": list(g.region_names),
            "nodes": counts,
            "volume": region_volumes(g),
        }
    )

# ==============================================================================
# SYNTHETIC GRAPHS
# ==============================================================================

@dataclass(frozen=True)
class SyntheticSpec:
    """
    Recipe for a seeded synthetic connectome.

    Edges are drawn independently with probability intra_density (same region)
    or inter_density (different regions); the draw is repeated until the graph
    is connected. Edge weight = weight_scale * fiber_count / path_length with
    fiber_count and path_length sampled uniformly from their ranges.
    """

    nodes_per_region: tuple[int, ...] = (6,) * 7
    intra_density: float = 0.5
    inter_density: float = 0.05
    weight_scale: float = 0.05
    volume_range: tuple[float, float] = (0.5, 2.0)
    fiber_count_range: tuple[int, int] = (1, 50)
    path_length_range: tuple[float, float] = (10.0, 80.0)
    max_attempts: int = 1000

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes_per_region", tuple(int(n) for n in self.nodes_per_region))
        if not self.nodes_per_region:
            raise ConnectomeError("spec infeasible: no regions")
        empty = [j + 1 for j, n in enumerate(self.nodes_per_region) if n < 1]
        if empty:
            raise ConnectomeError(f"spec infeasible: regions {empty} have no nodes")
        for name in ("intra_density", "inter_density"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ConnectomeError(f"spec infeasible: {name}={value} outside (0, 1]")
        if self.weight_scale <= 0:
            raise ConnectomeError("spec infeasible: weight_scale must be positive")
        lo, hi = self.volume_range
        if not 0 < lo <= hi:
            raise ConnectomeError(f"spec infeasible: volume_range {self.volume_range}")
        if not 1 <= self.fiber_count_range[0] <= self.fiber_count_range[1]:
            raise ConnectomeError(f"spec infeasible: fiber_count_range {self.fiber_count_range}")
        if not 0 < self.path_length_range[0] <= self.path_length_range[1]:
            raise ConnectomeError(f"spec infeasible: path_length_range {self.path_length_range}")

    @property
    def region_count(self) -> int:
        return len(self.nodes_per_region)


def generate_synthetic(spec: SyntheticSpec | None = None, seed: int = 42) -> Connectome:
    """Deterministic (for fixed seed) connected synthetic connectome."""
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(seed)

    regions = np.repeat(np.arange(1, spec.region_count + 1), spec.nodes_per_region)
    m = regions.size
    iu, ju = np.triu_indices(m, k=1)
    same_region = regions[iu] == regions[ju]
    edge_prob = np.where(same_region, spec.intra_density, spec.inter_density)

    for _attempt in range(spec.max_attempts):
        keep = rng.random(iu.size) < edge_prob
        ei, ej = iu[keep], ju[keep]
        if m == 1:
            break
        adjacency = sparse.coo_matrix((np.ones(ei.size), (ei, ej)), shape=(m, m))
        n_components, _ = connected_components(adjacency, directed=False)
        if n_components == 1:
            break
    else:
        raise ConnectomeError(
            f"spec infeasible: no connected graph after {spec.max_attempts} attempts"
        )

    counts = rng.integers(spec.fiber_count_range[0], spec.fiber_count_range[1] + 1, size=ei.size)
    lengths = rng.uniform(*spec.path_length_range, size=ei.size)
    weights = spec.weight_scale * counts / lengths
    volumes = rng.uniform(*spec.volume_range, size=m)

    # Region clusters on a ring, nodes scattered around their cluster centre
    angles = 2.0 * np.pi * np.arange(spec.region_count) / spec.region_count
    centres = np.column_stack([60.0 * np.cos(angles), 60.0 * np.sin(angles), np.zeros_like(angles)])
    positions = centres[regions - 1] + rng.normal(0.0, 10.0, size=(m, 3))

    nodes = tuple(
        Node(id=k, region=int(regions[k]), volume=float(volumes[k]),
             pos=tuple(float(x) for x in positions[k]))
        for k in range(m)
    )
    edges = tuple(
        Edge(i=int(a), j=int(b), weight=float(w)) for a, b, w in zip(ei, ej, weights)
    )
    return Connectome(region_count=spec.region_count, nodes=nodes, edges=edges)
