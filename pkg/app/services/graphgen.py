"""
Graphfeed - Synthetic Graph Generator

RMAT-style recursive edge generator with power-law degrees, plus seeded
feature tables. Writes graph.bin and features.bin into a dataset directory.
"""
from __future__ import annotations

import logging
import math
from collections.abc import Iterator
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from core.exceptions import ConfigurationError
from core.storage import build_csc, persist_features, persist_graph
from core.storage.binary import NODE_DTYPE, SCALAR_DTYPE
from services.sampler import make_generator

logger = logging.getLogger(__name__)

GRAPH_FILENAME = "graph.bin"
FEATURES_FILENAME = "features.bin"

EDGE_CHUNK = 1 << 20
FEATURE_CHUNK_BYTES = 1 << 24


@dataclass
class GenSpec:
    """
    Generator parameters.

    a, b, c, d are the quadrant probabilities of each recursion level
    (top-left, top-right, bottom-left, bottom-right).
    """

    num_nodes: int
    avg_degree: float = 15.0
    dim: int = 256
    seed: int = 0
    a: float = 0.57
    b: float = 0.19
    c: float = 0.19
    d: float = 0.05

    def validate(self) -> None:
        if self.num_nodes < 1:
            raise ConfigurationError(f"num_nodes must be >= 1, got {self.num_nodes}")
        if self.avg_degree < 0:
            raise ConfigurationError(f"avg_degree must be >= 0, got {self.avg_degree}")
        if self.dim < 1:
            raise ConfigurationError(f"dim must be >= 1, got {self.dim}")
        probabilities = (self.a, self.b, self.c, self.d)
        if min(probabilities) < 0 or not math.isclose(sum(probabilities), 1.0, abs_tol=1e-9):
            raise ConfigurationError(f"Quadrant probabilities must be >= 0 and sum to 1, got {probabilities}")

    @property
    def scale(self) -> int:
        """Recursion depth: 2**scale >= num_nodes."""
        return max(0, math.ceil(math.log2(self.num_nodes)))

    @property
    def target_edges(self) -> int:
        return round(self.num_nodes * self.avg_degree)


@dataclass
class GeneratedDataset:
    """Files and sizes of a generated dataset."""

    graph_path: Path
    features_path: Path
    num_nodes: int
    num_edges: int
    dim: int
    graph_bytes: int
    feature_bytes: int

    def to_dict(self) -> dict:
        data = asdict(self)
        data["graph_path"] = str(self.graph_path)
        data["features_path"] = str(self.features_path)
        return data


def rmat_edges(spec: GenSpec) -> np.ndarray:
    """
    Draw spec.target_edges (src, dst) pairs.

    Each level picks a quadrant and appends one bit to both endpoints.
    Endpoints beyond num_nodes and self-loops are dropped, and node labels
    are shuffled so high-degree nodes are spread over the ID space.
    """
    spec.validate()
    rng = make_generator((spec.seed, 0))
    thresholds = np.cumsum([spec.a, spec.b, spec.c])
    chunks = []

    remaining = spec.target_edges
    while remaining > 0:
        size = min(remaining, EDGE_CHUNK)
        src = np.zeros(size, dtype=NODE_DTYPE)
        dst = np.zeros(size, dtype=NODE_DTYPE)
        for _ in range(spec.scale):
            quadrant = np.searchsorted(thresholds, rng.random(size), side="right")
            src = (src << 1) | (quadrant >= 2)
            dst = (dst << 1) | (quadrant % 2)
        keep = (src < spec.num_nodes) & (dst < spec.num_nodes) & (src != dst)
        chunks.append(np.column_stack((src[keep], dst[keep])))
        remaining -= size

    if not chunks:
        return np.zeros((0, 2), dtype=NODE_DTYPE)

    labels = rng.permutation(spec.num_nodes).astype(NODE_DTYPE)
    return labels[np.concatenate(chunks)]


def feature_blocks(spec: GenSpec) -> Iterator[np.ndarray]:
    """Seeded uniform floats in [-1, 1), in row blocks."""
    rng = make_generator((spec.seed, 1))
    rows_per_block = max(1, FEATURE_CHUNK_BYTES // (spec.dim * SCALAR_DTYPE.itemsize))
    for start in range(0, spec.num_nodes, rows_per_block):
        rows = min(rows_per_block, spec.num_nodes - start)
        yield rng.random((rows, spec.dim), dtype=np.float32) * 2 - 1


def generate(spec: GenSpec, out_dir: Path | str) -> GeneratedDataset:
    """
    Generate a dataset into out_dir.

    Deterministic given the spec.
    """
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    graph = build_csc(rmat_edges(spec), spec.num_nodes)
    graph_path = persist_graph(graph, out_dir / GRAPH_FILENAME)
    features_path = persist_features(out_dir / FEATURES_FILENAME, spec.num_nodes, spec.dim, feature_blocks(spec))

    dataset = GeneratedDataset(
        graph_path=graph_path,
        features_path=features_path,
        num_nodes=spec.num_nodes,
        num_edges=graph.num_edges,
        dim=spec.dim,
        graph_bytes=graph_path.stat().st_size,
        feature_bytes=features_path.stat().st_size,
    )
    logger.info(f"Generated dataset in {out_dir}: {dataset.num_nodes} nodes, {dataset.num_edges} edges")
    return dataset
