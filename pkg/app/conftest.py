"""
Graphfeed - Test Configuration

Shared fixtures: small graphs, generated on-disk datasets, and traces.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from core.storage import CscGraph, RuntimeDirectory, build_csc, open_features, open_graph, persist_features, persist_graph
from services.graphgen import GenSpec, GeneratedDataset, generate
from services.neighbor_cache import build_neighbor_cache, persist_neighbor_cache
from services.pipeline import RunConfig

# In-neighbors: 0 <- {1, 2, 3}, 1 <- {2}, 2 <- {0, 3}, 3 <- {}, 4 <- {0, 1, 2, 3}
SMALL_EDGES = [
    (1, 0), (2, 0), (3, 0),
    (2, 1),
    (0, 2), (3, 2),
    (0, 4), (1, 4), (2, 4), (3, 4),
]

# Five iterations over five nodes; counts [2, 1, 1, 3, 3]
SMALL_TRACE = [[0, 3], [2, 4], [1, 3], [0, 4], [3, 4]]


def make_trace(
    rng: np.random.Generator,
    num_nodes: int,
    num_iterations: int,
    max_ids: int,
) -> list[np.ndarray]:
    """Random trace of distinct ids per iteration (possibly empty iterations)."""
    max_ids = min(max_ids, num_nodes)
    return [
        rng.choice(num_nodes, size=int(rng.integers(0, max_ids + 1)), replace=False).astype(np.int64)
        for _ in range(num_iterations)
    ]


@pytest.fixture
def small_graph() -> CscGraph:
    """Five-node graph with a node (3) that has no in-neighbors."""
    return build_csc(SMALL_EDGES, 5)


@pytest.fixture
def small_graph_file(small_graph: CscGraph, tmp_path: Path) -> Path:
    """small_graph persisted to graph.bin."""
    return persist_graph(small_graph, tmp_path / "graph.bin")


@pytest.fixture
def small_graph_handle(small_graph_file: Path):
    """Open handle over small_graph_file."""
    with open_graph(small_graph_file) as handle:
        yield handle


@pytest.fixture
def small_trace() -> list[np.ndarray]:
    return [np.asarray(ids, dtype=np.int64) for ids in SMALL_TRACE]


@pytest.fixture
def feature_matrix() -> np.ndarray:
    """Deterministic 40 x 8 float32 table; row v starts with v."""
    values = np.arange(40 * 8, dtype=np.float32).reshape(40, 8) / 8
    return values


@pytest.fixture
def feature_store(feature_matrix: np.ndarray, tmp_path: Path):
    """feature_matrix persisted and opened."""
    path = persist_features(tmp_path / "features.bin", 40, 8, feature_matrix)
    with open_features(path) as store:
        yield store


@pytest.fixture
def runtime(tmp_path: Path) -> RuntimeDirectory:
    return RuntimeDirectory(tmp_path / "runtime")


@pytest.fixture(scope="session")
def generated_dataset(tmp_path_factory) -> GeneratedDataset:
    """600-node power-law dataset with 16-float rows, shared by the session. Read-only."""
    out = tmp_path_factory.mktemp("dataset")
    dataset = generate(GenSpec(num_nodes=600, avg_degree=8, dim=16, seed=11), out)
    with open_graph(dataset.graph_path) as graph:
        cache = build_neighbor_cache(graph, 600 * 8 + 16 * 1024)
    persist_neighbor_cache(cache, out / "ncache.bin")
    return dataset


@pytest.fixture
def run_config(generated_dataset: GeneratedDataset, tmp_path: Path) -> RunConfig:
    """Small run over generated_dataset: 2 hops of 3, batches of 16, superbatches of 4."""
    return RunConfig.from_settings().with_overrides(
        dataset_dir=generated_dataset.graph_path.parent,
        runtime_dir=tmp_path / "runtime",
        report_dir=tmp_path / "report",
        fanouts=(3, 3),
        batch_size=16,
        superbatch_size=4,
        train_fraction=0.25,
        feature_cache_entries=64,
        sampler_workers=2,
    )
