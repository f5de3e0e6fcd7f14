"""
Graphfeed - Configuration Advisor

Sizing heuristics run before training:
- superbatch size from the runtime-file footprint of a short profiling run
- neighbor-cache and feature-cache budgets from the memory left over by
  the peak of the stage that does not use them
"""
from __future__ import annotations

import logging
import tempfile
from dataclasses import asdict, dataclass

from core.storage import RuntimeDirectory
from core.storage.binary import DISK_NODE_DTYPE
from services.changeset import precompute_changesets
from services.metrics import StageMetrics
from services.pipeline.config import RunConfig
from services.pipeline.orchestrator import SuperbatchOrchestrator

logger = logging.getLogger(__name__)

# Bytes per entry of in-memory id and edge arrays
ID_BYTES = DISK_NODE_DTYPE.itemsize
EDGE_BYTES = 2 * ID_BYTES


@dataclass
class RuntimeProfile:
    """Measurements of a profiling run."""

    num_batches: int
    bytes_per_iteration: float
    max_ids_per_batch: int
    max_edges_per_batch: int
    peak_sample_bytes: int
    peak_main_bytes: int
    row_bytes: int

    def to_dict(self) -> dict:
        return asdict(self)


def profile_runtime_bytes(config: RunConfig, num_batches: int = 4) -> RuntimeProfile:
    """
    Sample and precompute num_batches batches of epoch 0 in a scratch
    directory and measure the files they leave.

    Peaks are estimates of the resident arrays of each stage, excluding
    the cache the stage's budget is for:
    - sample: in-memory indptr plus per-worker batch buffers
    - main loop: feature-cache address table plus the gathered batch
    """
    if num_batches < 1:
        raise ValueError(f"num_batches must be >= 1, got {num_batches}")

    with tempfile.TemporaryDirectory(prefix="graphfeed-profile-") as scratch:
        runtime = RuntimeDirectory(scratch)
        with SuperbatchOrchestrator(config, runtime=runtime) as orchestrator:
            job = orchestrator.plan_jobs()[0]
            job.seed_batches = job.seed_batches[:num_batches]
            metrics = StageMetrics(epoch=0, superbatch=0, num_batches=job.num_batches)
            orchestrator.sample_stage(job, orchestrator.load_neighbor_cache(), metrics)

            ids = [runtime.read_ids(0, i) for i in range(job.num_batches)]
            edges = [sum(len(layer) for layer in runtime.read_adj(0, i)) for i in range(job.num_batches)]
            precompute_changesets(runtime, 0, job.num_batches, orchestrator.graph.num_nodes, config.cache_entries)

            # The init file belongs to the superbatch, not to an iteration
            per_iteration_files = [p for p in runtime.files_on_disk() if not p.name.startswith("init_")]
            total_bytes = sum(p.stat().st_size for p in per_iteration_files)

            num_nodes = orchestrator.graph.num_nodes
            row_bytes = orchestrator.store.row_bytes

    max_ids = max(len(batch) for batch in ids)
    max_edges = max(edges)
    profile = RuntimeProfile(
        num_batches=job.num_batches,
        bytes_per_iteration=total_bytes / job.num_batches,
        max_ids_per_batch=max_ids,
        max_edges_per_batch=max_edges,
        peak_sample_bytes=(num_nodes + 1) * ID_BYTES
        + config.sampler_workers * (max_ids * ID_BYTES + max_edges * EDGE_BYTES),
        peak_main_bytes=num_nodes * ID_BYTES + max_ids * row_bytes,
        row_bytes=row_bytes,
    )
    logger.info(f"Profile of {profile.num_batches} batches: {profile.bytes_per_iteration:.0f} B of runtime files per iteration")
    return profile


def suggest_superbatch_size(bytes_per_iteration: float, target_runtime_bytes: int, overlap: bool = True) -> int:
    """
    Largest S whose runtime files fit target_runtime_bytes.

    With overlap two superbatches' files coexist, so each gets half.
    """
    if bytes_per_iteration <= 0:
        raise ValueError(f"bytes_per_iteration must be positive, got {bytes_per_iteration}")
    copies = 2 if overlap else 1
    return max(1, int(target_runtime_bytes // (bytes_per_iteration * copies)))


def suggest_cache_sizes(
    total_memory_bytes: int,
    peak_sample_bytes: int,
    peak_main_bytes: int,
    reserve_bytes: int,
    row_bytes: int,
) -> tuple[int, int]:
    """
    Budgets of the two caches.

    The neighbor cache lives during sampling and the feature cache during
    the main loop, so each gets what the other stage's peak leaves.

    Returns:
        (neighbor-cache bytes, feature-cache entries)
    """
    if row_bytes <= 0:
        raise ValueError(f"row_bytes must be positive, got {row_bytes}")
    neighbor_bytes = max(0, total_memory_bytes - peak_sample_bytes - reserve_bytes)
    feature_bytes = max(0, total_memory_bytes - peak_main_bytes - reserve_bytes)
    return neighbor_bytes, feature_bytes // row_bytes
