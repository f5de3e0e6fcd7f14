"""
Graphfeed - Pipeline Package

Run configuration, superbatch orchestration and sizing advice.
"""
from __future__ import annotations

from services.pipeline.config import RunConfig
from services.pipeline.orchestrator import (
    SuperbatchJob,
    SuperbatchOrchestrator,
    compute_stub,
    run_superbatch,
    run_training,
)

__all__ = [
    "RunConfig",
    "SuperbatchJob",
    "SuperbatchOrchestrator",
    "compute_stub",
    "run_superbatch",
    "run_training",
]
