"""
Sweep cache policies and capacities over a sampled trace and write the
miss-ratio CSV.

The trace comes either from sampling one epoch of a run configuration or
from a directory of ids_{superbatch}_{iteration}.bin files.
"""
from __future__ import annotations

import logging
import math
import re
from collections import defaultdict
from pathlib import Path
from typing import Any

import numpy as np
from django.core.management.base import CommandError

from core.choices import CachePolicy
from core.management.base import GraphfeedCommand, add_run_config_arguments, build_run_config
from core.storage import open_graph
from core.storage.runtime import read_ids_file
from services.baselines import PolicyResult, evaluate_grid
from services.metrics import report_service
from services.pipeline import SuperbatchOrchestrator
from services.pipeline.config import GRAPH_FILENAME

logger = logging.getLogger(__name__)

IDS_FILE_PATTERN = re.compile(r"^ids_(\d+)_(\d+)\.bin$")


def parse_capacity(token: str, num_nodes: int) -> int:
    """An entry count, or a percentage of the nodes such as "1%" (rounded down)."""
    token = token.strip()
    if token.endswith("%"):
        share = float(token[:-1])
        if not 0 <= share <= 100:
            raise ValueError(f"Capacity share must be in [0%, 100%], got {token}")
        return math.floor(num_nodes * share / 100)
    entries = int(token)
    if entries < 0:
        raise ValueError(f"Capacity must be >= 0, got {token}")
    return entries


def parse_policies(value: str) -> list[str]:
    """Comma-separated policy names, checked before anything runs."""
    policies = [p.strip() for p in value.split(",") if p.strip()]
    for policy in policies:
        if policy not in CachePolicy.values:
            raise ValueError(f"Unknown policy {policy!r} (expected one of {', '.join(CachePolicy.values)})")
    return policies


def read_trace_dir(trace_dir: Path) -> list[list[np.ndarray]]:
    """ids files grouped by superbatch, each in iteration order."""
    grouped: dict[int, dict[int, Path]] = defaultdict(dict)
    for path in trace_dir.iterdir():
        match = IDS_FILE_PATTERN.match(path.name)
        if match:
            grouped[int(match[1])][int(match[2])] = path
    if not grouped:
        raise CommandError(f"No ids_*_*.bin files in {trace_dir}")

    superbatches = []
    for sb in sorted(grouped):
        files = grouped[sb]
        if sorted(files) != list(range(len(files))):
            raise CommandError(f"Superbatch {sb} in {trace_dir} has gaps in its iteration numbers")
        superbatches.append([read_ids_file(files[i]) for i in range(len(files))])
    return superbatches


class Command(GraphfeedCommand):
    help = "Compare feature-cache policies over a trace and write (policy, capacity, miss_ratio) rows"

    def add_arguments(self, parser):
        add_run_config_arguments(parser)
        parser.add_argument("--trace-dir", help="Directory of ids_{sb}_{i}.bin files instead of sampling")
        parser.add_argument(
            "--policies",
            default=",".join(CachePolicy.values),
            help="Comma-separated policies (default: all)",
        )
        parser.add_argument(
            "--capacities",
            default="1%,2%,5%,10%",
            help="Comma-separated capacities, entries or percentages of nodes",
        )
        parser.add_argument("--epoch", type=int, default=0, help="Epoch to sample when no trace dir is given")
        parser.add_argument("--workers", type=int, default=1, help="Grid cells simulated in parallel")
        parser.add_argument("--out", required=True, help="CSV path")

    def execute_command(self, **options: Any) -> None:
        policies = parse_policies(options["policies"])
        tokens = [t for t in options["capacities"].split(",") if t.strip()]

        if options["trace_dir"]:
            results = self._simulate_trace_dir(Path(options["trace_dir"]), options, policies, tokens)
        else:
            results = self._simulate_config(options, policies, tokens)

        path = report_service.write_policy_csv(results, options["out"])
        for result in results:
            self.stdout.write(f"{result.policy:<14}{result.capacity:>10}{result.miss_ratio:>10.4f}")
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(results)} rows to {path}"))

    def _simulate_config(self, options: dict[str, Any], policies: list[str], tokens: list[str]) -> list[PolicyResult]:
        # Samples do not depend on the neighbor cache
        config = build_run_config(options, use_neighbor_cache=False)
        with SuperbatchOrchestrator(config) as orchestrator:
            num_nodes = orchestrator.graph.num_nodes
            capacities = [parse_capacity(t, num_nodes) for t in tokens]
            superbatches = orchestrator.collect_trace(options["epoch"])
            logger.info(f"Sampled {sum(len(sb) for sb in superbatches)} batches for the policy sweep")
            return evaluate_grid(superbatches, policies, capacities, orchestrator.graph, workers=options["workers"])

    def _simulate_trace_dir(
        self,
        trace_dir: Path,
        options: dict[str, Any],
        policies: list[str],
        tokens: list[str],
    ) -> list[PolicyResult]:
        if not trace_dir.is_dir():
            raise CommandError(f"Trace directory not found: {trace_dir}")
        superbatches = read_trace_dir(trace_dir)

        graph_path = options.get("graph_path")
        if graph_path is None and options.get("dataset_dir"):
            graph_path = Path(options["dataset_dir"]) / GRAPH_FILENAME

        if graph_path is None:
            num_nodes = max(int(ids.max()) + 1 for sb in superbatches for ids in sb if len(ids))
            capacities = [parse_capacity(t, num_nodes) for t in tokens]
            return evaluate_grid(superbatches, policies, capacities, workers=options["workers"])

        with open_graph(graph_path) as graph:
            capacities = [parse_capacity(t, graph.num_nodes) for t in tokens]
            return evaluate_grid(superbatches, policies, capacities, graph, workers=options["workers"])
