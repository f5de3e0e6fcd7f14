"""
Build the neighbor cache of a graph offline and persist it as ncache.bin.
"""
from __future__ import annotations

from pathlib import Path
from typing import Any

from django.core.management.base import CommandError

from core.management.base import GraphfeedCommand
from core.storage import open_graph
from services.neighbor_cache import ENTRY_BYTES, build_neighbor_cache, persist_neighbor_cache
from services.pipeline.config import GRAPH_FILENAME, NEIGHBOR_CACHE_FILENAME


class Command(GraphfeedCommand):
    help = "Build the neighbor cache under a byte budget"

    def add_arguments(self, parser):
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument("--graph", help="graph.bin path")
        source.add_argument("--dataset", help="Dataset directory holding graph.bin")
        parser.add_argument("--budget-bytes", type=int, required=True, help="Address table plus cached regions")
        parser.add_argument("--out", help="ncache.bin path (default: next to the graph)")

    def execute_command(self, **options: Any) -> None:
        graph_path = Path(options["graph"]) if options["graph"] else Path(options["dataset"]) / GRAPH_FILENAME
        if not graph_path.exists():
            raise CommandError(f"Graph file not found: {graph_path}")
        out = Path(options["out"]) if options["out"] else graph_path.parent / NEIGHBOR_CACHE_FILENAME

        with open_graph(graph_path) as graph:
            cache = build_neighbor_cache(graph, options["budget_bytes"])
        persist_neighbor_cache(cache, out)

        self.stdout.write(f"cached nodes:  {cache.num_cached} of {cache.num_nodes}")
        self.stdout.write(f"table bytes:   {cache.num_nodes * ENTRY_BYTES}")
        self.stdout.write(f"used bytes:    {cache.size_bytes} of {options['budget_bytes']}")
        self.stdout.write(self.style.SUCCESS(f"Neighbor cache written to {out}"))
