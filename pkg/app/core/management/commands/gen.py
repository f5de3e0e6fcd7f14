"""
Generate a synthetic power-law dataset (graph.bin + features.bin).
"""
from __future__ import annotations

from typing import Any

from core.management.base import GraphfeedCommand
from services.graphgen import GenSpec, generate


class Command(GraphfeedCommand):
    help = "Generate an RMAT graph and a seeded feature table into a dataset directory"

    def add_arguments(self, parser):
        parser.add_argument("--nodes", type=int, required=True, help="Number of nodes")
        parser.add_argument("--avg-degree", type=float, default=15.0, help="Target edges per node")
        parser.add_argument("--dim", type=int, default=256, help="Feature dimension (float32)")
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--out", required=True, help="Dataset directory")
        parser.add_argument("--a", type=float, default=0.57, help="Top-left quadrant probability")
        parser.add_argument("--b", type=float, default=0.19, help="Top-right quadrant probability")
        parser.add_argument("--c", type=float, default=0.19, help="Bottom-left quadrant probability")
        parser.add_argument("--d", type=float, default=0.05, help="Bottom-right quadrant probability")

    def execute_command(self, **options: Any) -> None:
        spec = GenSpec(
            num_nodes=options["nodes"],
            avg_degree=options["avg_degree"],
            dim=options["dim"],
            seed=options["seed"],
            a=options["a"],
            b=options["b"],
            c=options["c"],
            d=options["d"],
        )
        dataset = generate(spec, options["out"])

        self.stdout.write(f"nodes:         {dataset.num_nodes}")
        self.stdout.write(f"edges:         {dataset.num_edges}")
        self.stdout.write(f"dim:           {dataset.dim}")
        self.stdout.write(f"graph bytes:   {dataset.graph_bytes}  ({dataset.graph_path})")
        self.stdout.write(f"feature bytes: {dataset.feature_bytes}  ({dataset.features_path})")
        self.stdout.write(self.style.SUCCESS("Dataset generated"))
