"""
Suggest a superbatch size and cache budgets from a short profiling run.
"""
from __future__ import annotations

from typing import Any

from django.conf import settings

from core.management.base import GraphfeedCommand, add_run_config_arguments, build_run_config
from services.pipeline.advisor import profile_runtime_bytes, suggest_cache_sizes, suggest_superbatch_size


class Command(GraphfeedCommand):
    help = "Profile a few batches and suggest superbatch size and cache budgets"

    def add_arguments(self, parser):
        add_run_config_arguments(parser)
        parser.add_argument("--profile-batches", type=int, default=4, help="Batches sampled by the profiling run")
        parser.add_argument(
            "--target-runtime-bytes",
            type=int,
            default=settings.GRAPHFEED.get("TARGET_RUNTIME_BYTES"),
            help="Disk space for runtime files",
        )
        parser.add_argument("--memory-bytes", type=int, help="Memory available to both caches and stages")
        parser.add_argument("--reserve-bytes", type=int, default=0, help="Memory kept free for everything else")

    def execute_command(self, **options: Any) -> None:
        # The profiling run reads neighbor lists from disk; sampled ids are the same either way
        config = build_run_config(options, use_neighbor_cache=False)
        profile = profile_runtime_bytes(config, options["profile_batches"])

        superbatch_size = suggest_superbatch_size(
            profile.bytes_per_iteration,
            options["target_runtime_bytes"],
            overlap=config.overlap,
        )
        self.stdout.write(f"runtime bytes per iteration: {profile.bytes_per_iteration:.0f}")
        self.stdout.write(f"suggested superbatch size:   {superbatch_size}")

        if options["memory_bytes"] is None:
            return

        neighbor_bytes, feature_entries = suggest_cache_sizes(
            options["memory_bytes"],
            profile.peak_sample_bytes,
            profile.peak_main_bytes,
            options["reserve_bytes"],
            profile.row_bytes,
        )
        self.stdout.write(f"neighbor cache budget bytes: {neighbor_bytes}")
        self.stdout.write(f"feature cache entries:       {feature_entries}")
