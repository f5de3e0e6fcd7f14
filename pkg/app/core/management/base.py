"""
Graphfeed - Command Base

Shared plumbing of the management commands: error translation and the
run-configuration flags used by run, simulate and advise.
"""
from __future__ import annotations

import logging
from argparse import ArgumentParser, ArgumentTypeError
from typing import Any

from django.core.management.base import BaseCommand, CommandError

from core.exceptions import GraphfeedError
from services.pipeline import RunConfig

logger = logging.getLogger(__name__)


def on_off(value: str) -> bool:
    """argparse type for on/off switches."""
    lowered = value.lower()
    if lowered not in ("on", "off"):
        raise ArgumentTypeError(f"expected on or off, got {value!r}")
    return lowered == "on"


def int_list(value: str) -> list[int]:
    """argparse type for comma-separated integers, e.g. 10,10,10."""
    try:
        return [int(part) for part in value.split(",") if part.strip()]
    except ValueError as e:
        raise ArgumentTypeError(f"expected comma-separated integers, got {value!r}") from e


class GraphfeedCommand(BaseCommand):
    """
    Base for engine commands.

    Subclasses implement execute_command(); engine, value and OS errors
    surface as a one-line CommandError with a nonzero exit code.
    """

    requires_system_checks: list[str] = []

    def execute_command(self, **options: Any) -> None:
        raise NotImplementedError

    def handle(self, *args: Any, **options: Any) -> None:
        try:
            self.execute_command(**options)
        except CommandError:
            raise
        except (GraphfeedError, ValueError) as e:
            logger.debug(f"{type(e).__name__} in {self.__module__}", exc_info=True)
            raise CommandError(str(e)) from e
        except OSError as e:
            raise CommandError(f"{e.strerror or e}: {e.filename}" if e.filename else str(e)) from e


def add_run_config_arguments(parser: ArgumentParser) -> None:
    """Flags that overlay a RunConfig; unset flags keep file/settings values."""
    group = parser.add_argument_group("run configuration")
    group.add_argument("--config", help="JSON run file")
    group.add_argument("--dataset", dest="dataset_dir", help="Directory holding graph.bin, features.bin, ncache.bin")
    group.add_argument("--graph", dest="graph_path", help="graph.bin path (overrides --dataset)")
    group.add_argument("--features", dest="features_path", help="features.bin path (overrides --dataset)")
    group.add_argument("--neighbor-cache-path", dest="neighbor_cache_path")
    group.add_argument("--runtime-dir", dest="runtime_dir")
    group.add_argument("--fanouts", type=int_list, help="Per-hop fanouts, first hop first, e.g. 10,10,10")
    group.add_argument("--batch-size", dest="batch_size", type=int)
    group.add_argument("--superbatch-size", dest="superbatch_size", type=int)
    group.add_argument("--epochs", type=int)
    group.add_argument("--train-fraction", dest="train_fraction", type=float)
    group.add_argument("--seed", dest="global_seed", type=int)
    group.add_argument("--policy", help="Feature-cache policy: belady or none")
    group.add_argument("--feature-cache-entries", dest="feature_cache_entries", type=int)
    group.add_argument("--neighbor-cache", dest="use_neighbor_cache", type=on_off, metavar="on|off")
    group.add_argument(
        "--neighbor-cache-bytes", dest="neighbor_cache_bytes", type=int,
        help="Neighbor-cache budget; builds ncache.bin when missing, refuses a larger one",
    )
    group.add_argument("--retain-neighbor-cache", dest="retain_neighbor_cache", type=on_off, metavar="on|off")
    group.add_argument("--sampler-workers", dest="sampler_workers", type=int)
    group.add_argument("--gather-workers", dest="gather_workers", type=int)
    group.add_argument("--overlap", type=on_off, metavar="on|off")
    group.add_argument("--direct-io", dest="direct_io", type=on_off, metavar="on|off")


RUN_CONFIG_OPTIONS = (
    "dataset_dir",
    "graph_path",
    "features_path",
    "neighbor_cache_path",
    "runtime_dir",
    "fanouts",
    "batch_size",
    "superbatch_size",
    "epochs",
    "train_fraction",
    "global_seed",
    "policy",
    "feature_cache_entries",
    "use_neighbor_cache",
    "neighbor_cache_bytes",
    "retain_neighbor_cache",
    "sampler_workers",
    "gather_workers",
    "overlap",
    "direct_io",
)


def build_run_config(options: dict[str, Any], **forced: Any) -> RunConfig:
    """
    Settings defaults, then the --config file, then flags, then forced values.

    Raises:
        ConfigurationError: On unreadable run files or invalid values.
    """
    config = RunConfig.from_json(options["config"]) if options.get("config") else RunConfig.from_settings()
    overrides = {key: options.get(key) for key in RUN_CONFIG_OPTIONS}
    return config.with_overrides(**{**overrides, **forced}).validate()
