"""
Graphfeed - Run Configuration

RunConfig layers, lowest precedence first:
1. settings.GRAPHFEED defaults
2. a JSON run file
3. command-line flags
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from django.conf import settings

from core.choices import CachePolicy
from core.exceptions import ConfigurationError
from services.sampler import validate_fanouts

logger = logging.getLogger(__name__)

GRAPH_FILENAME = "graph.bin"
FEATURES_FILENAME = "features.bin"
NEIGHBOR_CACHE_FILENAME = "ncache.bin"

# Policies the pipeline can execute; the rest are simulate-only baselines
RUNNABLE_POLICIES = (CachePolicy.BELADY, CachePolicy.NONE)

_PATH_FIELDS = ("dataset_dir", "graph_path", "features_path", "neighbor_cache_path", "runtime_dir", "report_dir")


@dataclass
class RunConfig:
    """
    Everything a training run depends on.

    With dataset_dir set, graph.bin, features.bin and ncache.bin are looked
    up there unless their paths are given explicitly.
    """

    dataset_dir: Path | None = None
    graph_path: Path | None = None
    features_path: Path | None = None
    neighbor_cache_path: Path | None = None
    runtime_dir: Path = field(default_factory=lambda: Path("runtime"))
    report_dir: Path | None = None

    fanouts: tuple[int, ...] = (10, 10, 10)
    batch_size: int = 512
    superbatch_size: int = 64
    epochs: int = 1
    train_fraction: float = 1.0
    global_seed: int = 0

    policy: str = CachePolicy.BELADY.value
    feature_cache_entries: int = 0
    neighbor_cache_bytes: int = 0
    use_neighbor_cache: bool = True
    retain_neighbor_cache: bool = False

    sampler_workers: int = 1
    gather_workers: int = 1
    overlap: bool = True
    direct_io: bool = False
    page_size: int = 4096

    # Loading ---------------------------------------------------------------

    @classmethod
    def from_settings(cls) -> RunConfig:
        """Defaults from settings.GRAPHFEED."""
        defaults = getattr(settings, "GRAPHFEED", {})
        return cls(
            runtime_dir=Path(defaults.get("RUNTIME_DIR", "runtime")),
            fanouts=tuple(defaults.get("FANOUTS", (10, 10, 10))),
            batch_size=defaults.get("BATCH_SIZE", 512),
            superbatch_size=defaults.get("SUPERBATCH_SIZE", 64),
            epochs=defaults.get("EPOCHS", 1),
            train_fraction=defaults.get("TRAIN_FRACTION", 1.0),
            global_seed=defaults.get("GLOBAL_SEED", 0),
            retain_neighbor_cache=defaults.get("RETAIN_NEIGHBOR_CACHE", False),
            sampler_workers=defaults.get("SAMPLER_WORKERS", 1),
            gather_workers=defaults.get("GATHER_WORKERS", 1),
            overlap=defaults.get("OVERLAP", True),
            direct_io=defaults.get("DIRECT_IO", False),
            page_size=defaults.get("PAGE_SIZE", 4096),
        )

    def with_overrides(self, **overrides: Any) -> RunConfig:
        """Copy with the given fields replaced; None values are ignored."""
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigurationError(f"Unknown configuration keys: {', '.join(sorted(unknown))}")

        values = {key: value for key, value in overrides.items() if value is not None}
        for key in _PATH_FIELDS:
            if key in values:
                values[key] = Path(values[key])
        if "fanouts" in values:
            values["fanouts"] = tuple(int(f) for f in values["fanouts"])
        return replace(self, **values)

    @classmethod
    def from_json(cls, path: Path | str, base: RunConfig | None = None) -> RunConfig:
        """
        Overlay a JSON run file on base (settings defaults if omitted).

        Relative paths in the file resolve against the file's directory.

        Raises:
            ConfigurationError: If the file is missing, not an object, or has unknown keys.
        """
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError as e:
            raise ConfigurationError(f"Run file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Run file {path} is not valid JSON: {e}") from e

        if not isinstance(data, dict):
            raise ConfigurationError(f"Run file {path} must hold a JSON object")

        for key in _PATH_FIELDS:
            if data.get(key) is not None and not Path(data[key]).is_absolute():
                data[key] = str(path.parent / data[key])

        return (base or cls.from_settings()).with_overrides(**data)

    # Resolved paths --------------------------------------------------------

    def _in_dataset(self, explicit: Path | None, filename: str) -> Path | None:
        if explicit is not None:
            return explicit
        if self.dataset_dir is not None:
            return self.dataset_dir / filename
        return None

    @property
    def graph_file(self) -> Path | None:
        return self._in_dataset(self.graph_path, GRAPH_FILENAME)

    @property
    def features_file(self) -> Path | None:
        return self._in_dataset(self.features_path, FEATURES_FILENAME)

    @property
    def neighbor_cache_file(self) -> Path | None:
        if not self.use_neighbor_cache:
            return None
        return self._in_dataset(self.neighbor_cache_path, NEIGHBOR_CACHE_FILENAME)

    @property
    def cache_entries(self) -> int:
        """Feature-cache rows actually used (0 when the policy is none)."""
        if self.policy == CachePolicy.NONE:
            return 0
        return self.feature_cache_entries

    # Validation ------------------------------------------------------------

    def validate(self, require_files: bool = True) -> RunConfig:
        """
        Check every field before any file is touched.

        Raises:
            ConfigurationError: On the first invalid field.
        """
        self.fanouts = validate_fanouts(self.fanouts)

        checks = [
            (self.batch_size >= 1, f"batch_size must be >= 1, got {self.batch_size}"),
            (self.superbatch_size >= 1, f"superbatch_size must be >= 1, got {self.superbatch_size}"),
            (self.epochs >= 1, f"epochs must be >= 1, got {self.epochs}"),
            (0.0 < self.train_fraction <= 1.0, f"train_fraction must be in (0, 1], got {self.train_fraction}"),
            (self.feature_cache_entries >= 0, f"feature_cache_entries must be >= 0, got {self.feature_cache_entries}"),
            (self.neighbor_cache_bytes >= 0, f"neighbor_cache_bytes must be >= 0, got {self.neighbor_cache_bytes}"),
            (self.sampler_workers >= 1, f"sampler_workers must be >= 1, got {self.sampler_workers}"),
            (self.gather_workers >= 1, f"gather_workers must be >= 1, got {self.gather_workers}"),
            (self.page_size > 0 and self.page_size % 512 == 0, f"page_size must be a multiple of 512, got {self.page_size}"),
            (self.policy in RUNNABLE_POLICIES, f"policy must be one of {', '.join(RUNNABLE_POLICIES)}, got {self.policy}"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigurationError(message)

        if require_files:
            if self.graph_file is None or self.features_file is None:
                raise ConfigurationError("Set dataset_dir, or both graph_path and features_path")
            for label, path in (("graph", self.graph_file), ("features", self.features_file)):
                if not path.exists():
                    raise ConfigurationError(f"{label} file not found: {path}")
            ncache = self.neighbor_cache_file
            if ncache is not None and not ncache.exists() and self.neighbor_cache_bytes == 0:
                raise ConfigurationError(
                    f"Neighbor cache not found: {ncache} (run preprocess first or set neighbor_cache_bytes)"
                )

        return self

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        for key in _PATH_FIELDS:
            if data[key] is not None:
                data[key] = str(data[key])
        data["fanouts"] = list(self.fanouts)
        return data
