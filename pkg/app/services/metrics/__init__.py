"""
Graphfeed - Metrics Service

Run ledger and report files:
- per-iteration hit/miss counts, predicted misses and checksums
- per-superbatch stage times and page reads
- time breakdown by category (inspect, switch, data prep, cache update, compute)
- report.json / report.csv, and the miss-ratio CSV of policy sweeps
"""
from __future__ import annotations

import csv
import json
import logging
import time
from collections.abc import Iterator, Sequence
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

from core.choices import ReportCategory, Stage
from core.exceptions import ReportFormatError
from core.storage import IoStats

if TYPE_CHECKING:
    from services.baselines import PolicyResult

logger = logging.getLogger(__name__)

REPORT_JSON = "report.json"
REPORT_CSV = "report.csv"

# Column order of report.csv
SUPERBATCH_COLUMNS = (
    "epoch",
    "superbatch",
    "num_batches",
    "sample_seconds",
    "precompute_seconds",
    "cache_init_seconds",
    "main_loop_seconds",
    "accesses",
    "hits",
    "misses",
    "predicted_misses",
    "miss_ratio",
    "sample_pages",
    "cache_init_pages",
    "gather_pages",
    "files_created",
)

# Column order of the simulate CSV
POLICY_COLUMNS = ("policy", "capacity", "miss_ratio")


class LapTimer:
    """
    Contiguous wall-time laps charged to report categories.

    Each lap runs from the end of the previous one, so the categories
    partition the time since the timer started.
    """

    def __init__(self) -> None:
        self.seconds: dict[str, float] = {category.value: 0.0 for category in ReportCategory}
        self._start = time.perf_counter()
        self._mark = self._start

    def lap(self, category: str) -> float:
        """Charge the time since the previous lap to category."""
        now = time.perf_counter()
        elapsed = now - self._mark
        self.seconds[ReportCategory(category).value] += elapsed
        self._mark = now
        return elapsed

    @property
    def total(self) -> float:
        return sum(self.seconds.values())


@contextmanager
def stopwatch(into: dict[str, float], key: str) -> Iterator[None]:
    """Add the block's wall time to into[key]."""
    start = time.perf_counter()
    try:
        yield
    finally:
        into[key] = into.get(key, 0.0) + time.perf_counter() - start


@dataclass
class IterationRecord:
    """Main-loop outcome of one batch."""

    epoch: int
    superbatch: int
    batch: int
    accesses: int
    hits: int
    misses: int
    predicted_misses: int
    pages_read: int
    checksum: str


@dataclass
class StageMetrics:
    """Stage times, I/O and cache counts of one superbatch."""

    epoch: int
    superbatch: int
    num_batches: int
    stage_seconds: dict[str, float] = field(
        default_factory=lambda: {stage.value: 0.0 for stage in Stage}
    )
    stage_io: dict[str, IoStats] = field(
        default_factory=lambda: {stage.value: IoStats() for stage in Stage}
    )
    files_created: dict[str, int] = field(default_factory=dict)
    iterations: list[IterationRecord] = field(default_factory=list)

    @property
    def accesses(self) -> int:
        return sum(r.accesses for r in self.iterations)

    @property
    def hits(self) -> int:
        return sum(r.hits for r in self.iterations)

    @property
    def misses(self) -> int:
        return sum(r.misses for r in self.iterations)

    @property
    def predicted_misses(self) -> int:
        return sum(r.predicted_misses for r in self.iterations)

    @property
    def miss_ratio(self) -> float:
        return self.misses / self.accesses if self.accesses else 0.0

    def to_row(self) -> dict[str, Any]:
        """One report.csv row."""
        return {
            "epoch": self.epoch,
            "superbatch": self.superbatch,
            "num_batches": self.num_batches,
            "sample_seconds": round(self.stage_seconds[Stage.SAMPLE.value], 6),
            "precompute_seconds": round(self.stage_seconds[Stage.PRECOMPUTE.value], 6),
            "cache_init_seconds": round(self.stage_seconds[Stage.CACHE_INIT.value], 6),
            "main_loop_seconds": round(self.stage_seconds[Stage.MAIN_LOOP.value], 6),
            "accesses": self.accesses,
            "hits": self.hits,
            "misses": self.misses,
            "predicted_misses": self.predicted_misses,
            "miss_ratio": round(self.miss_ratio, 6),
            "sample_pages": self.stage_io[Stage.SAMPLE.value].pages_read,
            "cache_init_pages": self.stage_io[Stage.CACHE_INIT.value].pages_read,
            "gather_pages": self.stage_io[Stage.MAIN_LOOP.value].pages_read,
            "files_created": sum(self.files_created.values()),
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            **self.to_row(),
            "stage_seconds": dict(self.stage_seconds),
            "stage_io": {stage: stats.to_dict() for stage, stats in self.stage_io.items()},
            "files_created_by_kind": dict(self.files_created),
            "iterations": [asdict(r) for r in self.iterations],
        }


@dataclass
class RunReport:
    """Everything a run measured."""

    config: dict[str, Any]
    superbatches: list[StageMetrics] = field(default_factory=list)
    breakdown: dict[str, float] = field(default_factory=dict)
    census: dict[str, Any] = field(default_factory=dict)

    @property
    def total_seconds(self) -> float:
        return sum(self.breakdown.values())

    @property
    def iterations(self) -> list[IterationRecord]:
        return [r for sb in self.superbatches for r in sb.iterations]

    @property
    def checksums(self) -> list[str]:
        return [r.checksum for r in self.iterations]

    def totals(self) -> dict[str, Any]:
        accesses = sum(sb.accesses for sb in self.superbatches)
        misses = sum(sb.misses for sb in self.superbatches)
        return {
            "superbatches": len(self.superbatches),
            "iterations": len(self.iterations),
            "accesses": accesses,
            "hits": sum(sb.hits for sb in self.superbatches),
            "misses": misses,
            "predicted_misses": sum(sb.predicted_misses for sb in self.superbatches),
            "miss_ratio": round(misses / accesses, 6) if accesses else 0.0,
            "sample_pages": sum(sb.stage_io[Stage.SAMPLE.value].pages_read for sb in self.superbatches),
            "cache_init_pages": sum(sb.stage_io[Stage.CACHE_INIT.value].pages_read for sb in self.superbatches),
            "gather_pages": sum(sb.stage_io[Stage.MAIN_LOOP.value].pages_read for sb in self.superbatches),
        }

    def to_dict(self) -> dict[str, Any]:
        """Convert to the report.json document."""
        return {
            "config": self.config,
            "totals": self.totals(),
            "breakdown": {
                "total_seconds": self.total_seconds,
                "categories": dict(self.breakdown),
            },
            "census": _jsonable(self.census),
            "superbatches": [sb.to_dict() for sb in self.superbatches],
        }


def _jsonable(value: Any) -> Any:
    """JSON object keys must be strings."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def format_seconds(seconds: float) -> str:
    """Human-readable duration."""
    if seconds < 1:
        return f"{seconds * 1000:.1f}ms"
    if seconds < 60:
        return f"{seconds:.2f}s"
    minutes = int(seconds // 60)
    return f"{minutes}m {seconds % 60:.1f}s"


class ReportService:
    """
    Writes and reads run reports.
    """

    def write_report(self, report: RunReport, out_dir: Path | str) -> tuple[Path, Path]:
        """Write report.json and report.csv into out_dir."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

        json_path = out_dir / REPORT_JSON
        json_path.write_text(json.dumps(report.to_dict(), indent=2))

        csv_path = out_dir / REPORT_CSV
        with csv_path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=SUPERBATCH_COLUMNS)
            writer.writeheader()
            for sb in report.superbatches:
                writer.writerow(sb.to_row())

        logger.info(f"Wrote report to {json_path} and {csv_path}")
        return json_path, csv_path

    def write_policy_csv(self, results: Sequence[PolicyResult], path: Path | str) -> Path:
        """Write the (policy, capacity, miss_ratio) rows of a sweep."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=POLICY_COLUMNS)
            writer.writeheader()
            for result in results:
                writer.writerow(result.to_row())
        return path

    def load_report(self, path: Path | str) -> dict[str, Any]:
        """
        Read a report.json document.

        Raises:
            ReportFormatError: If the file is missing, not JSON, or lacks the breakdown.
        """
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError as e:
            raise ReportFormatError(f"Report not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ReportFormatError(f"Report {path} is not valid JSON: {e}") from e

        try:
            categories = data["breakdown"]["categories"]
            total = float(data["breakdown"]["total_seconds"])
        except (KeyError, TypeError, ValueError) as e:
            raise ReportFormatError(f"Report {path} has no time breakdown") from e

        missing = [c.value for c in ReportCategory if c.value not in categories]
        if missing:
            raise ReportFormatError(f"Report {path} lacks categories: {', '.join(missing)}")
        if total < 0 or any(float(categories[c]) < 0 for c in categories):
            raise ReportFormatError(f"Report {path} has negative timings")
        return data

    def breakdown_rows(self, data: dict[str, Any]) -> list[dict[str, Any]]:
        """Category, seconds and share of the total, in category order."""
        categories = data["breakdown"]["categories"]
        total = float(data["breakdown"]["total_seconds"])
        rows = []
        for category in ReportCategory:
            seconds = float(categories[category.value])
            rows.append({
                "category": category.value,
                "label": str(category.label),
                "seconds": seconds,
                "share": seconds / total if total > 0 else 0.0,
            })
        return rows


# Singleton instance for convenience
report_service = ReportService()
