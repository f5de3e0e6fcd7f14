"""
Run training over a dataset and write report.json / report.csv.
"""
from __future__ import annotations

from typing import Any

from core.exceptions import ConfigurationError
from core.management.base import GraphfeedCommand, add_run_config_arguments, build_run_config
from services.metrics import REPORT_CSV, REPORT_JSON, format_seconds
from services.pipeline import run_training


class Command(GraphfeedCommand):
    help = "Run every superbatch of the configured epochs and write the run report"

    def add_arguments(self, parser):
        add_run_config_arguments(parser)
        parser.add_argument("--out", dest="report_dir", help="Report directory")

    def execute_command(self, **options: Any) -> None:
        config = build_run_config(options, report_dir=options["report_dir"])
        if config.report_dir is None:
            raise ConfigurationError("Set --out or report_dir in the run file")

        report = run_training(config)
        totals = report.totals()

        self.stdout.write(f"superbatches:  {totals['superbatches']}")
        self.stdout.write(f"iterations:    {totals['iterations']}")
        self.stdout.write(f"miss ratio:    {totals['miss_ratio']:.4f} ({totals['misses']}/{totals['accesses']})")
        self.stdout.write(f"gather pages:  {totals['gather_pages']}")
        self.stdout.write(f"sample pages:  {totals['sample_pages']}")
        self.stdout.write(f"wall time:     {format_seconds(report.total_seconds)}")
        self.stdout.write(self.style.SUCCESS(
            f"Report written to {config.report_dir / REPORT_JSON} and {config.report_dir / REPORT_CSV}"
        ))
