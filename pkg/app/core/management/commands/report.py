"""
Print the time breakdown of a run report.
"""
from __future__ import annotations

from typing import Any

from core.management.base import GraphfeedCommand
from services.metrics import format_seconds, report_service


class Command(GraphfeedCommand):
    help = "Print the inspect / switch / data prep / cache update / compute breakdown of report.json"

    def add_arguments(self, parser):
        parser.add_argument("report", help="report.json path")

    def execute_command(self, **options: Any) -> None:
        data = report_service.load_report(options["report"])
        rows = report_service.breakdown_rows(data)
        total = float(data["breakdown"]["total_seconds"])

        self.stdout.write(f"{'category':<14}{'seconds':>12}{'share':>9}")
        for row in rows:
            self.stdout.write(f"{row['category']:<14}{row['seconds']:>12.4f}{row['share'] * 100:>8.1f}%")
        self.stdout.write(f"{'total':<14}{total:>12.4f}{'':>9}  ({format_seconds(total)})")

        totals = data.get("totals")
        if totals:
            self.stdout.write(
                f"miss ratio {totals['miss_ratio']:.4f} over {totals['iterations']} iterations, "
                f"{totals['gather_pages']} gather pages"
            )
