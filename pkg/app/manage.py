#!/usr/bin/env python
"""
Graphfeed command-line entry point.

Commands: gen, preprocess, run, simulate, report, advise.
"""
from __future__ import annotations

import os
import sys


def main() -> None:
    """Dispatch to a management command."""
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "config.settings")
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Is it installed and is the virtual environment active?"
        ) from exc
    execute_from_command_line(sys.argv)


if __name__ == "__main__":
    main()
