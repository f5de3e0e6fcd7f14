"""
Graphfeed - Core App Package

Contains the on-disk storage layer, shared choices and exceptions,
and the management commands.
"""
from __future__ import annotations
