"""
Graphfeed - Django Configuration Package

This package contains the Django settings for the engine.
"""
from __future__ import annotations
