"""
Graphfeed - Services Package

Contains the engine services following the Service Layer pattern:
sampling, caches, changeset precomputation, baselines and the pipeline.
"""
from __future__ import annotations
