"""
Graphfeed - Storage Package

On-disk graph and feature storage with block-device I/O accounting,
and the runtime files exchanged between pipeline stages.
"""
from __future__ import annotations

from core.storage.binary import PAGE_SIZE, PageReader, pages_spanned
from core.storage.features import FeatureStore, open_features, persist_features
from core.storage.graph import CscGraph, GraphHandle, build_csc, open_graph, persist_graph
from core.storage.runtime import RuntimeDirectory
from core.storage.stats import IoStats, page_count_for_row

__all__ = [
    # Block accounting
    "PAGE_SIZE",
    "PageReader",
    "pages_spanned",
    "IoStats",
    "page_count_for_row",
    # Graph
    "CscGraph",
    "GraphHandle",
    "build_csc",
    "open_graph",
    "persist_graph",
    # Features
    "FeatureStore",
    "open_features",
    "persist_features",
    # Runtime files
    "RuntimeDirectory",
]
