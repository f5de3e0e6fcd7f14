"""
Graphfeed - Exceptions

Errors raised by the storage layer and the engine services.
"""
from __future__ import annotations


class GraphfeedError(Exception):
    """Base exception for Graphfeed operations."""

    pass


class StorageFormatError(GraphfeedError):
    """Binary file with a bad magic, version or truncated payload."""

    pass


class NodeRangeError(GraphfeedError, ValueError):
    """Node ID outside [0, num_nodes)."""

    def __init__(self, node: int, num_nodes: int) -> None:
        super().__init__(f"Node {node} out of range for {num_nodes} nodes")
        self.node = node
        self.num_nodes = num_nodes


class CacheBudgetError(GraphfeedError, ValueError):
    """Neighbor-cache budget cannot hold its address table."""

    pass


class ChangesetError(GraphfeedError):
    """Changeset inconsistent with the feature cache or the batch ids."""

    pass


class TraceMismatchError(GraphfeedError):
    """Access index built over a different trace than the one simulated."""

    pass


class OracleLimitError(GraphfeedError, ValueError):
    """Instance too large for the exhaustive optimality oracle."""

    pass


class ConfigurationError(GraphfeedError, ValueError):
    """Invalid run configuration."""

    pass


class RuntimeFileError(GraphfeedError):
    """Runtime file missing or not writable."""

    def __init__(self, message: str, census: dict | None = None) -> None:
        super().__init__(message)
        self.census = census or {}


class ReportFormatError(GraphfeedError, ValueError):
    """Run report missing fields or not valid JSON."""

    pass
