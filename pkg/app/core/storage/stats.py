"""
Graphfeed - I/O Accounting

Counters that model a block device: every read is charged the number of
distinct pages it touches.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

from core.storage.binary import PAGE_SIZE


def page_count_for_row(row_bytes: int, row_index: int, page_size: int = PAGE_SIZE) -> int:
    """
    Pages touched by one fixed-width row of a page-aligned payload.

    A 3072-byte row (768 float32) straddles a page boundary for rows 1 and 2
    of every 4-row cycle, so uniformly random rows average 1.5 pages.

    Args:
        row_bytes: Width of one row in bytes (> 0).
        row_index: Index of the row within the payload.
        page_size: Device block size.

    Returns:
        Number of distinct pages covering the row.
    """
    if row_bytes <= 0:
        raise ValueError(f"row_bytes must be positive, got {row_bytes}")
    first = row_index * row_bytes // page_size
    last = ((row_index + 1) * row_bytes - 1) // page_size
    return last - first + 1


@dataclass
class IoStats:
    """
    Read counters for one worker or one stage.

    Counters only grow within a run. Workers keep their own instance
    and the owner merges them afterwards.
    """

    pages_read: int = 0
    rows_read: int = 0
    neighbor_lists_read: int = 0
    # Payload bytes requested; device bytes are pages_read * page_size
    bytes_read: int = 0

    def merge(self, other: IoStats) -> IoStats:
        """Add another counter set into this one and return self."""
        self.pages_read += other.pages_read
        self.rows_read += other.rows_read
        self.neighbor_lists_read += other.neighbor_lists_read
        self.bytes_read += other.bytes_read
        return self

    def copy(self) -> IoStats:
        return IoStats(**asdict(self))

    def since(self, earlier: IoStats) -> IoStats:
        """Counters accumulated after an earlier snapshot."""
        return IoStats(
            pages_read=self.pages_read - earlier.pages_read,
            rows_read=self.rows_read - earlier.rows_read,
            neighbor_lists_read=self.neighbor_lists_read - earlier.neighbor_lists_read,
            bytes_read=self.bytes_read - earlier.bytes_read,
        )

    def to_dict(self) -> dict[str, int]:
        return asdict(self)
