"""
Graphfeed - Runtime Files

Codecs for the per-superbatch files exchanged between stages, and the
runtime directory that names them and keeps a census.

Files of superbatch sb:
- ids_{sb}_{i}.bin, adj_{sb}_{i}.bin  (superbatch sample, 2 x S files)
- init_{sb}.bin, update_{sb}_{i}.bin  (changeset precomputation, S + 1 files)
"""
from __future__ import annotations

import errno
import logging
import shutil
import threading
from collections import defaultdict
from collections.abc import Callable
from pathlib import Path

import numpy as np

from core.exceptions import RuntimeFileError
from core.storage.binary import (
    LOCAL_DTYPE,
    U32,
    U64,
    check_magic,
    read_counted_u64,
    read_exact,
    write_counted_u64,
)

logger = logging.getLogger(__name__)

IDS_MAGIC = b"GXIDS001"
ADJ_MAGIC = b"GXADJ001"
INIT_MAGIC = b"GXINIT01"
UPDATE_MAGIC = b"GXUPD001"


# =============================================================================
# Codecs
# =============================================================================


def write_ids_file(path: Path, ids: np.ndarray) -> None:
    """Write ``magic | count u64 | NodeIds u64``."""
    with path.open("wb") as fh:
        fh.write(IDS_MAGIC)
        write_counted_u64(fh, ids)


def read_ids_file(path: Path) -> np.ndarray:
    with path.open("rb") as fh:
        check_magic(read_exact(fh, 8, path), IDS_MAGIC, path)
        return read_counted_u64(fh, path)


def write_adj_file(path: Path, adj: list[np.ndarray]) -> None:
    """
    Write ``magic | layers u32 | per layer: edges u64, (u32, u32) pairs``.

    Each layer is an (E, 2) array of (src_local, dst_local).
    """
    with path.open("wb") as fh:
        fh.write(ADJ_MAGIC)
        fh.write(U32.pack(len(adj)))
        for layer in adj:
            pairs = np.ascontiguousarray(layer, dtype=LOCAL_DTYPE).reshape(-1, 2)
            fh.write(U64.pack(len(pairs)))
            fh.write(pairs.tobytes())


def read_adj_file(path: Path) -> list[np.ndarray]:
    with path.open("rb") as fh:
        check_magic(read_exact(fh, 8, path), ADJ_MAGIC, path)
        (layers,) = U32.unpack(read_exact(fh, U32.size, path))
        adj = []
        for _ in range(layers):
            (edges,) = U64.unpack(read_exact(fh, U64.size, path))
            raw = read_exact(fh, edges * 2 * LOCAL_DTYPE.itemsize, path)
            adj.append(np.frombuffer(raw, dtype=LOCAL_DTYPE).reshape(-1, 2).astype(np.int64))
        return adj


def write_init_file(path: Path, init_ids: np.ndarray) -> None:
    """Write ``magic | count u64 | NodeIds u64`` in admission order."""
    with path.open("wb") as fh:
        fh.write(INIT_MAGIC)
        write_counted_u64(fh, init_ids)


def read_init_file(path: Path) -> np.ndarray:
    with path.open("rb") as fh:
        check_magic(read_exact(fh, 8, path), INIT_MAGIC, path)
        return read_counted_u64(fh, path)


def write_update_file(path: Path, in_ids: np.ndarray, out_ids: np.ndarray, in_positions: np.ndarray) -> None:
    """Write ``magic`` then three length-prefixed u64 arrays."""
    with path.open("wb") as fh:
        fh.write(UPDATE_MAGIC)
        write_counted_u64(fh, in_ids)
        write_counted_u64(fh, out_ids)
        write_counted_u64(fh, in_positions)


def read_update_file(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with path.open("rb") as fh:
        check_magic(read_exact(fh, 8, path), UPDATE_MAGIC, path)
        in_ids = read_counted_u64(fh, path)
        out_ids = read_counted_u64(fh, path)
        in_positions = read_counted_u64(fh, path)
        return in_ids, out_ids, in_positions


# =============================================================================
# Runtime Directory
# =============================================================================


class RuntimeDirectory:
    """
    Names, writes and deletes runtime files, and keeps a census.

    Two superbatches write concurrently when overlap is on (sample of k+1,
    precompute of k), so the census is guarded by a lock.
    """

    KINDS = ("ids", "adj", "init", "update")

    def __init__(self, root: Path | str) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._live: dict[int, set[Path]] = defaultdict(set)
        self.created: dict[int, dict[str, int]] = defaultdict(lambda: dict.fromkeys(self.KINDS, 0))
        self.deleted: dict[int, int] = defaultdict(int)
        self.max_live_superbatches = 0

    # Naming ---------------------------------------------------------------

    def ids_path(self, sb: int, i: int) -> Path:
        return self.root / f"ids_{sb}_{i}.bin"

    def adj_path(self, sb: int, i: int) -> Path:
        return self.root / f"adj_{sb}_{i}.bin"

    def init_path(self, sb: int) -> Path:
        return self.root / f"init_{sb}.bin"

    def update_path(self, sb: int, i: int) -> Path:
        return self.root / f"update_{sb}_{i}.bin"

    # Writes ---------------------------------------------------------------

    def _write(self, path: Path, sb: int, kind: str, writer: Callable[[], None]) -> Path:
        try:
            writer()
        except OSError as e:
            # Partial files are not tracked in _live
            path.unlink(missing_ok=True)
            if e.errno == errno.ENOSPC:
                census = self.census()
                logger.error(f"Runtime directory full while writing {path.name}: {census}")
                raise RuntimeFileError(f"Disk full writing {path}", census=census) from e
            raise RuntimeFileError(f"Cannot write {path}: {e}") from e

        with self._lock:
            self._live[sb].add(path)
            self.created[sb][kind] += 1
            live = sum(1 for files in self._live.values() if files)
            self.max_live_superbatches = max(self.max_live_superbatches, live)
        return path

    def write_ids(self, sb: int, i: int, ids: np.ndarray) -> Path:
        path = self.ids_path(sb, i)
        return self._write(path, sb, "ids", lambda: write_ids_file(path, ids))

    def write_adj(self, sb: int, i: int, adj: list[np.ndarray]) -> Path:
        path = self.adj_path(sb, i)
        return self._write(path, sb, "adj", lambda: write_adj_file(path, adj))

    def write_init(self, sb: int, init_ids: np.ndarray) -> Path:
        path = self.init_path(sb)
        return self._write(path, sb, "init", lambda: write_init_file(path, init_ids))

    def write_update(self, sb: int, i: int, in_ids: np.ndarray, out_ids: np.ndarray, in_positions: np.ndarray) -> Path:
        path = self.update_path(sb, i)
        return self._write(path, sb, "update", lambda: write_update_file(path, in_ids, out_ids, in_positions))

    # Reads ----------------------------------------------------------------

    @staticmethod
    def _require(path: Path) -> Path:
        if not path.exists():
            raise RuntimeFileError(f"Missing runtime file {path}")
        return path

    def read_ids(self, sb: int, i: int) -> np.ndarray:
        return read_ids_file(self._require(self.ids_path(sb, i)))

    def read_adj(self, sb: int, i: int) -> list[np.ndarray]:
        return read_adj_file(self._require(self.adj_path(sb, i)))

    def read_init(self, sb: int) -> np.ndarray:
        return read_init_file(self._require(self.init_path(sb)))

    def read_update(self, sb: int, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return read_update_file(self._require(self.update_path(sb, i)))

    def ids_paths(self, sb: int, count: int) -> list[Path]:
        return [self._require(self.ids_path(sb, i)) for i in range(count)]

    # Lifecycle ------------------------------------------------------------

    def cleanup(self, sb: int) -> int:
        """Delete every file of a superbatch and return how many were removed."""
        with self._lock:
            files = self._live.pop(sb, set())
        for path in files:
            path.unlink(missing_ok=True)
        with self._lock:
            self.deleted[sb] += len(files)
        logger.debug(f"Removed {len(files)} runtime files of superbatch {sb}")
        return len(files)

    def created_counts(self, sb: int) -> dict[str, int]:
        """Files written so far for a superbatch, by kind."""
        with self._lock:
            return dict(self.created[sb])

    def files_on_disk(self) -> list[Path]:
        return sorted(self.root.glob("*.bin"))

    def census(self) -> dict:
        """Snapshot of files created/deleted per superbatch and free space."""
        with self._lock:
            return {
                "created": {sb: dict(kinds) for sb, kinds in self.created.items()},
                "deleted": dict(self.deleted),
                "live_superbatches": sorted(sb for sb, files in self._live.items() if files),
                "max_live_superbatches": self.max_live_superbatches,
                "free_bytes": shutil.disk_usage(self.root).free,
            }

    def __repr__(self) -> str:
        return f"<RuntimeDirectory(root='{self.root}')>"
