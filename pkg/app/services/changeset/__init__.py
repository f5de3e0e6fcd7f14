"""
Graphfeed - Changeset Precomputation

Inspector side of the feature cache. Over the ids files of one superbatch:
- counts accesses per node and builds the access index (iters/ptr)
- picks the initial cache contents
- replays the superbatch with Belady replacement and emits, per iteration,
  the nodes entering and leaving the cache

The access index is a CSR layout: node v's accessed iterations sit in
iters[ptr[v] : ptr[v] + counts[v]] in increasing order. The first entry of
each region carries a flag in bit 63 and a final all-ones entry is the
"never again" sentinel.
"""
from __future__ import annotations

import logging
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from core.exceptions import ChangesetError, NodeRangeError, TraceMismatchError
from core.storage import RuntimeDirectory
from core.storage.binary import NODE_DTYPE
from core.storage.runtime import read_ids_file

logger = logging.getLogger(__name__)

ITER_DTYPE = np.dtype(np.uint64)
REGION_FLAG = np.uint64(1 << 63)
ITER_MASK = np.uint64((1 << 63) - 1)
DUMMY_ENTRY = np.uint64((1 << 64) - 1)

# Next-access value of a node that is never accessed again
NEVER = int(ITER_MASK)


def iter_trace(trace: Iterable[np.ndarray | Path | str]) -> Iterator[np.ndarray]:
    """Yield per-iteration id arrays, reading ids files when given paths."""
    for item in trace:
        if isinstance(item, (str, Path)):
            yield read_ids_file(Path(item))
        else:
            yield np.asarray(item, dtype=NODE_DTYPE)


def load_trace(trace: Iterable[np.ndarray | Path | str]) -> list[np.ndarray]:
    return list(iter_trace(trace))


# =============================================================================
# Access Index
# =============================================================================


@dataclass
class AccessIndex:
    """
    Per-node sorted lists of accessed iterations with cursors.

    Attributes:
        iters: uint64 entries, len = total accesses + 1 (dummy last).
        ptr: Start of each node's region in iters (indexed by NodeId).
        counts: Accesses per node; nodes with zero accesses own an empty region.
    """

    iters: np.ndarray
    ptr: np.ndarray
    counts: np.ndarray

    @property
    def num_nodes(self) -> int:
        return len(self.ptr)

    @property
    def total_accesses(self) -> int:
        return len(self.iters) - 1

    @property
    def dummy_index(self) -> int:
        return len(self.iters) - 1

    def accesses_of(self, node: int) -> np.ndarray:
        """Masked iteration numbers in which node is accessed."""
        start = int(self.ptr[node])
        return (self.iters[start:start + int(self.counts[node])] & ITER_MASK).astype(np.int64)

    def flagged_count(self) -> int:
        return int(np.count_nonzero(self.iters[:-1] & REGION_FLAG))


def count_pass(trace: Iterable[np.ndarray | Path | str], num_nodes: int) -> np.ndarray:
    """
    First pass: number of iterations in which each node appears.

    Raises:
        NodeRangeError: If an id is out of range.
        TraceMismatchError: If an iteration repeats a node.
    """
    counts = np.zeros(num_nodes, dtype=np.int64)
    for i, ids in enumerate(iter_trace(trace)):
        if len(ids) == 0:
            continue
        bad = (ids < 0) | (ids >= num_nodes)
        if bad.any():
            raise NodeRangeError(int(ids[bad][0]), num_nodes)
        if len(np.unique(ids)) != len(ids):
            raise TraceMismatchError(f"Iteration {i} repeats a node")
        counts[ids] += 1
    return counts


def build_ptr(counts: np.ndarray) -> np.ndarray:
    """Exclusive prefix sum of counts."""
    counts = np.asarray(counts, dtype=np.int64)
    ptr = np.zeros(len(counts), dtype=np.int64)
    if len(counts) > 1:
        np.cumsum(counts[:-1], out=ptr[1:])
    return ptr


def build_iters(trace: Iterable[np.ndarray | Path | str], ptr: np.ndarray, counts: np.ndarray) -> AccessIndex:
    """
    Second pass: fill each node's region in iteration order.

    A working copy of ptr advances as slots are filled; once the pass ends it
    sits at each region's end and the original cursors are its shift by one
    region. The region-start entries are then flagged and the dummy appended.

    Raises:
        TraceMismatchError: If the trace disagrees with counts.
        ValueError: If an iteration number does not fit in 63 bits.
    """
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    iters = np.zeros(total + 1, dtype=ITER_DTYPE)
    cursor = np.asarray(ptr, dtype=np.int64).copy()

    for i, ids in enumerate(iter_trace(trace)):
        if i > NEVER - 1:
            raise ValueError(f"Iteration {i} cannot be represented in an access index")
        if len(ids) == 0:
            continue
        slots = cursor[ids]
        if (slots >= total).any():
            raise TraceMismatchError(f"Iteration {i} exceeds the counted accesses")
        iters[slots] = i
        cursor[ids] += 1

    expected_end = ptr + counts
    if not np.array_equal(cursor, expected_end):
        raise TraceMismatchError("Second pass disagrees with the access counts")

    restored = np.concatenate(([0], cursor[:-1])) if len(cursor) else cursor
    accessed = counts > 0
    iters[restored[accessed]] |= REGION_FLAG
    iters[total] = DUMMY_ENTRY

    return AccessIndex(iters=iters, ptr=restored, counts=counts)


def build_access_index(trace: Iterable[np.ndarray | Path | str], num_nodes: int) -> AccessIndex:
    """Both passes over the trace."""
    trace = list(trace)
    counts = count_pass(trace, num_nodes)
    return build_iters(trace, build_ptr(counts), counts)


def compute_init_set(trace: Iterable[np.ndarray | Path | str], num_entries: int) -> np.ndarray:
    """
    First-occurrence prefix of the trace, up to num_entries nodes.

    Admission order is kept: init[k] goes to cache row k.
    """
    init: list[int] = []
    if num_entries <= 0:
        return np.zeros(0, dtype=NODE_DTYPE)

    seen: set[int] = set()
    for ids in iter_trace(trace):
        for node in ids.tolist():
            if node not in seen:
                seen.add(node)
                init.append(node)
                if len(init) == num_entries:
                    return np.asarray(init, dtype=NODE_DTYPE)
    return np.asarray(init, dtype=NODE_DTYPE)


# =============================================================================
# Changesets
# =============================================================================


@dataclass
class Changeset:
    """
    Cache update of one iteration.

    in_ids are ordered by their position in the iteration's ids, so
    in_positions is ascending; out_ids are ascending by NodeId.
    """

    in_ids: np.ndarray
    out_ids: np.ndarray
    in_positions: np.ndarray

    @classmethod
    def empty(cls) -> Changeset:
        zero = np.zeros(0, dtype=NODE_DTYPE)
        return cls(in_ids=zero, out_ids=zero.copy(), in_positions=zero.copy())

    @property
    def is_empty(self) -> bool:
        return len(self.in_ids) == 0 and len(self.out_ids) == 0

    def check_against(self, ids: np.ndarray) -> None:
        """
        Raises:
            ChangesetError: If in_positions do not address in_ids inside ids.
        """
        if len(self.in_ids) != len(self.in_positions):
            raise ChangesetError("in_ids and in_positions differ in length")
        if len(self.in_positions) and (self.in_positions.max() >= len(ids) or self.in_positions.min() < 0):
            raise ChangesetError("in_positions outside the iteration's ids")
        if not np.array_equal(ids[self.in_positions], self.in_ids):
            raise ChangesetError("ids[in_positions] does not match in_ids")
        if np.intersect1d(self.in_ids, self.out_ids).size:
            raise ChangesetError("A node is both inserted and evicted")

    def save(self, runtime: RuntimeDirectory, superbatch: int, iteration: int) -> Path:
        return runtime.write_update(superbatch, iteration, self.in_ids, self.out_ids, self.in_positions)

    @classmethod
    def load(cls, runtime: RuntimeDirectory, superbatch: int, iteration: int) -> Changeset:
        in_ids, out_ids, in_positions = runtime.read_update(superbatch, iteration)
        return cls(in_ids=in_ids, out_ids=out_ids, in_positions=in_positions)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Changeset):
            return NotImplemented
        return (
            np.array_equal(self.in_ids, other.in_ids)
            and np.array_equal(self.out_ids, other.out_ids)
            and np.array_equal(self.in_positions, other.in_positions)
        )


def select_next_state(
    incumbents: np.ndarray,
    newcomers: np.ndarray,
    next_access: np.ndarray,
    num_entries: int,
) -> np.ndarray:
    """
    Boolean keep-mask over concat(incumbents, newcomers).

    Keeps the num_entries candidates accessed soonest; ties prefer
    incumbents, then lower NodeId.
    """
    candidates = np.concatenate((incumbents, newcomers))
    keep = np.zeros(len(candidates), dtype=bool)
    if len(candidates) <= num_entries:
        keep[:] = True
        return keep
    is_new = np.concatenate((np.zeros(len(incumbents), dtype=np.int8), np.ones(len(newcomers), dtype=np.int8)))
    order = np.lexsort((candidates, is_new, next_access))
    keep[order[:num_entries]] = True
    return keep


@dataclass
class SimulationResult:
    """Changesets and predicted misses of one superbatch replay."""

    init: np.ndarray
    changesets: list[Changeset] = field(default_factory=list)
    misses: list[int] = field(default_factory=list)
    accesses: list[int] = field(default_factory=list)
    # Sorted resident set before each iteration, then after the last one
    states: list[np.ndarray] = field(default_factory=list)

    @property
    def total_misses(self) -> int:
        return sum(self.misses)

    @property
    def total_accesses(self) -> int:
        return sum(self.accesses)


def check_init(init: np.ndarray, num_entries: int) -> None:
    if len(init) > num_entries:
        raise ChangesetError(f"Initial set of {len(init)} nodes exceeds {num_entries} entries")
    if len(np.unique(init)) != len(init):
        raise ChangesetError("Initial set repeats a node")


def simulate_changesets(
    access_index: AccessIndex,
    trace: Iterable[np.ndarray | Path | str],
    num_entries: int,
    init: np.ndarray | Sequence[int],
    record_states: bool = False,
) -> SimulationResult:
    """
    Replay a superbatch with Belady replacement.

    For iteration i: misses are ids_i minus the resident set; cursors of the
    accessed nodes advance one slot (to the dummy when they cross into the
    next region); the next state keeps the num_entries candidates of
    resident set + ids_i whose next access is soonest.

    Args:
        access_index: Index built over exactly this trace.
        trace: ids arrays or ids files, in batch order.
        num_entries: Cache capacity in rows.
        init: Resident set before iteration 0.
        record_states: Keep the sorted resident set at every boundary.

    Returns:
        One changeset and one miss count per iteration.

    Raises:
        TraceMismatchError: If the index and the trace disagree.
        ChangesetError: If init is larger than the cache or repeats a node.
    """
    init = np.asarray(init, dtype=NODE_DTYPE)
    check_init(init, num_entries)

    iters = access_index.iters
    ptr = access_index.ptr.copy()
    dummy = access_index.dummy_index

    if len(init) and (access_index.counts[init] == 0).any():
        stray = init[access_index.counts[init] == 0]
        raise TraceMismatchError(f"Initial node {int(stray[0])} is never accessed in this superbatch")

    resident = np.zeros(access_index.num_nodes, dtype=bool)
    resident[init] = True
    state = init.copy()
    result = SimulationResult(init=init.copy())

    for i, ids in enumerate(iter_trace(trace)):
        if record_states:
            result.states.append(np.sort(state))

        if len(ids):
            if len(np.unique(ids)) != len(ids):
                raise TraceMismatchError(f"Iteration {i} repeats a node")
            current = iters[ptr[ids]]
            if ((current & ITER_MASK) != i).any():
                raise TraceMismatchError(f"Access index does not record iteration {i}")
            ptr[ids] += 1
            crossed = (iters[ptr[ids]] & REGION_FLAG) != 0
            ptr[ids[crossed]] = dummy

        miss_positions = np.flatnonzero(~resident[ids])
        newcomers = ids[miss_positions]

        next_access = np.concatenate((iters[ptr[state]], iters[ptr[newcomers]])) & ITER_MASK
        keep = select_next_state(state, newcomers, next_access, num_entries)

        kept_old = keep[:len(state)]
        kept_new = keep[len(state):]
        out_ids = np.sort(state[~kept_old])
        in_positions = miss_positions[kept_new]
        in_ids = ids[in_positions]

        resident[out_ids] = False
        resident[in_ids] = True
        state = np.concatenate((state[kept_old], in_ids))

        result.changesets.append(Changeset(
            in_ids=in_ids.astype(NODE_DTYPE),
            out_ids=out_ids.astype(NODE_DTYPE),
            in_positions=in_positions.astype(NODE_DTYPE),
        ))
        result.misses.append(len(newcomers))
        result.accesses.append(len(ids))

    if record_states:
        result.states.append(np.sort(state))

    return result


# =============================================================================
# Precompute Stage
# =============================================================================


@dataclass
class PrecomputeResult:
    """Outcome of the changeset precomputation of one superbatch."""

    superbatch: int
    init: np.ndarray
    predicted_misses: list[int]
    accesses: list[int]
    files: list[Path]
    distinct_nodes: int = 0


def precompute_changesets(
    runtime: RuntimeDirectory,
    superbatch: int,
    num_batches: int,
    num_nodes: int,
    num_entries: int,
) -> PrecomputeResult:
    """
    Build the access index over a superbatch's ids files, simulate it, and
    write init_{sb}.bin plus one update file per iteration (S + 1 files).
    """
    paths = runtime.ids_paths(superbatch, num_batches)
    index = build_access_index(paths, num_nodes)
    init = compute_init_set(paths, num_entries)
    result = simulate_changesets(index, paths, num_entries, init)
    distinct = index.flagged_count()

    files = [runtime.write_init(superbatch, init)]
    for i, changeset in enumerate(result.changesets):
        files.append(changeset.save(runtime, superbatch, i))

    logger.info(
        f"Precomputed superbatch {superbatch}: {distinct} distinct nodes, {len(init)} prefetched, "
        f"{result.total_misses}/{result.total_accesses} predicted misses"
    )
    return PrecomputeResult(
        superbatch=superbatch,
        init=init,
        predicted_misses=result.misses,
        accesses=result.accesses,
        files=files,
        distinct_nodes=distinct,
    )


__all__ = [
    "AccessIndex",
    "Changeset",
    "DUMMY_ENTRY",
    "ITER_MASK",
    "NEVER",
    "PrecomputeResult",
    "REGION_FLAG",
    "SimulationResult",
    "build_access_index",
    "check_init",
    "build_iters",
    "build_ptr",
    "compute_init_set",
    "count_pass",
    "iter_trace",
    "load_trace",
    "precompute_changesets",
    "select_next_state",
    "simulate_changesets",
]
