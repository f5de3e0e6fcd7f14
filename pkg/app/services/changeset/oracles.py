"""
Graphfeed - Changeset Oracles

Independent references for the changeset simulator:
- a forward-scanning Belady replay (quadratic in the superbatch size)
- an exhaustive minimum-miss search for tiny traces
"""
from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np

from core.exceptions import OracleLimitError
from core.storage.binary import NODE_DTYPE
from services.changeset import NEVER, Changeset, SimulationResult, check_init, load_trace, select_next_state

logger = logging.getLogger(__name__)

DP_MAX_NODES = 8
DP_MAX_ITERATIONS = 6
DP_MAX_CAPACITY = 3


def naive_belady_oracle(
    trace: Iterable[np.ndarray | Path | str],
    num_entries: int,
    init: np.ndarray | Sequence[int],
) -> SimulationResult:
    """
    Belady replay that finds each candidate's next access by scanning the
    future iterations. Same recurrence and tie-break as simulate_changesets.

    Returns:
        Result with states recorded.
    """
    trace = load_trace(trace)
    init = np.asarray(init, dtype=NODE_DTYPE)
    check_init(init, num_entries)

    state = init.copy()
    result = SimulationResult(init=init.copy())

    for i, ids in enumerate(trace):
        result.states.append(np.sort(state))

        miss_positions = np.flatnonzero(~np.isin(ids, state))
        newcomers = ids[miss_positions]
        candidates = np.concatenate((state, newcomers))

        next_access = np.full(len(candidates), NEVER, dtype=np.uint64)
        pending = np.ones(len(candidates), dtype=bool)
        for j in range(i + 1, len(trace)):
            if not pending.any():
                break
            found = pending & np.isin(candidates, trace[j])
            next_access[found] = j
            pending &= ~found

        keep = select_next_state(state, newcomers, next_access, num_entries)
        kept_old = keep[:len(state)]
        in_positions = miss_positions[keep[len(state):]]

        result.changesets.append(Changeset(
            in_ids=ids[in_positions].astype(NODE_DTYPE),
            out_ids=np.sort(state[~kept_old]).astype(NODE_DTYPE),
            in_positions=in_positions.astype(NODE_DTYPE),
        ))
        result.misses.append(len(newcomers))
        result.accesses.append(len(ids))
        state = np.concatenate((state[kept_old], ids[in_positions]))

    result.states.append(np.sort(state))
    return result


def _bits(mask: int) -> int:
    return bin(mask).count("1")


def _subsets(mask: int):
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


def dp_optimal_misses(trace: Sequence[Sequence[int]], num_entries: int) -> int:
    """
    Minimum total misses over every admissible cache-state sequence.

    Starts from an empty cache; the next state may be any subset of
    resident set + current ids holding at most num_entries nodes.

    Raises:
        OracleLimitError: Beyond 8 distinct nodes, 6 iterations or capacity 3.
    """
    trace = [sorted({int(v) for v in ids}) for ids in trace]
    nodes = sorted({v for ids in trace for v in ids})

    if len(nodes) > DP_MAX_NODES or len(trace) > DP_MAX_ITERATIONS or num_entries > DP_MAX_CAPACITY:
        raise OracleLimitError(
            f"Exhaustive search limited to {DP_MAX_NODES} nodes, {DP_MAX_ITERATIONS} iterations "
            f"and capacity {DP_MAX_CAPACITY} (got {len(nodes)}, {len(trace)}, {num_entries})"
        )

    bit = {node: 1 << k for k, node in enumerate(nodes)}
    best = {0: 0}

    for ids in trace:
        accessed = 0
        for node in ids:
            accessed |= bit[node]

        following: dict[int, int] = {}
        for state, misses in best.items():
            cost = misses + _bits(accessed & ~state)
            for nxt in _subsets(state | accessed):
                if _bits(nxt) <= num_entries and cost < following.get(nxt, cost + 1):
                    following[nxt] = cost
        best = following

    return min(best.values())
