"""
Graphfeed - Baseline Cache Policies

Trace-driven miss accounting for the feature cache under:
- none: every access misses
- static_degree: fixed set of the highest out-degree nodes
- lru: least recently used, updated per access
- belady: the changeset simulator, from its prefetched initial set
"""
from __future__ import annotations

import logging
from collections import OrderedDict
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from core.choices import CachePolicy
from core.storage.binary import NODE_DTYPE
from services.changeset import build_access_index, compute_init_set, load_trace, simulate_changesets
from services.neighbor_cache import DegreeSource

logger = logging.getLogger(__name__)


@dataclass
class PolicyResult:
    """Misses of one policy at one capacity over a trace."""

    policy: str
    capacity: int
    misses: list[int] = field(default_factory=list)
    total_accesses: int = 0

    @property
    def total_misses(self) -> int:
        return sum(self.misses)

    @property
    def miss_ratio(self) -> float:
        if self.total_accesses == 0:
            return 0.0
        return self.total_misses / self.total_accesses

    def to_row(self) -> dict:
        return {
            "policy": self.policy,
            "capacity": self.capacity,
            "miss_ratio": round(self.miss_ratio, 6),
        }

    def __repr__(self) -> str:
        return f"<PolicyResult({self.policy}, capacity={self.capacity}, miss_ratio={self.miss_ratio:.4f})>"


def static_degree_set(graph: DegreeSource, num_entries: int) -> np.ndarray:
    """
    The num_entries nodes with the highest out-degree, ties by lower NodeId.

    Returned in priority order.
    """
    if not 0 <= num_entries <= graph.num_nodes:
        raise ValueError(f"num_entries must be in [0, {graph.num_nodes}], got {num_entries}")
    out_deg = graph.out_degrees()
    order = np.lexsort((np.arange(graph.num_nodes), -out_deg))
    return order[:num_entries].astype(NODE_DTYPE)


def _simulate_none(trace: list[np.ndarray]) -> list[int]:
    return [len(ids) for ids in trace]


def _simulate_static(trace: list[np.ndarray], resident_ids: np.ndarray, num_nodes: int) -> list[int]:
    resident = np.zeros(num_nodes, dtype=bool)
    resident[resident_ids] = True
    return [int(np.count_nonzero(~resident[ids])) for ids in trace]


def _simulate_lru(trace: list[np.ndarray], num_entries: int) -> list[int]:
    cache: OrderedDict[int, None] = OrderedDict()
    misses = []
    for ids in trace:
        missed = 0
        for node in ids.tolist():
            if node in cache:
                cache.move_to_end(node)
                continue
            missed += 1
            if num_entries == 0:
                continue
            cache[node] = None
            if len(cache) > num_entries:
                cache.popitem(last=False)
        misses.append(missed)
    return misses


def _simulate_belady(trace: list[np.ndarray], num_entries: int, num_nodes: int) -> list[int]:
    index = build_access_index(trace, num_nodes)
    init = compute_init_set(trace, num_entries)
    return simulate_changesets(index, trace, num_entries, init).misses


def simulate_policy(
    trace: Iterable[np.ndarray | Path | str],
    num_entries: int,
    policy: str,
    graph: DegreeSource | None = None,
) -> PolicyResult:
    """
    Count feature-cache misses of a policy over an ids trace.

    Args:
        trace: ids arrays or ids files, in batch order.
        num_entries: Cache capacity in rows.
        policy: One of CachePolicy.
        graph: Degree source; required by static_degree, sizes belady's index.

    Raises:
        ValueError: On an unknown policy, or static_degree without a graph.
    """
    policy = CachePolicy(policy)
    trace = load_trace(trace)
    total = sum(len(ids) for ids in trace)

    if graph is not None:
        num_nodes = graph.num_nodes
    else:
        num_nodes = max((int(ids.max()) + 1 for ids in trace if len(ids)), default=0)

    if policy == CachePolicy.NONE:
        misses = _simulate_none(trace)
    elif policy == CachePolicy.STATIC_DEGREE:
        if graph is None:
            raise ValueError("static_degree needs the graph's out-degrees")
        resident = static_degree_set(graph, min(num_entries, graph.num_nodes))
        misses = _simulate_static(trace, resident, num_nodes)
    elif policy == CachePolicy.LRU:
        misses = _simulate_lru(trace, num_entries)
    else:
        misses = _simulate_belady(trace, num_entries, num_nodes)

    result = PolicyResult(policy=policy.value, capacity=num_entries, misses=misses, total_accesses=total)
    logger.debug(f"Simulated {result!r}")
    return result


def simulate_superbatches(
    superbatches: Sequence[Sequence[np.ndarray]],
    num_entries: int,
    policy: str,
    graph: DegreeSource | None = None,
) -> PolicyResult:
    """
    simulate_policy on each superbatch's trace, summed.

    The cache starts afresh for every superbatch, as in the pipeline.
    """
    combined = PolicyResult(policy=CachePolicy(policy).value, capacity=num_entries)
    for trace in superbatches:
        result = simulate_policy(trace, num_entries, policy, graph)
        combined.misses.extend(result.misses)
        combined.total_accesses += result.total_accesses
    return combined


def evaluate_grid(
    superbatches: Sequence[Sequence[np.ndarray]],
    policies: Sequence[str],
    capacities: Sequence[int],
    graph: DegreeSource | None = None,
    workers: int = 1,
) -> list[PolicyResult]:
    """
    simulate_superbatches over every (policy, capacity) pair.

    Rows come back policy-major in the order given.

    Raises:
        ValueError: On an unknown policy, before any simulation runs.
    """
    superbatches = [load_trace(trace) for trace in superbatches]
    for policy in policies:
        CachePolicy(policy)

    grid = [(policy, capacity) for policy in policies for capacity in capacities]
    if workers <= 1:
        return [simulate_superbatches(superbatches, capacity, policy, graph) for policy, capacity in grid]

    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="policy") as executor:
        futures = [
            executor.submit(simulate_superbatches, superbatches, capacity, policy, graph)
            for policy, capacity in grid
        ]
        return [future.result() for future in futures]
