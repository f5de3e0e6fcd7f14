"""
Graphfeed - Superbatch Orchestrator

Runs the four stages of every superbatch:
1. sample: seed batches -> ids/adj runtime files
2. precompute: ids files -> init + update (changeset) files
3. cache_init: feature cache prefetch from the init file
4. main_loop: gather, apply changeset, compute stub, per batch

With overlap on, precompute of superbatch k runs in a background thread
while the main thread samples superbatch k + 1. Runtime files of k are
removed once its main loop ends, so at most two superbatches' files exist.
"""
from __future__ import annotations

import hashlib
import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from core.choices import ReportCategory, Stage
from core.exceptions import CacheBudgetError, ChangesetError, GraphfeedError
from core.storage import FeatureStore, GraphHandle, RuntimeDirectory, open_features, open_graph
from core.storage.binary import LOCAL_DTYPE, SCALAR_DTYPE
from services.changeset import Changeset, PrecomputeResult, precompute_changesets
from services.feature_cache import BatchFeatures, FeatureCache, init_feature_cache
from services.metrics import IterationRecord, LapTimer, RunReport, StageMetrics, report_service, stopwatch
from services.neighbor_cache import NeighborCache, build_neighbor_cache, load_neighbor_cache, persist_neighbor_cache
from services.pipeline.config import RunConfig
from services.sampler import SampleStageResult, plan_seed_batches, select_training_nodes, superbatch_sample

logger = logging.getLogger(__name__)

CHECKSUM_BYTES = 16
EMPTY_CHECKSUM = "0" * (2 * CHECKSUM_BYTES)


def compute_stub(batch: BatchFeatures | np.ndarray, adj: Sequence[np.ndarray]) -> str:
    """
    Stand-in for the model step: BLAKE2b over the batch rows then the adj edges.

    Equal checksums across configurations mean bit-identical inputs.
    The empty batch maps to a fixed sentinel.
    """
    rows = batch.rows if isinstance(batch, BatchFeatures) else np.asarray(batch)
    if len(rows) == 0:
        return EMPTY_CHECKSUM

    digest = hashlib.blake2b(digest_size=CHECKSUM_BYTES)
    digest.update(np.ascontiguousarray(rows, dtype=SCALAR_DTYPE).tobytes())
    for layer in adj:
        digest.update(np.ascontiguousarray(layer, dtype=LOCAL_DTYPE).tobytes())
    return digest.hexdigest()


@dataclass
class SuperbatchJob:
    """Where a superbatch sits in the run."""

    epoch: int
    superbatch: int
    first_batch_index: int
    seed_batches: list[np.ndarray]

    @property
    def num_batches(self) -> int:
        return len(self.seed_batches)


class SuperbatchOrchestrator:
    """
    Drives superbatches through the runtime stages.

    Usage:
        with SuperbatchOrchestrator(config) as orchestrator:
            report = orchestrator.run_training()
    """

    def __init__(self, config: RunConfig, runtime: RuntimeDirectory | None = None) -> None:
        self.config = config.validate()
        self.runtime = runtime or RuntimeDirectory(config.runtime_dir)
        self.graph: GraphHandle | None = None
        self.store: FeatureStore | None = None
        self._neighbor_cache: NeighborCache | None = None
        self._prepared = False

    # Lifecycle -------------------------------------------------------------

    def open(self) -> SuperbatchOrchestrator:
        if self.graph is None:
            self.graph = open_graph(self.config.graph_file, self.config.page_size, self.config.direct_io)
        if self.store is None:
            self.store = open_features(self.config.features_file, self.config.page_size, self.config.direct_io)
        if not self._prepared:
            try:
                self.prepare_neighbor_cache()
            except GraphfeedError:
                self.close()
                raise
            self._prepared = True
        return self

    def close(self) -> None:
        if self.graph is not None:
            self.graph.close()
            self.graph = None
        if self.store is not None:
            self.store.close()
            self.store = None
        self._neighbor_cache = None
        self._prepared = False

    def __enter__(self) -> SuperbatchOrchestrator:
        return self.open()

    def __exit__(self, *exc_info) -> None:
        self.close()

    # Planning --------------------------------------------------------------

    def plan_jobs(self) -> list[SuperbatchJob]:
        """Superbatches of every epoch, numbered across the whole run."""
        train_ids = select_training_nodes(self.graph.num_nodes, self.config.train_fraction, self.config.global_seed)
        jobs = []
        for epoch in range(self.config.epochs):
            plan = plan_seed_batches(train_ids, self.config.batch_size, (self.config.global_seed, epoch))
            logger.debug(f"Epoch {epoch}: {plan.num_seeds} seeds in {len(plan)} batches")
            for start, batches in plan.superbatches(self.config.superbatch_size):
                jobs.append(SuperbatchJob(
                    epoch=epoch,
                    superbatch=len(jobs),
                    first_batch_index=epoch * len(plan) + start,
                    seed_batches=batches,
                ))
                if len(batches) < self.config.superbatch_size:
                    logger.warning(
                        f"Epoch {epoch} ends with a superbatch of {len(batches)} batches "
                        f"(superbatch size {self.config.superbatch_size})"
                    )
        return jobs

    # Stages ----------------------------------------------------------------

    def prepare_neighbor_cache(self) -> None:
        """
        Hold the neighbor cache file to neighbor_cache_bytes when a budget is set.

        A missing file is built under the budget and persisted; an existing
        one larger than the budget is refused. A zero budget uses the file as is.

        Raises:
            CacheBudgetError: If the file exceeds the budget, or the budget
                cannot hold the address table.
        """
        path = self.config.neighbor_cache_file
        budget = self.config.neighbor_cache_bytes
        if path is None or budget == 0:
            return
        if not path.exists():
            logger.info(f"No neighbor cache at {path}, building one under {budget} B")
            path.parent.mkdir(parents=True, exist_ok=True)
            persist_neighbor_cache(build_neighbor_cache(self.graph, budget), path)
            return
        cache = load_neighbor_cache(path)
        if cache.size_bytes > budget:
            raise CacheBudgetError(f"Neighbor cache {path} holds {cache.size_bytes} B, above the {budget} B budget")
        if self.config.retain_neighbor_cache:
            self._neighbor_cache = cache

    def load_neighbor_cache(self) -> NeighborCache | None:
        """Reload the neighbor cache file, unless it is retained in memory."""
        path = self.config.neighbor_cache_file
        if path is None:
            return None
        if self.config.retain_neighbor_cache and self._neighbor_cache is not None:
            return self._neighbor_cache
        self._neighbor_cache = load_neighbor_cache(path)
        return self._neighbor_cache

    def sample_stage(
        self,
        job: SuperbatchJob,
        neighbor_cache: NeighborCache | None,
        metrics: StageMetrics,
    ) -> SampleStageResult:
        with stopwatch(metrics.stage_seconds, Stage.SAMPLE.value):
            result = superbatch_sample(
                self.graph,
                neighbor_cache,
                self.runtime,
                job.superbatch,
                job.seed_batches,
                fanouts=self.config.fanouts,
                global_seed=self.config.global_seed,
                first_batch_index=job.first_batch_index,
                workers=self.config.sampler_workers,
            )
        metrics.stage_io[Stage.SAMPLE.value].merge(result.stats)
        return result

    def precompute_stage(self, job: SuperbatchJob, metrics: StageMetrics) -> PrecomputeResult:
        with stopwatch(metrics.stage_seconds, Stage.PRECOMPUTE.value):
            result = precompute_changesets(
                self.runtime,
                job.superbatch,
                job.num_batches,
                self.graph.num_nodes,
                self.config.cache_entries,
            )
        metrics.files_created = self.runtime.created_counts(job.superbatch)
        return result

    def cache_init_stage(self, job: SuperbatchJob, metrics: StageMetrics) -> FeatureCache:
        with stopwatch(metrics.stage_seconds, Stage.CACHE_INIT.value):
            init_ids = self.runtime.read_init(job.superbatch)
            cache = init_feature_cache(
                self.store,
                init_ids,
                self.config.cache_entries,
                metrics.stage_io[Stage.CACHE_INIT.value],
                workers=self.config.gather_workers,
            )
        return cache

    def main_loop(
        self,
        job: SuperbatchJob,
        precompute: PrecomputeResult,
        cache: FeatureCache,
        metrics: StageMetrics,
        timer: LapTimer,
    ) -> None:
        """
        Consume the superbatch's files in batch order.

        Raises:
            ChangesetError: If observed misses differ from the predicted ones.
        """
        stats = metrics.stage_io[Stage.MAIN_LOOP.value]

        with stopwatch(metrics.stage_seconds, Stage.MAIN_LOOP.value):
            for i in range(job.num_batches):
                ids = self.runtime.read_ids(job.superbatch, i)
                adj = self.runtime.read_adj(job.superbatch, i)
                changeset = Changeset.load(self.runtime, job.superbatch, i)
                before = stats.copy()
                batch = cache.gather(self.store, ids, stats, workers=self.config.gather_workers)
                pages = stats.since(before).pages_read
                timer.lap(ReportCategory.DATA_PREP)

                predicted = precompute.predicted_misses[i]
                if batch.misses != predicted:
                    raise ChangesetError(
                        f"Superbatch {job.superbatch} batch {i}: {batch.misses} misses observed, "
                        f"{predicted} predicted"
                    )
                cache.apply_changeset(batch, ids, changeset)
                timer.lap(ReportCategory.CACHE_UPDATE)

                checksum = compute_stub(batch, adj)
                timer.lap(ReportCategory.COMPUTE)

                metrics.iterations.append(IterationRecord(
                    epoch=job.epoch,
                    superbatch=job.superbatch,
                    batch=job.first_batch_index + i,
                    accesses=len(ids),
                    hits=batch.hits,
                    misses=batch.misses,
                    predicted_misses=predicted,
                    pages_read=pages,
                    checksum=checksum,
                ))
                logger.debug(
                    f"Batch {job.first_batch_index + i}: {batch.hits} hits, {batch.misses} misses, {pages} pages"
                )

    def finish_superbatch(
        self,
        job: SuperbatchJob,
        precompute: PrecomputeResult,
        metrics: StageMetrics,
        timer: LapTimer,
    ) -> None:
        """Cache init, main loop and runtime cleanup of a sampled and precomputed superbatch."""
        cache = self.cache_init_stage(job, metrics)
        timer.lap(ReportCategory.SWITCH)

        self.main_loop(job, precompute, cache, metrics, timer)

        self.runtime.cleanup(job.superbatch)
        timer.lap(ReportCategory.SWITCH)

        logger.info(
            f"Superbatch {job.superbatch} done: {metrics.hits} hits, {metrics.misses} misses "
            f"over {metrics.accesses} accesses"
        )

    # Runs ------------------------------------------------------------------

    def run_superbatch(self, job: SuperbatchJob, timer: LapTimer | None = None) -> StageMetrics:
        """Run the four stages of one superbatch in order."""
        timer = timer or LapTimer()
        metrics = StageMetrics(epoch=job.epoch, superbatch=job.superbatch, num_batches=job.num_batches)

        neighbor_cache = self.load_neighbor_cache()
        timer.lap(ReportCategory.SWITCH)

        self.sample_stage(job, neighbor_cache, metrics)
        precompute = self.precompute_stage(job, metrics)
        timer.lap(ReportCategory.INSPECT)

        self.finish_superbatch(job, precompute, metrics, timer)
        return metrics

    def _run_overlapped(self, jobs: list[SuperbatchJob], timer: LapTimer) -> list[StageMetrics]:
        metrics = [StageMetrics(epoch=j.epoch, superbatch=j.superbatch, num_batches=j.num_batches) for j in jobs]

        neighbor_cache = self.load_neighbor_cache()
        timer.lap(ReportCategory.SWITCH)
        self.sample_stage(jobs[0], neighbor_cache, metrics[0])
        timer.lap(ReportCategory.INSPECT)

        with ThreadPoolExecutor(max_workers=1, thread_name_prefix="precompute") as executor:
            for k, job in enumerate(jobs):
                if k + 1 < len(jobs):
                    neighbor_cache = self.load_neighbor_cache()
                    timer.lap(ReportCategory.SWITCH)
                    pending = executor.submit(self.precompute_stage, job, metrics[k])
                    try:
                        self.sample_stage(jobs[k + 1], neighbor_cache, metrics[k + 1])
                    except BaseException:
                        # Sample error wins; the precompute one is only logged
                        wait([pending])
                        if pending.exception() is not None:
                            logger.error(f"Precompute of superbatch {job.superbatch} also failed: {pending.exception()}")
                        raise
                    precompute = pending.result()
                else:
                    precompute = self.precompute_stage(job, metrics[k])
                timer.lap(ReportCategory.INSPECT)

                self.finish_superbatch(job, precompute, metrics[k], timer)

        return metrics

    def collect_trace(self, epoch: int = 0) -> list[list[np.ndarray]]:
        """
        Sample one epoch and return its ids per superbatch.

        Only the sample stage runs; the runtime files are removed as soon
        as they are read back.
        """
        traces = []
        for job in self.plan_jobs():
            if job.epoch != epoch:
                continue
            metrics = StageMetrics(epoch=job.epoch, superbatch=job.superbatch, num_batches=job.num_batches)
            self.sample_stage(job, self.load_neighbor_cache(), metrics)
            traces.append([self.runtime.read_ids(job.superbatch, i) for i in range(job.num_batches)])
            self.runtime.cleanup(job.superbatch)
        return traces

    def run_training(self) -> RunReport:
        """
        Run every superbatch of every epoch.

        Returns:
            Report with per-superbatch metrics, time breakdown and file census.

        Raises:
            GraphfeedError: Any stage failure, logged before re-raising.
        """
        self.open()
        jobs = self.plan_jobs()
        logger.info(
            f"Training over {len(jobs)} superbatches ({self.config.epochs} epochs, "
            f"overlap {'on' if self.config.overlap else 'off'})"
        )

        timer = LapTimer()
        try:
            if self.config.overlap and len(jobs) > 1:
                metrics = self._run_overlapped(jobs, timer)
            else:
                metrics = [self.run_superbatch(job, timer) for job in jobs]
        except GraphfeedError as e:
            logger.error(f"Run failed: {e}")
            raise

        report = RunReport(
            config=self.config.to_dict(),
            superbatches=metrics,
            breakdown=dict(timer.seconds),
            census=self.runtime.census(),
        )
        totals = report.totals()
        logger.info(
            f"Run finished: {totals['misses']}/{totals['accesses']} misses, "
            f"{totals['gather_pages']} gather pages, {totals['sample_pages']} sample pages"
        )
        return report


def run_superbatch(
    config: RunConfig,
    sb_index: int,
    seed_batches: Sequence[np.ndarray],
    *,
    epoch: int = 0,
    first_batch_index: int | None = None,
    runtime: RuntimeDirectory | None = None,
) -> StageMetrics:
    """Run one superbatch with a fresh orchestrator."""
    if first_batch_index is None:
        first_batch_index = sb_index * config.superbatch_size
    job = SuperbatchJob(
        epoch=epoch,
        superbatch=sb_index,
        first_batch_index=first_batch_index,
        seed_batches=list(seed_batches),
    )
    with SuperbatchOrchestrator(config, runtime=runtime) as orchestrator:
        return orchestrator.run_superbatch(job)


def run_training(config: RunConfig, report_dir: Path | str | None = None) -> RunReport:
    """
    Run a full training pass and optionally write report.json / report.csv.
    """
    with SuperbatchOrchestrator(config) as orchestrator:
        report = orchestrator.run_training()

    out_dir = report_dir or config.report_dir
    if out_dir is not None:
        report_service.write_report(report, out_dir)
    return report
