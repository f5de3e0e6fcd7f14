"""
Graphfeed - Pipeline Tests

Tests for run configuration, the superbatch orchestrator and full runs.
"""
from __future__ import annotations

import itertools
import json
from unittest.mock import patch

import numpy as np
import pytest

from core.choices import CachePolicy, ReportCategory
from core.exceptions import CacheBudgetError, ChangesetError, ConfigurationError, TraceMismatchError
from core.storage import RuntimeDirectory
from services.baselines import evaluate_grid, simulate_superbatches
from services.graphgen import GenSpec, generate
from services.metrics import REPORT_CSV, REPORT_JSON, LapTimer, StageMetrics
from services.pipeline import (
    RunConfig,
    SuperbatchOrchestrator,
    compute_stub,
    run_superbatch,
    run_training,
)
from services.pipeline.orchestrator import EMPTY_CHECKSUM


@pytest.fixture(scope="session")
def benchmark_dataset(tmp_path_factory):
    """100k-node power-law dataset with 256-float rows."""
    return generate(GenSpec(num_nodes=100_000, avg_degree=15, dim=256, seed=0), tmp_path_factory.mktemp("benchmark"))


# =============================================================================
# Configuration
# =============================================================================


class TestRunConfig:
    """Tests for configuration layering and validation."""

    def test_settings_defaults(self, settings):
        """Test defaults come from the GRAPHFEED settings."""
        settings.GRAPHFEED = {**settings.GRAPHFEED, "BATCH_SIZE": 7, "FANOUTS": [2, 2]}

        config = RunConfig.from_settings()

        assert config.batch_size == 7
        assert config.fanouts == (2, 2)

    def test_overrides_ignore_none(self, run_config):
        """Test None leaves a field unchanged."""
        assert run_config.with_overrides(batch_size=None).batch_size == 16
        assert run_config.with_overrides(batch_size=3).batch_size == 3

    def test_unknown_override(self, run_config):
        """Test an unknown key is rejected."""
        with pytest.raises(ConfigurationError):
            run_config.with_overrides(cache_size=3)

    def test_json_file(self, run_config, tmp_path):
        """Test a run file overlays the base and resolves relative paths."""
        path = tmp_path / "conf" / "run.json"
        path.parent.mkdir()
        path.write_text(json.dumps({"batch_size": 32, "fanouts": [5], "report_dir": "out"}))

        config = RunConfig.from_json(path, base=run_config)

        assert config.batch_size == 32
        assert config.fanouts == (5,)
        assert config.report_dir == tmp_path / "conf" / "out"
        assert config.superbatch_size == run_config.superbatch_size

    def test_json_not_an_object(self, tmp_path):
        """Test a run file holding a list is rejected."""
        path = tmp_path / "run.json"
        path.write_text("[1, 2]")

        with pytest.raises(ConfigurationError):
            RunConfig.from_json(path)

    def test_json_missing(self, tmp_path):
        """Test a missing run file is a configuration error."""
        with pytest.raises(ConfigurationError):
            RunConfig.from_json(tmp_path / "absent.json")

    @pytest.mark.parametrize(
        "overrides",
        [
            {"batch_size": 0},
            {"superbatch_size": 0},
            {"epochs": 0},
            {"train_fraction": 1.5},
            {"feature_cache_entries": -1},
            {"sampler_workers": 0},
            {"fanouts": (3, 0)},
            {"page_size": 1000},
            {"policy": CachePolicy.LRU.value},
        ],
    )
    def test_invalid_fields(self, run_config, overrides):
        """Test each invalid field is rejected by validate."""
        with pytest.raises(ConfigurationError):
            run_config.with_overrides(**overrides).validate()

    def test_missing_dataset(self, tmp_path):
        """Test a run without graph and features files."""
        with pytest.raises(ConfigurationError):
            RunConfig().validate()
        with pytest.raises(ConfigurationError):
            RunConfig(dataset_dir=tmp_path).validate()

    def test_missing_neighbor_cache(self, run_config, tmp_path):
        """Test a neighbor cache that was never built is reported."""
        config = run_config.with_overrides(neighbor_cache_path=tmp_path / "absent.bin")

        with pytest.raises(ConfigurationError):
            config.validate()
        config.with_overrides(use_neighbor_cache=False).validate()

    def test_missing_neighbor_cache_with_budget(self, run_config, tmp_path):
        """Test a neighbor-cache budget lets the run build the missing file."""
        run_config.with_overrides(neighbor_cache_path=tmp_path / "absent.bin", neighbor_cache_bytes=8192).validate()

    def test_policy_none_uses_no_entries(self, run_config):
        """Test the cacheless policy runs with zero feature-cache rows."""
        assert run_config.cache_entries == 64
        assert run_config.with_overrides(policy=CachePolicy.NONE.value).cache_entries == 0


# =============================================================================
# Orchestrator
# =============================================================================


class TestComputeStub:
    """Tests for the checksum stand-in."""

    def test_deterministic(self):
        """Test equal inputs hash equally and any change alters the hash."""
        rows = np.ones((3, 4), dtype=np.float32)
        adj = [np.array([[1, 0], [2, 0]])]

        assert compute_stub(rows, adj) == compute_stub(rows.copy(), [a.copy() for a in adj])
        assert compute_stub(rows, adj) != compute_stub(rows * 2, adj)
        assert compute_stub(rows, adj) != compute_stub(rows, [np.array([[2, 0], [1, 0]])])

    def test_empty_batch(self):
        """Test an empty batch maps to the sentinel."""
        assert compute_stub(np.zeros((0, 4), dtype=np.float32), []) == EMPTY_CHECKSUM


class TestOrchestrator:
    """Tests for job planning and individual stages."""

    def test_plan_jobs(self, run_config):
        """Test 150 seeds in batches of 16 give superbatches of 4, 4 and 2."""
        with SuperbatchOrchestrator(run_config) as orchestrator:
            jobs = orchestrator.plan_jobs()

        assert [job.num_batches for job in jobs] == [4, 4, 2]
        assert [job.first_batch_index for job in jobs] == [0, 4, 8]
        assert [job.superbatch for job in jobs] == [0, 1, 2]

    def test_plan_jobs_numbers_across_epochs(self, run_config):
        """Test superbatch and batch numbering continue into the next epoch."""
        with SuperbatchOrchestrator(run_config.with_overrides(epochs=2)) as orchestrator:
            jobs = orchestrator.plan_jobs()

        assert [job.superbatch for job in jobs] == [0, 1, 2, 3, 4, 5]
        assert [job.epoch for job in jobs] == [0, 0, 0, 1, 1, 1]
        assert [job.first_batch_index for job in jobs] == [0, 4, 8, 10, 14, 18]

    def test_neighbor_cache_retention(self, run_config):
        """Test the neighbor cache is reloaded per superbatch unless retained."""
        with SuperbatchOrchestrator(run_config) as orchestrator:
            assert orchestrator.load_neighbor_cache() is not orchestrator.load_neighbor_cache()

        with SuperbatchOrchestrator(run_config.with_overrides(retain_neighbor_cache=True)) as orchestrator:
            assert orchestrator.load_neighbor_cache() is orchestrator.load_neighbor_cache()

        with SuperbatchOrchestrator(run_config.with_overrides(use_neighbor_cache=False)) as orchestrator:
            assert orchestrator.load_neighbor_cache() is None

    def test_budget_builds_missing_neighbor_cache(self, run_config, tmp_path):
        """Test a missing neighbor cache is built under the run budget on open."""
        path = tmp_path / "built" / "ncache.bin"
        budget = 600 * 8 + 4096
        config = run_config.with_overrides(neighbor_cache_path=path, neighbor_cache_bytes=budget)

        with SuperbatchOrchestrator(config) as orchestrator:
            cache = orchestrator.load_neighbor_cache()

        assert path.exists()
        assert cache.num_cached > 0
        assert cache.size_bytes <= budget

    def test_neighbor_cache_above_budget(self, run_config):
        """Test an existing neighbor cache larger than the run budget is refused."""
        config = run_config.with_overrides(neighbor_cache_bytes=600 * 8 + 8)

        with pytest.raises(CacheBudgetError):
            SuperbatchOrchestrator(config).open()

    def test_neighbor_cache_within_budget(self, run_config):
        """Test a budget at least the file size keeps the preprocessed cache."""
        config = run_config.with_overrides(neighbor_cache_bytes=600 * 8 + 16 * 1024)

        with SuperbatchOrchestrator(config) as orchestrator:
            assert orchestrator.load_neighbor_cache().num_cached > 0

    def test_stage_file_counts(self, run_config):
        """Test sample writes 2S files and precompute S + 1 more."""
        with SuperbatchOrchestrator(run_config) as orchestrator:
            job = orchestrator.plan_jobs()[0]
            metrics = StageMetrics(epoch=0, superbatch=0, num_batches=job.num_batches)

            orchestrator.sample_stage(job, orchestrator.load_neighbor_cache(), metrics)
            assert len(orchestrator.runtime.files_on_disk()) == 2 * job.num_batches

            orchestrator.precompute_stage(job, metrics)
            assert len(orchestrator.runtime.files_on_disk()) == 3 * job.num_batches + 1
            assert metrics.files_created == {"ids": 4, "adj": 4, "init": 1, "update": 4}

    def test_misprediction_detected(self, run_config):
        """Test the main loop stops when observed misses differ from predicted."""
        with SuperbatchOrchestrator(run_config) as orchestrator:
            job = orchestrator.plan_jobs()[0]
            metrics = StageMetrics(epoch=0, superbatch=0, num_batches=job.num_batches)
            orchestrator.sample_stage(job, None, metrics)
            precompute = orchestrator.precompute_stage(job, metrics)
            precompute.predicted_misses[0] += 1
            cache = orchestrator.cache_init_stage(job, metrics)

            with pytest.raises(ChangesetError):
                orchestrator.main_loop(job, precompute, cache, metrics, LapTimer())

    def test_collect_trace(self, run_config):
        """Test one epoch's ids per superbatch are returned and nothing is left on disk."""
        with SuperbatchOrchestrator(run_config) as orchestrator:
            traces = orchestrator.collect_trace()
            files = orchestrator.runtime.files_on_disk()

        assert [len(trace) for trace in traces] == [4, 4, 2]
        assert files == []

    def test_trace_predicts_run(self, run_config):
        """Test belady over the collected trace predicts the misses of a run."""
        with SuperbatchOrchestrator(run_config) as orchestrator:
            traces = orchestrator.collect_trace()
            predicted = simulate_superbatches(traces, 64, CachePolicy.BELADY, orchestrator.graph)

        report = run_training(run_config.with_overrides(runtime_dir=run_config.runtime_dir / "run"))

        assert predicted.total_misses == report.totals()["misses"]
        assert predicted.total_accesses == report.totals()["accesses"]


class TestRunSuperbatch:
    """Tests for running a single superbatch."""

    def test_single_superbatch(self, run_config):
        """Test one superbatch runs its stages and cleans up."""
        with SuperbatchOrchestrator(run_config) as orchestrator:
            seed_batches = orchestrator.plan_jobs()[1].seed_batches
        runtime = RuntimeDirectory(run_config.runtime_dir)

        metrics = run_superbatch(run_config, 1, seed_batches, runtime=runtime)

        assert metrics.num_batches == 4
        assert [r.batch for r in metrics.iterations] == [4, 5, 6, 7]
        assert metrics.misses == metrics.predicted_misses
        assert runtime.files_on_disk() == []
        assert runtime.census()["created"][1] == {"ids": 4, "adj": 4, "init": 1, "update": 4}


# =============================================================================
# Full Runs
# =============================================================================


class TestRunTraining:
    """Tests for complete training passes."""

    def test_report(self, run_config):
        """Test a run predicts its misses, partitions time and writes reports."""
        report = run_training(run_config)
        totals = report.totals()

        assert totals["superbatches"] == 3
        assert totals["iterations"] == 10
        assert totals["misses"] == totals["predicted_misses"]
        assert 0 < totals["miss_ratio"] < 1
        assert set(report.breakdown) == set(ReportCategory.values)
        assert report.total_seconds > 0

        assert (run_config.report_dir / REPORT_JSON).exists()
        lines = (run_config.report_dir / REPORT_CSV).read_text().splitlines()
        assert len(lines) == 1 + 3

    def test_file_census(self, run_config):
        """Test each superbatch creates S ids, S adj, one init and S update files."""
        report = run_training(run_config)
        census = report.census

        assert census["created"] == {
            0: {"ids": 4, "adj": 4, "init": 1, "update": 4},
            1: {"ids": 4, "adj": 4, "init": 1, "update": 4},
            2: {"ids": 2, "adj": 2, "init": 1, "update": 2},
        }
        assert census["max_live_superbatches"] <= 2
        assert census["live_superbatches"] == []
        assert list(run_config.runtime_dir.iterdir()) == []

    def test_overlap_keeps_two_superbatches(self, run_config):
        """Test overlap does put two superbatches on disk at once."""
        report = run_training(run_config.with_overrides(overlap=True))

        assert report.census["max_live_superbatches"] == 2

    def test_overlapped_sample_error_wins(self, run_config):
        """Test a failed sample surfaces even when the concurrent precompute fails too."""
        original = SuperbatchOrchestrator.sample_stage

        def sample_then_fail(orchestrator, job, neighbor_cache, metrics):
            if job.superbatch == 1:
                raise ChangesetError("sample failed")
            return original(orchestrator, job, neighbor_cache, metrics)

        with patch.object(SuperbatchOrchestrator, "sample_stage", autospec=True, side_effect=sample_then_fail):
            with patch.object(SuperbatchOrchestrator, "precompute_stage", side_effect=TraceMismatchError("precompute failed")):
                with pytest.raises(ChangesetError, match="sample failed"):
                    run_training(run_config.with_overrides(overlap=True))

    def test_overlapped_precompute_error(self, run_config):
        """Test a precompute failure alone still stops the overlapped run."""
        with patch.object(SuperbatchOrchestrator, "precompute_stage", side_effect=TraceMismatchError("precompute failed")):
            with pytest.raises(TraceMismatchError, match="precompute failed"):
                run_training(run_config.with_overrides(overlap=True))

    def test_sequential_keeps_one_superbatch(self, run_config):
        """Test without overlap one superbatch's files exist at a time."""
        report = run_training(run_config.with_overrides(overlap=False))

        assert report.census["max_live_superbatches"] == 1

    def test_checksums_invariant(self, run_config, tmp_path):
        """Test caches, overlap and sampler workers never change the batches."""
        reference = None

        for entries, ncache, overlap, workers in itertools.product((64, 0), (True, False), (True, False), (1, 4)):
            config = run_config.with_overrides(
                runtime_dir=tmp_path / f"rt-{entries}-{ncache}-{overlap}-{workers}",
                feature_cache_entries=entries,
                use_neighbor_cache=ncache,
                overlap=overlap,
                sampler_workers=workers,
            )
            checksums = run_training(config).checksums

            assert len(checksums) == 10
            if reference is None:
                reference = checksums
            assert checksums == reference, (entries, ncache, overlap, workers)

    def test_zero_cache_misses_everything(self, run_config):
        """Test a zero-entry cache and the cacheless policy miss every access."""
        for config in (
            run_config.with_overrides(feature_cache_entries=0),
            run_config.with_overrides(policy=CachePolicy.NONE.value),
        ):
            totals = run_training(config).totals()
            assert totals["miss_ratio"] == 1.0
            assert totals["cache_init_pages"] == 0

    def test_neighbor_cache_saves_sample_pages(self, run_config):
        """Test the neighbor cache lowers sample reads without changing misses."""
        warm = run_training(run_config).totals()
        cold = run_training(run_config.with_overrides(use_neighbor_cache=False)).totals()

        assert warm["sample_pages"] < cold["sample_pages"]
        assert warm["misses"] == cold["misses"]

    def test_page_sized_rows(self, tmp_path):
        """Test 4096-byte rows charge exactly one gather page per miss."""
        dataset = generate(GenSpec(num_nodes=300, avg_degree=6, dim=1024, seed=3), tmp_path / "wide")
        config = RunConfig.from_settings().with_overrides(
            dataset_dir=dataset.graph_path.parent,
            runtime_dir=tmp_path / "runtime",
            use_neighbor_cache=False,
            batch_size=32,
            superbatch_size=3,
            feature_cache_entries=40,
        )

        totals = run_training(config).totals()

        assert totals["misses"] > 0
        assert totals["gather_pages"] == totals["misses"]

    def test_second_epoch_reshuffles(self, run_config):
        """Test a second epoch runs different batches."""
        report = run_training(run_config.with_overrides(epochs=2))
        checksums = report.checksums

        assert len(checksums) == 20
        assert checksums[:10] != checksums[10:]


@pytest.mark.slow
class TestBenchmark:
    """Qualitative results on the 100k-node dataset."""

    def benchmark_config(self, dataset, tmp_path, **overrides):
        return RunConfig.from_settings().with_overrides(**{
            "dataset_dir": dataset.graph_path.parent,
            "runtime_dir": tmp_path / "runtime",
            "use_neighbor_cache": False,
            "fanouts": (10, 10, 10),
            "batch_size": 512,
            "superbatch_size": 64,
            "sampler_workers": 4,
            **overrides,
        })

    def test_miss_ratio_ordering(self, benchmark_dataset, tmp_path):
        """Test belady < static_degree < 1.0 at 1, 2, 5 and 10% capacity, averaged over 3 seeds."""
        capacities = [1000, 2000, 5000, 10_000]
        ratios = {policy: np.zeros(len(capacities)) for policy in ("belady", "static_degree")}

        for seed in range(3):
            config = self.benchmark_config(benchmark_dataset, tmp_path, train_fraction=0.33, global_seed=seed)
            with SuperbatchOrchestrator(config) as orchestrator:
                traces = orchestrator.collect_trace()
                assert len(traces[0]) == 64
                rows = evaluate_grid(traces, list(ratios), capacities, orchestrator.graph, workers=4)
            for row in rows:
                ratios[row.policy][capacities.index(row.capacity)] += row.miss_ratio / 3

        assert (ratios["belady"] < ratios["static_degree"]).all()
        assert (ratios["static_degree"] < 1.0).all()

    def test_gather_reads_exceed_sample_reads(self, benchmark_dataset, tmp_path):
        """Test gather pages exceed twice the sample pages without caches."""
        config = self.benchmark_config(
            benchmark_dataset, tmp_path, train_fraction=0.02, feature_cache_entries=0, superbatch_size=2,
        )

        totals = run_training(config).totals()

        assert totals["gather_pages"] / totals["sample_pages"] > 2

    def test_checksums_invariant_10k(self, tmp_path):
        """Test checksum invariance over a full epoch of a 10k-node graph."""
        dataset = generate(GenSpec(num_nodes=10_000, avg_degree=10, dim=32, seed=1), tmp_path / "10k")
        reference = None

        for entries, overlap, workers in itertools.product((500, 0), (True, False), (1, 4)):
            config = RunConfig.from_settings().with_overrides(
                dataset_dir=dataset.graph_path.parent,
                runtime_dir=tmp_path / f"rt-{entries}-{overlap}-{workers}",
                use_neighbor_cache=False,
                fanouts=(5, 5),
                batch_size=256,
                superbatch_size=8,
                feature_cache_entries=entries,
                overlap=overlap,
                sampler_workers=workers,
            )
            checksums = run_training(config).checksums
            if reference is None:
                reference = checksums
            assert checksums == reference
