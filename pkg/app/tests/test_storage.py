"""
Graphfeed - Storage Tests

Tests for the CSC graph store, the feature store, page accounting and
runtime files.
"""
from __future__ import annotations

import errno
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest

from core.exceptions import NodeRangeError, RuntimeFileError, StorageFormatError
from core.storage import (
    IoStats,
    RuntimeDirectory,
    build_csc,
    open_features,
    open_graph,
    page_count_for_row,
    pages_spanned,
    persist_features,
    persist_graph,
)
from core.storage.graph import GRAPH_HEADER


class TestBuildCsc:
    """Tests for CSC construction."""

    def test_in_neighbors_sorted(self, small_graph):
        """Test each column lists its in-neighbors ascending."""
        assert small_graph.in_neighbors(0).tolist() == [1, 2, 3]
        assert small_graph.in_neighbors(2).tolist() == [0, 3]
        assert small_graph.in_neighbors(3).tolist() == []
        assert small_graph.in_neighbors(4).tolist() == [0, 1, 2, 3]

    def test_duplicate_edges_collapse(self):
        """Test repeated (src, dst) pairs are stored once."""
        graph = build_csc([(1, 0), (1, 0), (2, 0)], 3)

        assert graph.num_edges == 2
        assert graph.in_neighbors(0).tolist() == [1, 2]

    def test_unsorted_input_grouped_by_column(self):
        """Test shuffled edges with repeats come out grouped by dst, ascending src."""
        edges = [(3, 1), (0, 2), (2, 1), (3, 1), (1, 2), (0, 1), (2, 1), (4, 0)]

        graph = build_csc(edges, 5)

        assert graph.indptr.tolist() == [0, 1, 4, 6, 6, 6]
        assert graph.indices.tolist() == [4, 0, 2, 3, 0, 1]

    def test_degrees(self, small_graph):
        """Test in- and out-degree vectors."""
        assert small_graph.in_degrees().tolist() == [3, 1, 2, 0, 4]
        assert small_graph.out_degrees().tolist() == [2, 2, 3, 3, 0]

    def test_endpoint_out_of_range(self):
        """Test an endpoint >= num_nodes is rejected."""
        with pytest.raises(NodeRangeError):
            build_csc([(0, 5)], 5)

    def test_empty_graph(self):
        """Test a graph without edges has a zero indptr."""
        graph = build_csc([], 4)

        assert graph.num_edges == 0
        assert graph.indptr.tolist() == [0, 0, 0, 0, 0]


class TestGraphFile:
    """Tests for graph.bin persistence and disk reads."""

    def test_reopen_matches(self, small_graph, small_graph_handle):
        """Test the loaded graph equals the persisted one."""
        assert small_graph_handle.num_nodes == 5
        assert small_graph_handle.num_edges == 10
        assert small_graph_handle.load() == small_graph

    def test_indices_region_page_aligned(self, small_graph_handle):
        """Test the indices region starts on a page boundary."""
        assert small_graph_handle.indices_offset % 4096 == 0

    def test_read_in_neighbors_charges_pages(self, small_graph, small_graph_handle):
        """Test disk reads return the list and charge the pages it spans."""
        stats = IoStats()

        neighbors = small_graph_handle.read_in_neighbors(4, stats)

        assert neighbors.tolist() == small_graph.in_neighbors(4).tolist()
        assert stats.neighbor_lists_read == 1
        assert stats.pages_read == 1
        assert stats.bytes_read == 4 * 8

    def test_read_empty_list_costs_nothing(self, small_graph_handle):
        """Test a node without in-neighbors reads zero pages."""
        stats = IoStats()

        assert small_graph_handle.read_in_neighbors(3, stats).tolist() == []
        assert stats.pages_read == 0

    def test_read_out_of_range(self, small_graph_handle):
        """Test reading a node beyond the graph."""
        with pytest.raises(NodeRangeError):
            small_graph_handle.read_in_neighbors(5, IoStats())

    def test_out_degrees_from_disk(self, small_graph, small_graph_handle):
        """Test out-degrees computed from the on-disk indices."""
        assert small_graph_handle.out_degrees().tolist() == small_graph.out_degrees().tolist()

    def test_bad_magic(self, small_graph_file):
        """Test a file with a foreign magic is refused."""
        raw = bytearray(small_graph_file.read_bytes())
        raw[:8] = b"NOTAGRPH"
        small_graph_file.write_bytes(bytes(raw))

        with pytest.raises(StorageFormatError):
            open_graph(small_graph_file)

    def test_truncated_file(self, small_graph_file):
        """Test a file cut inside the indices region is refused."""
        raw = small_graph_file.read_bytes()
        small_graph_file.write_bytes(raw[:-8])

        with pytest.raises(StorageFormatError):
            open_graph(small_graph_file)

    def test_truncated_header(self, tmp_path):
        """Test a file shorter than its header is refused."""
        path = tmp_path / "graph.bin"
        path.write_bytes(b"\0" * (GRAPH_HEADER.size - 1))

        with pytest.raises(StorageFormatError):
            open_graph(path)

    def test_direct_io_reads_same_bytes(self, small_graph, small_graph_file):
        """Test the direct I/O flag changes nothing observable."""
        stats = IoStats()
        with open_graph(small_graph_file, direct_io=True) as handle:
            neighbors = handle.read_in_neighbors(0, stats)

        assert neighbors.tolist() == small_graph.in_neighbors(0).tolist()
        assert stats.pages_read == 1


class TestPageAccounting:
    """Tests for block-device page accounting."""

    def test_pages_spanned(self):
        """Test page counts of byte ranges."""
        assert pages_spanned(0, 4096) == 1
        assert pages_spanned(4095, 2) == 2
        assert pages_spanned(100, 0) == 0
        assert pages_spanned(4096, 8192) == 2

    def test_aligned_rows_cost_one_page(self):
        """Test 4096-byte rows never straddle a boundary."""
        assert all(page_count_for_row(4096, k) == 1 for k in range(16))

    def test_three_quarter_page_rows_cycle(self):
        """Test 3072-byte rows repeat a 1, 2, 2, 1 pattern."""
        assert [page_count_for_row(3072, k) for k in range(8)] == [1, 2, 2, 1, 1, 2, 2, 1]

    def test_three_quarter_page_rows_average(self):
        """Test uniformly random 3072-byte rows average 1.5 pages."""
        rng = np.random.default_rng(0)
        rows = rng.integers(0, 1_000_000, size=10_000)

        mean = np.mean([page_count_for_row(3072, int(r)) for r in rows])

        assert abs(mean - 1.5) <= 0.05

    def test_invalid_row_width(self):
        """Test a zero row width is rejected."""
        with pytest.raises(ValueError):
            page_count_for_row(0, 1)


class TestFeatureStore:
    """Tests for features.bin and row reads."""

    def test_rows_in_request_order(self, feature_store, feature_matrix):
        """Test output row k holds ids[k]."""
        ids = [7, 0, 39, 7]

        rows = feature_store.read_feature_rows(ids, IoStats())

        np.testing.assert_array_equal(rows, feature_matrix[ids])

    def test_payload_page_aligned(self, feature_store):
        """Test the payload starts at the first page boundary."""
        assert feature_store.payload_offset == 4096
        assert feature_store.row_bytes == 32

    def test_full_page_rows(self, tmp_path):
        """Test 1024-float rows cost exactly one page each."""
        matrix = np.ones((12, 1024), dtype=np.float32)
        path = persist_features(tmp_path / "wide.bin", 12, 1024, matrix)
        stats = IoStats()

        with open_features(path) as store:
            store.read_feature_rows([3, 5, 11], stats)

        assert stats.pages_read == 3
        assert stats.rows_read == 3

    def test_three_quarter_page_rows(self, tmp_path):
        """Test 768-float rows cost 1.5 pages on average over full cycles."""
        matrix = np.zeros((64, 768), dtype=np.float32)
        path = persist_features(tmp_path / "f768.bin", 64, 768, matrix)
        stats = IoStats()

        with open_features(path) as store:
            store.read_feature_rows(np.arange(64), stats)

        assert stats.pages_read == 96

    def test_parallel_workers_match_serial(self, feature_store, feature_matrix):
        """Test a worker pool gathers the same rows and counts."""
        ids = np.arange(39, -1, -1)
        serial, parallel = IoStats(), IoStats()

        expected = feature_store.read_feature_rows(ids, serial)
        got = feature_store.read_feature_rows(ids, parallel, workers=4)

        np.testing.assert_array_equal(got, expected)
        np.testing.assert_array_equal(got, feature_matrix[ids])
        assert parallel == serial

    def test_out_of_range(self, feature_store):
        """Test an id beyond the table is rejected."""
        with pytest.raises(NodeRangeError):
            feature_store.read_feature_rows([40], IoStats())

    def test_row_count_mismatch(self, tmp_path):
        """Test persisting fewer rows than declared fails."""
        with pytest.raises(ValueError):
            persist_features(tmp_path / "short.bin", 5, 4, np.zeros((4, 4), dtype=np.float32))

    def test_truncated_table(self, tmp_path, feature_matrix):
        """Test a table cut short is refused."""
        path = persist_features(tmp_path / "cut.bin", 40, 8, feature_matrix)
        path.write_bytes(path.read_bytes()[:-4])

        with pytest.raises(StorageFormatError):
            open_features(path)

    def test_chunked_write(self, tmp_path, feature_matrix):
        """Test row blocks are written in order."""
        path = persist_features(tmp_path / "chunks.bin", 40, 8, iter([feature_matrix[:15], feature_matrix[15:]]))

        with open_features(path) as store:
            np.testing.assert_array_equal(store.read_feature_rows(np.arange(store.num_nodes), IoStats()), feature_matrix)


class TestRuntimeDirectory:
    """Tests for runtime files and their census."""

    def test_ids_and_adj_files(self, runtime):
        """Test ids and adj files read back what was written."""
        ids = np.array([9, 2, 5], dtype=np.int64)
        adj = [np.array([[1, 0], [2, 0]]), np.zeros((0, 2), dtype=np.int64)]

        runtime.write_ids(0, 0, ids)
        runtime.write_adj(0, 0, adj)

        assert runtime.read_ids(0, 0).tolist() == [9, 2, 5]
        read = runtime.read_adj(0, 0)
        assert len(read) == 2
        assert read[0].tolist() == [[1, 0], [2, 0]]
        assert read[1].shape == (0, 2)

    def test_update_file(self, runtime):
        """Test the three changeset arrays survive a write."""
        runtime.write_update(1, 3, np.array([4, 8]), np.array([1]), np.array([0, 2]))

        in_ids, out_ids, in_positions = runtime.read_update(1, 3)

        assert in_ids.tolist() == [4, 8]
        assert out_ids.tolist() == [1]
        assert in_positions.tolist() == [0, 2]

    def test_census_and_cleanup(self, runtime):
        """Test files are counted per superbatch and removed together."""
        for i in range(3):
            runtime.write_ids(0, i, np.array([i]))
        runtime.write_ids(1, 0, np.array([0]))
        runtime.write_init(0, np.array([0]))

        census = runtime.census()
        assert census["created"][0]["ids"] == 3
        assert census["created"][0]["init"] == 1
        assert census["max_live_superbatches"] == 2

        assert runtime.cleanup(0) == 4
        assert [p.name for p in runtime.files_on_disk()] == ["ids_1_0.bin"]
        assert runtime.census()["live_superbatches"] == [1]

    def test_missing_file(self, runtime):
        """Test reading a file that was never written."""
        with pytest.raises(RuntimeFileError):
            runtime.read_ids(0, 0)

    def test_wrong_kind_of_file(self, runtime):
        """Test an adj file is not accepted as an ids file."""
        runtime.write_adj(0, 0, [np.zeros((0, 2))])
        runtime.adj_path(0, 0).rename(runtime.ids_path(0, 0))

        with pytest.raises(StorageFormatError):
            runtime.read_ids(0, 0)

    def test_disk_full_reports_census(self, runtime):
        """Test ENOSPC surfaces as RuntimeFileError carrying the census."""
        runtime.write_ids(0, 0, np.array([1]))

        with patch("core.storage.runtime.write_ids_file", side_effect=OSError(errno.ENOSPC, "No space left")):
            with pytest.raises(RuntimeFileError) as exc_info:
                runtime.write_ids(0, 1, np.array([2]))

        assert exc_info.value.census["created"][0]["ids"] == 1

    def test_failed_write_leaves_no_partial_file(self, runtime):
        """Test a write failing midway removes the half-written file."""
        def write_then_fail(path, ids):
            Path(path).write_bytes(b"GXIDS001")
            raise OSError(errno.ENOSPC, "No space left")

        with patch("core.storage.runtime.write_ids_file", side_effect=write_then_fail):
            with pytest.raises(RuntimeFileError):
                runtime.write_ids(0, 0, np.array([1]))

        assert not runtime.ids_path(0, 0).exists()
        assert runtime.files_on_disk() == []

    def test_root_created(self, tmp_path):
        """Test the runtime root is created on demand."""
        root = tmp_path / "a" / "b"

        RuntimeDirectory(root)

        assert Path(root).is_dir()
