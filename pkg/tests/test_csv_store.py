"""Tests for CSV store."""

import csv

import pytest

from uhn.config import METRICS_COLUMNS, SUMMARY_COLUMNS
from uhn.csv_store import MetricsLog, SummaryTable


@pytest.fixture
def temp_csv(tmp_path):
    """Create a temporary CSV path."""
    return tmp_path / "run" / "metrics.csv"


@pytest.fixture
def log(temp_csv):
    """Create a MetricsLog with temp path."""
    return MetricsLog(temp_csv)


class TestMetricsLog:
    """Tests for MetricsLog."""

    def test_read_empty(self, log):
        """Reading non-existent CSV returns empty list."""
        assert log.read_all() == []

    def test_creates_output_dir(self, temp_csv, log):
        """Parent directory is created on construction."""
        assert temp_csv.parent.is_dir()

    def test_append_writes_header_once(self, log, temp_csv):
        """Header is written for the first row only."""
        log.append(0, "init", 0, "mlp_mnist", 0.5, 1e-3, 2.0)
        log.append(1, "init", 0, "mlp_mnist", 0.25, 1e-3, 1.0)

        with open(temp_csv, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))

        assert rows[0] == METRICS_COLUMNS
        assert len(rows) == 3

    def test_float_repr_round_trips(self, log):
        """Losses are written with full precision."""
        value = 0.1 + 0.2
        log.append(0, "train", 1, "toy_image", value, 1e-3, 0.0)

        assert float(log.read_all()[0]["loss"]) == value

    def test_wall_time_empty_by_default(self, log):
        """wall_time stays empty so reruns are byte-identical."""
        log.append(0, "train", 0, "toy_image", 1.0, 1e-3, 0.0, wall_time=12.5)

        assert log.read_all()[0]["wall_time"] == ""

    def test_wall_time_when_enabled(self, temp_csv):
        """wall_time is recorded when requested."""
        log = MetricsLog(temp_csv, log_wall_time=True)
        log.append(0, "train", 0, "toy_image", 1.0, 1e-3, 0.0, wall_time=12.5)

        assert float(log.read_all()[0]["wall_time"]) == 12.5

    def test_losses_by_phase(self, log):
        """losses() filters on phase."""
        log.append(0, "init", 0, "t", 3.0, 1e-3, 0.0)
        log.append(0, "train", 0, "t", 2.0, 1e-3, 0.0)
        log.append(1, "train", 0, "t", 1.0, 1e-3, 0.0)

        assert log.losses("train") == [2.0, 1.0]
        assert log.losses() == [3.0, 2.0, 1.0]

    def test_clear(self, log, temp_csv):
        """clear() removes the file."""
        log.append(0, "init", 0, "t", 1.0, 1e-3, 0.0)
        log.clear()

        assert not temp_csv.exists()


class TestSummaryTable:
    """Tests for SummaryTable."""

    def test_write_and_read(self, tmp_path):
        """Rows survive a write/read cycle with typed numeric columns."""
        path = tmp_path / "summary.csv"
        table = SummaryTable(path)
        table.add("exp", "single-model", "mnist", "mlp_mnist", "test", "accuracy", 0.97, 118282, 158613, 3)
        table.write()

        loaded = SummaryTable.read(path)

        assert loaded.rows[0]["value"] == 0.97
        assert loaded.rows[0]["num_params"] == 118282
        assert loaded.rows[0]["generator_params"] == 158613
        assert loaded.rows[0]["seed"] == 3

    def test_header_order(self, tmp_path):
        """Columns follow the documented schema."""
        path = tmp_path / "summary.csv"
        table = SummaryTable(path)
        table.add("exp", "multi-model", "toy_image", "cnn", "seen", "accuracy", 0.5)
        table.write()

        with open(path, newline="", encoding="utf-8") as f:
            header = next(csv.reader(f))

        assert header == SUMMARY_COLUMNS

    def test_select_and_stats(self, tmp_path):
        """select() filters rows; get_stats() counts per split."""
        table = SummaryTable(tmp_path / "summary.csv")
        table.add("exp", "multi-model", "toy_image", "cnn", "seen", "accuracy", 0.6)
        table.add("exp", "multi-model", "toy_image", "cnn", "unseen", "accuracy", 0.5)

        assert [r["value"] for r in table.select(split="unseen")] == [0.5]
        assert table.get_stats() == {"seen": 1, "unseen": 1}
