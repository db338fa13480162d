"""Tests for profiling module."""

import logging

import pytest

from src.profiling import (
    PerformanceMetrics,
    get_metrics_summary,
    log_metrics_summary,
    median_wall_time,
    reset_metrics,
    timed_sync,
)


class TestPerformanceMetrics:
    """Tests for PerformanceMetrics dataclass."""

    def test_initial_state(self):
        """New metrics should have zero values."""
        metrics = PerformanceMetrics()
        assert metrics.call_count == 0
        assert metrics.total_time_ms == 0.0
        assert metrics.avg_time_ms == 0.0

    def test_record_multiple(self):
        """Multiple recordings calculate averages correctly."""
        metrics = PerformanceMetrics()
        metrics.record(50.0)
        metrics.record(150.0)
        assert metrics.call_count == 2
        assert metrics.total_time_ms == 200.0
        assert metrics.avg_time_ms == 100.0
        assert metrics.min_time_ms == 50.0
        assert metrics.max_time_ms == 150.0


class TestTimedSyncDecorator:
    """Tests for @timed_sync decorator."""

    @pytest.fixture(autouse=True)
    def setup(self):
        """Reset metrics before each test."""
        reset_metrics()

    def test_records_execution(self):
        """@timed_sync should record function execution time."""

        @timed_sync
        def sample_stage():
            return 42

        assert sample_stage() == 42
        summary = get_metrics_summary()
        # __qualname__ includes the enclosing test, e.g. 'Class.method.<locals>.sample_stage'
        key = next(k for k in summary if "sample_stage" in k)
        assert summary[key]["calls"] == 1
        assert summary[key]["avg_ms"] >= 0

    def test_records_failures(self):
        """Stages that raise are still timed."""

        @timed_sync
        def failing_stage():
            raise RuntimeError("boom")

        with pytest.raises(RuntimeError):
            failing_stage()
        assert any("failing_stage" in k for k in get_metrics_summary())

    def test_summary_format(self):
        """Summary should have correct keys."""

        @timed_sync
        def stage():
            pass

        stage()
        entry = next(v for k, v in get_metrics_summary().items() if "stage" in k)
        assert set(entry) == {"calls", "avg_ms", "min_ms", "max_ms", "total_ms"}

    def test_empty_summary(self):
        """Empty metrics should return empty dict."""
        assert get_metrics_summary() == {}

    def test_log_summary(self, caplog):
        """The summary is logged one line per stage."""

        @timed_sync
        def logged_stage():
            pass

        logged_stage()
        with caplog.at_level(logging.INFO):
            log_metrics_summary()
        assert "logged_stage: 1 calls" in caplog.text

    def test_log_empty_summary(self, caplog):
        """Nothing collected is reported as such."""
        with caplog.at_level(logging.INFO):
            log_metrics_summary()
        assert "No performance metrics" in caplog.text


class TestMedianWallTime:
    """Tests for median_wall_time."""

    def test_runs_repeatedly(self):
        """The function runs `repeats` times and the last result is returned."""
        calls = []

        def work():
            calls.append(1)
            return len(calls)

        result, seconds = median_wall_time(work, repeats=3)
        assert result == 3
        assert len(calls) == 3
        assert seconds >= 0.0

    def test_median_of_samples(self, mocker):
        """The middle sample is reported, not the mean."""
        mocker.patch("src.profiling.time.perf_counter", side_effect=[0.0, 1.0, 10.0, 13.0, 20.0, 22.0])
        _, seconds = median_wall_time(lambda: None, repeats=3)
        assert seconds == 2.0

    def test_rejects_zero_repeats(self):
        """At least one run is required."""
        with pytest.raises(ValueError):
            median_wall_time(lambda: None, repeats=0)
