import threading
import time

import pytest

from insitu.errors import ConfigError, MonitorError
from insitu.monitor import (
    IDLE_TASK,
    MonitorConfig,
    TaskRegister,
    filter_line,
    read_samples_csv,
    run_scripted,
    start_monitor,
)
from insitu.stat_sources import (
    ProcessReading,
    SyntheticSource,
    SystemReading,
    TickReading,
)


def make_script(n_ticks, period=0.1, proc_names=("engine",)):
    script = []
    for k in range(1, n_ticks + 1):
        system = SystemReading(cpu_busy_pct=10.0 + k, io_wait_pct=1.0, mem_used_pct=50.0)
        procs = tuple(
            ProcessReading(name=n, cpu_pct=5.0, mem_pct=0.5, rss_bytes=1 << 20)
            for n in proc_names
        )
        script.append((k * period, TickReading(system, procs)))
    return script


class TestTaskRegister:
    def test_initial_idle(self):
        assert TaskRegister().get() == IDLE_TASK

    def test_set_bumps_generation(self):
        reg = TaskRegister()
        reg.set("Q1")
        reg.set("Q2")
        assert reg.get() == "Q2"
        assert reg.generation == 2


class TestScriptedRuns:
    def test_correlation_two_task_timeline(self, tmp_path):
        # A on [0, 3), B on [3, 6) at 10 Hz.
        config = MonitorConfig(
            frequency_hz=10, flush_threshold_records=32,
            output_path=tmp_path / "s.csv", watched_process_names=("engine",),
        )
        source = SyntheticSource(make_script(60, period=0.1))
        samples, report = run_scripted(
            config, source, timeline=[(0.0, "A"), (3.0, "B")]
        )
        period_ms = 100
        boundary_ms = 3000
        for s in samples:
            if abs(s.ts_ms - boundary_ms) <= period_ms:
                continue
            expected = "A" if s.ts_ms < boundary_ms else "B"
            assert s.task_id == expected, s
        assert report.dropped == 0
        assert report.max_buffered <= 32

    def test_sample_counts_and_scopes(self, tmp_path):
        config = MonitorConfig(frequency_hz=10, output_path=tmp_path / "s.csv")
        samples, report = run_scripted(config, SyntheticSource(make_script(10)))
        totals = [s for s in samples if s.scope == "TOTAL"]
        procs = [s for s in samples if s.scope == "PROC"]
        assert len(totals) == 10
        assert len(procs) == 10
        assert report.samples_total == 20

    def test_unwatched_processes_filtered(self, tmp_path):
        config = MonitorConfig(
            frequency_hz=10, output_path=tmp_path / "s.csv",
            watched_process_names=("engine",),
        )
        source = SyntheticSource(make_script(5, proc_names=("other",)))
        samples, _ = run_scripted(config, source)
        assert [s for s in samples if s.scope == "PROC"] == []
        assert len([s for s in samples if s.scope == "TOTAL"]) == 5

    def test_flush_threshold_arithmetic(self, tmp_path):
        # 250 samples with threshold 100: two threshold flushes + final 50.
        config = MonitorConfig(
            frequency_hz=10, flush_threshold_records=100,
            output_path=tmp_path / "s.csv", watched_process_names=(),
        )
        script = make_script(250, proc_names=())
        samples, report = run_scripted(config, SyntheticSource(script))
        assert report.samples_total == 250
        assert report.flush_count == 3
        assert report.dropped == 0

    def test_empty_script_valid_file(self, tmp_path):
        config = MonitorConfig(output_path=tmp_path / "s.csv")
        samples, report = run_scripted(config, SyntheticSource([]))
        assert samples == []
        assert report.flush_count == 1  # final empty flush still writes a file
        assert (tmp_path / "s.csv").read_text().startswith("ts_ms,")

    def test_byte_identical_reruns(self, tmp_path):
        script = make_script(40)
        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        run_scripted(MonitorConfig(output_path=out1), SyntheticSource(script),
                     timeline=[(0.0, "T")])
        run_scripted(MonitorConfig(output_path=out2), SyntheticSource(script),
                     timeline=[(0.0, "T")])
        assert out1.read_bytes() == out2.read_bytes()

    def test_gap_marker_on_source_failure(self, tmp_path):
        class Flaky:
            def ticks(self):
                yield 1.0, TickReading(SystemReading(cpu_busy_pct=1.0), ())
                yield 2.0, None  # signals one failed read
                yield 3.0, TickReading(SystemReading(cpu_busy_pct=3.0), ())

        config = MonitorConfig(output_path=tmp_path / "s.csv")
        samples, report = run_scripted(config, Flaky())
        assert report.gap_rows == 1
        assert len(samples) == 2
        text = (tmp_path / "s.csv").read_text()
        assert "source-gap" in text

    def test_samples_roundtrip_through_csv(self, tmp_path):
        config = MonitorConfig(output_path=tmp_path / "s.csv")
        samples, _ = run_scripted(
            config, SyntheticSource(make_script(6)), timeline=[(0.0, "X")]
        )
        loaded = read_samples_csv(tmp_path / "s.csv")
        assert loaded == samples


class TestThreadedMonitor:
    def test_default_frequency_sample_count(self, tmp_path):
        # One observation per second: a 10 s run yields 10 +/- 1 samples.
        config = MonitorConfig(
            frequency_hz=1, output_path=tmp_path / "s.csv",
            watched_process_names=(),
        )
        source = SyntheticSource(make_script(60, period=1.0, proc_names=()))
        register = TaskRegister()
        handle = start_monitor(config, source, register)
        time.sleep(10.0)
        report = handle.stop()
        totals = [s for s in handle.samples if s.scope == "TOTAL"]
        assert 9 <= len(totals) <= 11
        assert report.dropped == 0

    def test_live_sampling_counts(self, tmp_path):
        config = MonitorConfig(
            frequency_hz=50, output_path=tmp_path / "s.csv",
            watched_process_names=(),
        )
        source = SyntheticSource(make_script(1000, period=0.02, proc_names=()))
        register = TaskRegister()
        register.set("COPY")
        handle = start_monitor(config, source, register)
        time.sleep(1.0)
        report = handle.stop()
        assert 30 <= report.samples_total <= 60
        assert all(s.task_id == "COPY" for s in handle.samples)
        assert report.dropped == 0

    def test_stop_is_idempotent(self, tmp_path):
        config = MonitorConfig(frequency_hz=100, output_path=tmp_path / "s.csv")
        handle = start_monitor(config, SyntheticSource([]), TaskRegister())
        time.sleep(0.05)
        first = handle.stop()
        second = handle.stop()
        assert first is second

    def test_register_readback_from_runner_thread(self, tmp_path):
        config = MonitorConfig(
            frequency_hz=100, output_path=tmp_path / "s.csv",
            watched_process_names=(),
        )
        source = SyntheticSource(make_script(2000, period=0.01, proc_names=()))
        register = TaskRegister()
        handle = start_monitor(config, source, register)

        def runner():
            register.set("T1")
            time.sleep(0.25)
            register.set("T2")
            time.sleep(0.25)

        t = threading.Thread(target=runner)
        t.start()
        t.join()
        handle.stop()
        tasks = {s.task_id for s in handle.samples}
        assert "T1" in tasks and "T2" in tasks

    def test_unwritable_output_fails_at_start(self, tmp_path):
        config = MonitorConfig(output_path=tmp_path / "nodir" / "s.csv")
        with pytest.raises(MonitorError):
            start_monitor(config, SyntheticSource([]), TaskRegister())

    def test_bad_frequency_rejected(self, tmp_path):
        config = MonitorConfig(frequency_hz=0, output_path=tmp_path / "s.csv")
        with pytest.raises(ConfigError):
            start_monitor(config, SyntheticSource([]), TaskRegister())


class TestFilterLine:
    def test_cpu_summary_line(self):
        frag = filter_line(
            "%cpu(s): 21.8 us, 2.9 sy, 0.0 ni, 59.6 id, 13.7 wa, 0.0 hi, 2.0 si, 0.0 st",
            watched=["postgres"],
        )
        assert frag.cpu_busy_pct == pytest.approx(40.4)
        assert frag.io_wait_pct == 13.7

    def test_watched_top_process_row(self):
        frag = filter_line(
            " 3553  om        20   0  174716 45092 43396  R   82.4   0.3   0:33.39 postgres",
            watched=["postgres"],
        )
        assert frag.name == "postgres"
        assert frag.cpu_pct == 82.4
        assert frag.mem_pct == 0.3

    def test_unwatched_process_dropped(self):
        frag = filter_line(
            " 2438  om        20   0  2291336 215472 45972  S    8.3   1.3  14:12.69 anydesk",
            watched=["postgres", "java"],
        )
        assert frag is None

    def test_noise_lines_dropped(self):
        assert filter_line("Tasks: 268 total, 2 running", watched=["postgres"]) is None
        assert filter_line("", watched=["postgres"]) is None
