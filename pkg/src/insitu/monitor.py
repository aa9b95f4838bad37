"""Per-task resource monitoring.

Sampler loops read a stat source at a fixed frequency, tag each sample with
the task ID currently in the shared register (tag-at-read: attribution races
are bounded by one sampling period), buffer, and append to a CSV result file
whenever a record threshold is reached. The workload runner interrupts the
sampler; remaining buffered samples are drained on stop.

Two drive modes share the tagging/buffering/flush machinery:

* ``start_monitor`` spawns one background sampler thread (live sources);
* ``run_scripted`` replays a scripted source and register timeline
  synchronously, producing byte-identical output for identical scripts.

Output CSV columns, in order:
``ts_ms,task_id,scope,process,cpu_pct,mem_pct,rss_bytes,read_Bps,write_Bps,io_wait_pct``
with scope TOTAL or PROC and missing fields left empty. A mid-run source
failure is recorded as a gap marker row (scope TOTAL, process ``source-gap``,
all metrics empty) and sampling continues.
"""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, FormatError, MonitorError
from .stat_sources import (
    ProcessReading,
    SystemReading,
    TickReading,
    parse_iotop_process_row,
    parse_iotop_totals,
    parse_top_cpu_line,
    parse_top_mem_line,
    parse_top_process_row,
)

IDLE_TASK = "IDLE"

SCOPE_TOTAL = "TOTAL"
SCOPE_PROC = "PROC"

SAMPLE_COLUMNS = (
    "ts_ms",
    "task_id",
    "scope",
    "process",
    "cpu_pct",
    "mem_pct",
    "rss_bytes",
    "read_Bps",
    "write_Bps",
    "io_wait_pct",
)

GAP_PROCESS = "source-gap"


class TaskRegister:
    """Single writer, many readers; reads and writes are whole-ID atomic."""

    def __init__(self):
        self._lock = threading.Lock()
        self._task_id = IDLE_TASK
        self._generation = 0

    def set(self, task_id: str) -> None:
        with self._lock:
            self._task_id = task_id
            self._generation += 1

    def get(self) -> str:
        with self._lock:
            return self._task_id

    @property
    def generation(self) -> int:
        with self._lock:
            return self._generation


@dataclass(frozen=True)
class Sample:
    ts_ms: int
    task_id: str
    scope: str
    process: str | None = None
    cpu_pct: float | None = None
    mem_pct: float | None = None
    rss_bytes: int | None = None
    read_Bps: float | None = None
    write_Bps: float | None = None
    io_wait_pct: float | None = None


@dataclass
class MonitorConfig:
    frequency_hz: float = 1.0
    flush_threshold_records: int = 512
    watched_process_names: tuple[str, ...] = ("engine", "insitu")
    output_path: str | Path = "samples.csv"

    def validate(self) -> None:
        if self.frequency_hz <= 0:
            raise ConfigError(f"frequency_hz must be positive, got {self.frequency_hz}")
        if self.flush_threshold_records < 1:
            raise ConfigError(
                f"flush_threshold_records must be >= 1, got {self.flush_threshold_records}"
            )


@dataclass
class FlushReport:
    samples_total: int = 0
    flush_count: int = 0
    dropped: int = 0
    gap_rows: int = 0
    max_buffered: int = 0
    output_path: str = ""


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(round(v, 6))
    return str(v)


class _SampleSink:
    """Buffered CSV writer enforcing the flush threshold; single writer."""

    def __init__(self, config: MonitorConfig):
        self.config = config
        try:
            self._fh = open(config.output_path, "w", encoding="utf-8", newline="")
        except OSError as exc:
            raise MonitorError(f"cannot open output {config.output_path}: {exc}") from exc
        self._fh.write(",".join(SAMPLE_COLUMNS) + "\n")
        self._buffer: list[Sample] = []
        self.samples: list[Sample] = []
        self.report = FlushReport(output_path=str(config.output_path))

    def add(self, sample: Sample) -> None:
        self._buffer.append(sample)
        self.samples.append(sample)
        self.report.samples_total += 1
        self.report.max_buffered = max(self.report.max_buffered, len(self._buffer))
        if len(self._buffer) >= self.config.flush_threshold_records:
            self._flush()

    def add_gap(self, ts_ms: int, task_id: str) -> None:
        self.report.gap_rows += 1
        self._fh.write(f"{ts_ms},{task_id},{SCOPE_TOTAL},{GAP_PROCESS},,,,,,\n")

    def _flush(self) -> None:
        for s in self._buffer:
            self._fh.write(
                ",".join(
                    (
                        str(s.ts_ms),
                        s.task_id,
                        s.scope,
                        s.process or "",
                        _fmt(s.cpu_pct),
                        _fmt(s.mem_pct),
                        _fmt(s.rss_bytes),
                        _fmt(s.read_Bps),
                        _fmt(s.write_Bps),
                        _fmt(s.io_wait_pct),
                    )
                )
                + "\n"
            )
        self._buffer.clear()
        self.report.flush_count += 1

    def close(self) -> FlushReport:
        self._flush()  # drain-on-interrupt: final flush even when empty
        self._fh.flush()
        self._fh.close()
        return self.report


def assemble_samples(ts_ms: int, task_id: str, reading: TickReading, watched) -> list[Sample]:
    """One TOTAL sample plus one PROC sample per watched process found."""
    out: list[Sample] = []
    sys_r = reading.system
    if sys_r is not None:
        out.append(
            Sample(
                ts_ms=ts_ms,
                task_id=task_id,
                scope=SCOPE_TOTAL,
                cpu_pct=sys_r.cpu_busy_pct,
                mem_pct=sys_r.mem_used_pct,
                read_Bps=sys_r.read_Bps,
                write_Bps=sys_r.write_Bps,
                io_wait_pct=sys_r.io_wait_pct,
            )
        )
    for proc in reading.processes:
        if watched and not any(w in proc.name for w in watched):
            continue
        out.append(
            Sample(
                ts_ms=ts_ms,
                task_id=task_id,
                scope=SCOPE_PROC,
                process=proc.name,
                cpu_pct=proc.cpu_pct,
                mem_pct=proc.mem_pct,
                rss_bytes=proc.rss_bytes,
                read_Bps=proc.read_Bps,
                write_Bps=proc.write_Bps,
            )
        )
    return out


class MonitorHandle:
    """A running threaded monitor; stop() is idempotent and drains buffers."""

    def __init__(self, config: MonitorConfig, source, register: TaskRegister):
        config.validate()
        self.config = config
        self.source = source
        self.register = register
        self._sink = _SampleSink(config)
        self._stop = threading.Event()
        self._report: FlushReport | None = None
        self._t0 = time.perf_counter()
        self._thread = threading.Thread(target=self._run, daemon=True, name="rm-sampler")
        self._thread.start()

    @property
    def samples(self) -> list[Sample]:
        return self._sink.samples

    def _elapsed(self) -> float:
        return time.perf_counter() - self._t0

    def _run(self) -> None:
        period = 1.0 / self.config.frequency_hz
        k = 1
        while not self._stop.is_set():
            target = k * period
            delay = target - self._elapsed()
            if delay > 0 and self._stop.wait(delay):
                break
            now = self._elapsed()
            ts_ms = int(round(now * 1000.0))
            task = self.register.get()
            try:
                reading = self.source.read_tick()
            except Exception:
                self._sink.add_gap(ts_ms, task)
            else:
                for sample in assemble_samples(
                    ts_ms, task, reading, self.config.watched_process_names
                ):
                    self._sink.add(sample)
            # Skip missed ticks rather than trying to catch up.
            k = max(k + 1, int(self._elapsed() / period) + 1)

    def stop(self) -> FlushReport:
        if self._report is not None:
            return self._report
        self._stop.set()
        self._thread.join()
        self._report = self._sink.close()
        return self._report


def start_monitor(config: MonitorConfig, source, register: TaskRegister) -> MonitorHandle:
    return MonitorHandle(config, source, register)


def run_scripted(config: MonitorConfig, source, timeline=()) -> tuple[list[Sample], FlushReport]:
    """Drive sampling deterministically from a scripted source.

    ``timeline`` is a sorted sequence of (time_s, task_id) register events;
    every event at or before a tick is applied before that tick samples.
    Identical inputs produce byte-identical output files.
    """
    config.validate()
    events = list(timeline)
    if [t for t, _ in events] != sorted(t for t, _ in events):
        raise ConfigError("timeline must be sorted by time")
    sink = _SampleSink(config)
    register = TaskRegister()
    ei = 0
    for t, reading in source.ticks():
        while ei < len(events) and events[ei][0] <= t:
            register.set(events[ei][1])
            ei += 1
        ts_ms = int(round(t * 1000.0))
        if reading is None:
            sink.add_gap(ts_ms, register.get())
            continue
        for sample in assemble_samples(
            ts_ms, register.get(), reading, config.watched_process_names
        ):
            sink.add(sample)
    report = sink.close()
    return sink.samples, report


def filter_line(raw_line: str, watched) -> SystemReading | ProcessReading | None:
    """Filter one line of top/iotop output down to a monitoring fragment.

    Summary lines yield SystemReading fragments; process rows yield
    ProcessReading fragments for watched names only. Everything else (the
    bulk of tool output) is dropped by returning None.
    """
    cpu = parse_top_cpu_line(raw_line)
    if cpu is not None:
        return SystemReading(cpu_busy_pct=100.0 - cpu["id"], io_wait_pct=cpu["wa"])
    mem = parse_top_mem_line(raw_line)
    if mem is not None:
        total, _free, used, _buff = mem
        return SystemReading(mem_used_pct=used / total * 100.0)
    totals = parse_iotop_totals(raw_line)
    if totals is not None:
        return SystemReading(read_Bps=totals[0], write_Bps=totals[1])
    top_row = parse_top_process_row(raw_line)
    if top_row is not None:
        if any(w in top_row.command for w in watched):
            return ProcessReading(
                name=top_row.command,
                cpu_pct=top_row.cpu_pct,
                mem_pct=top_row.mem_pct,
                rss_bytes=int(top_row.rss_kib * 1024),
            )
        return None
    io_row = parse_iotop_process_row(raw_line)
    if io_row is not None and any(w in io_row.command for w in watched):
        return ProcessReading(
            name=io_row.command,
            read_Bps=None if io_row.cumulative else io_row.read_value,
            write_Bps=None if io_row.cumulative else io_row.write_value,
        )
    return None


def read_samples_csv(path) -> list[Sample]:
    """Load a samples.csv written by this module (gap rows are skipped)."""
    samples: list[Sample] = []
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n").split(",")
        if header != list(SAMPLE_COLUMNS):
            raise FormatError(f"{path}: unexpected samples header {header!r}")
        for line in f:
            parts = line.rstrip("\n").split(",")
            if parts[3] == GAP_PROCESS:
                continue
            samples.append(
                Sample(
                    ts_ms=int(parts[0]),
                    task_id=parts[1],
                    scope=parts[2],
                    process=parts[3] or None,
                    cpu_pct=_opt_float(parts[4]),
                    mem_pct=_opt_float(parts[5]),
                    rss_bytes=int(parts[6]) if parts[6] else None,
                    read_Bps=_opt_float(parts[7]),
                    write_Bps=_opt_float(parts[8]),
                    io_wait_pct=_opt_float(parts[9]),
                )
            )
    return samples


def _opt_float(s: str) -> float | None:
    return float(s) if s else None
