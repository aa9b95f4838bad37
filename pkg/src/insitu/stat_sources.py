"""Pluggable stat sources for the resource monitor.

Three families: a live procfs reader, text parsers for captured `top` and
`iotop` batch output (replayable tick by tick), and a deterministic
synthetic source for tests and reproducible runs. All IO figures are
normalized to bytes or bytes/second internally; a "K" in tool output is
1024 bytes.
"""
from __future__ import annotations

import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, FormatError, MonitorError

KIB = 1024.0


@dataclass(frozen=True)
class SystemReading:
    """System-total fragment of one tick; absent values stay None."""

    cpu_busy_pct: float | None = None
    io_wait_pct: float | None = None
    mem_used_pct: float | None = None
    read_Bps: float | None = None
    write_Bps: float | None = None


@dataclass(frozen=True)
class ProcessReading:
    """Per-process fragment of one tick."""

    name: str
    cpu_pct: float | None = None
    mem_pct: float | None = None
    rss_bytes: int | None = None
    read_Bps: float | None = None
    write_Bps: float | None = None


@dataclass(frozen=True)
class TickReading:
    system: SystemReading | None
    processes: tuple[ProcessReading, ...] = ()


ZERO_TICK = TickReading(system=SystemReading(0.0, 0.0, 0.0, 0.0, 0.0), processes=())


# ---------------------------------------------------------------------------
# top / iotop text parsing


@dataclass(frozen=True)
class TopProcess:
    pid: int
    command: str
    cpu_pct: float
    mem_pct: float
    rss_kib: float


@dataclass
class TopSnapshot:
    cpu: dict[str, float]
    mem_total_kib: float
    mem_free_kib: float
    mem_used_kib: float
    mem_buff_kib: float
    processes: list[TopProcess] = field(default_factory=list)
    skipped_rows: int = 0

    @property
    def cpu_busy_pct(self) -> float:
        return 100.0 - self.cpu["id"]

    @property
    def io_wait_pct(self) -> float:
        return self.cpu["wa"]

    @property
    def mem_used_pct(self) -> float:
        return self.mem_used_kib / self.mem_total_kib * 100.0


_TOP_CPU_RE = re.compile(r"%cpu\(s\):", re.IGNORECASE)
_TOP_CPU_FIELD_RE = re.compile(r"(-?\d+(?:\.\d+)?)\s*(us|sy|ni|id|wa|hi|si|st)\b")
_TOP_MEM_RE = re.compile(
    r"KiB Mem\s*:\s*(\d+)\s*total,\s*(\d+)\s*free,\s*(\d+)\s*used,\s*(\d+)",
    re.IGNORECASE,
)
_TOP_HEADER_RE = re.compile(r"^\s*PID\s+USER\b")


def parse_top_cpu_line(line: str) -> dict[str, float] | None:
    if not _TOP_CPU_RE.search(line):
        return None
    return {tag: float(v) for v, tag in _TOP_CPU_FIELD_RE.findall(line)}


def parse_top_mem_line(line: str) -> tuple[float, float, float, float] | None:
    m = _TOP_MEM_RE.search(line)
    if not m:
        return None
    return tuple(float(x) for x in m.groups())


def parse_top_process_row(line: str) -> TopProcess | None:
    parts = line.split()
    if len(parts) < 12 or not parts[0].isdigit():
        return None
    try:
        return TopProcess(
            pid=int(parts[0]),
            command=" ".join(parts[11:]),
            cpu_pct=float(parts[8]),
            mem_pct=float(parts[9]),
            rss_kib=float(parts[5]),
        )
    except ValueError:
        return None


def parse_top_block(text: str) -> TopSnapshot:
    """Parse one `top` refresh block (Fig-3a style batch output)."""
    cpu = None
    mem = None
    processes: list[TopProcess] = []
    skipped = 0
    in_table = False
    for line in text.splitlines():
        if cpu is None:
            parsed = parse_top_cpu_line(line)
            if parsed is not None:
                cpu = parsed
                continue
        if mem is None:
            parsed = parse_top_mem_line(line)
            if parsed is not None:
                mem = parsed
                continue
        if _TOP_HEADER_RE.match(line):
            in_table = True
            continue
        if in_table and line.strip():
            row = parse_top_process_row(line)
            if row is None:
                skipped += 1
            else:
                processes.append(row)
    if cpu is None:
        raise FormatError("top block is missing the %cpu(s) summary line")
    if mem is None:
        raise FormatError("top block is missing the KiB Mem summary line")
    return TopSnapshot(
        cpu=cpu,
        mem_total_kib=mem[0],
        mem_free_kib=mem[1],
        mem_used_kib=mem[2],
        mem_buff_kib=mem[3],
        processes=processes,
        skipped_rows=skipped,
    )


@dataclass(frozen=True)
class IotopProcess:
    pid: int
    command: str
    read_value: float  # bytes (cumulative) or bytes/s, see `cumulative`
    write_value: float
    cumulative: bool
    io_pct: float
    swapin_pct: float


@dataclass
class IotopSnapshot:
    total_read_Bps: float
    total_write_Bps: float
    actual_read_Bps: float | None = None
    actual_write_Bps: float | None = None
    processes: list[IotopProcess] = field(default_factory=list)
    skipped_rows: int = 0


_IOTOP_TOTAL_RE = re.compile(
    r"Total DISK READ\s*:\s*([\d.]+)\s*K/s\s*\|\s*Total DISK WRITE\s*:\s*([\d.]+)\s*K/s"
)
_IOTOP_ACTUAL_RE = re.compile(
    r"Actual DISK READ\s*:\s*([\d.]+)\s*K/s\s*\|\s*Actual DISK WRITE\s*:\s*([\d.]+)\s*K/s"
)


def parse_iotop_totals(line: str) -> tuple[float, float] | None:
    m = _IOTOP_TOTAL_RE.search(line)
    if not m:
        return None
    return float(m.group(1)) * KIB, float(m.group(2)) * KIB


def parse_iotop_process_row(line: str) -> IotopProcess | None:
    parts = line.split()
    # TID PRIO USER <read> <unit> <write> <unit> <swapin> % <io> % COMMAND...
    if len(parts) < 12 or not parts[0].isdigit():
        return None
    try:
        read_v = float(parts[3])
        write_v = float(parts[5])
        swapin = float(parts[7])
        io_pct = float(parts[9])
    except ValueError:
        return None
    if min(read_v, write_v, swapin, io_pct) < 0:
        return None
    read_unit = parts[4]
    cumulative = not read_unit.endswith("/s")
    scale = KIB if read_unit.startswith("K") else 1.0
    return IotopProcess(
        pid=int(parts[0]),
        command=" ".join(parts[11:]),
        read_value=read_v * scale,
        write_value=write_v * scale,
        cumulative=cumulative,
        io_pct=io_pct,
        swapin_pct=swapin,
    )


def parse_iotop_block(text: str) -> IotopSnapshot:
    """Parse one `iotop` refresh block (Fig-3b style batch output).

    Bare-"K" per-process columns are cumulative KiB; callers turn them into
    rates by differencing consecutive snapshots.
    """
    totals = None
    actual = None
    processes: list[IotopProcess] = []
    skipped = 0
    for line in text.splitlines():
        if totals is None:
            t = parse_iotop_totals(line)
            if t is not None:
                totals = t
                continue
        m = _IOTOP_ACTUAL_RE.search(line)
        if m:
            actual = (float(m.group(1)) * KIB, float(m.group(2)) * KIB)
            continue
        stripped = line.strip()
        if not stripped or stripped.startswith("TID"):
            continue
        row = parse_iotop_process_row(line)
        if row is None:
            if stripped[0].isdigit():
                skipped += 1
            continue
        processes.append(row)
    if totals is None:
        raise FormatError("iotop block is missing the Total DISK READ/WRITE line")
    return IotopSnapshot(
        total_read_Bps=totals[0],
        total_write_Bps=totals[1],
        actual_read_Bps=actual[0] if actual else None,
        actual_write_Bps=actual[1] if actual else None,
        processes=processes,
        skipped_rows=skipped,
    )


# ---------------------------------------------------------------------------
# Synthetic source


class SyntheticSource:
    """Replays a script of (time_s, TickReading) pairs exactly.

    An exhausted or empty script yields all-zero fragments so threaded use
    keeps producing samples until stopped.
    """

    has_io_wait = True
    has_process_io = True

    def __init__(self, script):
        script = list(script)
        times = [t for t, _ in script]
        if times != sorted(times):
            raise ConfigError("synthetic script must be sorted by time")
        self.script = script
        self._next = 0

    def rewind(self) -> None:
        self._next = 0

    def read_tick(self) -> TickReading:
        if self._next >= len(self.script):
            return ZERO_TICK
        _, reading = self.script[self._next]
        self._next += 1
        return reading

    def ticks(self):
        for t, reading in self.script:
            yield t, reading


def synthetic_script(seed: int, duration_s: float, frequency_hz: float,
                     process_names=("engine",)):
    """Deterministic plausible-looking script for reproducible runs."""
    import numpy as np

    rng = np.random.default_rng(seed)
    n = int(round(duration_s * frequency_hz))
    period = 1.0 / frequency_hz
    script = []
    for k in range(1, n + 1):
        busy = float(np.round(20.0 + 60.0 * rng.random(), 2))
        wait = float(np.round(10.0 * rng.random(), 2))
        mem = float(np.round(30.0 + 40.0 * rng.random(), 2))
        system = SystemReading(
            cpu_busy_pct=busy,
            io_wait_pct=wait,
            mem_used_pct=mem,
            read_Bps=float(rng.integers(0, 200 * 1024 * 1024)),
            write_Bps=float(rng.integers(0, 100 * 1024 * 1024)),
        )
        procs = tuple(
            ProcessReading(
                name=name,
                cpu_pct=float(np.round(90.0 * rng.random(), 2)),
                mem_pct=float(np.round(5.0 * rng.random(), 3)),
                rss_bytes=int(rng.integers(10 << 20, 200 << 20)),
                read_Bps=float(rng.integers(0, 50 * 1024 * 1024)),
                write_Bps=float(rng.integers(0, 10 * 1024 * 1024)),
            )
            for name in process_names
        )
        script.append((k * period, TickReading(system=system, processes=procs)))
    return script


# ---------------------------------------------------------------------------
# Replay source (captured tool logs)


_BLOCK_START_RE = re.compile(r"^top - |^Total DISK READ")


def split_tool_blocks(text: str) -> list[str]:
    """Split concatenated tool output into per-refresh blocks."""
    blocks: list[list[str]] = []
    for line in text.splitlines():
        if _BLOCK_START_RE.match(line) or not blocks:
            blocks.append([])
        blocks[-1].append(line)
    return ["\n".join(b) for b in blocks if any(l.strip() for l in b)]


class ReplaySource:
    """Feeds captured top/iotop refresh blocks tick by tick.

    Cumulative iotop per-process counters become rates by differencing
    consecutive blocks over the replay period.
    """

    has_io_wait = True
    has_process_io = True

    def __init__(self, text_or_path, watched_names=(), period_s: float = 1.0):
        if isinstance(text_or_path, (str, Path)) and os.path.exists(str(text_or_path)):
            text = Path(text_or_path).read_text(encoding="utf-8")
        else:
            text = str(text_or_path)
        self.watched = tuple(watched_names)
        self.period_s = float(period_s)
        self.readings = self._build(split_tool_blocks(text))
        self._next = 0

    def _build(self, blocks: list[str]) -> list[TickReading]:
        readings: list[TickReading] = []
        prev_io: dict[int, tuple[float, float]] = {}
        for block in blocks:
            if block.lstrip().startswith("top"):
                snap = parse_top_block(block)
                procs = tuple(
                    ProcessReading(
                        name=p.command,
                        cpu_pct=p.cpu_pct,
                        mem_pct=p.mem_pct,
                        rss_bytes=int(p.rss_kib * KIB),
                    )
                    for p in snap.processes
                    if self._watch(p.command)
                )
                readings.append(
                    TickReading(
                        system=SystemReading(
                            cpu_busy_pct=snap.cpu_busy_pct,
                            io_wait_pct=snap.io_wait_pct,
                            mem_used_pct=snap.mem_used_pct,
                        ),
                        processes=procs,
                    )
                )
            else:
                snap = parse_iotop_block(block)
                procs = []
                for p in snap.processes:
                    if not self._watch(p.command):
                        continue
                    if p.cumulative:
                        before = prev_io.get(p.pid)
                        prev_io[p.pid] = (p.read_value, p.write_value)
                        if before is None:
                            continue  # first sighting: no rate yet
                        read = max(0.0, p.read_value - before[0]) / self.period_s
                        write = max(0.0, p.write_value - before[1]) / self.period_s
                    else:
                        read, write = p.read_value, p.write_value
                    procs.append(
                        ProcessReading(name=p.command, read_Bps=read, write_Bps=write)
                    )
                readings.append(
                    TickReading(
                        system=SystemReading(
                            read_Bps=snap.total_read_Bps,
                            write_Bps=snap.total_write_Bps,
                        ),
                        processes=tuple(procs),
                    )
                )
        return readings

    def _watch(self, command: str) -> bool:
        if not self.watched:
            return True
        return any(w in command for w in self.watched)

    def read_tick(self) -> TickReading:
        if self._next >= len(self.readings):
            return ZERO_TICK
        reading = self.readings[self._next]
        self._next += 1
        return reading

    def ticks(self):
        for i, reading in enumerate(self.readings):
            yield (i + 1) * self.period_s, reading


# ---------------------------------------------------------------------------
# procfs live source


class ProcfsSource:
    """Live Linux sampling from /proc.

    CPU comes from aggregate jiffies deltas, memory from meminfo, and
    per-process IO from the rchar/wchar counters (logical IO; stable under
    page caching, unlike the block-IO counters). System-total IO rates are
    not reported.
    """

    has_io_wait = True
    has_process_io = True

    def __init__(self, watched_names=(), proc_root="/proc", rediscover_every_s=1.0,
                 pids=None):
        self.watched = tuple(watched_names)
        self.proc_root = Path(proc_root)
        if not (self.proc_root / "stat").exists():
            raise MonitorError(f"procfs not available at {self.proc_root}")
        self.fixed_pids = list(pids) if pids is not None else None
        self.rediscover_every_s = rediscover_every_s
        self._clk = os.sysconf("SC_CLK_TCK")
        self._page = os.sysconf("SC_PAGE_SIZE")
        self._prev_cpu: tuple[float, float, float] | None = None  # busy, iowait, total
        self._prev_time: float | None = None
        # Per-pid (t, jiffies, rchar, wchar) history. Process rates are taken
        # against a reading at least a few kernel ticks back: at sampling
        # frequencies above CLK_TCK a single-period delta quantizes to 0-or-
        # huge and the range clamp would throw real CPU mass away.
        self._proc_history: dict[int, list[tuple[float, float, float, float]]] = {}
        self._min_rate_window = 4.0 / self._clk
        self._pids: list[tuple[int, str]] = []
        self._last_discover = -1e9
        self.cores = self._count_cores()

    def _count_cores(self) -> int:
        n = 0
        with open(self.proc_root / "stat") as f:
            for line in f:
                if re.match(r"cpu\d+ ", line):
                    n += 1
        return max(1, n)

    def _read_cpu_totals(self) -> tuple[float, float, float]:
        with open(self.proc_root / "stat") as f:
            fields = f.readline().split()[1:]
        vals = [float(x) for x in fields]
        idle = vals[3]
        iowait = vals[4] if len(vals) > 4 else 0.0
        total = sum(vals)
        busy = total - idle - iowait
        return busy, iowait, total

    def _read_mem_pct(self) -> float:
        total = avail = None
        with open(self.proc_root / "meminfo") as f:
            for line in f:
                if line.startswith("MemTotal:"):
                    total = float(line.split()[1])
                elif line.startswith("MemAvailable:"):
                    avail = float(line.split()[1])
                if total is not None and avail is not None:
                    break
        if not total:
            return 0.0
        used = total - (avail if avail is not None else 0.0)
        return used / total * 100.0

    def _discover(self, now: float) -> None:
        if self.fixed_pids is not None:
            if not self._pids:
                self._pids = [
                    (pid, (self.proc_root / str(pid) / "comm").read_text().strip())
                    for pid in self.fixed_pids
                ]
            return
        if now - self._last_discover < self.rediscover_every_s and self._pids:
            return
        self._last_discover = now
        found: list[tuple[int, str]] = []
        for entry in os.listdir(self.proc_root):
            if not entry.isdigit():
                continue
            pid = int(entry)
            try:
                comm = (self.proc_root / entry / "comm").read_text().strip()
            except OSError:
                continue
            if any(w in comm for w in self.watched):
                found.append((pid, comm))
                continue
            try:
                cmdline = (
                    (self.proc_root / entry / "cmdline")
                    .read_bytes()
                    .replace(b"\0", b" ")
                    .decode("utf-8", "replace")
                )
            except OSError:
                continue
            if any(w in cmdline for w in self.watched):
                found.append((pid, comm))
        self._pids = found

    def _read_process(self, pid: int, comm: str, now: float, mem_total_b: float):
        base = self.proc_root / str(pid)
        stat = (base / "stat").read_text()
        after = stat.rsplit(")", 1)[1].split()
        jiffies = float(after[11]) + float(after[12])  # utime + stime
        rss_pages = int((base / "statm").read_text().split()[1])
        rss = rss_pages * self._page
        rchar = wchar = 0.0
        try:
            for line in (base / "io").read_text().splitlines():
                if line.startswith("rchar:"):
                    rchar = float(line.split()[1])
                elif line.startswith("wchar:"):
                    wchar = float(line.split()[1])
        except OSError:
            pass
        history = self._proc_history.setdefault(pid, [])
        baseline = None
        for entry in history:
            if now - entry[0] >= self._min_rate_window:
                baseline = entry
            else:
                break
        if baseline is None and history:
            baseline = history[0]
        history.append((now, jiffies, rchar, wchar))
        while len(history) > 1 and now - history[1][0] >= self._min_rate_window:
            history.pop(0)
        if baseline is None or now <= baseline[0]:
            cpu = 0.0
            read_rate = write_rate = 0.0
        else:
            dt = now - baseline[0]
            cpu = max(0.0, (jiffies - baseline[1]) / self._clk / dt * 100.0)
            cpu = min(cpu, 100.0 * self.cores)
            read_rate = max(0.0, rchar - baseline[2]) / dt
            write_rate = max(0.0, wchar - baseline[3]) / dt
        mem_pct = rss / mem_total_b * 100.0 if mem_total_b else 0.0
        return ProcessReading(
            name=comm,
            cpu_pct=cpu,
            mem_pct=mem_pct,
            rss_bytes=rss,
            read_Bps=read_rate,
            write_Bps=write_rate,
        )

    def read_tick(self) -> TickReading:
        now = time.monotonic()
        busy, iowait, total = self._read_cpu_totals()
        if self._prev_cpu is None:
            cpu_busy = io_wait = 0.0
        else:
            p_busy, p_iowait, p_total = self._prev_cpu
            dtot = total - p_total
            if dtot <= 0:
                cpu_busy = io_wait = 0.0
            else:
                cpu_busy = min(100.0, max(0.0, (busy - p_busy) / dtot * 100.0))
                io_wait = min(100.0, max(0.0, (iowait - p_iowait) / dtot * 100.0))
        self._prev_cpu = (busy, iowait, total)

        mem_pct = self._read_mem_pct()
        mem_total_b = self._mem_total_bytes()
        self._prev_time = now

        processes = []
        if self.watched or self.fixed_pids is not None:
            self._discover(now)
            for pid, comm in self._pids:
                try:
                    processes.append(self._read_process(pid, comm, now, mem_total_b))
                except OSError:
                    continue  # process exited mid-run: omit this tick
        return TickReading(
            system=SystemReading(
                cpu_busy_pct=cpu_busy,
                io_wait_pct=io_wait,
                mem_used_pct=mem_pct,
            ),
            processes=tuple(processes),
        )

    def _mem_total_bytes(self) -> float:
        with open(self.proc_root / "meminfo") as f:
            return float(f.readline().split()[1]) * KIB
