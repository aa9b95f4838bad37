"""In-situ query engine over CSV files.

Tokenizes at query time, keeps parsed columns in a RAM-budgeted LRU cache,
stops LIMIT scans at the row that completes the result, and runs joins as
deliberately unindexed nested loops. The engine never writes to disk; all
caching and indexing is in memory.

One query executes at a time per instance; instances may move between
threads but are not safe for concurrent execution.
"""
from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from .cache import ColumnCache
from .errors import FormatError, JoinGuardError, SchemaError
from .query_model import QueryAst
from .tabular import (
    Column,
    ExecStats,
    ResultSet,
    parse_field,
    predicate_mask,
    predicate_row_test,
    read_header,
    scan_csv,
)

DEFAULT_CACHE_BUDGET = 1 << 30  # 1 GiB
DEFAULT_JOIN_GUARD = 1_000_000_000

_SCAN_CHUNK = 1 << 16


@dataclass(frozen=True)
class PositionalMap:
    """Byte offsets of row starts in a raw file, built on first full scan."""

    path: str
    row_offsets: tuple[int, ...]

    @property
    def row_count(self) -> int:
        return len(self.row_offsets)


def build_positional_map(path) -> PositionalMap:
    """Scan a CSV file and index every data-row start offset."""
    scan = scan_csv(path, wanted=())
    return PositionalMap(path=str(path), row_offsets=tuple(scan.row_offsets.tolist()))


class RawEngine:
    def __init__(
        self,
        cache: ColumnCache | None = None,
        cache_budget_bytes: int = DEFAULT_CACHE_BUDGET,
        join_guard_pairs: int = DEFAULT_JOIN_GUARD,
    ):
        self.cache = cache if cache is not None else ColumnCache(cache_budget_bytes)
        self.join_guard_pairs = int(join_guard_pairs)
        self.files: dict[str, str] = {}
        self.total_bytes_written = 0  # in-situ contract: stays 0
        self._maps: dict[str, PositionalMap] = {}
        self._headers: dict[str, list[str]] = {}
        self._row_counts: dict[str, int] = {}

    # -- registration / maintenance ------------------------------------

    def register(self, table: str, path) -> None:
        self.files[table] = str(path)

    def copy_table(self, table: str, path) -> float:
        """COPY is a no-op here beyond remembering the file; zero load time."""
        self.register(table, path)
        return 0.0

    def truncate_table(self, table: str) -> float:
        """Drop cached state for a table; the raw file is left untouched."""
        path = self.files.get(table)
        if path is not None:
            self.cache.drop_matching(lambda key: key[0] == path)
            self._maps.pop(path, None)
            self._headers.pop(path, None)
            self._row_counts.pop(path, None)
        return 0.0

    def clear_cache(self) -> None:
        """Forget all cached columns and positional maps; next run is cold."""
        self.cache.clear()
        self._maps.clear()
        self._headers.clear()
        self._row_counts.clear()

    def positional_map(self, path) -> PositionalMap | None:
        return self._maps.get(str(path))

    # -- execution ------------------------------------------------------

    def execute(self, ast: QueryAst, files=None) -> tuple[ResultSet, ExecStats]:
        file_map = dict(self.files)
        if files:
            file_map.update({t: str(p) for t, p in files.items()})
        paths = {}
        for table in ast.tables:
            if table not in file_map:
                raise SchemaError(f"no file registered for table {table!r}")
            if not os.path.exists(file_map[table]):
                raise SchemaError(
                    f"file {file_map[table]!r} for table {table!r} does not exist"
                )
            paths[table] = file_map[table]

        stats = ExecStats()
        self.cache.begin_peak_window()
        start = time.perf_counter()

        needed = _needed_attrs(ast)
        for table, attrs in needed.items():
            header = self._header(paths[table])
            for bare in attrs:
                if bare not in header:
                    raise SchemaError(f"table {table!r} has no attribute {bare!r}")

        if ast.joins:
            result = self._execute_join(ast, paths, needed, stats)
        else:
            result = self._execute_single(ast, paths, needed, stats)

        stats.duration_ms = (time.perf_counter() - start) * 1000.0
        stats.peak_cache_bytes = self.cache.window_peak_bytes
        return result, stats

    def _header(self, path: str) -> list[str]:
        header = self._headers.get(path)
        if header is None:
            header = read_header(path)
            self._headers[path] = header
        return header

    def _execute_single(self, ast, paths, needed, stats) -> ResultSet:
        table = ast.tables[0]
        path = paths[table]
        attrs = needed[table]

        if ast.limit is not None and not ast.is_count:
            cached = all((path, bare) in self.cache for bare in attrs)
            if not cached:
                return self._stream_limit_scan(ast, table, path, stats)

        cols = self._ensure_columns(path, attrs, stats)
        qcols = {f"{table}.{bare}": col for bare, col in cols.items()}
        nrows = self._row_counts[path]

        mask = None
        for pred in ast.predicates:
            m = predicate_mask(qcols[pred.attr], pred.op, pred.literal)
            mask = m if mask is None else (mask & m)

        if ast.is_count:
            count = int(mask.sum()) if mask is not None else nrows
            stats.rows_scanned = nrows
            return ResultSet(columns=("count",), rows=[(count,)])

        if mask is None:
            indices = np.arange(nrows)
        else:
            indices = np.flatnonzero(mask)
        if ast.limit is not None and len(indices) > 0:
            if len(indices) >= ast.limit:
                indices = indices[: ast.limit]
                stats.rows_scanned = int(indices[-1]) + 1
                stats.early_stop = stats.rows_scanned < nrows
            else:
                stats.rows_scanned = nrows
        else:
            if ast.limit is not None:
                indices = indices[: ast.limit]
            stats.rows_scanned = nrows
        return _project(ast.projections, qcols, indices)

    def _ensure_columns(self, path, attrs, stats, pinned=None) -> dict[str, Column]:
        """Fetch the named columns, parsing the file once for any misses.

        ``pinned`` widens eviction protection to the whole query working set
        when a query spans several tables.
        """
        keys = {bare: (path, bare) for bare in attrs}
        cols: dict[str, Column] = {}
        missing = []
        for bare, key in keys.items():
            col = self.cache.get(key)
            if col is None:
                missing.append(bare)
            else:
                cols[bare] = col
        stats.cache_hit_columns += len(attrs) - len(missing)
        if missing:
            scan = scan_csv(path, wanted=missing)
            stats.bytes_read_from_disk += scan.file_bytes
            self._maps[path] = PositionalMap(
                path=path, row_offsets=tuple(scan.row_offsets.tolist())
            )
            self._row_counts[path] = scan.row_count
            protect = set(keys.values()) | (pinned or set())
            for bare in missing:
                col = scan.columns[bare]
                self.cache.put(keys[bare], col, pinned=protect)
                cols[bare] = col
        elif path not in self._row_counts and attrs:
            self._row_counts[path] = len(next(iter(cols.values())))
        return cols

    def _stream_limit_scan(self, ast, table, path, stats) -> ResultSet:
        """Row-at-a-time scan that stops at the row completing the LIMIT.

        Bytes are accounted at row granularity: the tally is the end offset
        of the last examined line, not the read-ahead chunk size.
        """
        header = self._header(path)
        ncols = len(header)
        prefix = table + "."
        tests = [
            (header.index(p.attr[len(prefix):]), predicate_row_test(p.op, p.literal))
            for p in ast.predicates
        ]
        proj_idx = [header.index(a[len(prefix):]) for a in ast.projections]

        rows: list[tuple] = []
        consumed = 0
        row_no = 0
        header_done = False
        stop = False
        file_size = os.path.getsize(path)

        with open(path, "rb") as f:
            buf = b""
            while not stop:
                chunk = f.read(_SCAN_CHUNK)
                at_eof = not chunk
                buf += chunk
                while True:
                    nl = buf.find(b"\n")
                    if nl < 0:
                        if at_eof and buf:
                            line, buf = buf, b""
                        else:
                            break
                    else:
                        line, buf = buf[:nl], buf[nl + 1 :]
                    consumed += len(line) + 1
                    if not header_done:
                        header_done = True
                        continue
                    if not line:
                        continue
                    row_no += 1
                    fields = line.split(b",")
                    if len(fields) != ncols:
                        raise FormatError(
                            f"{path}: data row {row_no} has {len(fields)} fields, "
                            f"expected {ncols}"
                        )
                    if all(test(fields[i]) for i, test in tests):
                        rows.append(tuple(parse_field(fields[i]) for i in proj_idx))
                        if len(rows) >= ast.limit:
                            stop = True
                            break
                if at_eof:
                    break

        consumed = min(consumed, file_size)
        stats.bytes_read_from_disk += consumed
        stats.rows_scanned = row_no
        stats.early_stop = consumed < file_size
        return ResultSet(columns=tuple(ast.projections), rows=rows)

    def _execute_join(self, ast, paths, needed, stats) -> ResultSet:
        all_keys = {
            (paths[t], bare) for t, attrs in needed.items() for bare in attrs
        }
        qcols: dict[str, Column] = {}
        counts: dict[str, int] = {}
        for table in ast.tables:
            cols = self._ensure_columns(
                paths[table], needed[table], stats, pinned=all_keys
            )
            counts[table] = self._row_counts[paths[table]]
            for bare, col in cols.items():
                qcols[f"{table}.{bare}"] = col

        inter: dict[str, np.ndarray] = {ast.tables[0]: np.arange(counts[ast.tables[0]])}
        inter_len = counts[ast.tables[0]]
        work = 0
        for i, join in enumerate(ast.joins):
            new_table = ast.tables[i + 1]
            work += inter_len * counts[new_table]
            if work > self.join_guard_pairs:
                raise JoinGuardError(work, self.join_guard_pairs)
            inter, inter_len = _nested_loop_stage(
                inter, inter_len, join, new_table, counts[new_table], qcols
            )

        sel = np.arange(inter_len)
        for pred in ast.predicates:
            table = pred.attr.split(".", 1)[0]
            gathered = _gather(qcols[pred.attr], inter[table][sel])
            m = predicate_mask(gathered, pred.op, pred.literal)
            sel = sel[m]

        stats.rows_scanned = sum(counts[t] for t in ast.tables)
        if ast.is_count:
            return ResultSet(columns=("count",), rows=[(len(sel),)])
        if ast.limit is not None and len(sel) > ast.limit:
            sel = sel[: ast.limit]
            stats.early_stop = True
        proj_cols = {
            a: _gather(qcols[a], inter[a.split(".", 1)[0]][sel]) for a in ast.projections
        }
        return _project(ast.projections, proj_cols, np.arange(len(sel)))


def _needed_attrs(ast: QueryAst) -> dict[str, list[str]]:
    """Bare attribute names needed per table, in first-reference order."""
    needed: dict[str, list[str]] = {t: [] for t in ast.tables}
    refs = [
        *ast.projections,
        *(s for j in ast.joins for s in (j.left, j.right)),
        *(p.attr for p in ast.predicates),
    ]
    for ref in refs:
        table, bare = ref.split(".", 1)
        if bare not in needed[table]:
            needed[table].append(bare)
    return needed


def _gather(col: Column, indices: np.ndarray) -> Column:
    if col.is_numeric:
        return Column(col.values[indices])
    return Column([col.values[i] for i in indices])


def _project(projections, qcols, indices) -> ResultSet:
    taken = [qcols[a].take(indices) for a in projections]
    return ResultSet(columns=tuple(projections), rows=list(zip(*taken)) if taken else [])


def _nested_loop_stage(inter, inter_len, join, new_table, new_count, qcols):
    """One nested-loop stage: every intermediate tuple against every row of
    the new table. O(n*m) comparisons by design."""
    new_prefix = new_table + "."
    if join.left.startswith(new_prefix) and not join.right.startswith(new_prefix):
        new_attr, old_attr = join.left, join.right
    else:
        old_attr, new_attr = join.left, join.right

    if not new_attr.startswith(new_prefix):
        # Degenerate condition not referencing the joined table: it acts as
        # a per-tuple filter crossed with every new-table row.
        old_l = _gather(qcols[old_attr], inter[old_attr.split(".", 1)[0]])
        old_r = _gather(qcols[new_attr], inter[new_attr.split(".", 1)[0]])
        keep = _pairwise_equal(old_l, old_r)
        kept = np.flatnonzero(keep)
        lefts = np.repeat(kept, new_count)
        rights = np.tile(np.arange(new_count), len(kept))
    else:
        old_table = old_attr.split(".", 1)[0]
        old_vals = _gather(qcols[old_attr], inter[old_table])
        new_col = qcols[new_attr]
        match_lists = []
        counts_per_left = np.zeros(inter_len, dtype=np.int64)
        if new_col.is_numeric and old_vals.is_numeric:
            new_arr = new_col.values
            vals = old_vals.values
            for k in range(inter_len):
                matches = np.flatnonzero(new_arr == vals[k])
                if len(matches):
                    match_lists.append(matches)
                    counts_per_left[k] = len(matches)
        else:
            new_list = new_col.values if not new_col.is_numeric else new_col.values.tolist()
            old_list = old_vals.values if not old_vals.is_numeric else old_vals.values.tolist()
            for k in range(inter_len):
                matches = np.asarray(
                    [j for j, v in enumerate(new_list) if v == old_list[k]],
                    dtype=np.int64,
                )
                if len(matches):
                    match_lists.append(matches)
                    counts_per_left[k] = len(matches)
        lefts = np.repeat(np.arange(inter_len), counts_per_left)
        rights = (
            np.concatenate(match_lists) if match_lists else np.empty(0, dtype=np.int64)
        )

    new_inter = {t: idx[lefts] for t, idx in inter.items()}
    new_inter[new_table] = rights
    return new_inter, len(rights)


def _pairwise_equal(a: Column, b: Column) -> np.ndarray:
    if a.is_numeric and b.is_numeric:
        return a.values == b.values
    av = a.values.tolist() if a.is_numeric else a.values
    bv = b.values.tolist() if b.is_numeric else b.values
    return np.asarray([x == y for x, y in zip(av, bv)], dtype=bool)
