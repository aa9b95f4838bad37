"""Load-then-query columnar engine.

COPY-style bulk load converts CSV into typed binary column files (optionally
journaling every input record verbatim first), records per-column min/max,
and answers queries over the loaded columns with in-memory caching, min/max
pruning, and hash joins.

On-disk layout per table: `<data_dir>/<table>/<attr>.col` files, a text
`meta` file (row count, per-column type and min/max), and `journal.log`
when journaling is on.
"""
from __future__ import annotations

import os
import shutil
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cache import ColumnCache
from .errors import LoadError, NotLoadedError, SchemaError
from .query_model import QueryAst
from .tabular import (
    Column,
    ExecStats,
    FLOAT_TYPE,
    LoadStats,
    ResultSet,
    TEXT_TYPE,
    predicate_mask,
    scan_csv,
)

DEFAULT_CACHE_BUDGET = 1 << 30

_TYPE_INFER_ROWS = 1000


@dataclass
class TableStore:
    """Metadata for one loaded table; column payloads stay on disk."""

    table: str
    directory: Path
    attrs: list[str]
    types: dict[str, str]
    row_count: int
    minmax: dict[str, tuple | None] = field(default_factory=dict)

    def col_path(self, attr: str) -> Path:
        return self.directory / f"{attr}.col"

    @property
    def meta_path(self) -> Path:
        return self.directory / "meta"

    @property
    def journal_path(self) -> Path:
        return self.directory / "journal.log"


class DbEngine:
    def __init__(
        self,
        data_dir,
        cache: ColumnCache | None = None,
        cache_budget_bytes: int = DEFAULT_CACHE_BUDGET,
    ):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.cache = cache if cache is not None else ColumnCache(cache_budget_bytes)
        self.stores: dict[str, TableStore] = {}
        self.total_bytes_written = 0

    # -- loading ----------------------------------------------------------

    def has_table(self, table: str) -> bool:
        return table in self.stores or (self.data_dir / table / "meta").exists()

    def load_table(self, csv_path, table: str, journal: bool = False) -> LoadStats:
        """Bulk-load a CSV file into typed binary column files.

        A table that already holds rows must be truncated first.
        """
        existing = self.stores.get(table)
        if existing is not None and existing.row_count > 0:
            raise LoadError(f"table {table!r} is already loaded; truncate it first")

        start = time.perf_counter()
        scan = scan_csv(csv_path)
        attrs = scan.header

        directory = self.data_dir / table
        tmp_dir = self.data_dir / f".{table}.loading"
        if tmp_dir.exists():
            shutil.rmtree(tmp_dir)
        tmp_dir.mkdir(parents=True)

        stats = LoadStats(rows_loaded=scan.row_count, input_bytes=scan.file_bytes)
        try:
            if journal:
                stats.journal_bytes = _write_journal(tmp_dir / "journal.log", csv_path)
            types: dict[str, str] = {}
            minmax: dict[str, tuple | None] = {}
            binary = 0
            for attr in attrs:
                col = self._coerce_for_load(scan.columns[attr], attr)
                types[attr] = col.type
                minmax[attr] = _column_minmax(col)
                binary += _write_column(tmp_dir / f"{attr}.col", col)
            stats.binary_bytes = binary
            store = TableStore(
                table=table,
                directory=directory,
                attrs=attrs,
                types=types,
                row_count=scan.row_count,
                minmax=minmax,
            )
            _write_meta(tmp_dir / "meta", store)
        except Exception:
            shutil.rmtree(tmp_dir, ignore_errors=True)
            raise
        if directory.exists():
            shutil.rmtree(directory)
        tmp_dir.rename(directory)
        store.directory = directory
        self.cache.drop_matching(lambda key: key[0] == str(directory))
        self.stores[table] = store
        self.total_bytes_written += stats.total_written
        stats.duration_ms = (time.perf_counter() - start) * 1000.0
        return stats

    def _coerce_for_load(self, col: Column, attr: str) -> Column:
        """Re-apply type inference on a row prefix so a conflicting value
        later in the file aborts the load (the whole-column rule would have
        silently fallen back to text)."""
        if col.is_numeric:
            return col
        prefix = col.values[:_TYPE_INFER_ROWS]
        try:
            [float(v) for v in prefix]
        except ValueError:
            return col  # inferred text from the prefix: consistent
        for i, v in enumerate(col.values):
            try:
                float(v)
            except ValueError:
                raise LoadError(
                    f"type conflict in column {attr!r}: row {i + 1} value {v!r} "
                    "is not numeric"
                ) from None
        return Column(np.asarray(col.values, dtype=np.float64))

    def truncate_table(self, table: str) -> float:
        """Empty a table: zero rows, empty column files, reset statistics."""
        start = time.perf_counter()
        store = self._require_store(table, for_truncate=True)
        for attr in store.attrs:
            _write_column(store.col_path(attr), Column(np.empty(0, dtype=np.float64))
                          if store.types[attr] == FLOAT_TYPE else Column([]))
        store.row_count = 0
        store.minmax = {attr: None for attr in store.attrs}
        if store.journal_path.exists():
            store.journal_path.unlink()
        _write_meta(store.meta_path, store)
        self.cache.drop_matching(lambda key: key[0] == str(store.directory))
        return (time.perf_counter() - start) * 1000.0

    def _require_store(self, table: str, for_truncate: bool = False) -> TableStore:
        store = self.stores.get(table)
        if store is None:
            store = _read_meta(self.data_dir / table)
            if store is not None:
                self.stores[table] = store
        if store is None:
            if for_truncate:
                raise SchemaError(f"unknown table {table!r}")
            raise NotLoadedError(f"table {table!r} is not loaded")
        return store

    # -- querying ----------------------------------------------------------

    def execute(self, ast: QueryAst) -> tuple[ResultSet, ExecStats]:
        stats = ExecStats()
        self.cache.begin_peak_window()
        start = time.perf_counter()

        stores = {t: self._require_store(t) for t in ast.tables}
        needed = _needed_by_table(ast)
        for table, attrs in needed.items():
            missing = [a for a in attrs if a not in stores[table].attrs]
            if missing:
                raise SchemaError(f"table {table!r} has no attribute {missing[0]!r}")

        # Min/max pruning: a predicate range disjoint from the column's
        # [min, max] empties the whole result without any column scan.
        pruned = any(
            _prunes(stores[p.attr.split('.', 1)[0]], p) for p in ast.predicates
        )
        if pruned:
            stats.duration_ms = (time.perf_counter() - start) * 1000.0
            if ast.is_count:
                return ResultSet(columns=("count",), rows=[(0,)]), stats
            return ResultSet(columns=tuple(ast.projections), rows=[]), stats

        # Pin the whole working set so tight budgets error out rather than
        # evicting a column the running query still needs.
        pinned = {
            (str(stores[t].directory), a)
            for t, attrs in needed.items()
            for a in attrs
        }
        qcols: dict[str, Column] = {}
        for table, attrs in needed.items():
            for bare in attrs:
                qcols[f"{table}.{bare}"] = self._fetch_column(
                    stores[table], bare, stats, pinned
                )

        if ast.joins:
            result = self._execute_join(ast, stores, qcols, stats)
        else:
            result = self._execute_single(ast, stores[ast.tables[0]], qcols, stats)
        stats.duration_ms = (time.perf_counter() - start) * 1000.0
        stats.peak_cache_bytes = self.cache.window_peak_bytes
        return result, stats

    def _fetch_column(self, store: TableStore, attr: str, stats, pinned) -> Column:
        key = (str(store.directory), attr)
        col = self.cache.get(key)
        if col is not None:
            stats.cache_hit_columns += 1
            return col
        col, nbytes = _read_column(store.col_path(attr))
        stats.bytes_read_from_disk += nbytes
        self.cache.put(key, col, pinned=pinned)
        return col

    def _execute_single(self, ast, store, qcols, stats) -> ResultSet:
        nrows = store.row_count
        mask = None
        for pred in ast.predicates:
            m = predicate_mask(qcols[pred.attr], pred.op, pred.literal)
            mask = m if mask is None else (mask & m)
        if ast.is_count:
            stats.rows_scanned = nrows if ast.predicates else 0
            count = int(mask.sum()) if mask is not None else nrows
            return ResultSet(columns=("count",), rows=[(count,)])
        stats.rows_scanned = nrows
        indices = np.arange(nrows) if mask is None else np.flatnonzero(mask)
        if ast.limit is not None and len(indices) > ast.limit:
            indices = indices[: ast.limit]
            stats.early_stop = True
        taken = [qcols[a].take(indices) for a in ast.projections]
        rows = list(zip(*taken)) if taken else []
        return ResultSet(columns=tuple(ast.projections), rows=rows)

    def _execute_join(self, ast, stores, qcols, stats) -> ResultSet:
        # Pre-filter each table with its own predicates, then left-deep hash
        # joins probing in intermediate order so pair enumeration matches the
        # in-situ engine's nested loop.
        survivors: dict[str, np.ndarray] = {}
        for table in ast.tables:
            n = stores[table].row_count
            mask = np.ones(n, dtype=bool)
            for pred in ast.predicates:
                if pred.attr.split(".", 1)[0] == table:
                    mask &= predicate_mask(qcols[pred.attr], pred.op, pred.literal)
            survivors[table] = np.flatnonzero(mask)
        stats.rows_scanned = sum(stores[t].row_count for t in ast.tables)

        first = ast.tables[0]
        inter = {first: survivors[first]}
        inter_len = len(survivors[first])
        for i, join in enumerate(ast.joins):
            new_table = ast.tables[i + 1]
            inter, inter_len = _hash_join_stage(
                inter, inter_len, join, new_table, survivors[new_table], qcols
            )

        sel = np.arange(inter_len)
        if ast.is_count:
            return ResultSet(columns=("count",), rows=[(inter_len,)])
        if ast.limit is not None and len(sel) > ast.limit:
            sel = sel[: ast.limit]
            stats.early_stop = True
        taken = [
            qcols[a].take(inter[a.split(".", 1)[0]][sel]) for a in ast.projections
        ]
        rows = list(zip(*taken)) if taken else []
        return ResultSet(columns=tuple(ast.projections), rows=rows)


# -- helpers ----------------------------------------------------------------


def _needed_by_table(ast: QueryAst) -> dict[str, list[str]]:
    needed: dict[str, list[str]] = {t: [] for t in ast.tables}
    refs = [
        *(() if ast.is_count else ast.projections),
        *(s for j in ast.joins for s in (j.left, j.right)),
        *(p.attr for p in ast.predicates),
    ]
    for ref in refs:
        table, bare = ref.split(".", 1)
        if bare not in needed[table]:
            needed[table].append(bare)
    return needed


def _prunes(store: TableStore, pred) -> bool:
    bare = pred.attr.split(".", 1)[1]
    bounds = store.minmax.get(bare)
    if bounds is None:
        return store.row_count == 0
    lo, hi = bounds
    numeric = store.types[bare] == FLOAT_TYPE
    if numeric:
        try:
            lit = float(pred.literal)
        except (TypeError, ValueError):
            return True  # numeric column never matches a non-numeric literal
    else:
        lit = pred.literal if isinstance(pred.literal, str) else repr(float(pred.literal))
    op = pred.op
    if op == ">":
        return hi <= lit
    if op == ">=":
        return hi < lit
    if op == "<":
        return lo >= lit
    if op == "<=":
        return lo > lit
    return lit < lo or lit > hi  # "="


def _hash_join_stage(inter, inter_len, join, new_table, new_rows, qcols):
    new_prefix = new_table + "."
    if join.left.startswith(new_prefix) and not join.right.startswith(new_prefix):
        new_attr, old_attr = join.left, join.right
    else:
        old_attr, new_attr = join.left, join.right
    if not new_attr.startswith(new_prefix):
        # Condition not referencing the joined table: per-tuple filter
        # crossed with every surviving new-table row.
        l = _values_at(qcols[old_attr], inter[old_attr.split(".", 1)[0]])
        r = _values_at(qcols[new_attr], inter[new_attr.split(".", 1)[0]])
        kept = np.asarray([i for i, (x, y) in enumerate(zip(l, r)) if x == y], dtype=np.int64)
        lefts = np.repeat(kept, len(new_rows))
        rights_idx = np.tile(np.arange(len(new_rows)), len(kept))
        rights = new_rows[rights_idx] if len(new_rows) else np.empty(0, dtype=np.int64)
        new_inter = {t: idx[lefts] for t, idx in inter.items()}
        new_inter[new_table] = rights
        return new_inter, len(rights)

    buckets: dict = {}
    new_vals = _values_at(qcols[new_attr], new_rows)
    for pos, v in enumerate(new_vals):
        buckets.setdefault(v, []).append(pos)

    old_table = old_attr.split(".", 1)[0]
    old_vals = _values_at(qcols[old_attr], inter[old_table])
    counts = np.zeros(inter_len, dtype=np.int64)
    match_lists = []
    for k, v in enumerate(old_vals):
        hit = buckets.get(v)
        if hit:
            counts[k] = len(hit)
            match_lists.append(hit)
    lefts = np.repeat(np.arange(inter_len), counts)
    if match_lists:
        rights = new_rows[np.concatenate([np.asarray(m, dtype=np.int64) for m in match_lists])]
    else:
        rights = np.empty(0, dtype=np.int64)
    new_inter = {t: idx[lefts] for t, idx in inter.items()}
    new_inter[new_table] = rights
    return new_inter, len(rights)


def _values_at(col: Column, indices):
    if col.is_numeric:
        return col.values[indices].tolist()
    return [col.values[i] for i in indices]


def _column_minmax(col: Column):
    if len(col) == 0:
        return None
    if col.is_numeric:
        return float(col.values.min()), float(col.values.max())
    return min(col.values), max(col.values)


def _write_column(path, col: Column) -> int:
    if col.is_numeric:
        header = f"{FLOAT_TYPE} {len(col)}\n".encode("ascii")
        payload = col.values.astype("<f8").tobytes()
    else:
        header = f"{TEXT_TYPE} {len(col)}\n".encode("ascii")
        chunks = []
        for v in col.values:
            b = v.encode("utf-8")
            chunks.append(struct.pack("<I", len(b)))
            chunks.append(b)
        payload = b"".join(chunks)
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)
    return len(header) + len(payload)


def _read_column(path) -> tuple[Column, int]:
    with open(path, "rb") as f:
        raw = f.read()
    nl = raw.index(b"\n")
    kind, count_s = raw[:nl].decode("ascii").split()
    count = int(count_s)
    payload = raw[nl + 1 :]
    if kind == FLOAT_TYPE:
        col = Column(np.frombuffer(payload, dtype="<f8", count=count).astype(np.float64))
    else:
        values = []
        off = 0
        for _ in range(count):
            (n,) = struct.unpack_from("<I", payload, off)
            off += 4
            values.append(payload[off : off + n].decode("utf-8"))
            off += n
        col = Column(values)
    return col, len(raw)


def _write_journal(path, csv_path) -> int:
    """Append every input record verbatim, fsynced once per load."""
    with open(csv_path, "rb") as src:
        src.readline()  # header is schema, not a record
        body = src.read()
    with open(path, "wb") as out:
        out.write(body)
        out.flush()
        os.fsync(out.fileno())
    return len(body)


def _write_meta(path, store: TableStore) -> None:
    lines = [str(store.row_count)]
    for attr in store.attrs:
        bounds = store.minmax.get(attr)
        if bounds is None:
            lo = hi = ""
        else:
            lo, hi = bounds
            if store.types[attr] == FLOAT_TYPE:
                lo, hi = repr(lo), repr(hi)
        lines.append(f"{attr},{store.types[attr]},{lo},{hi}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_meta(directory) -> TableStore | None:
    directory = Path(directory)
    meta = directory / "meta"
    if not meta.exists():
        return None
    lines = meta.read_text(encoding="utf-8").splitlines()
    row_count = int(lines[0])
    attrs: list[str] = []
    types: dict[str, str] = {}
    minmax: dict[str, tuple | None] = {}
    for line in lines[1:]:
        attr, kind, lo, hi = line.split(",", 3)
        attrs.append(attr)
        types[attr] = kind
        if lo == "" and hi == "":
            minmax[attr] = None
        elif kind == FLOAT_TYPE:
            minmax[attr] = (float(lo), float(hi))
        else:
            minmax[attr] = (lo, hi)
    return TableStore(
        table=directory.name,
        directory=directory,
        attrs=attrs,
        types=types,
        row_count=row_count,
        minmax=minmax,
    )
