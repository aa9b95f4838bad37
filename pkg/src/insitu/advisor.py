"""Partition planning and query routing between the two engines.

Two techniques over a workload's query classes:

* complexity-aware: attributes of 0-join queries stay raw, attributes of
  join queries get loaded; routing follows join count.
* utilization-aware: only sampling queries whose measured footprint is
  minimal (little read, tiny memory) stay raw; everything else is loaded.

Attributes referenced by both sides are replicated into both partitions.
Metric percentages follow the loaded-side-counts-everything convention:
``db_pct`` counts all loaded attributes, ``raw_only_pct`` the raw-exclusive
ones, ``repl_pct`` the intersection, so ``db_pct + raw_only_pct`` is exactly
the covered share of the schema.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .analyzer import ResourceProfile, SystemSpec
from .errors import ConfigError, SchemaError, UncoveredQueryError
from .query_model import KIND_COMPLEX, QueryClass
from .tabular import LoadStats

TECHNIQUE_QCA = "QCA"
TECHNIQUE_RUA = "RUA"

ENGINE_RAW = "raw"
ENGINE_DB = "db"

DEFAULT_READ_THRESHOLD_BYTES = 2 * 1024 * 1024
DEFAULT_MEM_THRESHOLD_PCT = 0.1
DEFAULT_HEADROOM = 0.9


@dataclass(frozen=True)
class PlanMetrics:
    db_pct: float
    raw_only_pct: float
    repl_pct: float


@dataclass
class PartitionPlan:
    technique: str
    schema: tuple[str, ...]
    raw_attrs: frozenset[str]
    db_attrs: frozenset[str]
    routing: dict[str, str] = field(default_factory=dict)

    @property
    def replicated_attrs(self) -> frozenset[str]:
        return self.raw_attrs & self.db_attrs

    @property
    def metrics(self) -> PlanMetrics:
        n = len(self.schema)
        return PlanMetrics(
            db_pct=len(self.db_attrs) / n * 100.0,
            raw_only_pct=len(self.raw_attrs - self.db_attrs) / n * 100.0,
            repl_pct=len(self.replicated_attrs) / n * 100.0,
        )

    def to_dict(self) -> dict:
        m = self.metrics
        return {
            "technique": self.technique,
            "schema": list(self.schema),
            "raw_attrs": sorted(self.raw_attrs),
            "db_attrs": sorted(self.db_attrs),
            "replicated_attrs": sorted(self.replicated_attrs),
            "metrics": {
                "db_pct": m.db_pct,
                "raw_only_pct": m.raw_only_pct,
                "repl_pct": m.repl_pct,
            },
            "routing": dict(sorted(self.routing.items())),
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "PartitionPlan":
        with open(path, encoding="utf-8") as f:
            d = json.load(f)
        return cls(
            technique=d["technique"],
            schema=tuple(d["schema"]),
            raw_attrs=frozenset(d["raw_attrs"]),
            db_attrs=frozenset(d["db_attrs"]),
            routing=dict(d["routing"]),
        )


def _check_schema(classes, schema) -> None:
    known = set(schema)
    for qid, cls in classes.items():
        missing = cls.attrs - known
        if missing:
            raise SchemaError(
                f"query {qid!r} references attributes outside the schema: "
                f"{sorted(missing)}"
            )


def qca_partition(classes: dict[str, QueryClass], schema) -> PartitionPlan:
    """Keep 0-join query attributes raw; load join-query attributes."""
    schema = tuple(schema)
    _check_schema(classes, schema)
    raw_attrs: set[str] = set()
    db_attrs: set[str] = set()
    routing: dict[str, str] = {}
    for qid, cls in classes.items():
        if cls.kind == KIND_COMPLEX:
            db_attrs |= cls.attrs
            routing[qid] = ENGINE_DB
        else:
            raw_attrs |= cls.attrs
            routing[qid] = ENGINE_RAW
    return PartitionPlan(
        technique=TECHNIQUE_QCA,
        schema=schema,
        raw_attrs=frozenset(raw_attrs),
        db_attrs=frozenset(db_attrs),
        routing=routing,
    )


def rua_partition(
    classes: dict[str, QueryClass],
    profiles: dict[str, ResourceProfile],
    schema,
    read_threshold_bytes: float = DEFAULT_READ_THRESHOLD_BYTES,
    mem_threshold_pct: float = DEFAULT_MEM_THRESHOLD_PCT,
) -> PartitionPlan:
    """Keep only measured minimal-footprint sampling queries raw.

    A query qualifies when it samples (LIMIT, 0 joins) and its profile shows
    less than the read threshold pulled from disk and a peak memory share
    under the memory threshold. Empty-profile markers never qualify.
    """
    if read_threshold_bytes <= 0 or mem_threshold_pct <= 0:
        raise ConfigError("RUA thresholds must be positive")
    schema = tuple(schema)
    _check_schema(classes, schema)
    raw_attrs: set[str] = set()
    db_attrs: set[str] = set()
    routing: dict[str, str] = {}
    for qid, cls in classes.items():
        profile = profiles.get(qid)
        if profile is None:
            raise ConfigError(f"no resource profile for query {qid!r}")
        qualifies = (
            cls.is_sampling
            and cls.join_count == 0
            and not profile.is_empty
            and profile.total_read_bytes < read_threshold_bytes
            and (profile.peak_mem_pct or 0.0) < mem_threshold_pct
        )
        if qualifies:
            raw_attrs |= cls.attrs
            routing[qid] = ENGINE_RAW
        else:
            db_attrs |= cls.attrs
            routing[qid] = ENGINE_DB
    return PartitionPlan(
        technique=TECHNIQUE_RUA,
        schema=schema,
        raw_attrs=frozenset(raw_attrs),
        db_attrs=frozenset(db_attrs),
        routing=routing,
    )


@dataclass(frozen=True)
class CapacityCheck:
    fits: bool
    required_bytes: float


def raw_capacity_check(dataset_bytes, spec: SystemSpec,
                       headroom: float = DEFAULT_HEADROOM) -> CapacityCheck:
    """Can the in-situ engine cache this dataset within the RAM budget?

    The in-memory footprint expands by the configured factor relative to
    raw file bytes.
    """
    if dataset_bytes <= 0:
        raise ConfigError("dataset_bytes must be positive")
    required = dataset_bytes * spec.ram_expansion_factor
    return CapacityCheck(fits=required <= spec.ram_bytes * headroom, required_bytes=required)


def route_query(cls: QueryClass, plan: PartitionPlan, query_id: str | None = None) -> str:
    """Engine choice for a query under a plan.

    Known queries use the recorded routing; new ones fall back to the
    technique's class rule, then to whichever side covers their attributes.
    """
    if query_id is not None and query_id in plan.routing:
        return plan.routing[query_id]
    if plan.technique == TECHNIQUE_RUA:
        prefers_raw = cls.is_sampling and cls.join_count == 0
    else:
        prefers_raw = cls.join_count == 0
    order = (ENGINE_RAW, ENGINE_DB) if prefers_raw else (ENGINE_DB, ENGINE_RAW)
    for engine in order:
        side = plan.raw_attrs if engine == ENGINE_RAW else plan.db_attrs
        if cls.attrs <= side:
            return engine
    raise UncoveredQueryError(
        f"query attributes {sorted(cls.attrs)} are covered by neither partition"
    )


@dataclass
class MaterializedPlan:
    raw_csv_paths: dict[str, str]
    load_stats: dict[str, LoadStats]
    slice_write_ms: float

    @property
    def load_ms(self) -> float:
        return sum(s.duration_ms for s in self.load_stats.values())


def _normalize_sources(source_csv) -> dict[str, Path]:
    if isinstance(source_csv, dict):
        return {t: Path(p) for t, p in source_csv.items()}
    path = Path(source_csv)
    return {path.stem: path}


def write_raw_slices(plan: PartitionPlan, source_csv, data_dir) -> tuple[dict[str, str], float]:
    """Write the raw-side vertical slice CSV per table; returns paths and
    the write duration in ms. Slices keep the source's column order and
    field text verbatim."""
    sources = _normalize_sources(source_csv)
    by_table = _split_by_table(plan.raw_attrs, sources)
    raw_dir = Path(data_dir) / "raw_partition"
    raw_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    raw_paths: dict[str, str] = {}
    for table, attrs in by_table.items():
        out = raw_dir / f"{table}.csv"
        _write_slice(sources[table], out, attrs)
        raw_paths[table] = str(out)
    return raw_paths, (time.perf_counter() - t0) * 1000.0


def load_db_side(plan: PartitionPlan, source_csv, data_dir, db_engine,
                 journal: bool = False) -> dict[str, LoadStats]:
    """Slice the db-side attributes per table and bulk-load each slice."""
    sources = _normalize_sources(source_csv)
    by_table = _split_by_table(plan.db_attrs, sources)
    db_src_dir = Path(data_dir) / "db_partition_src"
    db_src_dir.mkdir(parents=True, exist_ok=True)
    load_stats: dict[str, LoadStats] = {}
    for table, attrs in by_table.items():
        sliced = db_src_dir / f"{table}.csv"
        _write_slice(sources[table], sliced, attrs)
        load_stats[table] = db_engine.load_table(sliced, table, journal=journal)
    return load_stats


def materialize_plan(plan: PartitionPlan, source_csv, data_dir, db_engine,
                     journal: bool = False) -> MaterializedPlan:
    """Write the raw-side vertical slices and load the db-side columns.

    ``source_csv`` is one CSV path (single-table plans) or a mapping
    table -> path. Replicated attributes land on both sides.
    """
    raw_paths, slice_ms = write_raw_slices(plan, source_csv, data_dir)
    load_stats = load_db_side(plan, source_csv, data_dir, db_engine, journal=journal)
    return MaterializedPlan(
        raw_csv_paths=raw_paths, load_stats=load_stats, slice_write_ms=slice_ms
    )


def _split_by_table(attrs, sources) -> dict[str, list[str]]:
    """Group qualified (or bare, single-table) attrs into per-table bare names."""
    single = next(iter(sources)) if len(sources) == 1 else None
    out: dict[str, list[str]] = {}
    for attr in sorted(attrs):
        if "." in attr:
            table, bare = attr.split(".", 1)
        elif single is not None:
            table, bare = single, attr
        else:
            raise SchemaError(
                f"attribute {attr!r} must be table-qualified for a multi-table plan"
            )
        if table not in sources:
            raise SchemaError(f"no source file for table {table!r}")
        out.setdefault(table, []).append(bare)
    return out


def _write_slice(source: Path, out: Path, attrs) -> None:
    """Project a CSV onto the named columns, preserving header order and
    field bytes; the header is validated against the requested names."""
    with open(source, "rb") as f:
        header = f.readline().decode("utf-8").rstrip("\r\n").split(",")
        body = f.read()
    missing = [a for a in attrs if a not in header]
    if missing:
        raise SchemaError(f"{source}: no column named {missing[0]!r}")
    keep = [i for i, name in enumerate(header) if name in set(attrs)]
    ncols = len(header)
    flat = body.replace(b"\n", b",").split(b",") if body else []
    if flat and flat[-1] == b"":
        flat.pop()
    nrows = len(flat) // ncols if ncols else 0
    with open(out, "wb") as o:
        o.write((",".join(header[i] for i in keep) + "\n").encode("utf-8"))
        for r in range(nrows):
            base = r * ncols
            o.write(b",".join(flat[base + i] for i in keep) + b"\n")
