"""Desk-scale workbench for raw-data query processing.

Two engines over the same data and query subset -- in-situ over CSV and
load-then-query columnar -- plus a per-task resource monitor, tool-output
parsers, derived-metric analysis, and a partition advisor that routes
queries between the engines.
"""

from .advisor import (
    CapacityCheck,
    MaterializedPlan,
    PartitionPlan,
    materialize_plan,
    qca_partition,
    raw_capacity_check,
    route_query,
    rua_partition,
)
from .analyzer import (
    ProfileAccumulator,
    ResourceProfile,
    SystemSpec,
    aggregate_profiles,
    bandwidth_utilization,
    cold_hot_delta,
    effective_ram_pct,
    io_amplification,
    profiles_from_exec_stats,
    wet,
)
from .cache import ColumnCache
from .datagen import generate_csv
from .db_engine import DbEngine, TableStore
from .errors import (
    BudgetExceededError,
    ConfigError,
    DomainError,
    FormatError,
    JoinGuardError,
    LoadError,
    MonitorError,
    NotLoadedError,
    ParseError,
    SchemaError,
    UncoveredQueryError,
    WorkbenchError,
)
from .monitor import (
    FlushReport,
    MonitorConfig,
    Sample,
    TaskRegister,
    filter_line,
    run_scripted,
    start_monitor,
)
from .query_model import (
    CopyOp,
    QueryAst,
    QueryClass,
    TruncateOp,
    WorkloadTask,
    classify,
    parse_query,
    parse_workload,
    render,
)
from .raw_engine import PositionalMap, RawEngine, build_positional_map
from .stat_sources import (
    ProcfsSource,
    ReplaySource,
    SyntheticSource,
    parse_iotop_block,
    parse_top_block,
)
from .tabular import Column, ExecStats, LoadStats, ResultSet

__all__ = [
    "BudgetExceededError",
    "CapacityCheck",
    "Column",
    "ColumnCache",
    "ConfigError",
    "CopyOp",
    "DbEngine",
    "DomainError",
    "ExecStats",
    "FlushReport",
    "FormatError",
    "JoinGuardError",
    "LoadError",
    "LoadStats",
    "MaterializedPlan",
    "MonitorConfig",
    "MonitorError",
    "NotLoadedError",
    "ParseError",
    "PartitionPlan",
    "PositionalMap",
    "ProcfsSource",
    "ProfileAccumulator",
    "QueryAst",
    "QueryClass",
    "RawEngine",
    "ReplaySource",
    "ResourceProfile",
    "ResultSet",
    "Sample",
    "SchemaError",
    "SyntheticSource",
    "SystemSpec",
    "TableStore",
    "TaskRegister",
    "TruncateOp",
    "UncoveredQueryError",
    "WorkbenchError",
    "WorkloadTask",
    "aggregate_profiles",
    "bandwidth_utilization",
    "build_positional_map",
    "classify",
    "cold_hot_delta",
    "effective_ram_pct",
    "filter_line",
    "generate_csv",
    "io_amplification",
    "materialize_plan",
    "parse_iotop_block",
    "parse_query",
    "parse_top_block",
    "parse_workload",
    "profiles_from_exec_stats",
    "qca_partition",
    "raw_capacity_check",
    "render",
    "route_query",
    "rua_partition",
    "run_scripted",
    "start_monitor",
    "wet",
]

__version__ = "0.1.0"
