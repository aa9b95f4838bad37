"""Exception types shared across the workbench.

Grouped by the exit-code categories the CLI reports: configuration,
input format/parse, engine execution, monitoring.
"""


class WorkbenchError(Exception):
    """Base class for all workbench errors."""


class ConfigError(WorkbenchError):
    """Invalid run, monitor, or advisor configuration."""


class FormatError(WorkbenchError):
    """Malformed input file (workload CSV, data CSV, captured tool log)."""


class ParseError(WorkbenchError):
    """Statement text outside the supported SQL subset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class DomainError(WorkbenchError):
    """Syntactically valid construct with an out-of-domain value (e.g. LIMIT 0)."""


class SchemaError(WorkbenchError):
    """Reference to a table or attribute that does not exist."""


class NotLoadedError(WorkbenchError):
    """Query against a table the columnar engine has not loaded."""


class LoadError(WorkbenchError):
    """Bulk load aborted; the target store is left absent."""


class BudgetExceededError(WorkbenchError):
    """Column cache cannot hold the working set of one query."""

    def __init__(self, required_bytes: int, available_bytes: int):
        super().__init__(
            f"query working set needs {required_bytes} bytes, "
            f"cache budget is {available_bytes}"
        )
        self.required_bytes = required_bytes
        self.available_bytes = available_bytes


class JoinGuardError(WorkbenchError):
    """Nested-loop join would exceed the configured row-pair guard."""

    def __init__(self, estimated_pairs: int, guard: int):
        super().__init__(
            f"nested-loop join estimated at {estimated_pairs} row pairs, "
            f"guard is {guard}"
        )
        self.estimated_pairs = estimated_pairs
        self.guard = guard


class UncoveredQueryError(WorkbenchError):
    """Query attributes are covered by neither side of a partition plan."""


class MonitorError(WorkbenchError):
    """Resource monitor could not start or persist its output."""
