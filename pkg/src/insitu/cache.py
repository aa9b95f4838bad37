"""RAM-budgeted LRU cache of parsed columns.

Keys are (source, attribute) pairs; whole columns are the eviction unit.
Callers pin the columns of the running query so eviction can never break
the query's own working set.
"""
from __future__ import annotations

from collections import OrderedDict
from typing import NamedTuple

from .errors import BudgetExceededError, ConfigError


class CacheEntry(NamedTuple):
    column: object
    size: int


class ColumnCache:
    def __init__(self, budget_bytes: int):
        if budget_bytes <= 0:
            raise ConfigError(f"cache budget must be positive, got {budget_bytes}")
        self.budget_bytes = int(budget_bytes)
        self._entries: OrderedDict = OrderedDict()
        self.total_bytes = 0
        self.peak_bytes = 0
        self._window_peak = 0

    def __contains__(self, key) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key):
        """Column for key, bumping recency; None on miss."""
        entry = self._entries.get(key)
        if entry is None:
            return None
        self._entries.move_to_end(key)
        return entry.column

    def put(self, key, column, pinned=frozenset()) -> None:
        """Insert a column, evicting least-recently-used unpinned columns.

        Raises BudgetExceededError when the pinned set alone exceeds the
        budget; the cache is left within budget either way.
        """
        size = column.nbytes
        old = self._entries.pop(key, None)
        if old is not None:
            self.total_bytes -= old.size
        while self.total_bytes + size > self.budget_bytes:
            victim = self._oldest_unpinned(pinned)
            if victim is None:
                raise BudgetExceededError(self.total_bytes + size, self.budget_bytes)
            dropped = self._entries.pop(victim)
            self.total_bytes -= dropped.size
        self._entries[key] = CacheEntry(column, size)
        self.total_bytes += size
        self.peak_bytes = max(self.peak_bytes, self.total_bytes)
        self._window_peak = max(self._window_peak, self.total_bytes)

    def _oldest_unpinned(self, pinned):
        for key in self._entries:
            if key not in pinned:
                return key
        return None

    def clear(self) -> None:
        self._entries.clear()
        self.total_bytes = 0

    def drop_matching(self, predicate) -> int:
        """Drop every entry whose key satisfies predicate; returns count."""
        victims = [k for k in self._entries if predicate(k)]
        for k in victims:
            self.total_bytes -= self._entries.pop(k).size
        return len(victims)

    def begin_peak_window(self) -> None:
        self._window_peak = self.total_bytes

    @property
    def window_peak_bytes(self) -> int:
        return self._window_peak
