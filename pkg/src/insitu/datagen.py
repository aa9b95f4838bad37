"""Deterministic synthetic dataset generator.

Produces astronomy-catalog flavored CSV: a monotone integer `objid` key
(enabling equi-joins across generated tables that share a key range),
`ra` uniform on [0, 360), `dec` uniform on [-90, 90), and further numeric
columns `v03`, `v04`, ... uniform on [0, 1000). A nonzero `skew` blends a
heavy-tailed Pareto component into the v-columns. Values are written with
10 decimal places, so rows are wide relative to an 8-byte binary encoding.

Output is byte-identical for a given (rows, columns, seed, skew).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

_CHUNK_ROWS = 100_000


@dataclass(frozen=True)
class GenStats:
    path: str
    rows: int
    columns: int
    file_bytes: int


def column_names(columns: int) -> list[str]:
    base = ["objid", "ra", "dec"]
    if columns <= 3:
        return base[:columns]
    return base + [f"v{i:02d}" for i in range(3, columns)]


def generate_csv(path, rows: int, columns: int, seed: int, skew: float = 0.0) -> GenStats:
    if columns <= 0:
        raise ConfigError(f"columns must be positive, got {columns}")
    if rows < 0:
        raise ConfigError(f"rows must be non-negative, got {rows}")
    if not 0.0 <= skew < 1.0:
        raise ConfigError(f"skew must be in [0, 1), got {skew}")

    rng = np.random.default_rng(seed)
    names = column_names(columns)
    header = ",".join(names) + "\n"
    row_fmt = ",".join(["%d"] + ["%.10f"] * (columns - 1)) + "\n"

    total = len(header.encode())
    with open(path, "w", encoding="utf-8", newline="") as out:
        out.write(header)
        written = 0
        while written < rows:
            n = min(_CHUNK_ROWS, rows - written)
            block = np.empty((n, columns), dtype=np.float64)
            block[:, 0] = np.arange(written + 1, written + n + 1)
            for j in range(1, columns):
                if names[j] == "ra":
                    block[:, j] = rng.uniform(0.0, 360.0, n)
                elif names[j] == "dec":
                    block[:, j] = rng.uniform(-90.0, 90.0, n)
                else:
                    u = rng.uniform(0.0, 1000.0, n)
                    if skew > 0.0:
                        tail = rng.pareto(1.5, n) * 100.0
                        u = (1.0 - skew) * u + skew * tail
                    block[:, j] = u
            text = (row_fmt * n) % tuple(block.ravel())
            out.write(text)
            total += len(text.encode())
            written += n
    return GenStats(path=str(path), rows=rows, columns=columns, file_bytes=total)
