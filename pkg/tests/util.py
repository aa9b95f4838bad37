"""Shared helpers for the test suite: tiny CSV fixtures and a seeded
random query generator used by the engine-equivalence tests."""
from __future__ import annotations

import random

from insitu.query_model import parse_query


def write_csv(path, header, rows):
    """Write a small CSV from string fields; returns the path."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(str(v) for v in row) + "\n")
    return path


class TableInfo:
    def __init__(self, name, path, attrs, numeric_ranges):
        self.name = name
        self.path = path
        self.attrs = attrs
        self.numeric_ranges = numeric_ranges  # attr -> (lo, hi)


def random_select(rng: random.Random, tables: list[TableInfo], max_joins=2) -> str:
    """Render a random statement inside the supported subset."""
    n_joins = rng.choice([0, 0, 0, 0, 1, 1, max_joins])
    n_joins = min(n_joins, len(tables) - 1)
    chosen = [tables[0]] if n_joins else [rng.choice(tables)]
    pool = [t for t in tables if t is not chosen[0]]
    rng.shuffle(pool)
    chosen += pool[:n_joins]

    multi = len(chosen) > 1

    def ref(table, attr):
        return f"{table.name}.{attr}" if multi else attr

    joins = []
    for i in range(1, len(chosen)):
        prev = chosen[rng.randrange(i)]
        joins.append(
            f"JOIN {chosen[i].name} ON {prev.name}.objid = {chosen[i].name}.objid"
        )

    proj_table = rng.choice(chosen)
    is_count = rng.random() < 0.2
    if is_count:
        proj = f"COUNT({ref(proj_table, rng.choice(proj_table.attrs))})"
    else:
        n_proj = rng.randint(1, 3)
        parts = []
        for _ in range(n_proj):
            t = rng.choice(chosen)
            parts.append(ref(t, rng.choice(t.attrs)))
        proj = ", ".join(parts)

    preds = []
    for _ in range(rng.randint(0, 3)):
        t = rng.choice(chosen)
        attr = rng.choice(list(t.numeric_ranges))
        lo, hi = t.numeric_ranges[attr]
        lit = rng.uniform(lo, hi)
        op = rng.choice(["<", ">", "<=", ">=", "="])
        preds.append(f"{ref(t, attr)} {op} {lit:.4f}")

    stmt = f"SELECT {proj} FROM {chosen[0].name}"
    if joins:
        stmt += " " + " ".join(joins)
    if preds:
        stmt += " WHERE " + " AND ".join(preds)
    if not is_count and rng.random() < 0.3:
        stmt += f" LIMIT {rng.randint(1, 50)}"
    return stmt


def parse_select(stmt):
    ast = parse_query(stmt)
    return ast
