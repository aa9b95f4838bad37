"""Run the same queries in-situ and on the loaded columnar store.

Generates a small synthetic catalog, executes a handful of queries on both
engines, and prints the structural difference the workbench is built
around: zero load time but expensive joins in-situ, versus an up-front
load that makes every later query cheap.
"""
import tempfile
from pathlib import Path

from insitu import DbEngine, RawEngine, generate_csv, parse_query, wet

work = Path(tempfile.mkdtemp(prefix="insitu_demo_"))
main_csv = work / "photoprimary.csv"
dim_csv = work / "neighbors.csv"
generate_csv(main_csv, rows=120_000, columns=8, seed=42)
generate_csv(dim_csv, rows=8_000, columns=3, seed=43)

queries = {
    "count": "SELECT count(objid) FROM photoprimary",
    "range scan": "SELECT objid, ra, dec FROM photoprimary WHERE ra > 180 AND ra < 185",
    "sampling": "SELECT objid, ra FROM photoprimary WHERE ra < 350 LIMIT 10",
    "join": "SELECT photoprimary.ra, neighbors.dec FROM photoprimary "
            "JOIN neighbors ON photoprimary.objid = neighbors.objid "
            "WHERE neighbors.ra < 30",
}

# In-situ: no load phase; first touch of each column parses the raw file.
raw = RawEngine()
raw.register("photoprimary", main_csv)
raw.register("neighbors", dim_csv)

# Columnar: explicit load first, then queries run over binary columns.
db = DbEngine(work / "db_store")
load_main = db.load_table(main_csv, "photoprimary", journal=True)
load_dim = db.load_table(dim_csv, "neighbors")

print(f"columnar load: {load_main.rows_loaded} rows, "
      f"{load_main.total_written / 1e6:.1f} MB written "
      f"({load_main.total_written / load_main.input_bytes:.2f}x the input); "
      f"in-situ load: nothing")

raw_ms, db_ms = {}, {}
for name, text in queries.items():
    ast = parse_query(text)
    r_cold, s_raw_cold = raw.execute(ast)
    _, s_raw_hot = raw.execute(ast)
    r_db, s_db = db.execute(ast)
    assert r_cold.multiset() == r_db.multiset()
    raw_ms[name] = s_raw_hot.duration_ms
    db_ms[name] = s_db.duration_ms
    print(f"{name:>10}: {len(r_cold):>6} rows | "
          f"in-situ cold {s_raw_cold.duration_ms:8.1f} ms "
          f"(read {s_raw_cold.bytes_read_from_disk / 1e6:6.2f} MB), "
          f"hot {s_raw_hot.duration_ms:8.1f} ms | "
          f"columnar {s_db.duration_ms:8.1f} ms")

raw_wet = wet({**raw_ms, "load": 0.0}, load_task_ids={"load"})
db_wet = wet({**db_ms, "load": load_main.duration_ms + load_dim.duration_ms},
             load_task_ids={"load"})
print(f"\nWET  in-situ: load {raw_wet.load_ms:.0f} ms + queries "
      f"{raw_wet.query_ms:.0f} ms = {raw_wet.total_ms:.0f} ms")
print(f"WET columnar: load {db_wet.load_ms:.0f} ms + queries "
      f"{db_wet.query_ms:.0f} ms = {db_wet.total_ms:.0f} ms")
