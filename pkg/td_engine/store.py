import logging
from pathlib import Path

import duckdb

from .exceptions import InputError

logger = logging.getLogger(__name__)

RAW_COLUMNS = ("n", "eta", "seed", "step", "rmsve_tvr", "J_estimate")
RAW_TYPES = {
    "n": "INTEGER",
    "eta": "DOUBLE",
    "seed": "BIGINT",
    "step": "BIGINT",
    "rmsve_tvr": "DOUBLE",
    "J_estimate": "DOUBLE",
}


def _literal(path):
    return "'" + str(path).replace("'", "''") + "'"


def _columns_clause(types):
    return "{" + ", ".join(f"'{name}': '{kind}'" for name, kind in types.items()) + "}"


class SweepStore:
    """
    Probe rows of a sweep, one row per (n, eta, seed, step). Aggregation runs
    as SQL over the `probes` table on a single thread so sums are reproducible.
    """

    def __init__(self, db_path=":memory:"):
        self.db_path = db_path
        self.conn = duckdb.connect(str(db_path), config={"threads": 1})
        self._init_schema()

    def _init_schema(self):
        self.conn.execute("""
            CREATE TABLE IF NOT EXISTS probes (
                n INTEGER,
                eta DOUBLE,
                seed BIGINT,
                step BIGINT,
                rmsve_tvr DOUBLE,
                J_estimate DOUBLE
            )
        """)

    def reset(self):
        """Drop every probe row; a store holds one sweep at a time."""
        self.conn.execute("DELETE FROM probes")

    def close(self):
        self.conn.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def add_probes(self, rows):
        """rows: iterable of (n, eta, seed, step, rmsve_tvr, J_estimate)."""
        rows = [tuple(row) for row in rows]
        if rows:
            self.conn.executemany("INSERT INTO probes VALUES (?, ?, ?, ?, ?, ?)", rows)
        return len(rows)

    def load_csv(self, path):
        path = Path(path)
        if not path.exists():
            raise InputError(f"raw CSV {path} does not exist")
        try:
            self.conn.execute(f"""
                INSERT INTO probes
                SELECT {", ".join(RAW_COLUMNS)}
                FROM read_csv({_literal(path)}, header = true, columns = {_columns_clause(RAW_TYPES)})
            """)
        except duckdb.Error as e:
            raise InputError(f"cannot read raw CSV {path}: {e}") from e
        loaded = self.count()
        logger.info("Loaded %d probe rows from %s", loaded, path)
        return loaded

    def count(self):
        return self.conn.execute("SELECT count(*) FROM probes").fetchone()[0]

    def check_probe_grid(self):
        """Every seed of an (n, eta) series must be probed at the same steps, once each."""
        ragged = self.conn.execute("""
            WITH seeds AS (
                SELECT n, eta, count(DISTINCT seed) AS expected
                FROM probes GROUP BY n, eta
            ),
            steps AS (
                SELECT n, eta, step, count(*) AS rows_at_step, count(DISTINCT seed) AS seeds_at_step
                FROM probes GROUP BY n, eta, step
            )
            SELECT steps.n, steps.eta, steps.step, steps.rows_at_step, seeds.expected
            FROM steps JOIN seeds ON steps.n = seeds.n AND steps.eta = seeds.eta
            WHERE steps.rows_at_step <> seeds.expected OR steps.seeds_at_step <> seeds.expected
            ORDER BY steps.n, steps.eta, steps.step
            LIMIT 5
        """).fetchall()
        if ragged:
            details = ", ".join(
                f"(n={n}, eta={eta}, step={step}: {found} rows for {expected} seeds)"
                for n, eta, step, found, expected in ragged
            )
            raise InputError(f"probe grids differ across seeds: {details}")

    def seed_count(self):
        row = self.conn.execute("""
            SELECT max(k) FROM (SELECT count(DISTINCT seed) AS k FROM probes GROUP BY n, eta)
        """).fetchone()
        return row[0] or 0

    def aggregate_rows(self):
        """(n, eta, step, mean, stderr) sorted by key; stderr is NULL for a single seed."""
        return self.conn.execute("""
            SELECT n, eta, step,
                   avg(rmsve_tvr) AS mean,
                   stddev_samp(rmsve_tvr) / sqrt(count(*)) AS stderr
            FROM probes
            GROUP BY n, eta, step
            ORDER BY n, eta, step
        """).fetchall()

    def export_raw(self, path):
        self.conn.execute(f"""
            COPY (SELECT {", ".join(RAW_COLUMNS)} FROM probes ORDER BY n, eta, seed, step)
            TO {_literal(path)} (HEADER, DELIMITER ',')
        """)

    def export_aggregate(self, path, with_stderr=True):
        stderr = ", stddev_samp(rmsve_tvr) / sqrt(count(*)) AS stderr" if with_stderr else ""
        self.conn.execute(f"""
            COPY (
                SELECT n, eta, step, avg(rmsve_tvr) AS mean{stderr}
                FROM probes GROUP BY n, eta, step ORDER BY n, eta, step
            )
            TO {_literal(path)} (HEADER, DELIMITER ',')
        """)

    def read_aggregate(self, path):
        """Rows of an aggregate CSV as (n, eta, step, mean, stderr-or-None)."""
        path = Path(path)
        if not path.exists():
            raise InputError(f"aggregate CSV {path} does not exist")
        try:
            relation = self.conn.execute(
                f"SELECT * FROM read_csv({_literal(path)}, header = true)"
            )
            names = [column[0] for column in relation.description]
            rows = relation.fetchall()
        except duckdb.Error as e:
            raise InputError(f"cannot read aggregate CSV {path}: {e}") from e
        missing = {"n", "eta", "step", "mean"} - set(names)
        if missing:
            raise InputError(f"aggregate CSV {path} lacks columns {sorted(missing)}")
        index = {name: names.index(name) for name in names}
        has_stderr = "stderr" in index
        return [
            (
                int(row[index["n"]]),
                float(row[index["eta"]]),
                int(row[index["step"]]),
                float(row[index["mean"]]),
                float(row[index["stderr"]]) if has_stderr and row[index["stderr"]] is not None else None,
            )
            for row in rows
        ]
