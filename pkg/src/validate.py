"""
Artifact contract + quality validation runner.

Run from repo root:
    python -m src.validate out/

Checks every CSV artifact in the directory that has a contract in
contracts/ (ap.csv, pr.csv, counts.csv, history.csv, k_sweep.csv), then runs
cross-column quality checks. Exits non-zero if any check fails.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Sequence

import duckdb

CONTRACTS_DIR = Path(__file__).resolve().parent.parent / "contracts"

INTEGER_TYPES = {"TINYINT", "SMALLINT", "INTEGER", "BIGINT", "HUGEINT", "UTINYINT", "USMALLINT",
                 "UINTEGER", "UBIGINT"}
# A CSV column of whole numbers ("1", "0") is inferred as an integer type.
NUMERIC_TYPES = INTEGER_TYPES | {"FLOAT", "DOUBLE", "DECIMAL"}


# ---------------------------------------------------------------------------
# Contract validation
# ---------------------------------------------------------------------------

def _load_contracts(contracts_dir: Path = CONTRACTS_DIR) -> list[dict]:
    contracts = []
    for p in sorted(contracts_dir.glob("*.json")):
        try:
            contracts.append(json.loads(p.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise RuntimeError(f"Invalid JSON in contract file: {p}") from exc
    return contracts


def _source(path: Path) -> str:
    return f"read_csv_auto('{path.as_posix()}', header=true)"


def _type_matches(expected: str, actual: str) -> bool:
    base = actual.split("(", 1)[0]
    if expected == "VARCHAR":
        return True
    if expected in INTEGER_TYPES:
        return base in INTEGER_TYPES
    if expected in NUMERIC_TYPES:
        return base in NUMERIC_TYPES
    return actual.startswith(expected)


def _check_schema(con: duckdb.DuckDBPyConnection, contract: dict, path: Path) -> list[str]:
    """Return list of failure messages for one contract."""
    failures: list[str] = []
    table = contract["table"]
    src = _source(path)

    actual: dict[str, str] = {
        r[0]: r[1] for r in con.execute(f"DESCRIBE SELECT * FROM {src}").fetchall()
    }
    rows: int = con.execute(f"SELECT COUNT(*) FROM {src}").fetchone()[0]

    for col_spec in contract["columns"]:
        name = col_spec["name"]
        expected = col_spec["type"].upper()

        if name not in actual:
            failures.append(f"[{table}] missing column: {name}")
            continue
        # header-only files carry no type information
        if rows == 0:
            continue

        actual_type = actual[name].upper()
        if not _type_matches(expected, actual_type):
            failures.append(f"[{table}] column '{name}': expected {expected}, got {actual_type}")

        if col_spec.get("not_null", False):
            null_count: int = con.execute(
                f'SELECT COUNT(*) FROM {src} WHERE "{name}" IS NULL'
            ).fetchone()[0]
            if null_count > 0:
                failures.append(
                    f"[{table}] column '{name}': {null_count:,} unexpected NULL rows "
                    f"(contract: not_null=true)"
                )

    extra = sorted(set(actual) - {c["name"] for c in contract["columns"]})
    if extra:
        failures.append(f"[{table}] unexpected columns: {', '.join(extra)}")
    return failures


# ---------------------------------------------------------------------------
# Quality checks
# ---------------------------------------------------------------------------

# table -> (label, SQL returning a count of offending rows over {src})
QUALITY_CHECKS: dict[str, list[tuple[str, str]]] = {
    "ap_table": [
        ("ap outside [0, 1]", "SELECT COUNT(*) FROM {src} WHERE ap < 0 OR ap > 1"),
        ("delta <= 0", "SELECT COUNT(*) FROM {src} WHERE delta <= 0"),
        ("duplicate delta", "SELECT COUNT(*) - COUNT(DISTINCT delta) FROM {src}"),
    ],
    "pr_curve": [
        (
            "recall/precision outside [0, 1]",
            "SELECT COUNT(*) FROM {src} WHERE recall < 0 OR recall > 1 OR \"precision\" < 0 OR \"precision\" > 1",
        ),
        (
            "recall decreases along a curve",
            "SELECT COUNT(*) FROM ("
            "  SELECT recall, LAG(recall) OVER (PARTITION BY delta ORDER BY rn) AS prev"
            "  FROM (SELECT *, row_number() OVER () AS rn FROM {src})"
            ") WHERE recall < prev",
        ),
    ],
    "scene_counts": [
        ("negative count", "SELECT COUNT(*) FROM {src} WHERE gt_count < 0 OR pred_count < 0"),
        ("duplicate scene_id", "SELECT COUNT(*) - COUNT(DISTINCT scene_id) FROM {src}"),
    ],
    "history": [
        ("negative loss term", "SELECT COUNT(*) FROM {src} WHERE l_cls < 0 OR l_loc < 0"),
        (
            "negative step or count",
            "SELECT COUNT(*) FROM {src} WHERE step < 0 OR \"count\" < 0 OR positives < 0 OR distinct_gt < 0",
        ),
        (
            "duplicate (scene_id, strategy, step)",
            "SELECT COUNT(*) - (SELECT COUNT(*) FROM (SELECT DISTINCT scene_id, strategy, step FROM {src})) FROM {src}",
        ),
    ],
    "k_sweep": [
        ("nap outside [0, 1]", "SELECT COUNT(*) FROM {src} WHERE nap < 0 OR nap > 1"),
        ("mae < 0 or mse < mae", "SELECT COUNT(*) FROM {src} WHERE mae < 0 OR mse < mae"),
        ("points_per_cell or stride < 1", "SELECT COUNT(*) FROM {src} WHERE points_per_cell < 1 OR stride < 1"),
    ],
}


def _quality_checks(con: duckdb.DuckDBPyConnection, table: str, path: Path) -> list[str]:
    failures: list[str] = []
    src = _source(path)
    if con.execute(f"SELECT COUNT(*) FROM {src}").fetchone()[0] == 0:
        return failures
    for label, sql in QUALITY_CHECKS.get(table, []):
        result = con.execute(sql.format(src=src)).fetchone()[0]
        if result != 0:
            failures.append(f"[{table}] {label}: got {result:,}, expected 0")
    return failures


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def validate_dir(artifact_dir: Path | str, contracts_dir: Path = CONTRACTS_DIR) -> list[str]:
    """Validate every contracted artifact present in artifact_dir; return failures."""
    artifact_dir = Path(artifact_dir)
    contracts = _load_contracts(contracts_dir)
    if not contracts:
        return [f"no contract files found in {contracts_dir}"]

    con = duckdb.connect(database=":memory:")
    all_failures: list[str] = []
    checked = 0
    for contract in contracts:
        path = artifact_dir / contract["file"]
        if not path.exists():
            continue
        checked += 1
        failures = _check_schema(con, contract, path)
        if not failures:
            failures = _quality_checks(con, contract["table"], path)
        if failures:
            for f in failures:
                print(f"  FAIL  {f}", flush=True)
            all_failures.extend(failures)
        else:
            print(f"  OK    [{contract['table']}] {path}", flush=True)

    if checked == 0:
        all_failures.append(f"no contracted artifacts found in {artifact_dir}")
    return all_failures


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    artifact_dir = Path(argv[0]) if argv else Path("out")

    print(f"Validating artifacts in {artifact_dir} ...", flush=True)
    failures = validate_dir(artifact_dir)
    print()
    if failures:
        print(f"RESULT: {len(failures)} failure(s).", file=sys.stderr)
        return 1
    print("RESULT: all checks passed.")
    return 0


if __name__ == "__main__":
    try:
        sys.exit(main())
    except Exception as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        sys.exit(1)
