"""Schemas, per-column statistics and tiny in-memory tables.

A Catalog maps table names to ordered (column, ColumnStats) lists and is the
source of every statistics string rendered into prompts. MicroTable holds the
actual integer rows the micro-executor runs over. Column values are integers
only; empty columns use the fixed [0,0,0] convention so serialization stays
total.

File formats:
  catalog file    one table per line: ``name|col:min:max:distinct|...``
  micro table     header line of comma-separated column names, then one
                  comma-separated integer row per line
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import PlangenError


class CatalogError(PlangenError):
    """Malformed catalog or table file, or a statistics invariant violation."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class ColumnStats:
    """[min, max, distinct count] for one integer column."""

    min_value: int
    max_value: int
    distinct_count: int

    def __post_init__(self):
        if self.distinct_count < 0:
            raise CatalogError(f"negative distinct count {self.distinct_count}")
        if self.distinct_count > 0 and self.min_value > self.max_value:
            raise CatalogError(
                f"min {self.min_value} exceeds max {self.max_value} with distinct > 0"
            )
        if self.distinct_count > self.max_value - self.min_value + 1:
            raise CatalogError(
                f"distinct count {self.distinct_count} exceeds value range "
                f"[{self.min_value},{self.max_value}]"
            )


EMPTY_COLUMN_STATS = ColumnStats(0, 0, 0)


@dataclass(frozen=True)
class Catalog:
    """Immutable table -> ordered [(column, stats)] map.

    Column order is significant: the serialized statistics string is
    order-sensitive and must survive load/serialize round trips.
    """

    tables: dict[str, tuple[tuple[str, ColumnStats], ...]]

    def table_names(self) -> list[str]:
        return list(self.tables)

    def columns(self, table: str) -> tuple[tuple[str, ColumnStats], ...]:
        try:
            return self.tables[table]
        except KeyError:
            raise CatalogError(f"unknown table {table!r}") from None

    def column_stats(self, table: str, column: str) -> ColumnStats:
        for name, stats in self.columns(table):
            if name == column:
                return stats
        raise CatalogError(f"unknown column {table}.{column}")

    def has_table(self, table: str) -> bool:
        return table in self.tables


@dataclass(frozen=True)
class MicroTable:
    """A named relation with ordered columns and integer rows."""

    name: str
    columns: tuple[str, ...]
    rows: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(set(self.columns)) != len(self.columns):
            raise CatalogError(f"duplicate column name in table {self.name!r}")
        for i, row in enumerate(self.rows):
            if len(row) != len(self.columns):
                raise CatalogError(
                    f"row {i} of table {self.name!r} has {len(row)} values, "
                    f"expected {len(self.columns)}"
                )

    def column_index(self, column: str) -> int:
        try:
            return self.columns.index(column)
        except ValueError:
            raise CatalogError(f"unknown column {self.name}.{column}") from None


def load_catalog(path: str | Path) -> Catalog:
    """Parse a pipe-delimited catalog file into a validated Catalog."""
    tables: dict[str, tuple[tuple[str, ColumnStats], ...]] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("|")
        name = fields[0].strip()
        if not name:
            raise CatalogError("missing table name", line=lineno, column=1)
        if name in tables:
            raise CatalogError(f"duplicate table {name!r}", line=lineno)
        cols: list[tuple[str, ColumnStats]] = []
        seen: set[str] = set()
        col_offset = len(fields[0]) + 1
        for field in fields[1:]:
            parts = field.split(":")
            if len(parts) != 4:
                raise CatalogError(
                    f"expected col:min:max:distinct, got {field!r}",
                    line=lineno,
                    column=col_offset + 1,
                )
            cname = parts[0].strip()
            if not cname:
                raise CatalogError("missing column name", line=lineno, column=col_offset + 1)
            if cname in seen:
                raise CatalogError(f"duplicate column {name}.{cname}", line=lineno)
            seen.add(cname)
            try:
                lo, hi, distinct = (int(p) for p in parts[1:])
            except ValueError:
                raise CatalogError(
                    f"non-integer statistics in {field!r}", line=lineno, column=col_offset + 1
                ) from None
            try:
                stats = ColumnStats(lo, hi, distinct)
            except CatalogError as exc:
                raise CatalogError(
                    f"invalid statistics for column {name}.{cname}: {exc}", line=lineno
                ) from None
            cols.append((cname, stats))
            col_offset += len(field) + 1
        tables[name] = tuple(cols)
    return Catalog(tables)


def save_catalog(catalog: Catalog) -> str:
    """Render a Catalog back to the pipe-delimited file format."""
    lines = []
    for name, cols in catalog.tables.items():
        fields = [name] + [
            f"{cname}:{s.min_value}:{s.max_value}:{s.distinct_count}" for cname, s in cols
        ]
        lines.append("|".join(fields))
    return "\n".join(lines) + ("\n" if lines else "")


def load_table(path: str | Path) -> MicroTable:
    """Read a micro table file; the table name is the file stem."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise CatalogError(f"table file {path.name} is empty", line=1)
    columns = tuple(c.strip() for c in lines[0].split(","))
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        try:
            rows.append(tuple(int(c) for c in cells))
        except ValueError:
            raise CatalogError(f"non-integer cell in {path.name}", line=lineno) from None
    return MicroTable(path.stem, columns, tuple(rows))


def load_tables(directory: str | Path) -> dict[str, MicroTable]:
    """Load every ``*.tbl`` file in a directory, keyed by table name."""
    tables = {}
    for path in sorted(Path(directory).glob("*.tbl")):
        table = load_table(path)
        tables[table.name] = table
    return tables


def save_table(table: MicroTable) -> str:
    lines = [",".join(table.columns)]
    lines.extend(",".join(str(v) for v in row) for row in table.rows)
    return "\n".join(lines) + "\n"


def derive_stats(table: MicroTable) -> list[tuple[str, ColumnStats]]:
    """Exact min/max/distinct per column; empty columns yield [0,0,0]."""
    out = []
    for idx, cname in enumerate(table.columns):
        values = [row[idx] for row in table.rows]
        if not values:
            out.append((cname, EMPTY_COLUMN_STATS))
        else:
            out.append((cname, ColumnStats(min(values), max(values), len(set(values)))))
    return out


def catalog_from_tables(tables: Iterable[MicroTable]) -> Catalog:
    return Catalog({t.name: tuple(derive_stats(t)) for t in tables})


def serialize_stats(catalog: Catalog, tables: Sequence[str]) -> str:
    """Render the prompt statistics block for the named tables, in order.

    Grammar: table blocks joined by ",\\n"; each block is
    ``name (col: [min,max,distinct], col: ...)``; the whole string ends with a
    period. An empty table list yields the empty string.
    """
    if not tables:
        return ""
    blocks = []
    for name in tables:
        cols = catalog.columns(name)
        rendered = ", ".join(
            f"{cname}: [{s.min_value},{s.max_value},{s.distinct_count}]" for cname, s in cols
        )
        blocks.append(f"{name} ({rendered})")
    return ",\n".join(blocks) + "."
