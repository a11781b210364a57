"""Deterministic micro-executor supplying work-unit execution times.

Plans run bottom-up over real rows. Scans apply the query's selections and
cost one touch per base row; joins cost touches by operator:

  HashJoin       build + probe, |left| + |right|
  MergeJoin      sort charge n*ceil(log2 n) per input plus one scan of both
  NestLoopJoin   |outer| * |inner|

The total touch count stands in for wall-clock time, so threshold
comparisons downstream are exactly reproducible. All three join operators
produce the same result multiset for any valid plan of a query.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .catalog import MicroTable
from .errors import PlangenError
from .plans import Leaf, PlanTree
from .sql import QuerySpec


class ExecutionError(PlangenError):
    pass


@dataclass(frozen=True)
class PlanTiming:
    optimizer_id: str
    plan: PlanTree
    time: int

    def __post_init__(self):
        if self.time <= 0:
            raise ExecutionError(f"non-positive execution time {self.time}")


@dataclass
class Relation:
    """Intermediate result: (table, column) labels plus integer rows."""

    columns: list[tuple[str, str]]
    rows: list[tuple[int, ...]]

    def index_of(self, table: str, column: str) -> int:
        try:
            return self.columns.index((table, column))
        except ValueError:
            raise ExecutionError(f"column {table}.{column} not in intermediate result") from None


def execute_plan(
    plan: PlanTree, query: QuerySpec, data: dict[str, MicroTable]
) -> tuple[Relation, int]:
    """Run the plan; returns the result relation and total row touches."""
    if isinstance(plan, Leaf):
        return _scan(plan.table, query, data)
    left, left_touches = execute_plan(plan.left, query, data)
    right, right_touches = execute_plan(plan.right, query, data)
    joined, touches = _join(plan.op, left, right, query)
    return joined, left_touches + right_touches + touches


def micro_execute(
    plan: PlanTree,
    query: QuerySpec,
    data: dict[str, MicroTable],
    optimizer_id: str = "micro",
) -> PlanTiming:
    _, touches = execute_plan(plan, query, data)
    return PlanTiming(optimizer_id=optimizer_id, plan=plan, time=touches)


def _scan(table_name: str, query: QuerySpec, data: dict[str, MicroTable]) -> tuple[Relation, int]:
    if table_name not in data:
        raise ExecutionError(f"missing table {table_name!r}")
    table = data[table_name]
    predicates = [
        (table.column_index(s.column), s.op, s.literal)
        for s in query.selections
        if s.table == table_name
    ]
    rows = [row for row in table.rows if _passes(row, predicates)]
    columns = [(table_name, c) for c in table.columns]
    return Relation(columns, rows), len(table.rows)


_OPS = {
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
    "=": lambda a, b: a == b,
    "<=": lambda a, b: a <= b,
    ">=": lambda a, b: a >= b,
}


def _passes(row: tuple[int, ...], predicates: list[tuple[int, str, int]]) -> bool:
    return all(_OPS[op](row[idx], literal) for idx, op, literal in predicates)


def _join_keys(left: Relation, right: Relation, query: QuerySpec):
    """Index pairs for every query predicate linking the two sides."""
    left_tables = {t for t, _ in left.columns}
    right_tables = {t for t, _ in right.columns}
    pairs = []
    for j in sorted(query.joins):
        if j.table_a in left_tables and j.table_b in right_tables:
            pairs.append((left.index_of(j.table_a, j.column_a), right.index_of(j.table_b, j.column_b)))
        elif j.table_b in left_tables and j.table_a in right_tables:
            pairs.append((left.index_of(j.table_b, j.column_b), right.index_of(j.table_a, j.column_a)))
    return pairs


def _join(op: str, left: Relation, right: Relation, query: QuerySpec) -> tuple[Relation, int]:
    keys = _join_keys(left, right, query)
    columns = left.columns + right.columns
    if op == "NestLoopJoin":
        rows = [
            lrow + rrow
            for lrow in left.rows
            for rrow in right.rows
            if all(lrow[li] == rrow[ri] for li, ri in keys)
        ]
        touches = len(left.rows) * len(right.rows)
    elif op == "HashJoin":
        table: dict[tuple[int, ...], list[tuple[int, ...]]] = {}
        for lrow in left.rows:
            table.setdefault(tuple(lrow[li] for li, _ in keys), []).append(lrow)
        rows = [
            lrow + rrow
            for rrow in right.rows
            for lrow in table.get(tuple(rrow[ri] for _, ri in keys), ())
        ]
        touches = len(left.rows) + len(right.rows)
    elif op == "MergeJoin":
        lsorted = sorted(left.rows, key=lambda r: tuple(r[li] for li, _ in keys))
        rsorted = sorted(right.rows, key=lambda r: tuple(r[ri] for _, ri in keys))
        rows = _merge(lsorted, rsorted, keys)
        touches = _sort_charge(len(left.rows)) + _sort_charge(len(right.rows))
        touches += len(left.rows) + len(right.rows)
    else:
        raise ExecutionError(f"unknown join operator {op!r}")
    return Relation(columns, rows), touches


def _sort_charge(n: int) -> int:
    if n <= 1:
        return 0
    return n * math.ceil(math.log2(n))


def _merge(lrows, rrows, keys) -> list[tuple[int, ...]]:
    lkey = lambda r: tuple(r[li] for li, _ in keys)
    rkey = lambda r: tuple(r[ri] for _, ri in keys)
    rows = []
    i = j = 0
    while i < len(lrows) and j < len(rrows):
        lk, rk = lkey(lrows[i]), rkey(rrows[j])
        if lk < rk:
            i += 1
        elif lk > rk:
            j += 1
        else:
            i_end = i
            while i_end < len(lrows) and lkey(lrows[i_end]) == lk:
                i_end += 1
            j_end = j
            while j_end < len(rrows) and rkey(rrows[j_end]) == rk:
                j_end += 1
            for lrow in lrows[i:i_end]:
                for rrow in rrows[j:j_end]:
                    rows.append(lrow + rrow)
            i, j = i_end, j_end
    return rows
