"""Cardinality estimation under uniformity/independence assumptions.

Base table cardinality is estimated as the maximum distinct count over the
table's columns (the catalog carries no row counts, and key columns make the
maximum a faithful proxy). Selectivities:

  equi-join a.x = b.y        1 / max(distinct(a.x), distinct(b.y))
  t.c <  v                   (v - min) / (max - min + 1)
  t.c <= v                   (v - min + 1) / (max - min + 1)
  t.c >  v                   (max - v) / (max - min + 1)
  t.c >= v                   (max - v + 1) / (max - min + 1)
  t.c =  v                   1 / distinct(t.c)

all clamped to [0, 1]. The optimizer objective is the sum of estimated
intermediate cardinalities over a plan's join nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from . import plans
from .catalog import Catalog, ColumnStats
from .sql import QuerySpec, Selection


@dataclass(frozen=True)
class CostModel:
    catalog: Catalog

    def base_cardinality(self, table: str) -> float:
        cols = self.catalog.columns(table)
        if not cols:
            return 0.0
        return float(max(s.distinct_count for _, s in cols))

    def selection_selectivity(self, sel: Selection) -> float:
        stats = self.catalog.column_stats(sel.table, sel.column)
        return _range_selectivity(stats, sel.op, sel.literal)

    def leaf_cardinality(self, table: str, query: QuerySpec) -> float:
        card = self.base_cardinality(table)
        for sel in query.selections:
            if sel.table == table:
                card *= self.selection_selectivity(sel)
        return card

    def join_selectivity(self, table_a: str, column_a: str, table_b: str, column_b: str) -> float:
        da = self.catalog.column_stats(table_a, column_a).distinct_count
        db = self.catalog.column_stats(table_b, column_b).distinct_count
        return 1.0 / max(da, db, 1)

    def subset_cardinality(self, tables: Iterable[str], query: QuerySpec) -> float:
        """Estimated result size of joining a connected table subset."""
        subset = set(tables)
        card = 1.0
        for table in sorted(subset):
            card *= self.leaf_cardinality(table, query)
        for join in sorted(query.joins):
            if join.table_a in subset and join.table_b in subset:
                card *= self.join_selectivity(
                    join.table_a, join.column_a, join.table_b, join.column_b
                )
        return card

    def plan_cost(self, plan: plans.PlanTree, query: QuerySpec) -> float:
        """Sum of estimated intermediate cardinalities over the join nodes."""
        if isinstance(plan, plans.Leaf):
            return 0.0
        total = 0.0
        for node in _join_nodes(plan):
            total += self.subset_cardinality(plans.leaves(node), query)
        return total


def _join_nodes(plan: plans.PlanTree):
    if isinstance(plan, plans.Join):
        yield from _join_nodes(plan.left)
        yield from _join_nodes(plan.right)
        yield plan


def _range_selectivity(stats: ColumnStats, op: str, literal: int) -> float:
    width = stats.max_value - stats.min_value + 1
    if width <= 0:
        return 0.0
    if op == "<":
        fraction = (literal - stats.min_value) / width
    elif op == "<=":
        fraction = (literal - stats.min_value + 1) / width
    elif op == ">":
        fraction = (stats.max_value - literal) / width
    elif op == ">=":
        fraction = (stats.max_value - literal + 1) / width
    elif op == "=":
        fraction = 1.0 / stats.distinct_count if stats.distinct_count else 0.0
    else:
        raise ValueError(f"unsupported comparison {op!r}")
    return min(1.0, max(0.0, fraction))
