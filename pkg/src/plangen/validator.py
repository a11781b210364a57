"""Validation of generated responses against their queries.

Failures are classified into three non-exclusive classes:

  E1  table number mismatch   leaf count differs from the query's table count
  E2  table mismatch          leaf set differs from the query's table set
  E3  operator mismatch       structural bracket errors (unbalanced brackets,
                              unknown operators, missing/redundant operands)
                              and semantically disconnected joins (cross
                              products)

When the final answer does not parse, a best-effort identifier scan still
recovers the mentioned tables so count/set mismatches surface alongside E3.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import plans
from .plans import PlanTree
from .sql import QuerySpec, parse_sql

E1_TABLE_NUMBER_MISMATCH = "E1"
E2_TABLE_MISMATCH = "E2"
E3_OPERATOR_MISMATCH = "E3"

_STRUCTURAL_ERRORS = (
    plans.UnbalancedBracket,
    plans.UnknownOperator,
    plans.MissingOperand,
    plans.RedundantOperand,
)

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


@dataclass
class ValidationReport:
    valid: bool
    errors: set[str] = field(default_factory=set)
    detail: list[str] = field(default_factory=list)
    plan: PlanTree | None = None


def _mentioned_tables(text: str) -> list[str]:
    """Identifier scan over unparseable content; skips operator-like words.

    A word immediately followed by '(' is treated as an operator application,
    everything else as a table mention.
    """
    mentions = []
    for match in _IDENT_RE.finditer(text):
        rest = text[match.end():].lstrip()
        if rest.startswith("("):
            continue
        mentions.append(match.group(0))
    return mentions


def validate(response: str, query: QuerySpec) -> ValidationReport:
    """Classify one response against its query."""
    report = ValidationReport(valid=True)
    plan: PlanTree | None = None
    leaf_names: list[str] | None = None

    try:
        plan = plans.parse_response(response)
        leaf_names = plans.leaves(plan)
        report.plan = plan
    except _STRUCTURAL_ERRORS as exc:
        report.errors.add(E3_OPERATOR_MISMATCH)
        report.detail.append(f"{exc.code}: {exc}")
    except (plans.MissingFinalAnswer, plans.DuplicateTable) as exc:
        report.detail.append(str(exc))

    if leaf_names is None:
        marker_at = response.lower().rfind(plans.FINAL_ANSWER_MARKER)
        payload = response[marker_at + len(plans.FINAL_ANSWER_MARKER):] if marker_at >= 0 else response
        leaf_names = _mentioned_tables(payload)

    if len(leaf_names) != len(query.tables):
        report.errors.add(E1_TABLE_NUMBER_MISMATCH)
        report.detail.append(
            f"expected {len(query.tables)} tables, found {len(leaf_names)}"
        )
    if set(leaf_names) != set(query.tables):
        report.errors.add(E2_TABLE_MISMATCH)
        missing = sorted(query.tables - set(leaf_names))
        extra = sorted(set(leaf_names) - query.tables)
        if missing:
            report.detail.append(f"missing tables: {', '.join(missing)}")
        if extra:
            report.detail.append(f"unexpected tables: {', '.join(extra)}")

    if plan is not None and not report.errors:
        cross = _find_cross_product(plan, query)
        if cross is not None:
            report.errors.add(E3_OPERATOR_MISMATCH)
            report.detail.append(f"cross product: {cross}")

    report.valid = not report.errors
    return report


def _find_cross_product(plan: PlanTree, query: QuerySpec) -> str | None:
    """Return a description of the first join node not backed by a predicate."""
    if isinstance(plan, plans.Leaf):
        return None
    left_tables = set(plans.leaves(plan.left))
    right_tables = set(plans.leaves(plan.right))
    linked = any(
        (j.table_a in left_tables and j.table_b in right_tables)
        or (j.table_a in right_tables and j.table_b in left_tables)
        for j in query.joins
    )
    if not linked:
        return f"{plan.op} over {{{', '.join(sorted(left_tables))}}} x {{{', '.join(sorted(right_tables))}}}"
    return _find_cross_product(plan.left, query) or _find_cross_product(plan.right, query)


@dataclass
class CorpusSummary:
    e1: int = 0
    e2: int = 0
    e3: int = 0
    total_invalid: int = 0
    total: int = 0

    def line(self) -> str:
        return f"E1={self.e1} E2={self.e2} E3={self.e3} total={self.total_invalid}"


def classify_corpus(responses: Iterable[tuple[str, QuerySpec]]) -> CorpusSummary:
    """Aggregate validate() over a corpus; multi-error responses count once per class."""
    summary = CorpusSummary()
    for text, query in responses:
        summary.total += 1
        report = validate(text, query)
        if E1_TABLE_NUMBER_MISMATCH in report.errors:
            summary.e1 += 1
        if E2_TABLE_MISMATCH in report.errors:
            summary.e2 += 1
        if E3_OPERATOR_MISMATCH in report.errors:
            summary.e3 += 1
        if not report.valid:
            summary.total_invalid += 1
    return summary


def classify_corpus_file(path: str | Path) -> CorpusSummary:
    """Classify a JSON Lines file of {query_sql, response} records."""
    pairs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        pairs.append((record["response"], parse_sql(record["query_sql"])))
    return classify_corpus(pairs)


def classify_paired_files(queries: Sequence[QuerySpec], responses: Sequence[str]) -> CorpusSummary:
    if len(queries) != len(responses):
        raise ValueError(f"{len(queries)} queries but {len(responses)} responses")
    return classify_corpus(zip(responses, queries))
