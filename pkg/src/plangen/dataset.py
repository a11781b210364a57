"""Instruction-tuning records: prompts, demonstrations, dataset assembly.

A prompt is the fixed instruction paragraph, an optional one-shot planning
demonstration, then an INPUT section carrying the canonical SQL and the
statistics block for the query's tables in FROM-list order. The paired
response renders the best plan observed for the query across the optimizer
plan logs. Demonstrations are drawn from sibling records that share the
query template (same tables and join predicates), never from the query
itself.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .catalog import Catalog, serialize_stats
from .errors import PlangenError
from .plans import bracket_to_tree, render_response
from .sql import QuerySpec, QueryTemplate, parse_sql, render_sql, template_of

INSTRUCTION_TEXT = (
    "You are a SQL query optimizer. You will be given a multi-table SQL query "
    "<SQL> and the statistics of the tables involved in the query <Statistics>. "
    "The statistics include the minimum value, maximum value, and the count of "
    "distinct values for each column of each table in the query, in the format "
    "of [min, max, distinct count]. Your task is to generate the optimal "
    "execution plan for the given SQL query. You should represent the execution "
    "plan using a bracket sequence, where HashJoin, NestLoopJoin, or MergeJoin "
    "are used to join the tables in the SQL query. Let's think step by step and "
    "show your reasoning before showing the final result."
)

DEMO_MODES = ("strict", "fallback", "none")


class DatasetError(PlangenError):
    pass


class NoDemonstrationAvailable(DatasetError):
    pass


@dataclass(frozen=True)
class Demonstration:
    sql: str
    statistics: str
    response: str


@dataclass(frozen=True)
class InstructionRecord:
    query_id: str
    prompt: str
    response: str
    template: QueryTemplate


def build_prompt(query: QuerySpec, catalog: Catalog, demo: Demonstration | None = None) -> str:
    """Assemble the full prompt text for one query."""
    parts = ["INSTRUCTION: " + INSTRUCTION_TEXT]
    if demo is not None:
        parts.append(
            "<Planning Demonstration>: "
            f"<SQL>: {demo.sql}, <Statistics>: {demo.statistics}, <Response>: {demo.response}"
        )
    parts.append("INPUT:")
    parts.append("<SQL>: " + render_sql(query))
    parts.append("<Statistics>:\n" + serialize_stats(catalog, list(query.from_order)))
    return "\n".join(parts)


def extract_input_sql(prompt: str) -> str:
    """Pull the canonical SQL back out of a prompt's INPUT section."""
    marker = "\nINPUT:\n"
    at = prompt.rfind(marker)
    if at < 0:
        raise DatasetError("prompt has no INPUT section")
    for line in prompt[at + len(marker):].splitlines():
        if line.startswith("<SQL>: "):
            return line[len("<SQL>: "):]
    raise DatasetError("prompt INPUT section has no <SQL> line")


def extract_input_statistics(prompt: str) -> str:
    marker = "\n<Statistics>:\n"
    at = prompt.rfind(marker)
    if at < 0:
        raise DatasetError("prompt has no <Statistics> block")
    return prompt[at + len(marker):]


def select_demonstration(
    query: QuerySpec,
    pool: Sequence[InstructionRecord],
    mode: str,
    rng: random.Random | None = None,
    exclude_query_id: str | None = None,
) -> InstructionRecord | None:
    """Pick a demonstration record for the query, or None in ``none`` mode.

    strict: seeded-uniform choice among records with the exact template,
    excluding the query's own record; raises when none exists.
    fallback: strict first, then the record maximizing table-set Jaccard
    similarity (ties by join-set Jaccard, then query_id).
    """
    if mode not in DEMO_MODES:
        raise DatasetError(f"unknown demonstration mode {mode!r}")
    if mode == "none":
        return None

    template = template_of(query)
    candidates = [
        r
        for r in pool
        if r.query_id != exclude_query_id and r.template == template
    ]
    if candidates:
        candidates.sort(key=lambda r: r.query_id)
        if rng is None:
            return candidates[0]
        return candidates[rng.randrange(len(candidates))]
    if mode == "strict":
        raise NoDemonstrationAvailable(
            f"no record shares the template of query {exclude_query_id or render_sql(query)}"
        )

    scored = []
    for r in pool:
        if r.query_id == exclude_query_id:
            continue
        table_sim = _jaccard(template.tables, r.template.tables)
        join_sim = _jaccard(template.joins, r.template.joins)
        scored.append((-table_sim, -join_sim, r.query_id, r))
    if not scored:
        raise NoDemonstrationAvailable("demonstration pool is empty")
    scored.sort(key=lambda item: item[:3])
    return scored[0][3]


def _jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def demonstration_from_record(record: InstructionRecord) -> Demonstration:
    return Demonstration(
        sql=extract_input_sql(record.prompt),
        statistics=extract_input_statistics(record.prompt),
        response=record.response,
    )


def best_plan(timings: Iterable[tuple[str, int]]) -> str:
    """Pick the minimum-time bracket; ties break lexicographically."""
    best_entry = None
    for bracket, time in timings:
        entry = (time, bracket)
        if best_entry is None or entry < best_entry:
            best_entry = entry
    if best_entry is None:
        raise DatasetError("no plan log records")
    return best_entry[1]


def build_sft_dataset(
    workload: Sequence[QuerySpec],
    plan_logs: dict[str, list[tuple[str, int]]],
    catalog: Catalog,
    demo_mode: str = "strict",
    seed: int = 0,
    query_ids: Sequence[str] | None = None,
) -> list[InstructionRecord]:
    """One record per query; responses render each query's best logged plan.

    ``plan_logs`` maps query_id to (bracket, time_units) pairs. Demonstration
    choices are seeded per query so assembly order never matters.
    """
    if query_ids is None:
        query_ids = [f"q{i + 1:04d}" for i in range(len(workload))]

    entries = []
    for query_id, query in zip(query_ids, workload):
        if query_id not in plan_logs or not plan_logs[query_id]:
            raise DatasetError(f"missing plan log for query {query_id}")
        bracket = best_plan(plan_logs[query_id])
        response = render_response(bracket_to_tree(bracket))
        entries.append((query_id, query, response))

    # Phase one builds every response; phase two can then draw demonstrations
    # from sibling records.
    pool = [
        InstructionRecord(
            query_id=query_id,
            prompt=build_prompt(query, catalog),
            response=response,
            template=template_of(query),
        )
        for query_id, query, response in entries
    ]

    records = []
    for (query_id, query, response), bare in zip(entries, pool):
        # String seeding hashes with sha512, stable across processes.
        rng = random.Random(f"{seed}:{query_id}")
        demo_record = select_demonstration(
            query, pool, demo_mode, rng=rng, exclude_query_id=query_id
        )
        demo = demonstration_from_record(demo_record) if demo_record else None
        records.append(
            InstructionRecord(
                query_id=query_id,
                prompt=build_prompt(query, catalog, demo),
                response=response,
                template=bare.template,
            )
        )
    records.sort(key=lambda r: r.query_id)
    return records


def write_dataset(records: Sequence[InstructionRecord], path: str | Path) -> None:
    lines = [
        json.dumps(
            {"query_id": r.query_id, "prompt": r.prompt, "response": r.response},
            sort_keys=True,
            ensure_ascii=True,
        )
        for r in records
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_dataset(path: str | Path) -> list[InstructionRecord]:
    """Read a dataset file, recovering templates from the prompts."""
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        raw = json.loads(line)
        template = template_of(parse_sql(extract_input_sql(raw["prompt"])))
        records.append(
            InstructionRecord(
                query_id=raw["query_id"],
                prompt=raw["prompt"],
                response=raw["response"],
                template=template,
            )
        )
    return records
