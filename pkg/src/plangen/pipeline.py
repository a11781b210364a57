"""End-to-end pipeline: workload, plan logs, datasets, training, report.

Stages run in order, each guarded by a content hash over its inputs and
parameters, so re-running an unchanged configuration touches nothing and
reports every stage as cached. All artifacts are deterministic functions of
the input files and the configured seeds.

Stage layout inside the run directory:

    workload.sql              generated queries, one canonical SQL per line
    train.sql / test.sql      the split, same format
    plans_train.jsonl         {query_id, optimizer, bracket, time_units}
    plans_test.jsonl          same, for the held-out queries
    sft.jsonl                 {query_id, prompt, response}
    dpo.jsonl                 {query_id, prompt, chosen, rejected, ...}
    qit.ckpt / qdpo.ckpt      model checkpoints (+ .csv loss traces)
    responses_qit.jsonl       {query_id, response} on the test split
    responses_qdpo.jsonl      same, stage-two model
    report.json               dataset sizes, validity, timing quantiles
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

from . import validator
from .catalog import Catalog, load_catalog, load_tables
from .costs import CostModel
from .dataset import (
    build_prompt,
    build_sft_dataset,
    demonstration_from_record,
    extract_input_sql,
    load_dataset,
    select_demonstration,
    write_dataset,
)
from .errors import PlangenError
from .executor import micro_execute
from .model import load_model, save_model
from .optimizers import dp_optimize, greedy_optimize, random_optimize
from .plans import tree_to_bracket
from .preferences import (
    PreferenceConfig,
    generate_preferences,
    load_preference_file,
    sort_triples,
    write_preference_file,
)
from .sql import parse_sql, render_sql
from .training import (
    TrainConfig,
    fit_qit_from_records,
    train_qdpo,
    write_trace,
)
from .workload import gen_workload, load_join_graph

import random as _random


class PipelineError(PlangenError):
    pass


SPLIT_MODES = ("random", "by-join-count", "by-template")


@dataclass(frozen=True)
class PipelineConfig:
    catalog: str = ""
    tables: str = ""
    join_graph: str = ""
    out_dir: str = ""
    workload_count: int = 60
    workload_joins: str = "1,2,3"
    workload_seed: int = 1
    split_ratio: float = 0.8
    split_mode: str = "random"
    split_seed: int = 2
    demo_mode: str = "fallback"
    demo_seed: int = 3
    r0: float = 0.95
    beta: float = 0.1
    batch_size: int = 8
    qit_lr: float = 2e-4
    qit_steps: int = 600
    qit_seed: int = 4
    qdpo_lr: float = 5e-6
    qdpo_steps: int = 200
    qdpo_seed: int = 5
    n_contexts: int = 4096
    max_len: int = 256
    random_opt_seed: int = 6

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise PipelineError(f"split ratio must be in (0, 1), got {self.split_ratio}")
        if self.split_mode not in SPLIT_MODES:
            raise PipelineError(f"unknown split mode {self.split_mode!r}")

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        values = {}
        known = {f.name: f.type for f in fields(cls)}
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise PipelineError(f"config line {lineno} is not key = value: {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise PipelineError(f"unknown config key {key!r} on line {lineno}")
            values[key] = value
        return cls().with_overrides(**values)

    def with_overrides(self, **overrides) -> "PipelineConfig":
        coerced = {}
        for f in fields(self):
            if f.name not in overrides or overrides[f.name] is None:
                continue
            value = overrides[f.name]
            if isinstance(value, str) and f.type in ("int", "float"):
                value = int(value) if f.type == "int" else float(value)
            coerced[f.name] = value
        leftovers = set(overrides) - {f.name for f in fields(self)}
        if leftovers:
            raise PipelineError(f"unknown config keys: {sorted(leftovers)}")
        return replace(self, **coerced)


# --- small file helpers ---


def read_workload(path: str | Path) -> list:
    queries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            queries.append(parse_sql(line))
    return queries


def query_ids(queries) -> list[str]:
    return [f"q{i + 1:04d}" for i in range(len(queries))]


def write_workload(queries, path: str | Path) -> None:
    lines = [render_sql(q) for q in queries]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def _write_jsonl(records: list[dict], path: str | Path) -> None:
    lines = [json.dumps(r, sort_keys=True, ensure_ascii=True) for r in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def _read_jsonl(path: str | Path) -> list[dict]:
    return [
        json.loads(line)
        for line in Path(path).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]


# --- stage implementations (shared by run_pipeline and the CLI) ---


def stage_workload(catalog: Catalog, join_graph_path, joins_spec: str, count: int, seed: int):
    """Mixed workload: the count splits evenly across the join counts."""
    graph = load_join_graph(join_graph_path)
    join_counts = [int(part) for part in str(joins_spec).split(",") if part.strip() != ""]
    if not join_counts:
        raise PipelineError(f"no join counts in {joins_spec!r}")
    queries = []
    base = count // len(join_counts)
    leftover = count - base * len(join_counts)
    for i, n_joins in enumerate(join_counts):
        chunk = base + (1 if i < leftover else 0)
        queries.extend(gen_workload(catalog, graph, n_joins, chunk, seed=seed + n_joins))
    return queries


def split_workload(queries, ratio: float, seed: int, mode: str = "random"):
    """Deterministic train/test split; returns (train, test) query lists."""
    n = len(queries)
    n_train = max(1, min(n - 1, round(n * ratio))) if n > 1 else n
    if mode == "random":
        rng = _random.Random(f"split:{seed}")
        order = list(range(n))
        rng.shuffle(order)
        train_idx = sorted(order[:n_train])
    elif mode == "by-join-count":
        # Hold out the hardest queries: the largest join counts become test.
        order = sorted(range(n), key=lambda i: (len(queries[i].joins), i))
        train_idx = sorted(order[:n_train])
    else:  # by-template
        from .sql import template_of

        keys = sorted({template_of(q).key() for q in queries})
        rng = _random.Random(f"split-templates:{seed}")
        rng.shuffle(keys)
        held = set()
        test_target = n - n_train
        picked = 0
        for key in keys:
            members = [i for i, q in enumerate(queries) if template_of(q).key() == key]
            if picked + len(members) > test_target and picked > 0:
                continue
            held.add(key)
            picked += len(members)
            if picked >= test_target:
                break
        train_idx = sorted(
            i for i, q in enumerate(queries) if template_of(q).key() not in held
        )
    test_idx = sorted(set(range(n)) - set(train_idx))
    return [queries[i] for i in train_idx], [queries[i] for i in test_idx]


OPTIMIZER_NAMES = ("dp", "greedy", "random")


def run_optimizers(queries, catalog: Catalog, tables, random_seed_base: int = 0):
    """Plan and micro-time every query under the three personalities."""
    model = CostModel(catalog)
    records = []
    for index, query in enumerate(queries):
        qid = f"q{index + 1:04d}"
        produced = {
            "dp": dp_optimize(query, model),
            "greedy": greedy_optimize(query, model),
            "random": random_optimize(query, seed=random_seed_base + index),
        }
        for name in OPTIMIZER_NAMES:
            timing = micro_execute(produced[name], query, tables, name)
            records.append(
                {
                    "query_id": qid,
                    "optimizer": name,
                    "bracket": tree_to_bracket(timing.plan),
                    "time_units": timing.time,
                }
            )
    records.sort(key=lambda r: (r["query_id"], r["optimizer"]))
    return records


def plan_log_by_query(records: list[dict]) -> dict[str, list[dict]]:
    grouped: dict[str, list[dict]] = {}
    for record in records:
        grouped.setdefault(record["query_id"], []).append(record)
    return grouped


def build_preferences_from_logs(sft_records, plan_records, r0: float):
    """Preference triples for every query with at least two logged plans."""
    from .executor import PlanTiming
    from .plans import bracket_to_tree

    config = PreferenceConfig(r0)
    grouped = plan_log_by_query(plan_records)
    prompts = {r.query_id: r.prompt for r in sft_records}
    triples = []
    for query_id in sorted(grouped):
        if query_id not in prompts:
            continue
        timings = [
            PlanTiming(r["optimizer"], bracket_to_tree(r["bracket"]), r["time_units"])
            for r in grouped[query_id]
        ]
        triples.extend(
            generate_preferences(timings, prompts[query_id], config, query_id)
        )
    return sort_triples(triples)


def infer_responses(model, queries, catalog: Catalog, pool, demo_mode: str, demo_seed: int, max_len: int):
    """Greedy-decode a response for each query; returns {query_id, response} rows."""
    rows = []
    for index, query in enumerate(queries):
        qid = f"q{index + 1:04d}"
        sql = render_sql(query)
        candidates = [r for r in pool if extract_input_sql(r.prompt) != sql]
        rng = _random.Random(f"{demo_seed}:infer:{qid}")
        demo_record = select_demonstration(query, candidates, demo_mode, rng=rng)
        demo = demonstration_from_record(demo_record) if demo_record else None
        prompt = build_prompt(query, catalog, demo)
        rows.append({"query_id": qid, "response": model.greedy_decode(prompt, max_len)})
    return rows


def nearest_rank(sorted_values, percentile: float):
    """Nearest-rank percentile over an ascending list."""
    if not sorted_values:
        raise PipelineError("no values to take a percentile of")
    rank = max(1, math.ceil(percentile / 100.0 * len(sorted_values)))
    return sorted_values[rank - 1]


def timing_summary(values) -> dict:
    ordered = sorted(values)
    return {
        "count": len(ordered),
        "mean": sum(ordered) / len(ordered),
        "median": nearest_rank(ordered, 50),
        "p75": nearest_rank(ordered, 75),
        "p95": nearest_rank(ordered, 95),
        "p99": nearest_rank(ordered, 99),
    }


def write_report_from_run_dir(run_dir: Path, catalog: Catalog, tables) -> dict:
    """Assemble report.json from a run directory's standard artifact layout."""
    run_dir = Path(run_dir)
    test_queries = read_workload(run_dir / "test.sql")
    responses = {
        "qit": _read_jsonl(run_dir / "responses_qit.jsonl"),
        "qdpo": _read_jsonl(run_dir / "responses_qdpo.jsonl"),
    }
    report = build_report(
        test_queries, _read_jsonl(run_dir / "plans_test.jsonl"), responses, catalog, tables
    )
    report["datasets"] = {
        "workload": len(read_workload(run_dir / "workload.sql")),
        "train": len(read_workload(run_dir / "train.sql")),
        "test": len(test_queries),
        "sft_records": len(load_dataset(run_dir / "sft.jsonl")),
        "dpo_triples": len(load_preference_file(run_dir / "dpo.jsonl")),
    }
    (run_dir / "report.json").write_text(
        json.dumps(report, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    return report


def build_report(test_queries, plans_test, model_responses, catalog: Catalog, tables) -> dict:
    """Validity and timing quantiles per plan source over the test split."""
    ids = query_ids(test_queries)
    by_id = dict(zip(ids, test_queries))
    timings: dict[str, list[int]] = {name: [] for name in OPTIMIZER_NAMES}
    for record in plans_test:
        timings[record["optimizer"]].append(record["time_units"])

    validity = {}
    for source, rows in model_responses.items():
        counts = {"E1": 0, "E2": 0, "E3": 0}
        valid = 0
        times = []
        for row in rows:
            query = by_id[row["query_id"]]
            report = validator.validate(row["response"], query)
            if report.valid:
                valid += 1
                times.append(micro_execute(report.plan, query, tables, source).time)
            for code in report.errors:
                counts[code] += 1
        validity[source] = {
            "total": len(rows),
            "valid": valid,
            "rate": valid / len(rows) if rows else 0.0,
            "errors": counts,
        }
        if times:
            timings[source] = times

    return {
        "validity": validity,
        "timings": {
            source: timing_summary(values)
            for source, values in sorted(timings.items())
            if values
        },
    }


# --- orchestration with content-hash caching ---


@dataclass
class RunReport:
    report: dict
    stages: list[tuple[str, str]]

    def cache_hits(self) -> list[str]:
        return [name for name, status in self.stages if status == "cached"]


def _hash_inputs(params: dict, input_paths: list[Path]) -> str:
    digest = hashlib.sha256()
    digest.update(json.dumps(params, sort_keys=True).encode())
    for path in input_paths:
        digest.update(path.name.encode())
        digest.update(hashlib.sha256(path.read_bytes()).digest())
    return digest.hexdigest()


class _StageRunner:
    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.manifest_path = out_dir / "stages.json"
        self.manifest = {}
        if self.manifest_path.exists():
            self.manifest = json.loads(self.manifest_path.read_text(encoding="utf-8"))
        self.statuses: list[tuple[str, str]] = []

    def run(self, name: str, params: dict, inputs: list[Path], outputs: list[Path], action):
        stage_hash = _hash_inputs(params, inputs)
        entry = self.manifest.get(name)
        if entry and entry.get("hash") == stage_hash and all(p.exists() for p in outputs):
            self.statuses.append((name, "cached"))
            return
        try:
            action()
        except PlangenError as exc:
            raise PipelineError(f"stage {name}: {exc}") from exc
        for path in outputs:
            if not path.exists():
                raise PipelineError(f"stage {name} did not produce {path.name}")
        self.manifest[name] = {"hash": stage_hash, "outputs": [p.name for p in outputs]}
        self.manifest_path.write_text(
            json.dumps(self.manifest, sort_keys=True, indent=1), encoding="utf-8"
        )
        self.statuses.append((name, "computed"))


def run_pipeline(config: PipelineConfig) -> RunReport:
    for field_name in ("catalog", "tables", "join_graph", "out_dir"):
        if not getattr(config, field_name):
            raise PipelineError(f"config is missing {field_name}")
    catalog_path = Path(config.catalog)
    tables_dir = Path(config.tables)
    join_graph_path = Path(config.join_graph)
    for path in (catalog_path, tables_dir, join_graph_path):
        if not path.exists():
            raise PipelineError(f"stage inputs: missing path {path}")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    catalog = load_catalog(catalog_path)
    tables = load_tables(tables_dir)
    runner = _StageRunner(out)

    workload_path = out / "workload.sql"
    train_path, test_path = out / "train.sql", out / "test.sql"
    plans_train_path = out / "plans_train.jsonl"
    plans_test_path = out / "plans_test.jsonl"
    sft_path = out / "sft.jsonl"
    dpo_path = out / "dpo.jsonl"
    qit_path, qit_trace_path = out / "qit.ckpt", out / "qit_trace.csv"
    qdpo_path, qdpo_trace_path = out / "qdpo.ckpt", out / "qdpo_trace.csv"
    responses_paths = {"qit": out / "responses_qit.jsonl", "qdpo": out / "responses_qdpo.jsonl"}
    report_path = out / "report.json"

    runner.run(
        "workload",
        {"count": config.workload_count, "joins": config.workload_joins, "seed": config.workload_seed},
        [catalog_path, join_graph_path],
        [workload_path],
        lambda: write_workload(
            stage_workload(
                catalog, join_graph_path, config.workload_joins, config.workload_count, config.workload_seed
            ),
            workload_path,
        ),
    )

    def do_split():
        queries = read_workload(workload_path)
        train, test = split_workload(queries, config.split_ratio, config.split_seed, config.split_mode)
        write_workload(train, train_path)
        write_workload(test, test_path)

    runner.run(
        "split",
        {"ratio": config.split_ratio, "seed": config.split_seed, "mode": config.split_mode},
        [workload_path],
        [train_path, test_path],
        do_split,
    )

    def do_plans(source_path: Path, out_path: Path):
        queries = read_workload(source_path)
        records = run_optimizers(queries, catalog, tables, config.random_opt_seed)
        _write_jsonl(records, out_path)

    runner.run(
        "plans-train",
        {"random_seed": config.random_opt_seed},
        [train_path, catalog_path],
        [plans_train_path],
        lambda: do_plans(train_path, plans_train_path),
    )
    runner.run(
        "plans-test",
        {"random_seed": config.random_opt_seed},
        [test_path, catalog_path],
        [plans_test_path],
        lambda: do_plans(test_path, plans_test_path),
    )

    def do_sft():
        queries = read_workload(train_path)
        logs = {
            qid: [(r["bracket"], r["time_units"]) for r in records]
            for qid, records in plan_log_by_query(_read_jsonl(plans_train_path)).items()
        }
        records = build_sft_dataset(
            queries, logs, catalog, demo_mode=config.demo_mode, seed=config.demo_seed
        )
        write_dataset(records, sft_path)

    runner.run(
        "sft",
        {"demo_mode": config.demo_mode, "seed": config.demo_seed},
        [train_path, plans_train_path, catalog_path],
        [sft_path],
        do_sft,
    )

    def do_dpo():
        triples = build_preferences_from_logs(
            load_dataset(sft_path), _read_jsonl(plans_train_path), config.r0
        )
        write_preference_file(triples, dpo_path)

    runner.run(
        "dpo",
        {"r0": config.r0},
        [sft_path, plans_train_path],
        [dpo_path],
        do_dpo,
    )

    def do_qit():
        records = load_dataset(sft_path)
        pairs = [(r.prompt, r.response) for r in records]
        train_config = TrainConfig(
            learning_rate=config.qit_lr,
            steps=config.qit_steps,
            batch_size=config.batch_size,
            beta=config.beta,
            seed=config.qit_seed,
        )
        model, trace = fit_qit_from_records(pairs, train_config, config.n_contexts)
        save_model(model, qit_path)
        write_trace(trace, qit_trace_path)

    runner.run(
        "train-qit",
        {
            "lr": config.qit_lr,
            "steps": config.qit_steps,
            "batch": config.batch_size,
            "seed": config.qit_seed,
            "contexts": config.n_contexts,
        },
        [sft_path],
        [qit_path, qit_trace_path],
        do_qit,
    )

    def do_qdpo():
        policy = load_model(qit_path)
        triples = [
            (t.prompt, t.chosen, t.rejected) for t in load_preference_file(dpo_path)
        ]
        train_config = TrainConfig(
            learning_rate=config.qdpo_lr,
            steps=config.qdpo_steps,
            batch_size=config.batch_size,
            beta=config.beta,
            seed=config.qdpo_seed,
        )
        model, trace = train_qdpo(policy, triples, train_config)
        save_model(model, qdpo_path)
        write_trace(trace, qdpo_trace_path)

    runner.run(
        "train-qdpo",
        {
            "lr": config.qdpo_lr,
            "steps": config.qdpo_steps,
            "batch": config.batch_size,
            "beta": config.beta,
            "seed": config.qdpo_seed,
        },
        [qit_path, dpo_path],
        [qdpo_path, qdpo_trace_path],
        do_qdpo,
    )

    def do_infer(ckpt: Path, out_path: Path):
        model = load_model(ckpt)
        queries = read_workload(test_path)
        pool = load_dataset(sft_path)
        rows = infer_responses(
            model, queries, catalog, pool, config.demo_mode, config.demo_seed, config.max_len
        )
        _write_jsonl(rows, out_path)

    for source, ckpt in (("qit", qit_path), ("qdpo", qdpo_path)):
        runner.run(
            f"infer-{source}",
            {"max_len": config.max_len, "demo_mode": config.demo_mode, "seed": config.demo_seed},
            [ckpt, test_path, sft_path, catalog_path],
            [responses_paths[source]],
            lambda ckpt=ckpt, source=source: do_infer(ckpt, responses_paths[source]),
        )

    runner.run(
        "report",
        {},
        [test_path, plans_test_path, *responses_paths.values(), catalog_path],
        [report_path],
        lambda: write_report_from_run_dir(out, catalog, tables),
    )

    report = json.loads(report_path.read_text(encoding="utf-8"))
    return RunReport(report=report, stages=runner.statuses)


def format_report(report: dict) -> str:
    """Human-readable table: one row per plan source."""
    lines = []
    datasets = report.get("datasets", {})
    if datasets:
        lines.append(
            "queries: {workload} total, {train} train, {test} test; "
            "sft records: {sft_records}; preference triples: {dpo_triples}".format(**datasets)
        )
    validity = report.get("validity", {})
    for source in sorted(validity):
        v = validity[source]
        errors = v["errors"]
        lines.append(
            f"validity[{source}]: {v['valid']}/{v['total']} valid "
            f"(E1={errors['E1']} E2={errors['E2']} E3={errors['E3']})"
        )
    timings = report.get("timings", {})
    if timings:
        header = f"{'source':<10} {'Mean':>10} {'Median':>10} {'75th':>10} {'95th':>10} {'99th':>10}"
        lines.append(header)
        for source in sorted(timings):
            t = timings[source]
            lines.append(
                f"{source:<10} {t['mean']:>10.1f} {t['median']:>10} {t['p75']:>10} "
                f"{t['p95']:>10} {t['p99']:>10}"
            )
    return "\n".join(lines)
