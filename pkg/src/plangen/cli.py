"""Command-line interface.

Every subcommand is a thin wrapper over the library functions; exit codes
are 0 on success, 1 on a domain error, 2 on a usage error.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from . import pipeline as pl
from .catalog import load_catalog, load_tables
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
from .executor import PlanTiming
from .hints import emit_hints
from .model import load_model, save_model
from .plans import bracket_to_tree
from .preferences import (
    PreferenceConfig,
    extend_dataset,
    load_preference_file,
    sort_triples,
    write_preference_file,
)
from .sql import parse_sql, render_sql
from .training import (
    TrainConfig,
    dpo_grad_check,
    fit_qit_from_records,
    sft_grad_check,
    train_qdpo,
    write_trace,
)
from .validator import classify_corpus, classify_corpus_file

import random as _random


def _domain_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PlangenError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


@click.group()
def cli():
    """Plan-generation toolkit: datasets, training, validation, hints."""


@cli.command("gen-workload")
@click.option("--catalog", "catalog_path", required=True, type=click.Path(exists=True))
@click.option("--join-graph", required=True, type=click.Path(exists=True))
@click.option("--n-joins", default="2", show_default=True, help="Join count, or comma list to mix.")
@click.option("--count", default=50, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path())
@_domain_errors
def gen_workload_cmd(catalog_path, join_graph, n_joins, count, seed, out):
    """Generate a random SPJ workload over a join graph."""
    catalog = load_catalog(catalog_path)
    queries = pl.stage_workload(catalog, join_graph, n_joins, count, seed)
    pl.write_workload(queries, out)
    click.echo(f"wrote {len(queries)} queries to {out}")


@cli.command("split-workload")
@click.option("--workload", required=True, type=click.Path(exists=True))
@click.option("--ratio", default=0.8, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--mode", default="random", show_default=True,
              type=click.Choice(pl.SPLIT_MODES))
@click.option("--out-train", required=True, type=click.Path())
@click.option("--out-test", required=True, type=click.Path())
@_domain_errors
def split_workload_cmd(workload, ratio, seed, mode, out_train, out_test):
    """Split a workload file into train and test parts."""
    queries = pl.read_workload(workload)
    train, test = pl.split_workload(queries, ratio, seed, mode)
    pl.write_workload(train, out_train)
    pl.write_workload(test, out_test)
    click.echo(f"train={len(train)} test={len(test)}")


@cli.command("run-optimizers")
@click.option("--workload", required=True, type=click.Path(exists=True))
@click.option("--catalog", "catalog_path", required=True, type=click.Path(exists=True))
@click.option("--tables", "tables_dir", required=True, type=click.Path(exists=True))
@click.option("--random-seed", default=0, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path())
@_domain_errors
def run_optimizers_cmd(workload, catalog_path, tables_dir, random_seed, out):
    """Plan every query with the three personalities and micro-time the plans."""
    queries = pl.read_workload(workload)
    records = pl.run_optimizers(queries, load_catalog(catalog_path), load_tables(tables_dir), random_seed)
    pl._write_jsonl(records, out)
    click.echo(f"wrote {len(records)} plan records to {out}")


@cli.command("gen-sft")
@click.option("--workload", required=True, type=click.Path(exists=True))
@click.option("--plans", required=True, type=click.Path(exists=True))
@click.option("--catalog", "catalog_path", required=True, type=click.Path(exists=True))
@click.option("--demo-mode", default="strict", show_default=True,
              type=click.Choice(["strict", "fallback", "none"]))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path())
@_domain_errors
def gen_sft_cmd(workload, plans, catalog_path, demo_mode, seed, out):
    """Build the instruction-tuning dataset from a workload and its plan log."""
    queries = pl.read_workload(workload)
    logs = {
        qid: [(r["bracket"], r["time_units"]) for r in records]
        for qid, records in pl.plan_log_by_query(pl._read_jsonl(plans)).items()
    }
    records = build_sft_dataset(queries, logs, load_catalog(catalog_path), demo_mode, seed)
    write_dataset(records, out)
    click.echo(f"wrote {len(records)} records to {out}")


@cli.command("gen-dpo")
@click.option("--plans", required=True, type=click.Path(exists=True))
@click.option("--sft", required=True, type=click.Path(exists=True))
@click.option("--r0", default=0.95, show_default=True, type=float)
@click.option("--out", required=True, type=click.Path())
@_domain_errors
def gen_dpo_cmd(plans, sft, r0, out):
    """Build the preference dataset from plan timings."""
    triples = pl.build_preferences_from_logs(
        load_dataset(sft), pl._read_jsonl(plans), r0
    )
    write_preference_file(triples, out)
    click.echo(f"wrote {len(triples)} triples to {out}")


@cli.command("extend-dpo")
@click.option("--plans-new", required=True, type=click.Path(exists=True),
              help="Plan log of the newly added optimizer.")
@click.option("--plans", required=True, type=click.Path(exists=True),
              help="Plan log of the existing optimizers.")
@click.option("--sft", required=True, type=click.Path(exists=True))
@click.option("--dpo", required=True, type=click.Path(exists=True),
              help="Existing preference dataset to extend.")
@click.option("--r0", default=0.95, show_default=True, type=float)
@click.option("--out", required=True, type=click.Path())
@_domain_errors
def extend_dpo_cmd(plans_new, plans, sft, dpo, r0, out):
    """Extend a preference dataset with one new optimizer's plans."""
    config = PreferenceConfig(r0)
    prompts = {r.query_id: r.prompt for r in load_dataset(sft)}
    old_by_query = pl.plan_log_by_query(pl._read_jsonl(plans))
    new_by_query = pl.plan_log_by_query(pl._read_jsonl(plans_new))
    existing = load_preference_file(dpo)
    existing_by_query: dict[str, list] = {}
    for triple in existing:
        existing_by_query.setdefault(triple.query_id, []).append(triple)

    updated = []
    added_count = 0
    for query_id in sorted(old_by_query):
        if query_id not in prompts:
            continue
        old = [
            PlanTiming(r["optimizer"], bracket_to_tree(r["bracket"]), r["time_units"])
            for r in old_by_query[query_id]
        ]
        new_records = new_by_query.get(query_id, [])
        if not new_records:
            updated.extend(existing_by_query.get(query_id, []))
            continue
        if len(new_records) != 1:
            raise PlangenError(f"expected one new plan for {query_id}, got {len(new_records)}")
        new = PlanTiming(
            new_records[0]["optimizer"],
            bracket_to_tree(new_records[0]["bracket"]),
            new_records[0]["time_units"],
        )
        merged, added = extend_dataset(
            existing_by_query.get(query_id, []), new, old, prompts[query_id], config, query_id
        )
        updated.extend(merged)
        added_count += len(added)
    write_preference_file(sort_triples(updated), out)
    click.echo(f"added {added_count} triples; wrote {len(updated)} to {out}")


@cli.command("train-qit")
@click.option("--sft", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--lr", default=2e-4, show_default=True, type=float)
@click.option("--steps", default=600, show_default=True, type=int)
@click.option("--batch-size", default=8, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--contexts", default=4096, show_default=True, type=int)
@click.option("--trace", type=click.Path(), default=None, help="Loss trace CSV path.")
@_domain_errors
def train_qit_cmd(sft, out, lr, steps, batch_size, seed, contexts, trace):
    """Stage one: instruction tuning on the SFT dataset."""
    pairs = [(r.prompt, r.response) for r in load_dataset(sft)]
    config = TrainConfig(learning_rate=lr, steps=steps, batch_size=batch_size, seed=seed)
    model, rows = fit_qit_from_records(pairs, config, contexts)
    save_model(model, out)
    if trace:
        write_trace(rows, trace)
    final = rows[-1].loss if rows else float("nan")
    click.echo(f"trained {steps} steps; final batch loss {final:.4f}; saved {out}")


@cli.command("train-qdpo")
@click.option("--dpo", required=True, type=click.Path(exists=True))
@click.option("--init", "init_ckpt", required=True, type=click.Path(exists=True),
              help="Stage-one checkpoint to start from (also the frozen reference).")
@click.option("--out", required=True, type=click.Path())
@click.option("--lr", default=5e-6, show_default=True, type=float)
@click.option("--steps", default=200, show_default=True, type=int)
@click.option("--batch-size", default=8, show_default=True, type=int)
@click.option("--beta", default=0.1, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--trace", type=click.Path(), default=None)
@_domain_errors
def train_qdpo_cmd(dpo, init_ckpt, out, lr, steps, batch_size, beta, seed, trace):
    """Stage two: preference optimization against the frozen stage-one model."""
    policy = load_model(init_ckpt)
    triples = [(t.prompt, t.chosen, t.rejected) for t in load_preference_file(dpo)]
    config = TrainConfig(learning_rate=lr, steps=steps, batch_size=batch_size, beta=beta, seed=seed)
    model, rows = train_qdpo(policy, triples, config)
    save_model(model, out)
    if trace:
        write_trace(rows, trace)
    margin = rows[-1].margin if rows else float("nan")
    click.echo(f"trained {steps} steps; final mean margin {margin:.4f}; saved {out}")


@cli.command("infer")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--sql", "sql_file", type=click.Path(exists=True), default=None,
              help="File holding one query.")
@click.option("--workload", type=click.Path(exists=True), default=None,
              help="Batch mode: workload file, one query per line.")
@click.option("--catalog", "catalog_path", required=True, type=click.Path(exists=True))
@click.option("--demo-pool", type=click.Path(exists=True), default=None,
              help="Dataset file to draw demonstrations from.")
@click.option("--demo-mode", default="none", show_default=True,
              type=click.Choice(["strict", "fallback", "none"]))
@click.option("--demo-seed", default=0, show_default=True, type=int)
@click.option("--max-len", default=256, show_default=True, type=int)
@click.option("--out", type=click.Path(), default=None, help="Batch mode output JSONL.")
@_domain_errors
def infer_cmd(model_path, sql_file, workload, catalog_path, demo_pool, demo_mode,
              demo_seed, max_len, out):
    """Decode a response for one query, or for a workload in batch mode."""
    if (sql_file is None) == (workload is None):
        raise click.UsageError("pass exactly one of --sql or --workload")
    model = load_model(model_path)
    catalog = load_catalog(catalog_path)
    pool = load_dataset(demo_pool) if demo_pool else []
    if demo_mode != "none" and not pool:
        raise click.UsageError(f"--demo-mode {demo_mode} needs --demo-pool")

    if sql_file:
        query = parse_sql(Path(sql_file).read_text(encoding="utf-8"))
        sql = render_sql(query)
        candidates = [r for r in pool if extract_input_sql(r.prompt) != sql]
        rng = _random.Random(f"{demo_seed}:infer:single")
        demo_record = select_demonstration(query, candidates, demo_mode, rng=rng)
        demo = demonstration_from_record(demo_record) if demo_record else None
        click.echo(model.greedy_decode(build_prompt(query, catalog, demo), max_len))
        return

    if not out:
        raise click.UsageError("--workload mode needs --out")
    queries = pl.read_workload(workload)
    rows = pl.infer_responses(model, queries, catalog, pool, demo_mode, demo_seed, max_len)
    pl._write_jsonl(rows, out)
    click.echo(f"wrote {len(rows)} responses to {out}")


@cli.command("validate")
@click.option("--corpus", type=click.Path(exists=True), default=None,
              help="JSONL of {query_sql, response}.")
@click.option("--queries", type=click.Path(exists=True), default=None,
              help="Workload file, paired with --responses by order.")
@click.option("--responses", type=click.Path(exists=True), default=None,
              help="JSONL of {query_id, response}.")
@_domain_errors
def validate_cmd(corpus, queries, responses):
    """Classify generated responses; prints E1/E2/E3 counts."""
    if corpus:
        summary = classify_corpus_file(corpus)
    elif queries and responses:
        query_list = pl.read_workload(queries)
        rows = pl._read_jsonl(responses)
        by_id = {row["query_id"]: row["response"] for row in rows}
        ids = pl.query_ids(query_list)
        missing = [qid for qid in ids if qid not in by_id]
        if missing:
            raise PlangenError(f"responses missing for {missing[:5]}")
        summary = classify_corpus(
            (by_id[qid], query) for qid, query in zip(ids, query_list)
        )
    else:
        raise click.UsageError("pass --corpus, or --queries with --responses")
    click.echo(summary.line())


@cli.command("hint")
@click.option("--plan", "bracket", required=True, help="Plan in bracket form.")
@click.option("--sql", "sql_file", required=True, type=click.Path(exists=True))
@_domain_errors
def hint_cmd(bracket, sql_file):
    """Print the hinted SQL for a plan: hint comment, then the canonical query."""
    query = parse_sql(Path(sql_file).read_text(encoding="utf-8"))
    plan = bracket_to_tree(bracket)
    from .plans import leaves

    if set(leaves(plan)) != set(query.tables):
        raise PlangenError(
            f"plan tables {sorted(set(leaves(plan)))} do not match query tables "
            f"{sorted(query.tables)}"
        )
    click.echo(emit_hints(plan))
    click.echo(render_sql(query))


@cli.command("grad-check")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--loss", required=True, type=click.Choice(["sft", "dpo"]))
@click.option("--sft", "sft_path", type=click.Path(exists=True), default=None)
@click.option("--dpo", "dpo_path", type=click.Path(exists=True), default=None)
@click.option("--reference", type=click.Path(exists=True), default=None,
              help="Frozen reference checkpoint (dpo loss only; defaults to --model).")
@click.option("--beta", default=0.1, show_default=True, type=float)
@click.option("--h", "step", default=1e-5, show_default=True, type=float)
@click.option("--tolerance", default=1e-5, show_default=True, type=float)
@click.option("--samples", default=200, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--limit", default=4, show_default=True, type=int,
              help="Number of dataset rows fed to the checked loss.")
@_domain_errors
def grad_check_cmd(model_path, loss, sft_path, dpo_path, reference, beta, step,
                   tolerance, samples, seed, limit):
    """Verify analytic gradients with central finite differences."""
    model = load_model(model_path)
    if loss == "sft":
        if not sft_path:
            raise click.UsageError("--loss sft needs --sft")
        pairs = [(r.prompt, r.response) for r in load_dataset(sft_path)][:limit]
        report = sft_grad_check(model, pairs, step, tolerance, samples, seed)
    else:
        if not dpo_path:
            raise click.UsageError("--loss dpo needs --dpo")
        triples = [
            (t.prompt, t.chosen, t.rejected) for t in load_preference_file(dpo_path)
        ][:limit]
        ref_model = load_model(reference) if reference else model
        report = dpo_grad_check(model, ref_model, triples, beta, step, tolerance, samples, seed)
    status = "pass" if report.passed else "FAIL"
    click.echo(
        f"{status}: max relative error {report.max_rel_error:.3e} over {report.checked} parameters"
    )
    if not report.passed:
        sys.exit(1)


@cli.command("report")
@click.option("--run-dir", required=True, type=click.Path(exists=True))
@click.option("--build", is_flag=True,
              help="Rebuild report.json from the run directory's artifacts.")
@click.option("--catalog", "catalog_path", type=click.Path(exists=True), default=None,
              help="Needed with --build.")
@click.option("--tables", "tables_dir", type=click.Path(exists=True), default=None,
              help="Needed with --build.")
@click.option("--json", "as_json", is_flag=True, help="Print machine-readable JSON.")
@_domain_errors
def report_cmd(run_dir, build, catalog_path, tables_dir, as_json):
    """Print a run report; --build reconstructs it from the artifacts."""
    run = Path(run_dir)
    if build:
        if not (catalog_path and tables_dir):
            raise click.UsageError("--build needs --catalog and --tables")
        pl.write_report_from_run_dir(run, load_catalog(catalog_path), load_tables(tables_dir))
    report_file = run / "report.json"
    if not report_file.exists():
        raise PlangenError(f"{report_file} does not exist (run the pipeline or pass --build)")
    report = json.loads(report_file.read_text(encoding="utf-8"))
    if as_json:
        click.echo(json.dumps(report, sort_keys=True))
    else:
        click.echo(pl.format_report(report))


@cli.command("run")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--catalog", default=None, type=click.Path())
@click.option("--tables", default=None, type=click.Path())
@click.option("--join-graph", default=None, type=click.Path())
@click.option("--out-dir", default=None, type=click.Path())
@click.option("--workload-count", default=None, type=int)
@click.option("--workload-joins", default=None)
@click.option("--demo-mode", default=None, type=click.Choice(["strict", "fallback", "none"]))
@click.option("--split-mode", default=None, type=click.Choice(pl.SPLIT_MODES))
@click.option("--r0", default=None, type=float)
@click.option("--beta", default=None, type=float)
@click.option("--qit-steps", default=None, type=int)
@click.option("--qdpo-steps", default=None, type=int)
@_domain_errors
def run_cmd(config_path, **flags):
    """Run the whole pipeline from a config file; flags override the file."""
    config = pl.PipelineConfig.from_file(config_path) if config_path else pl.PipelineConfig()
    overrides = {k: v for k, v in flags.items() if v is not None}
    config = config.with_overrides(**overrides)
    result = pl.run_pipeline(config)
    for name, status in result.stages:
        click.echo(f"stage {name}: {status}")
    click.echo(pl.format_report(result.report))


def main():
    cli(prog_name="plangen")


if __name__ == "__main__":
    main()
