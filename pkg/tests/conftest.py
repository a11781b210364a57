"""Shared fixtures: the six-table micro database and helpers."""

from __future__ import annotations

import random
from pathlib import Path

import pytest

from plangen.catalog import Catalog, MicroTable, catalog_from_tables, save_catalog, save_table
from plangen.plans import JOIN_OPERATORS, Join, Leaf, PlanTree
from plangen.sql import parse_sql

FIXTURES_DIR = Path(__file__).resolve().parent.parent / "fixtures"

# Fig. 3 style catalog used by the golden prompt/statistics tests.
MOVIE_CATALOG_TEXT = """\
title|movie_id:0:2527968:2527969|kind_id:-1:7:7|product_year:-1:2019:134|imdb_id:-1:2012:10
movie_companies|movie_id:-1:2525401:1087136|company_id:1:234997:234997|company_type_id:1:2:2
movie_info_idx|movie_info_idx_id:0:1380033:1380034|movie_id:-1:2525449:459876
"""

MOVIE_SQL = (
    "SELECT * FROM movie_companies, title, movie_info_idx  \n"
    "WHERE title.movie_id = movie_companies.movie_id AND \n"
    "title.movie_id = movie_info_idx.movie_id  AND \n"
    "movie_companies.company_type_id = 1 AND \n"
    "title.product_year < 1904 AND title.product_year > 58;"
)


@pytest.fixture(scope="session")
def movie_catalog(tmp_path_factory) -> Catalog:
    from plangen.catalog import load_catalog

    path = tmp_path_factory.mktemp("cat") / "movies.cat"
    path.write_text(MOVIE_CATALOG_TEXT, encoding="utf-8")
    return load_catalog(path)


@pytest.fixture(scope="session")
def movie_query():
    return parse_sql(MOVIE_SQL)


@pytest.fixture(scope="session")
def movie_plan() -> PlanTree:
    return Join(
        "HashJoin",
        Leaf("movie_info_idx"),
        Join("HashJoin", Leaf("movie_companies"), Leaf("title")),
    )


def build_micro_db() -> tuple[list[MicroTable], list[str]]:
    """Deterministic six-table star-plus-chord database.

    title is the hub; five satellites join on movie_id, and
    movie_companies.movie_id = movie_info_idx.movie_id adds a chord.
    Values are drawn from a fixed seed so derived statistics never change.
    """
    rng = random.Random(20240817)
    tables = []

    title_rows = [(mid, rng.randint(1, 7), rng.randint(1900, 2019)) for mid in range(60)]
    tables.append(MicroTable("title", ("movie_id", "kind_id", "product_year"), tuple(title_rows)))

    satellites = {
        "movie_companies": ("company_type_id", 1, 2, 45),
        "movie_info_idx": ("info_type_id", 1, 5, 40),
        "cast_info": ("role_id", 1, 11, 70),
        "movie_keyword": ("keyword_id", 1, 30, 50),
        "movie_info": ("info_kind", 1, 4, 35),
    }
    for name, (col, lo, hi, rows) in satellites.items():
        data = [(rng.randrange(60), rng.randint(lo, hi)) for _ in range(rows)]
        tables.append(MicroTable(name, ("movie_id", col), tuple(sorted(data))))

    joins = [f"title.movie_id = {name}.movie_id" for name in satellites]
    joins.append("movie_companies.movie_id = movie_info_idx.movie_id")
    return tables, joins


@pytest.fixture(scope="session")
def micro_db() -> dict[str, MicroTable]:
    tables, _ = build_micro_db()
    return {t.name: t for t in tables}


@pytest.fixture(scope="session")
def micro_catalog(micro_db) -> Catalog:
    return catalog_from_tables(micro_db.values())


@pytest.fixture(scope="session")
def micro_join_lines() -> list[str]:
    _, joins = build_micro_db()
    return joins


@pytest.fixture(scope="session")
def micro_db_dir(tmp_path_factory, micro_db, micro_catalog, micro_join_lines) -> Path:
    """Materialize the micro database in the documented file formats."""
    root = tmp_path_factory.mktemp("microdb")
    (root / "tables").mkdir()
    (root / "catalog.txt").write_text(save_catalog(micro_catalog), encoding="utf-8")
    (root / "joins.txt").write_text("\n".join(micro_join_lines) + "\n", encoding="utf-8")
    for table in micro_db.values():
        (root / "tables" / f"{table.name}.tbl").write_text(save_table(table), encoding="utf-8")
    return root


def random_plan(rng: random.Random, tables: list[str]) -> PlanTree:
    """Uniformly shaped random plan over the given distinct tables."""
    nodes: list[PlanTree] = [Leaf(t) for t in tables]
    while len(nodes) > 1:
        i, j = rng.sample(range(len(nodes)), 2)
        op = rng.choice(JOIN_OPERATORS)
        merged = Join(op, nodes[i], nodes[j])
        nodes = [n for k, n in enumerate(nodes) if k not in (i, j)]
        nodes.append(merged)
    return nodes[0]
