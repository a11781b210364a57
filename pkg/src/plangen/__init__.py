"""Desk-scale toolkit for learning to generate SQL execution plans.

Parses an SPJ SQL subset, serializes plans between tree, bracket and
step-path forms, builds instruction and preference datasets from mock
optimizers over an in-memory micro database, trains a tiny autoregressive
token model in two stages, validates generated plans, and emits planner
hint comments.
"""

from .catalog import Catalog, ColumnStats, MicroTable, derive_stats, load_catalog, serialize_stats
from .errors import PlangenError
from .plans import (
    Join,
    Leaf,
    PlanTree,
    bracket_to_tree,
    parse_response,
    path_to_tree,
    render_response,
    tree_to_bracket,
    tree_to_path,
)
from .sql import QuerySpec, QueryTemplate, parse_sql, render_sql, template_of
from .validator import ValidationReport, classify_corpus, validate

__version__ = "0.1.0"

__all__ = [
    "Catalog",
    "ColumnStats",
    "Join",
    "Leaf",
    "MicroTable",
    "PlanTree",
    "PlangenError",
    "QuerySpec",
    "QueryTemplate",
    "ValidationReport",
    "__version__",
    "bracket_to_tree",
    "classify_corpus",
    "derive_stats",
    "load_catalog",
    "parse_response",
    "parse_sql",
    "path_to_tree",
    "render_response",
    "render_sql",
    "serialize_stats",
    "template_of",
    "tree_to_bracket",
    "tree_to_path",
    "validate",
]
