"""Preference triple generation from multi-optimizer plan timings.

For one query, the fastest plan becomes the single preferred response; every
other plan whose time ratio t_best / t_i falls strictly below the threshold
becomes a dispreferred partner. Ties for the best plan break on the
lexicographically smallest bracket so results never depend on optimizer
iteration order. Queries yielding no dispreferred plan contribute nothing.

When a new optimizer arrives, the dataset extends incrementally: if the new
plan is a strict improvement it becomes the preferred side against every old
plan passing the threshold (and triples whose old preferred plan is now
superseded are dropped, keeping the dataset equal to a from-scratch run);
otherwise the incumbent stays preferred and the new plan may join as a
dispreferred partner.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import PlangenError
from .executor import PlanTiming
from .plans import render_response, tree_to_bracket


class PreferenceError(PlangenError):
    pass


@dataclass(frozen=True)
class PreferenceConfig:
    """Threshold for the best-to-other time ratio, in (0, 1)."""

    ratio_threshold: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.ratio_threshold < 1.0:
            raise PreferenceError(
                f"ratio threshold must be in (0, 1), got {self.ratio_threshold}"
            )


@dataclass(frozen=True)
class PreferenceTriple:
    query_id: str
    prompt: str
    chosen: str
    rejected: str
    t_chosen: int
    t_rejected: int
    chosen_optimizer: str
    rejected_optimizer: str

    def pair_key(self) -> tuple[str, str, str]:
        return (self.query_id, self.chosen, self.rejected)


def _pick_best(timings: Sequence[PlanTiming]) -> PlanTiming:
    return min(timings, key=lambda t: (t.time, tree_to_bracket(t.plan)))


def generate_preferences(
    timings: Sequence[PlanTiming],
    prompt: str,
    config: PreferenceConfig,
    query_id: str = "",
) -> list[PreferenceTriple]:
    """Algorithm over one query's k plan timings; needs k >= 2."""
    if len(timings) < 2:
        raise PreferenceError(f"need at least two optimizer timings, got {len(timings)}")
    ids = [t.optimizer_id for t in timings]
    if len(set(ids)) != len(ids):
        raise PreferenceError(f"duplicate optimizer ids in {ids}")

    best = _pick_best(timings)
    chosen_text = render_response(best.plan)
    triples = []
    for timing in timings:
        if best.time / timing.time < config.ratio_threshold:
            triples.append(
                PreferenceTriple(
                    query_id=query_id,
                    prompt=prompt,
                    chosen=chosen_text,
                    rejected=render_response(timing.plan),
                    t_chosen=best.time,
                    t_rejected=timing.time,
                    chosen_optimizer=best.optimizer_id,
                    rejected_optimizer=timing.optimizer_id,
                )
            )
    return triples


def extend_preferences(
    existing: Sequence[PreferenceTriple],
    new_timing: PlanTiming,
    old_timings: Sequence[PlanTiming],
    prompt: str,
    config: PreferenceConfig,
    query_id: str = "",
) -> list[PreferenceTriple]:
    """Triples added by one new optimizer for one query.

    Never duplicates an existing (chosen, rejected) pair.
    """
    if any(t.optimizer_id == new_timing.optimizer_id for t in old_timings):
        raise PreferenceError(f"optimizer {new_timing.optimizer_id!r} already present")

    seen = {t.pair_key() for t in existing}
    incumbent = _pick_best(list(old_timings))
    # The new plan takes over under the same (time, bracket) order the
    # from-scratch generator uses, so tie-breaks stay consistent.
    new_key = (new_timing.time, tree_to_bracket(new_timing.plan))
    incumbent_key = (incumbent.time, tree_to_bracket(incumbent.plan))

    added = []
    if new_key < incumbent_key:
        chosen_text = render_response(new_timing.plan)
        for timing in old_timings:
            if new_timing.time / timing.time < config.ratio_threshold:
                triple = PreferenceTriple(
                    query_id=query_id,
                    prompt=prompt,
                    chosen=chosen_text,
                    rejected=render_response(timing.plan),
                    t_chosen=new_timing.time,
                    t_rejected=timing.time,
                    chosen_optimizer=new_timing.optimizer_id,
                    rejected_optimizer=timing.optimizer_id,
                )
                if triple.pair_key() not in seen:
                    added.append(triple)
    else:
        if incumbent.time / new_timing.time < config.ratio_threshold:
            triple = PreferenceTriple(
                query_id=query_id,
                prompt=prompt,
                chosen=render_response(incumbent.plan),
                rejected=render_response(new_timing.plan),
                t_chosen=incumbent.time,
                t_rejected=new_timing.time,
                chosen_optimizer=incumbent.optimizer_id,
                rejected_optimizer=new_timing.optimizer_id,
            )
            if triple.pair_key() not in seen:
                added.append(triple)
    return added


def extend_dataset(
    existing: Sequence[PreferenceTriple],
    new_timing: PlanTiming,
    old_timings: Sequence[PlanTiming],
    prompt: str,
    config: PreferenceConfig,
    query_id: str = "",
) -> tuple[list[PreferenceTriple], list[PreferenceTriple]]:
    """Apply one query's extension; returns (updated dataset, added triples).

    Existing triples whose chosen plan is superseded by a strictly faster new
    plan are dropped so the result always equals a from-scratch generation
    over the union of optimizers.
    """
    added = extend_preferences(existing, new_timing, old_timings, prompt, config, query_id)
    overall = _pick_best([*old_timings, new_timing])
    chosen_text = render_response(overall.plan)
    updated = [t for t in existing if t.chosen == chosen_text]
    updated.extend(added)
    return updated, added


def sort_triples(triples: Sequence[PreferenceTriple]) -> list[PreferenceTriple]:
    return sorted(triples, key=lambda t: (t.query_id, t.rejected_optimizer))


def write_preference_file(triples: Sequence[PreferenceTriple], path: str | Path) -> None:
    lines = [
        json.dumps(
            {
                "query_id": t.query_id,
                "prompt": t.prompt,
                "chosen": t.chosen,
                "rejected": t.rejected,
                "t_star": t.t_chosen,
                "t_rejected": t.t_rejected,
                "chosen_optimizer": t.chosen_optimizer,
                "rejected_optimizer": t.rejected_optimizer,
            },
            sort_keys=True,
            ensure_ascii=True,
        )
        for t in sort_triples(triples)
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_preference_file(path: str | Path) -> list[PreferenceTriple]:
    triples = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        raw = json.loads(line)
        triples.append(
            PreferenceTriple(
                query_id=raw["query_id"],
                prompt=raw["prompt"],
                chosen=raw["chosen"],
                rejected=raw["rejected"],
                t_chosen=raw["t_star"],
                t_rejected=raw["t_rejected"],
                chosen_optimizer=raw.get("chosen_optimizer", ""),
                rejected_optimizer=raw.get("rejected_optimizer", ""),
            )
        )
    return triples
