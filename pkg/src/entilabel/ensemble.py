"""Majority-vote ensembling and the error-feedback prompt-optimization harness.

An ensemble member is a (template_id, run_index) pair so that both
multi-prompt ensembles and self-ensembles (repeated stochastic runs of one
prompt) share one voting path. The default vote threshold is an absolute
ceil(M/2); a label wins when at least that many successful runs selected it.
When no label reaches the threshold, the configured fallback decides between
flagging the question unresolved and returning the plurality label(s).
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import EntityRecord
from .gateway import (
    GenerationParams,
    PromptTemplate,
    RunCache,
    RunRecord,
    Transport,
    annotate_many,
)
from .metrics import PRF, micro_f1
from .schema import ClassificationSchema

FALLBACK_FLAG = "flag_unresolved"
FALLBACK_PLURALITY = "plurality"

VOTE_RESOLVED = "resolved"
VOTE_FALLBACK = "fallback"
VOTE_UNRESOLVED = "unresolved"
VOTE_FAILED = "failed"


class EnsembleError(ValueError):
    pass


class DesignError(ValueError):
    """Infeasible split-design parameters."""


@dataclass(frozen=True)
class EnsembleConfig:
    members: tuple[tuple[str, int], ...]
    vote_threshold: int | None = None
    fallback: str = FALLBACK_FLAG

    def __post_init__(self) -> None:
        if not self.members:
            raise EnsembleError("ensemble needs at least one member")
        if self.fallback not in (FALLBACK_FLAG, FALLBACK_PLURALITY):
            raise EnsembleError(f"unknown fallback {self.fallback!r}")
        t = self.threshold
        if not 1 <= t <= len(self.members):
            raise EnsembleError(
                f"vote threshold {t} out of range for {len(self.members)} members"
            )

    @property
    def threshold(self) -> int:
        if self.vote_threshold is not None:
            return self.vote_threshold
        return math.ceil(len(self.members) / 2)


@dataclass(frozen=True)
class VoteResult:
    labels: frozenset[str]
    status: str  # resolved | fallback | unresolved | failed
    tally: dict[str, int]
    successes: int

    @property
    def failed(self) -> bool:
        return self.status == VOTE_FAILED


def vote(
    runs: Sequence[Mapping[str, frozenset[str]] | None],
    question_id: str,
    config: EnsembleConfig,
) -> VoteResult:
    """Majority vote for one question over aligned ensemble runs.

    ``runs`` is aligned with ``config.members``; a failed run is None and
    cannot vote. Labels selected by at least ``threshold`` successful runs
    win; with none, the fallback applies (the entity stays flagged either
    way). Zero successful runs fail the vote outright.
    """
    if len(runs) != len(config.members):
        raise EnsembleError(
            f"expected {len(config.members)} runs, got {len(runs)}"
        )
    successes = [r[question_id] for r in runs if r is not None and question_id in r]
    if not successes:
        return VoteResult(frozenset(), VOTE_FAILED, {}, 0)
    tally = Counter()
    for labels in successes:
        tally.update(labels)
    winners = frozenset(
        label for label, count in tally.items() if count >= config.threshold
    )
    if winners:
        return VoteResult(winners, VOTE_RESOLVED, dict(tally), len(successes))
    if config.fallback == FALLBACK_PLURALITY:
        top = max(tally.values())
        plurality = frozenset(
            label for label, count in tally.items() if count == top
        )
        return VoteResult(plurality, VOTE_FALLBACK, dict(tally), len(successes))
    return VoteResult(frozenset(), VOTE_UNRESOLVED, dict(tally), len(successes))


def vote_all(
    runs: Sequence[Mapping[str, frozenset[str]] | None],
    schema: ClassificationSchema,
    config: EnsembleConfig,
) -> dict[str, VoteResult]:
    return {qid: vote(runs, qid, config) for qid in schema.question_ids}


def runs_by_member(
    records: Iterable[RunRecord], config: EnsembleConfig, entity_id: str
) -> list[Mapping[str, frozenset[str]] | None]:
    """Align stored RunRecords with the ensemble member order for one entity."""
    index = {
        (r.template_id, r.run_index): r
        for r in records
        if r.entity_id == entity_id
    }
    aligned: list[Mapping[str, frozenset[str]] | None] = []
    for member in config.members:
        record = index.get(member)
        aligned.append(record.parsed if record is not None else None)
    return aligned


def self_ensemble(
    entity: EntityRecord,
    template: PromptTemplate,
    m: int,
    params: GenerationParams,
    schema: ClassificationSchema,
    cache: RunCache | None = None,
    transport: Transport | None = None,
    max_attempts: int = 5,
    fallback: str = FALLBACK_FLAG,
) -> tuple[dict[str, VoteResult], list[RunRecord]]:
    """Vote over M independent runs of one template (distinct run indices)."""
    if m < 1:
        raise EnsembleError("ensemble size must be >= 1")
    members = tuple((template, i) for i in range(m))
    records = annotate_many(
        params, members, [entity], schema,
        max_attempts=max_attempts, cache=cache, transport=transport, workers=1,
    )
    config = EnsembleConfig(
        members=tuple((template.template_id, i) for i in range(m)), fallback=fallback
    )
    aligned = runs_by_member(records, config, entity.entity_id)
    return vote_all(aligned, schema, config), records


# ---------------------------------------------------------------------------
# cross-validated split design


@dataclass(frozen=True)
class SplitDesign:
    n: int
    k_splits: int
    opt_size: int
    eval_size: int
    membership: Mapping[str, frozenset[int]]  # entity -> optimization split ids
    seed: int

    def opt_set(self, split_index: int) -> frozenset[str]:
        return frozenset(
            e for e, splits in self.membership.items() if split_index in splits
        )

    def eval_set(self, split_index: int) -> frozenset[str]:
        return frozenset(
            e for e, splits in self.membership.items() if split_index not in splits
        )

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "k_splits": self.k_splits,
            "opt_size": self.opt_size,
            "eval_size": self.eval_size,
            "seed": self.seed,
            "membership": {e: sorted(s) for e, s in sorted(self.membership.items())},
        }


def make_split_design(
    entity_ids: Sequence[str],
    k_splits: int = 5,
    opt_size: int = 20,
    eval_size: int = 30,
    seed: int = 0,
) -> SplitDesign:
    """Balanced assignment of entities to optimization/evaluation subsets.

    Every optimization set has exactly ``opt_size`` members and every entity
    sits in exactly k*opt/n optimization sets. When n divides the number of
    membership combinations evenly, each combination is used equally often
    (for the reference 50/5/20/30 shape: each of the C(5,2)=10 split pairs
    gets exactly 5 entities); otherwise a deterministic least-loaded greedy
    keeps the column sums exact. The seeded shuffle decides which entity gets
    which combination.
    """
    n = len(entity_ids)
    if len(set(entity_ids)) != n:
        raise DesignError("duplicate entity ids")
    if n == 0 or k_splits < 1 or opt_size < 1:
        raise DesignError("need at least one entity, split, and optimization slot")
    if opt_size + eval_size != n:
        raise DesignError(
            f"opt_size + eval_size must equal n: {opt_size}+{eval_size} != {n}"
        )
    if (k_splits * opt_size) % n != 0:
        raise DesignError(
            f"infeasible: {k_splits}*{opt_size}={k_splits * opt_size} "
            f"is not divisible by n={n}"
        )
    per_entity = k_splits * opt_size // n
    if per_entity > k_splits:
        raise DesignError("each entity would need more splits than exist")

    combos: list[tuple[int, ...]] = []
    n_combos = math.comb(k_splits, per_entity)
    if n % n_combos == 0:
        for combo in combinations(range(k_splits), per_entity):
            combos.extend([combo] * (n // n_combos))
    else:
        load = [0] * k_splits
        for _ in range(n):
            order = sorted(range(k_splits), key=lambda s: (load[s], s))
            combo = tuple(sorted(order[:per_entity]))
            for s in combo:
                load[s] += 1
            combos.append(combo)

    rng = random.Random(seed)
    shuffled = sorted(entity_ids)
    rng.shuffle(shuffled)
    membership = {
        entity: frozenset(combo) for entity, combo in zip(shuffled, combos)
    }
    return SplitDesign(
        n=n,
        k_splits=k_splits,
        opt_size=opt_size,
        eval_size=eval_size,
        membership=membership,
        seed=seed,
    )


def write_design_json(design: SplitDesign, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(design.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_design_json(path: str | Path) -> SplitDesign:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return SplitDesign(
        n=int(raw["n"]),
        k_splits=int(raw["k_splits"]),
        opt_size=int(raw["opt_size"]),
        eval_size=int(raw["eval_size"]),
        seed=int(raw["seed"]),
        membership={e: frozenset(s) for e, s in raw["membership"].items()},
    )


# ---------------------------------------------------------------------------
# error feedback and candidate evaluation


def build_error_feedback(
    template: PromptTemplate,
    opt_entities: Sequence[EntityRecord],
    runs: Mapping[str, Mapping[str, frozenset[str]]],
    gold: Mapping[str, Mapping[str, frozenset[str]]],
    schema: ClassificationSchema,
) -> str:
    """Errors-vs-gold document for an optimizer model (or {past_mistakes}).

    Lists, per entity with at least one differing question: the surface, the
    model's answers, the gold answers, and the per-question diff. Ends with
    the parent prompt body so the optimizer sees what produced the errors.
    """
    lines: list[str] = []
    error_entities = 0
    for entity in sorted(opt_entities, key=lambda e: e.entity_id):
        if entity.entity_id not in runs:
            raise EnsembleError(f"missing runs for entity {entity.entity_id!r}")
        if entity.entity_id not in gold:
            raise EnsembleError(f"missing gold for entity {entity.entity_id!r}")
        model_answers = runs[entity.entity_id]
        gold_answers = gold[entity.entity_id]
        diffs: list[str] = []
        for qid in schema.question_ids:
            model_set = set(model_answers.get(qid, frozenset()))
            gold_set = set(gold_answers.get(qid, frozenset()))
            if model_set == gold_set:
                continue
            missing = sorted(gold_set - model_set)
            spurious = sorted(model_set - gold_set)
            parts = []
            if missing:
                parts.append("missing " + ", ".join(missing))
            if spurious:
                parts.append("spurious " + ", ".join(spurious))
            diffs.append(f"  {qid}: {'; '.join(parts)}")
        if not diffs:
            continue
        error_entities += 1
        lines.append(f'Entity: "{entity.surface}" ({entity.kind})')
        for qid in schema.question_ids:
            lines.append(
                f"  model {qid}: {sorted(model_answers.get(qid, frozenset()))}"
                f" | gold {qid}: {sorted(gold_answers.get(qid, frozenset()))}"
            )
        lines.extend(diffs)
        lines.append("")
    header = [
        f"ERROR FEEDBACK for prompt '{template.template_id}'",
        f"Optimization entities: {len(opt_entities)}; entities with errors: {error_entities}",
        "",
    ]
    if error_entities == 0:
        header.append("No errors: the prompt matched gold on every optimization entity.")
        header.append("")
    footer = ["--- PARENT PROMPT ---", template.body]
    return "\n".join(header + lines + footer)


@dataclass
class CandidatePrompt:
    template_id: str
    parent_template_id: str
    split_index: int
    optimizer_note: str = ""
    body: str = ""
    eval_f1: float = 0.0
    parent_f1: float = 0.0
    improved: bool = False

    def to_dict(self) -> dict:
        return {
            "template_id": self.template_id,
            "parent_template_id": self.parent_template_id,
            "split_index": self.split_index,
            "optimizer_note": self.optimizer_note,
            "body": self.body,
            "eval_f1": self.eval_f1,
            "parent_f1": self.parent_f1,
            "improved": self.improved,
        }


def evaluate_candidates(
    candidates: Sequence[CandidatePrompt],
    design: SplitDesign,
    gold: Mapping[str, Mapping[str, frozenset[str]]],
    predictions: Mapping[str, Mapping[str, Mapping[str, frozenset[str]]]],
    schema: ClassificationSchema,
) -> tuple[list[CandidatePrompt], list[CandidatePrompt]]:
    """Score candidates on their split's evaluation set; winners improve on
    the parent's pooled micro-F1 on the same set (strict inequality).

    ``predictions``: template_id -> entity_id -> answers. Returns the
    candidates ranked by eval F1 descending, plus the winners in that order.
    """
    scored: list[CandidatePrompt] = []
    for candidate in candidates:
        if not 0 <= candidate.split_index < design.k_splits:
            raise EnsembleError(
                f"candidate {candidate.template_id}: bad split {candidate.split_index}"
            )
        eval_ids = sorted(design.eval_set(candidate.split_index))
        scoped_gold = {e: gold[e] for e in eval_ids}
        candidate.eval_f1 = _pooled_f1(
            candidate.template_id, scoped_gold, predictions, schema
        )
        candidate.parent_f1 = _pooled_f1(
            candidate.parent_template_id, scoped_gold, predictions, schema
        )
        candidate.improved = candidate.eval_f1 > candidate.parent_f1
        scored.append(candidate)
    ranked = sorted(
        scored, key=lambda c: (-c.eval_f1, c.split_index, c.template_id)
    )
    winners = [c for c in ranked if c.improved]
    return ranked, winners


def _pooled_f1(
    template_id: str,
    gold: Mapping[str, Mapping[str, frozenset[str]]],
    predictions: Mapping[str, Mapping[str, Mapping[str, frozenset[str]]]],
    schema: ClassificationSchema,
) -> float:
    if template_id not in predictions:
        raise EnsembleError(f"missing predictions for template {template_id!r}")
    per_template = predictions[template_id]
    missing = [e for e in gold if e not in per_template]
    if missing:
        raise EnsembleError(
            f"template {template_id!r} missing runs for {missing[:3]!r}..."
        )
    predicted = {e: per_template[e] for e in gold}
    prf: PRF = micro_f1(predicted, gold, schema, "pooled")
    return prf.f1


def write_candidates_jsonl(
    candidates: Iterable[CandidatePrompt], path: str | Path
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for candidate in candidates:
            fh.write(json.dumps(candidate.to_dict(), sort_keys=True) + "\n")


def read_candidates_jsonl(path: str | Path) -> list[CandidatePrompt]:
    candidates = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            raw = json.loads(line)
            candidates.append(
                CandidatePrompt(
                    template_id=raw["template_id"],
                    parent_template_id=raw["parent_template_id"],
                    split_index=int(raw["split_index"]),
                    optimizer_note=raw.get("optimizer_note", ""),
                    body=raw.get("body", ""),
                )
            )
    return candidates


# ---------------------------------------------------------------------------
# vote persistence


def write_votes_jsonl(
    votes: Mapping[str, Mapping[str, VoteResult]], path: str | Path
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entity_id in sorted(votes):
            row: dict = {"entity_id": entity_id}
            statuses = {}
            for qid in sorted(votes[entity_id]):
                result = votes[entity_id][qid]
                row[qid] = sorted(result.labels)
                statuses[qid] = result.status
            row["status"] = statuses
            row["failed"] = all(s == VOTE_FAILED for s in statuses.values())
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def read_votes_jsonl(
    path: str | Path, question_ids: Sequence[str]
) -> dict[str, dict[str, frozenset[str]]]:
    """entity_id -> question -> labels, for vote output or any gold-shaped file."""
    out: dict[str, dict[str, frozenset[str]]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            raw = json.loads(line)
            out[str(raw["entity_id"])] = {
                qid: frozenset(raw.get(qid, [])) for qid in question_ids
            }
    return out
