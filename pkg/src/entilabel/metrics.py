"""Agreement and performance statistics for multi-label annotations.

All multi-label metrics reduce a question's answers to pooled binary
(entity, option) indicator cells: one cell per entity/option combination,
1 when the rater selected that option. Cohen's Kappa and Krippendorff's
Alpha operate on those cells; micro-averaged precision/recall/F1 count
TP/FP/FN over the same pairs. An alternative exact-set-match reduction for
kappa is available behind ``method="set_match"``.

Entities whose gold set is empty for a question (no consensus) are excluded
from that question's scoring.

Everything is a pure function over immutable snapshots.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import AbstractSet, Iterable, Mapping, Sequence

import numpy as np

from .schema import ClassificationSchema, Question, coarsen_raw

AnswerMap = Mapping[str, Mapping[str, AbstractSet[str]]]  # entity -> question -> labels

POOLED = "pooled"

BUCKET_PERFECT = "Perfect agreement (0%)"
BUCKET_LOW = "Low disagreement (<25%)"
BUCKET_MODERATE = "Moderate disagreement (25-50%)"
BUCKET_HIGH = "High disagreement (>50%)"
BUCKET_LABELS = (BUCKET_PERFECT, BUCKET_LOW, BUCKET_MODERATE, BUCKET_HIGH)

RELIABILITY_BANDS = {"high": 0.75, "mid": 0.50}


class MetricsError(ValueError):
    """Empty scope, missing rater records, or an unknown scoring scope."""


# ---------------------------------------------------------------------------
# indicator cells


def indicator_cells(
    answers: AnswerMap, entities: Sequence[str], question: Question
) -> np.ndarray:
    """Binary cells in (entity, option) order for one rater's answers."""
    options = question.option_names
    cells = np.zeros((len(entities), len(options)), dtype=np.int8)
    for i, entity in enumerate(entities):
        try:
            labels = answers[entity][question.id]
        except KeyError:
            raise MetricsError(
                f"missing record for entity {entity!r}, question {question.id}"
            ) from None
        for j, option in enumerate(options):
            if option in labels:
                cells[i, j] = 1
    return cells.ravel()


# ---------------------------------------------------------------------------
# chance-corrected agreement


@dataclass(frozen=True)
class KappaResult:
    value: float
    po: float
    pe: float
    degenerate: bool = False


def kappa_from_indicators(a: np.ndarray, b: np.ndarray) -> KappaResult:
    """Kappa over two aligned binary cell vectors: (po - pe) / (1 - pe).

    po is the fraction of identical cells; pe sums the marginal products for
    both values. Perfect observed agreement is 1.0 regardless of a degenerate
    chance term; pe = 1 with po < 1 yields 0.0 with the degeneracy flag set.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.size == 0 or a.shape != b.shape:
        raise MetricsError("indicator vectors must be non-empty and aligned")
    po = float(np.count_nonzero(a == b) / a.size)
    pa1 = float(np.count_nonzero(a) / a.size)
    pb1 = float(np.count_nonzero(b) / b.size)
    pe = pa1 * pb1 + (1 - pa1) * (1 - pb1)
    if po == 1.0:
        return KappaResult(value=1.0, po=po, pe=pe, degenerate=pe == 1.0)
    if pe == 1.0:
        return KappaResult(value=0.0, po=po, pe=pe, degenerate=True)
    return KappaResult(value=(po - pe) / (1 - pe), po=po, pe=pe)


def cohen_kappa_pair(
    answers_a: AnswerMap,
    answers_b: AnswerMap,
    question: Question,
    entities: Sequence[str],
    method: str = "indicator",
) -> KappaResult:
    """Cohen's Kappa between two raters on one question.

    ``indicator`` pools per-option binary decisions; ``set_match`` treats each
    entity's full label set as a single nominal category. Perfect observed
    agreement returns 1.0 even when chance agreement is degenerate; a
    degenerate chance term (pe = 1) with imperfect agreement returns 0.0 and
    sets the ``degenerate`` flag.
    """
    if not entities:
        raise MetricsError("empty entity scope")
    if method == "indicator":
        return kappa_from_indicators(
            indicator_cells(answers_a, entities, question),
            indicator_cells(answers_b, entities, question),
        )
    if method == "set_match":
        def sets(answers: AnswerMap) -> list[frozenset]:
            out = []
            for entity in entities:
                try:
                    out.append(frozenset(answers[entity][question.id]))
                except KeyError:
                    raise MetricsError(
                        f"missing record for entity {entity!r}, question {question.id}"
                    ) from None
            return out

        cats_a = sets(answers_a)
        cats_b = sets(answers_b)
        n = len(entities)
        po = sum(1 for x, y in zip(cats_a, cats_b) if x == y) / n
        freq_a: dict[frozenset, int] = {}
        freq_b: dict[frozenset, int] = {}
        for c in cats_a:
            freq_a[c] = freq_a.get(c, 0) + 1
        for c in cats_b:
            freq_b[c] = freq_b.get(c, 0) + 1
        pe = sum(
            freq_a.get(c, 0) / n * freq_b.get(c, 0) / n
            for c in set(freq_a) | set(freq_b)
        )
    else:
        raise MetricsError(f"unknown kappa method {method!r}")
    if po == 1.0:
        return KappaResult(value=1.0, po=po, pe=pe, degenerate=pe == 1.0)
    if pe == 1.0:
        return KappaResult(value=0.0, po=po, pe=pe, degenerate=True)
    return KappaResult(value=(po - pe) / (1 - pe), po=po, pe=pe)


def krippendorff_alpha(
    answers_by_rater: Mapping[str, AnswerMap],
    question: Question,
    entities: Sequence[str],
) -> float:
    """Nominal-level alpha over pooled indicator cells; missing records allowed.

    Cells from entities a rater did not annotate are simply absent; units with
    fewer than two values are dropped. No variation at all counts as perfect
    agreement.
    """
    if len(answers_by_rater) < 2:
        raise MetricsError("alpha needs at least 2 raters")
    per_rater: dict[str, np.ndarray] = {}
    for rater, answers in answers_by_rater.items():
        covered = [e for e in entities if e in answers and question.id in answers[e]]
        if covered:
            mask = np.array([e in answers and question.id in answers[e] for e in entities])
            cells = np.full((len(entities), len(question.option_names)), -1, dtype=np.int8)
            sub = indicator_cells(
                answers, [e for e, ok in zip(entities, mask) if ok], question
            ).reshape(-1, len(question.option_names))
            cells[mask] = sub
            per_rater[rater] = cells.ravel()
    if not per_rater:
        raise MetricsError("no rater covers the entity scope")
    matrix = np.stack(list(per_rater.values()))  # raters x units, -1 = missing
    present = matrix >= 0
    m_u = present.sum(axis=0)
    pairable = m_u >= 2
    if not pairable.any():
        raise MetricsError("fewer than 2 coincident cells")
    ones = ((matrix == 1) & present).sum(axis=0)[pairable].astype(float)
    m = m_u[pairable].astype(float)
    zeros = m - ones
    do = float((2.0 * ones * zeros / (m - 1.0)).sum())
    n_one = float(ones.sum())
    n_zero = float(zeros.sum())
    n = float(m.sum())
    de = 2.0 * n_zero * n_one
    if de == 0.0:
        return 1.0
    return 1.0 - (n - 1.0) * do / de


# ---------------------------------------------------------------------------
# micro precision / recall / F1


@dataclass(frozen=True)
class PRF:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 0.0

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


def _pair_counts(
    predicted: AnswerMap, gold: AnswerMap, question_id: str
) -> tuple[int, int, int]:
    tp = fp = fn = 0
    for entity, gold_answers in gold.items():
        gold_set = gold_answers.get(question_id, frozenset())
        if not gold_set:
            continue
        if entity not in predicted:
            raise MetricsError(f"missing prediction for entity {entity!r}")
        pred_set = predicted[entity].get(question_id, frozenset())
        tp += len(set(pred_set) & set(gold_set))
        fp += len(set(pred_set) - set(gold_set))
        fn += len(set(gold_set) - set(pred_set))
    return tp, fp, fn


def micro_f1(
    predicted: AnswerMap,
    gold: AnswerMap,
    schema: ClassificationSchema,
    scope: str = POOLED,
) -> PRF:
    """Micro-averaged P/R/F1 over (entity, option) pairs for one scope.

    ``scope`` is a question id or "pooled" (all questions' pairs
    concatenated). Entities with an empty gold set for a question do not
    contribute pairs for that question.
    """
    if scope == POOLED:
        tp = fp = fn = 0
        for question in schema.questions:
            dtp, dfp, dfn = _pair_counts(predicted, gold, question.id)
            tp, fp, fn = tp + dtp, fp + dfp, fn + dfn
        return PRF(tp, fp, fn)
    if scope not in schema.question_ids:
        raise MetricsError(f"unknown scope {scope!r}")
    return PRF(*_pair_counts(predicted, gold, scope))


def micro_f1_all(
    predicted: AnswerMap, gold: AnswerMap, schema: ClassificationSchema
) -> dict[str, PRF]:
    out = {qid: micro_f1(predicted, gold, schema, qid) for qid in schema.question_ids}
    out[POOLED] = micro_f1(predicted, gold, schema, POOLED)
    return out


def coarsen_answer_map(
    answers: AnswerMap, schema: ClassificationSchema
) -> dict[str, dict[str, frozenset[str]]]:
    return {
        entity: {
            qid: coarsen_raw(schema.coarse, qid, labels)
            for qid, labels in per_q.items()
        }
        for entity, per_q in answers.items()
    }


def evaluate_coarse(
    predicted: AnswerMap, gold: AnswerMap, schema: ClassificationSchema
) -> dict[str, PRF]:
    """Coarsen both sides with the schema's merge groups, then micro-F1."""
    return micro_f1_all(
        coarsen_answer_map(predicted, schema),
        coarsen_answer_map(gold, schema),
        schema,
    )


# ---------------------------------------------------------------------------
# reliability conditioned on the category question


@dataclass(frozen=True)
class ReliabilityRow:
    category: str
    n: int
    agreement: dict[str, float]  # question id -> fraction

    def band(self, question_id: str) -> str:
        value = self.agreement[question_id]
        if value >= RELIABILITY_BANDS["high"]:
            return "high"
        if value >= RELIABILITY_BANDS["mid"]:
            return "mid"
        return "low"

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "n": self.n,
            "agreement": dict(sorted(self.agreement.items())),
            "bands": {qid: self.band(qid) for qid in sorted(self.agreement)},
        }


def reliability_by_category(
    predicted: AnswerMap,
    gold: AnswerMap,
    schema: ClassificationSchema,
    category_question: str = "q1",
) -> list[ReliabilityRow]:
    """Per gold category: how often the prediction names it, and how often the
    other questions' predicted and gold sets intersect.

    Rows are sorted by population descending (category name breaking ties);
    empty categories are omitted. Band thresholds: >=0.75 high, >=0.50 mid.
    """
    question = schema.question(category_question)
    rows = []
    for category in question.option_names:
        scoped = [
            entity
            for entity, answers in gold.items()
            if category in answers.get(category_question, frozenset())
        ]
        if not scoped:
            continue
        agreement: dict[str, float] = {}
        hits = sum(
            1
            for entity in scoped
            if category in predicted[entity].get(category_question, frozenset())
        )
        agreement[category_question] = hits / len(scoped)
        for other in schema.question_ids:
            if other == category_question:
                continue
            hits = sum(
                1
                for entity in scoped
                if set(predicted[entity].get(other, frozenset()))
                & set(gold[entity].get(other, frozenset()))
            )
            agreement[other] = hits / len(scoped)
        rows.append(ReliabilityRow(category=category, n=len(scoped), agreement=agreement))
    rows.sort(key=lambda r: (-r.n, r.category))
    return rows


# ---------------------------------------------------------------------------
# disagreement buckets


@dataclass(frozen=True)
class BucketReport:
    counts: dict[str, int]
    fractions: dict[str, float]
    n: int
    rates: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "counts": {label: self.counts[label] for label in BUCKET_LABELS},
            "fractions": {label: self.fractions[label] for label in BUCKET_LABELS},
        }


def entity_disagreement_rate(
    pred_answers: Mapping[str, AbstractSet[str]],
    gold_answers: Mapping[str, AbstractSet[str]],
    schema: ClassificationSchema,
) -> float:
    """(FP+FN)/(TP+FP+FN) pooled over the questions; no pairs counts as 0."""
    tp = fp = fn = 0
    for qid in schema.question_ids:
        gold_set = set(gold_answers.get(qid, frozenset()))
        if not gold_set:
            continue
        pred_set = set(pred_answers.get(qid, frozenset()))
        tp += len(pred_set & gold_set)
        fp += len(pred_set - gold_set)
        fn += len(gold_set - pred_set)
    total = tp + fp + fn
    return (fp + fn) / total if total else 0.0


def bucket_label(rate: float) -> str:
    # Band edges: 0 exact; (0, 0.25); [0.25, 0.50]; (0.50, 1].
    if rate == 0.0:
        return BUCKET_PERFECT
    if rate < 0.25:
        return BUCKET_LOW
    if rate <= 0.50:
        return BUCKET_MODERATE
    return BUCKET_HIGH


def disagreement_buckets(
    predicted: AnswerMap, gold: AnswerMap, schema: ClassificationSchema
) -> BucketReport:
    counts = {label: 0 for label in BUCKET_LABELS}
    rates: dict[str, float] = {}
    for entity, gold_answers in gold.items():
        if entity not in predicted:
            raise MetricsError(f"missing prediction for entity {entity!r}")
        rate = entity_disagreement_rate(predicted[entity], gold_answers, schema)
        rates[entity] = rate
        counts[bucket_label(rate)] += 1
    n = len(gold)
    fractions = {
        label: (counts[label] / n if n else 0.0) for label in BUCKET_LABELS
    }
    return BucketReport(counts=counts, fractions=fractions, n=n, rates=rates)


# ---------------------------------------------------------------------------
# store-backed convenience: agreement + annotator-vs-LOO reports


def annotator_f1_vs_loo(
    store,
    annotator: str,
    pool: Iterable[str],
    threshold: int = 2,
    round: int | None = None,
) -> dict[str, PRF]:
    """Micro-F1 of one annotator's records against leave-one-out consensus."""
    schema = store.schema
    predicted: dict[str, dict[str, frozenset[str]]] = {}
    gold: dict[str, dict[str, frozenset[str]]] = {}
    for entity_id in pool:
        record = store.latest_records(entity_id, [annotator], round).get(annotator)
        if record is None:
            continue
        loo = store.loo_majority(entity_id, annotator, threshold, round=round)
        predicted[entity_id] = record.label_sets()
        gold[entity_id] = loo.answers
    if not gold:
        raise MetricsError(f"annotator {annotator!r} has no scoped records")
    return micro_f1_all(predicted, gold, schema)


def compute_agreement_report(
    store,
    entity_ids: Iterable[str] | None = None,
    annotators: Iterable[str] | None = None,
    threshold: int = 2,
    round: int | None = None,
    kappa_method: str = "indicator",
) -> dict:
    """Pairwise kappa, per-question alpha, and per-annotator LOO-F1.

    Each kappa pair is scored over the entities both raters annotated; alpha
    tolerates missing records. Used identically by the CLI and the HTTP API
    so the two surfaces can never disagree.
    """
    schema = store.schema
    pool = sorted(entity_ids) if entity_ids is not None else store.entity_ids()
    raters = sorted(annotators) if annotators is not None else store.annotators()
    answer_maps = {a: store.answer_maps(a, pool, round) for a in raters}
    question_ids = list(schema.question_ids)

    pairs = []
    for i, a in enumerate(raters):
        for b in raters[i + 1:]:
            both = sorted(set(answer_maps[a]) & set(answer_maps[b]))
            per_question: dict[str, float | None] = {}
            for question in schema.questions:
                if both:
                    per_question[question.id] = cohen_kappa_pair(
                        answer_maps[a], answer_maps[b], question, both, kappa_method
                    ).value
                else:
                    per_question[question.id] = None
            values = [v for v in per_question.values() if v is not None]
            pairs.append(
                {
                    "a": a,
                    "b": b,
                    "n": len(both),
                    "per_question": per_question,
                    "average": sum(values) / len(values) if values else None,
                }
            )

    mean_per_question: dict[str, float | None] = {}
    for qid in question_ids:
        values = [p["per_question"][qid] for p in pairs if p["per_question"][qid] is not None]
        mean_per_question[qid] = sum(values) / len(values) if values else None
    averages = [p["average"] for p in pairs if p["average"] is not None]

    alpha: dict[str, float | None] = {}
    for question in schema.questions:
        try:
            alpha[question.id] = krippendorff_alpha(answer_maps, question, pool)
        except MetricsError:
            alpha[question.id] = None

    loo_rows = []
    for a in raters:
        try:
            scores = annotator_f1_vs_loo(store, a, pool, threshold, round)
        except ValueError:
            # No scoped records, or too few remaining annotators for LOO.
            continue
        loo_rows.append(
            {
                "annotator": a,
                "per_question": {qid: scores[qid].f1 for qid in question_ids},
                "pooled": scores[POOLED].f1,
                "average": sum(scores[qid].f1 for qid in question_ids) / len(question_ids),
            }
        )
    loo_pooled = [row["pooled"] for row in loo_rows]

    return {
        "n_entities": len(pool),
        "annotators": raters,
        "threshold": threshold,
        "kappa_method": kappa_method,
        "pairwise_kappa": pairs,
        "mean_kappa_per_question": mean_per_question,
        "mean_kappa": sum(averages) / len(averages) if averages else None,
        "alpha_per_question": alpha,
        "annotator_loo_f1": loo_rows,
        "mean_loo_f1": sum(loo_pooled) / len(loo_pooled) if loo_pooled else None,
    }


def compute_model_report(
    predicted: AnswerMap,
    gold: AnswerMap,
    schema: ClassificationSchema,
    include_coarse: bool = True,
) -> dict:
    """F1 (fine and coarse), reliability-by-category, and disagreement buckets."""
    fine = micro_f1_all(predicted, gold, schema)
    report = {
        "n_entities": len(gold),
        "fine": {scope: prf.to_dict() for scope, prf in fine.items()},
        "reliability": [row.to_dict() for row in reliability_by_category(predicted, gold, schema)],
        "buckets": disagreement_buckets(predicted, gold, schema).to_dict(),
    }
    if include_coarse:
        coarse = evaluate_coarse(predicted, gold, schema)
        report["coarse"] = {scope: prf.to_dict() for scope, prf in coarse.items()}
    return report


# ---------------------------------------------------------------------------
# aligned-text rendering


def _fmt(value: float | None, width: int = 7, digits: int = 3) -> str:
    if value is None:
        return " " * (width - 1) + "-"
    return f"{value:{width}.{digits}f}"


def render_agreement_text(report: dict) -> str:
    question_ids = sorted(report["mean_kappa_per_question"])
    header = "Annotator Pair".ljust(22) + "".join(q.rjust(8) for q in question_ids) + "  Average"
    lines = [
        f"Pairwise Cohen's Kappa (n={report['n_entities']})",
        header,
        "-" * len(header),
    ]
    for pair in report["pairwise_kappa"]:
        row = f"{pair['a']} vs {pair['b']}".ljust(22)
        row += "".join(_fmt(pair["per_question"][q], 8) for q in question_ids)
        row += _fmt(pair["average"], 9)
        lines.append(row)
    mean_row = "Mean".ljust(22)
    mean_row += "".join(_fmt(report["mean_kappa_per_question"][q], 8) for q in question_ids)
    mean_row += _fmt(report["mean_kappa"], 9)
    lines.append(mean_row)
    alpha_row = "Krippendorff Alpha".ljust(22)
    alpha_row += "".join(_fmt(report["alpha_per_question"][q], 8) for q in question_ids)
    lines.append(alpha_row)
    if report["annotator_loo_f1"]:
        lines.append("")
        lines.append(f"Individual F1 vs Leave-One-Out Majority (n={report['n_entities']})")
        header = "Annotator".ljust(22) + "".join(q.rjust(8) for q in question_ids) + "  Average   Pooled"
        lines.append(header)
        lines.append("-" * len(header))
        for row in report["annotator_loo_f1"]:
            text = row["annotator"].ljust(22)
            text += "".join(_fmt(row["per_question"][q], 8) for q in question_ids)
            text += _fmt(row["average"], 9) + _fmt(row["pooled"], 9)
            lines.append(text)
    return "\n".join(lines) + "\n"


def render_model_text(report: dict) -> str:
    question_ids = sorted(q for q in report["fine"] if q != POOLED)
    lines = [f"Model vs gold (n={report['n_entities']})"]
    header = "Schema".ljust(10) + "".join(q.rjust(8) for q in question_ids) + "   Pooled"
    lines.append(header)
    lines.append("-" * len(header))
    for name in ("fine", "coarse"):
        if name not in report:
            continue
        row = name.capitalize().ljust(10)
        row += "".join(_fmt(report[name][q]["f1"], 8) for q in question_ids)
        row += _fmt(report[name][POOLED]["f1"], 9)
        lines.append(row)
    if report.get("reliability"):
        lines.append("")
        lines.append("Reliability by category (agreement fraction, gold category rows)")
        header = "Category".ljust(28) + "n".rjust(5) + "".join(q.rjust(8) for q in question_ids)
        lines.append(header)
        lines.append("-" * len(header))
        for row in report["reliability"]:
            text = row["category"][:27].ljust(28) + str(row["n"]).rjust(5)
            text += "".join(_fmt(row["agreement"][q], 8, 2) for q in question_ids)
            lines.append(text)
        lines.append(
            "Bands: high >= 0.75, mid 0.50-0.74, low < 0.50"
        )
    if report.get("buckets"):
        lines.append("")
        lines.append("Model-human disagreement")
        for label in BUCKET_LABELS:
            fraction = report["buckets"]["fractions"][label]
            lines.append(f"{label.ljust(32)}{fraction * 100:6.1f}%")
    return "\n".join(lines) + "\n"
