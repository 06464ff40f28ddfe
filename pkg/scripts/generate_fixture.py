#!/usr/bin/env python3
"""Generate the shipped synthetic 4-annotator x 200-entity fixture.

Run from the repository root:

    python scripts/generate_fixture.py

All randomness is seeded (MASTER_SEED below); the expected gold and report
files are frozen from the brute-force oracles in tests/oracles.py, and the
script asserts that the package reproduces them before writing anything.
Regenerating with unchanged seeds must be byte-identical.
"""

import json
import random
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

from datagen import MERGES, QUESTION_IDS, NOT_DEFINABLE, random_label_set  # noqa: E402
from oracles import (  # noqa: E402
    BUCKET_LABELS,
    brute_alpha,
    brute_buckets,
    brute_consensus,
    brute_indicator_cells,
    brute_kappa_cells,
    brute_loo,
    brute_prf,
    brute_reliability,
)

from entilabel.cli import main as cli_main  # noqa: E402
from entilabel.metrics import compute_agreement_report, compute_model_report  # noqa: E402
from entilabel.metrics import render_agreement_text, render_model_text  # noqa: E402
from entilabel.project import Project  # noqa: E402
from entilabel.schema import reference_schema  # noqa: E402
from entilabel.util import canonical_json  # noqa: E402

MASTER_SEED = 20250808
SPLIT_SEED = 7
TIMESTAMP = "2025-08-08T00:00:00Z"
ANNOTATORS = ("a1", "a2", "a3", "a4")
OUT = ROOT / "tests" / "fixtures" / "synthetic"

HOBBY_STEMS = [
    "fishing", "handicraft", "reading circle", "skiing", "gardening",
    "chess", "choir singing", "berry picking", "carpentry", "folk dance",
]
ORG_STEMS = [
    "farmers club", "youth society", "church choir", "sports club",
    "workers union", "homemakers circle", "veterans board", "parish council",
    "road committee", "theatre group",
]


def build_entities():
    rows = []
    for i in range(100):
        surface = f"{HOBBY_STEMS[i % len(HOBBY_STEMS)]} {i:03d}"
        rows.append((surface, "hobby", max(1, round(500 / (i + 2)))))
    for i in range(100):
        surface = f"{ORG_STEMS[i % len(ORG_STEMS)]} {i:03d}"
        rows.append((surface, "organization", max(1, round(380 / (i + 2)))))
    return rows


def write_mentions(rows, path):
    with open(path, "w", encoding="utf-8") as fh:
        interview = 0
        for surface, kind, count in rows:
            for j in range(count):
                interview += 1
                fh.write(json.dumps({
                    "interview_id": f"i{interview:06d}",
                    "person_slot": ("husband", "wife", "other")[j % 3],
                    "surface": surface,
                    "kind": kind,
                }) + "\n")


def coarsen_set(qid, labels):
    merge = MERGES.get(qid)
    if not merge:
        return set(labels)
    return {
        merge["merged_name"] if label in merge["members"] else label
        for label in labels
    }


def coarsen_map(answers):
    return {
        e: {qid: coarsen_set(qid, labels) for qid, labels in per.items()}
        for e, per in answers.items()
    }


def reliability_rows(pred, gold):
    raw = brute_reliability(pred, gold, list(QUESTION_IDS))
    rows = []
    for category in sorted(raw, key=lambda c: (-raw[c]["n"], c)):
        entry = raw[category]
        agreement = {qid: entry[qid] for qid in QUESTION_IDS}
        bands = {}
        for qid, value in agreement.items():
            bands[qid] = "high" if value >= 0.75 else "mid" if value >= 0.50 else "low"
        rows.append({
            "category": category,
            "n": entry["n"],
            "agreement": dict(sorted(agreement.items())),
            "bands": dict(sorted(bands.items())),
        })
    return rows


def oracle_agreement_report(data, entity_ids, schema):
    raters = sorted(data)
    options = {q.id: list(q.option_names) for q in schema.questions}
    pairs = []
    for i, a in enumerate(raters):
        for b in raters[i + 1:]:
            per_question = {}
            for qid in QUESTION_IDS:
                cells_a = brute_indicator_cells(data[a], entity_ids, qid, options[qid])
                cells_b = brute_indicator_cells(data[b], entity_ids, qid, options[qid])
                per_question[qid] = brute_kappa_cells(cells_a, cells_b)
            values = list(per_question.values())
            pairs.append({
                "a": a, "b": b, "n": len(entity_ids),
                "per_question": per_question,
                "average": sum(values) / len(values),
            })
    mean_per_question = {
        qid: sum(p["per_question"][qid] for p in pairs) / len(pairs)
        for qid in QUESTION_IDS
    }
    alpha = {}
    for qid in QUESTION_IDS:
        cells = {
            rater: brute_indicator_cells(data[rater], entity_ids, qid, options[qid])
            for rater in raters
        }
        alpha[qid] = brute_alpha(cells)
    loo_rows = []
    for rater in raters:
        pred = {e: data[rater][e] for e in entity_ids}
        gold = {
            e: brute_loo({r: data[r][e] for r in raters}, QUESTION_IDS, rater, 2)
            for e in entity_ids
        }
        prf = brute_prf(pred, gold, list(QUESTION_IDS))
        per_question = {qid: prf[qid]["f1"] for qid in QUESTION_IDS}
        loo_rows.append({
            "annotator": rater,
            "per_question": per_question,
            "pooled": prf["pooled"]["f1"],
            "average": sum(per_question.values()) / len(per_question),
        })
    return {
        "n_entities": len(entity_ids),
        "annotators": raters,
        "threshold": 2,
        "kappa_method": "indicator",
        "pairwise_kappa": pairs,
        "mean_kappa_per_question": mean_per_question,
        "mean_kappa": sum(p["average"] for p in pairs) / len(pairs),
        "alpha_per_question": alpha,
        "annotator_loo_f1": loo_rows,
        "mean_loo_f1": sum(r["pooled"] for r in loo_rows) / len(loo_rows),
    }


def oracle_model_report(pred, gold):
    fine = brute_prf(pred, gold, list(QUESTION_IDS))
    coarse = brute_prf(coarsen_map(pred), coarsen_map(gold), list(QUESTION_IDS))
    counts, fractions = brute_buckets(pred, gold, list(QUESTION_IDS))
    return {
        "n_entities": len(gold),
        "fine": fine,
        "coarse": coarse,
        "reliability": reliability_rows(pred, gold),
        "buckets": {
            "n": len(gold),
            "counts": {label: counts[label] for label in BUCKET_LABELS},
            "fractions": {label: fractions[label] for label in BUCKET_LABELS},
        },
    }


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    schema = reference_schema()
    rng = random.Random(MASTER_SEED)

    rows = build_entities()
    write_mentions(rows, OUT / "mentions.jsonl")
    cli_main(["ingest", "--mentions", str(OUT / "mentions.jsonl"),
              "--out", str(OUT / "entities.jsonl")])
    project = Project.open(OUT)
    entity_ids = sorted(project.entities)
    assert len(entity_ids) == 200

    # Latent gold per entity, annotators as noisy copies.
    latent = {e: {qid: random_label_set(rng, qid) for qid in QUESTION_IDS}
              for e in entity_ids}
    data = {}
    for annotator in ANNOTATORS:
        data[annotator] = {}
        for e in entity_ids:
            answers = {}
            for qid in QUESTION_IDS:
                if rng.random() < 0.78:
                    answers[qid] = set(latent[e][qid])
                else:
                    answers[qid] = random_label_set(rng, qid)
            data[annotator][e] = answers

    annotations_path = OUT / "annotations.jsonl"
    with open(annotations_path, "w", encoding="utf-8") as fh:
        for annotator in ANNOTATORS:
            for e in entity_ids:
                row = {"annotator": annotator, "entity_id": e, "round": 1,
                       "timestamp": TIMESTAMP}
                row.update({qid: sorted(data[annotator][e][qid]) for qid in QUESTION_IDS})
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    # Oracle consensus -> expected gold, serialized like the store writer.
    gold = {}
    with open(OUT / "expected_gold.jsonl", "w", encoding="utf-8") as fh:
        for e in entity_ids:
            per_rater = {a: data[a][e] for a in ANNOTATORS}
            consensus = brute_consensus(per_rater, QUESTION_IDS, threshold=2)
            gold[e] = consensus
            row = {"entity_id": e, "threshold": 2}
            for qid in QUESTION_IDS:
                row[qid] = sorted(consensus[qid])
            row["annotators"] = sorted(ANNOTATORS)
            row["no_consensus"] = sorted(q for q in QUESTION_IDS if not consensus[q])
            fh.write(json.dumps(row, sort_keys=True) + "\n")

    # Check: the package's consensus reproduces the oracle's gold byte-for-byte.
    project = Project.open(OUT)
    assert cli_main(["consensus", "--project", str(OUT), "--threshold", "2",
                     "--out", str(OUT / "gold.jsonl")]) == 0
    produced = (OUT / "gold.jsonl").read_bytes()
    expected = (OUT / "expected_gold.jsonl").read_bytes()
    assert produced == expected, "package consensus diverges from oracle"
    (OUT / "gold.jsonl").unlink()

    # Model predictions: noisy copy of consensus (never empty).
    pred_rng = random.Random(MASTER_SEED + 1)
    pred = {}
    for e in entity_ids:
        answers = {}
        for qid in QUESTION_IDS:
            labels = gold[e][qid]
            if labels and pred_rng.random() < 0.82:
                answers[qid] = set(labels)
            else:
                answers[qid] = random_label_set(pred_rng, qid)
        pred[e] = answers
    with open(OUT / "pred.jsonl", "w", encoding="utf-8") as fh:
        for e in entity_ids:
            row = {"entity_id": e}
            row.update({qid: sorted(pred[e][qid]) for qid in QUESTION_IDS})
            fh.write(json.dumps(row, sort_keys=True) + "\n")

    # Expected metrics report from the oracles; format via canonical_json.
    expected_report = {
        "agreement": oracle_agreement_report(data, entity_ids, schema),
        "model": oracle_model_report(pred, gold),
    }
    (OUT / "expected_report.json").write_text(
        canonical_json(expected_report) + "\n", encoding="utf-8"
    )

    # Check: the package's metrics pipeline reproduces the report bytes.
    agreement = compute_agreement_report(
        project.store, entity_ids=entity_ids, threshold=2, round=1
    )
    model = compute_model_report(pred, gold, schema)
    package_report = canonical_json({"agreement": agreement, "model": model}) + "\n"
    assert package_report == (OUT / "expected_report.json").read_text(), (
        "package metrics diverge from oracle report"
    )
    (OUT / "expected_report.txt").write_text(
        render_agreement_text(agreement) + "\n" + render_model_text(model),
        encoding="utf-8",
    )

    # Expected eval/test split (package-computed, frozen for byte-identity).
    assert cli_main(["split", "--entities", str(OUT / "entities.jsonl"),
                     "--seed", str(SPLIT_SEED), "--eval-size", "50",
                     "--test-size", "150", "--out", str(OUT / "split.json")]) == 0

    # Mock answers for end-to-end runs: consensus, sentinel fallback when
    # empty. A consensus union may combine "Data error" with real labels
    # (annotators split 2/2); a served answer must be parseable, so the
    # sentinel is dropped in that case.
    with open(OUT / "mock_answers.jsonl", "w", encoding="utf-8") as fh:
        for e in entity_ids:
            surface = project.entities[e].surface
            row = {"surface": surface}
            for qid in QUESTION_IDS:
                labels = sorted(gold[e][qid]) or [NOT_DEFINABLE[qid]]
                if len(labels) > 1:
                    labels = [l for l in labels if l != "Data error"]
                row[qid] = labels
            fh.write(json.dumps(row, sort_keys=True) + "\n")

    mock_script = {
        "seed": 42,
        "malformed_rate": 0.1,
        "answers_path": "mock_answers.jsonl",
    }
    (OUT / "mock_script.json").write_text(
        json.dumps(mock_script, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    counts, fractions = brute_buckets(pred, gold, list(QUESTION_IDS))
    print("fixture written to", OUT)
    print("bucket counts:", counts)
    print("no-consensus questions:",
          sum(1 for e in entity_ids for q in QUESTION_IDS if not gold[e][q]))


if __name__ == "__main__":
    main()
