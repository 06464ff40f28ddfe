"""Command-line entry point orchestrating the pipeline stages.

Every command is deterministic given identical inputs and seeds (the run
manifest's wall-clock timing block is the documented exception). Failures
print a machine-readable JSON error to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import api, ensemble, gateway, metrics, mockllm, reporting
from .corpus import (
    KIND_ORGANIZATION,
    aggregate_mentions,
    apply_hierarchy_splits,
    read_entities_jsonl,
    read_mentions_jsonl,
    read_splits_jsonl,
    write_entities_jsonl,
)
from .project import Project
from .schema import load_schema_file, reference_schema
from .store import (
    InsufficientAnnotatorsError,
    make_eval_test_split,
    read_gold_jsonl,
    read_split_json,
    write_gold_jsonl,
    write_split_json,
)
from .util import canonical_json


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True), flush=True)


def _load_schema(args) -> "object":
    if getattr(args, "schema", None):
        return load_schema_file(args.schema)
    return reference_schema()


def _params_from_args(args) -> gateway.GenerationParams:
    return gateway.GenerationParams(
        model_name=args.model,
        endpoint_url=args.endpoint,
        temperature=args.temperature,
        top_p=args.top_p,
        top_k=args.top_k,
        max_tokens=args.max_tokens,
        timeout_s=args.timeout,
    )


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    mentions = read_mentions_jsonl(args.mentions, on_error=args.on_error)
    entities = aggregate_mentions(mentions)
    write_entities_jsonl(entities, args.out)
    _emit(
        {
            "entities": len(entities),
            "mentions": sum(e.mention_count for e in entities),
            "out": str(args.out),
        }
    )
    return 0


def cmd_hierarchy_split(args) -> int:
    entities = read_entities_jsonl(args.entities)
    if args.splits:
        splits = read_splits_jsonl(args.splits)
    elif args.endpoint:
        schema_params = _params_from_args(args)
        cache = gateway.RunCache()
        splits = []
        run_records = []
        for entity in entities:
            if entity.kind != KIND_ORGANIZATION:
                continue
            result = gateway.extract_hierarchy(
                schema_params, entity, max_attempts=args.max_attempts, cache=cache
            )
            run_records.append(result.record)
            if result.split is not None:
                splits.append(result.split)
        if args.runs_out:
            gateway.write_runs_jsonl(run_records, args.runs_out)
    else:
        raise ValueError("either --splits or --endpoint is required")
    outcome = apply_hierarchy_splits(entities, splits)
    write_entities_jsonl(outcome.entities, args.out)
    if args.vocab_out:
        with open(args.vocab_out, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "roles": dict(sorted(outcome.role_vocabulary.items())),
                    "hierarchies": dict(sorted(outcome.hierarchy_vocabulary.items())),
                },
                fh,
                sort_keys=True,
                indent=2,
            )
            fh.write("\n")
    _emit(
        {
            "entities": len(outcome.entities),
            "splits_applied": outcome.applied,
            "roles": len(outcome.role_vocabulary),
            "hierarchies": len(outcome.hierarchy_vocabulary),
            "out": str(args.out),
        }
    )
    return 0


def cmd_serve(args) -> int:
    project = Project.open(args.project)
    ui_dir = args.ui
    if ui_dir is None:
        candidate = Path("frontend") / "dist"
        if candidate.is_dir():
            ui_dir = candidate
    server = api.ApiServer(project, host=args.host, port=args.port, ui_dir=ui_dir)
    _emit({"serving": server.url, "project": str(args.project)})
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def _parse_annotators(value: str | None, store) -> tuple[list[str] | None, int | None]:
    """--annotators accepts a comma list of names or a bare minimum count."""
    if value is None:
        return None, None
    if value.isdigit():
        return None, int(value)
    return [v.strip() for v in value.split(",") if v.strip()], None


def cmd_consensus(args) -> int:
    project = Project.open(args.project)
    store = project.store
    names, min_count = _parse_annotators(args.annotators, store)
    results = []
    skipped = 0
    for entity_id in store.entity_ids():
        records = store.latest_records(entity_id, names, args.round)
        if min_count is not None and len(records) < min_count:
            skipped += 1
            continue
        try:
            results.append(
                store.consensus(entity_id, names, args.threshold, args.round)
            )
        except InsufficientAnnotatorsError:
            skipped += 1
    out = Path(args.out) if args.out else project.root / "gold.jsonl"
    write_gold_jsonl(results, out)
    _emit({"gold_entities": len(results), "skipped": skipped, "out": str(out)})
    return 0


def cmd_split(args) -> int:
    entities = read_entities_jsonl(args.entities)
    split = make_eval_test_split(
        entities, seed=args.seed, eval_size=args.eval_size, test_size=args.test_size
    )
    write_split_json(split, args.out)
    _emit(
        {
            "eval": len(split.eval_ids),
            "test": len(split.test_ids),
            "seed": split.seed,
            "out": str(args.out),
        }
    )
    return 0


def _scope_ids(args) -> set[str] | None:
    if not getattr(args, "split", None):
        return None
    split = read_split_json(args.split)
    which = args.set or "all"
    if which == "eval":
        return set(split.eval_ids)
    if which == "test":
        return set(split.test_ids)
    return set(split.eval_ids) | set(split.test_ids)


def cmd_metrics(args) -> int:
    project = Project.open(args.project)
    schema = project.schema
    scope = _scope_ids(args)
    report: dict = {}
    store = project.store
    if store.records():
        entity_ids = store.entity_ids()
        if scope is not None:
            entity_ids = [e for e in entity_ids if e in scope]
        report["agreement"] = metrics.compute_agreement_report(
            store,
            entity_ids=entity_ids,
            threshold=args.threshold,
            round=args.round,
            kappa_method=args.kappa_method,
        )
    if args.pred:
        gold_path = Path(args.gold) if args.gold else project.root / "gold.jsonl"
        gold = read_gold_jsonl(gold_path, schema.question_ids)
        predicted = ensemble.read_votes_jsonl(args.pred, schema.question_ids)
        if scope is not None:
            gold = {e: a for e, a in gold.items() if e in scope}
        missing = [e for e in gold if e not in predicted]
        if missing:
            raise metrics.MetricsError(
                f"predictions missing for {len(missing)} gold entities, "
                f"e.g. {missing[:3]!r}"
            )
        report["model"] = metrics.compute_model_report(
            predicted, gold, schema, include_coarse=args.coarse
        )
    if not report:
        raise ValueError("nothing to compute: no annotations and no --pred")
    out = Path(args.out) if args.out else project.root / "report.json"
    out.write_text(canonical_json(report) + "\n", encoding="utf-8")
    if args.text:
        chunks = []
        if "agreement" in report:
            chunks.append(metrics.render_agreement_text(report["agreement"]))
        if "model" in report:
            chunks.append(metrics.render_model_text(report["model"]))
        Path(args.text).write_text("\n".join(chunks), encoding="utf-8")
    _emit({"sections": sorted(report), "out": str(out)})
    return 0


def cmd_annotate(args) -> int:
    schema = _load_schema(args)
    entities = read_entities_jsonl(args.entities)
    if args.kind:
        entities = [e for e in entities if e.kind == args.kind]
    if args.limit:
        entities = entities[: args.limit]
    params = _params_from_args(args)

    if args.templates:
        templates = []
        for i, path in enumerate(args.templates.split(",")):
            templates.append(
                gateway.load_template_file(path.strip(), template_id=None)
            )
        members = [(t, 0) for t in templates]
    else:
        if args.template:
            template = gateway.load_template_file(
                args.template, template_id=args.template_id
            )
        else:
            template = gateway.build_annotation_template(
                schema, template_id=args.template_id
            )
        members = [(template, i) for i in range(args.ensemble)]

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs_path = out_dir / "runs.jsonl"
    cache = (
        gateway.RunCache.from_jsonl(runs_path)
        if runs_path.exists() and not args.no_cache
        else gateway.RunCache()
    )
    started = time.monotonic()
    records = gateway.annotate_many(
        params,
        members,
        entities,
        schema,
        max_attempts=args.max_attempts,
        cache=cache,
        workers=args.workers,
        requests_per_second=args.rps,
        strict_markers=args.strict_markers,
    )
    elapsed = time.monotonic() - started
    gateway.write_runs_jsonl(records, runs_path)

    config = ensemble.EnsembleConfig(
        members=tuple((t.template_id, i) for t, i in members),
        vote_threshold=args.vote_threshold,
        fallback=args.fallback,
    )
    votes = {
        entity.entity_id: ensemble.vote_all(
            ensemble.runs_by_member(records, config, entity.entity_id), schema, config
        )
        for entity in entities
    }
    votes_path = out_dir / "votes.jsonl"
    ensemble.write_votes_jsonl(votes, votes_path)

    manifest = reporting.run_manifest(records, elapsed_s=elapsed)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    _emit(
        {
            "entities": len(entities),
            "runs": len(records),
            "mean_attempts": round(manifest["mean_attempts"], 4),
            "failed_runs": manifest["total_failed_runs"],
            "out_dir": str(out_dir),
        }
    )
    return 0


def cmd_optimize(args) -> int:
    schema = _load_schema(args)
    if args.stage == "design":
        entities = read_entities_jsonl(args.entities)
        ids = [e.entity_id for e in entities]
        design = ensemble.make_split_design(
            ids,
            k_splits=args.k_splits,
            opt_size=args.opt_size,
            eval_size=args.eval_size,
            seed=args.seed,
        )
        ensemble.write_design_json(design, args.out)
        _emit({"n": design.n, "k_splits": design.k_splits, "out": str(args.out)})
        return 0
    if args.stage == "feedback":
        design = ensemble.read_design_json(args.design)
        entities = {e.entity_id: e for e in read_entities_jsonl(args.entities)}
        gold = read_gold_jsonl(args.gold, schema.question_ids)
        runs = ensemble.read_votes_jsonl(args.pred, schema.question_ids)
        if args.template:
            template = gateway.load_template_file(args.template, args.template_id)
        else:
            template = gateway.build_annotation_template(schema, args.template_id)
        opt_ids = sorted(design.opt_set(args.split_index))
        document = ensemble.build_error_feedback(
            template, [entities[e] for e in opt_ids], runs, gold, schema
        )
        Path(args.out).write_text(document, encoding="utf-8")
        _emit({"split_index": args.split_index, "out": str(args.out)})
        return 0
    if args.stage == "evaluate":
        design = ensemble.read_design_json(args.design)
        gold = read_gold_jsonl(args.gold, schema.question_ids)
        candidates = ensemble.read_candidates_jsonl(args.candidates)
        predictions = {}
        for record in gateway.read_runs_jsonl(args.runs):
            if record.parsed is not None:
                predictions.setdefault(record.template_id, {})[
                    record.entity_id
                ] = record.parsed
        ranked, winners = ensemble.evaluate_candidates(
            candidates, design, gold, predictions, schema
        )
        ensemble.write_candidates_jsonl(ranked, args.out)
        _emit(
            {
                "candidates": len(ranked),
                "winners": [c.template_id for c in winners],
                "out": str(args.out),
            }
        )
        return 0
    raise ValueError(f"unknown optimize stage {args.stage!r}")


def cmd_report(args) -> int:
    schema = _load_schema(args)
    entities = {e.entity_id: e for e in read_entities_jsonl(args.entities)}
    labels = ensemble.read_votes_jsonl(args.labels, schema.question_ids)
    rows = reporting.label_distribution(labels, entities, weighting=args.weighting)
    stats = reporting.multilabel_stats(labels)
    report = {
        "weighting": args.weighting,
        "n_entities": len(labels),
        "total_mentions": sum(entities[e].mention_count for e in labels),
        "distribution": [row.to_dict() for row in rows],
        "multilabel": stats,
    }
    if args.runs:
        records = gateway.read_runs_jsonl(args.runs)
        report["manifest"] = reporting.run_manifest(records)
    out = Path(args.out)
    out.write_text(canonical_json(report) + "\n", encoding="utf-8")
    if args.text:
        chunks = [
            reporting.render_distribution_text(rows, args.weighting),
            reporting.render_multilabel_text(stats),
        ]
        if "manifest" in report:
            chunks.append(reporting.render_manifest_text(report["manifest"]))
        Path(args.text).write_text("\n".join(chunks), encoding="utf-8")
    if args.csv:
        reporting.write_distribution_csv(rows, args.csv)
    if args.rank_csv:
        with open(args.rank_csv, "w", encoding="utf-8") as fh:
            fh.write("rank,mention_count\n")
            for rank, count in reporting.rank_series(list(entities.values())):
                fh.write(f"{rank},{count}\n")
    _emit({"rows": len(rows), "out": str(out)})
    return 0


def cmd_mock_llm(args) -> int:
    script = mockllm.MockScript.from_file(args.script)
    server = mockllm.MockLLMServer(script, host=args.host, port=args.port)
    _emit({"serving": server.url, "script": str(args.script)})
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entilabel",
        description="Categorize historical hobby/organization names against a "
        "multi-question, multi-label schema.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="aggregate mention JSONL into entities")
    p.add_argument("--mentions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--on-error", choices=["fail", "skip"], default="fail")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("hierarchy-split", help="apply or extract role/hierarchy splits")
    p.add_argument("--entities", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--splits", help="splits.jsonl to apply")
    p.add_argument("--vocab-out")
    p.add_argument("--runs-out")
    _add_llm_args(p, required=False)
    p.set_defaults(func=cmd_hierarchy_split)

    p = sub.add_parser("serve", help="run the annotation API (and UI, if built)")
    p.add_argument("--project", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--ui", help="directory of static UI assets")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("consensus", help="compute k-of-n consensus gold")
    p.add_argument("--project", required=True)
    p.add_argument("--threshold", type=int, default=2)
    p.add_argument("--annotators", help="comma list of names, or a minimum count")
    p.add_argument("--round", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_consensus)

    p = sub.add_parser("split", help="stratified eval/test split of an entity pool")
    p.add_argument("--entities", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-size", type=int, default=50)
    p.add_argument("--test-size", type=int, default=150)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("metrics", help="agreement and model-vs-gold reports")
    p.add_argument("--project", required=True)
    p.add_argument("--gold")
    p.add_argument("--pred", help="votes.jsonl (or any gold-shaped file)")
    p.add_argument("--split", help="split.json for --set scoping")
    p.add_argument("--set", choices=["eval", "test", "all"])
    p.add_argument("--threshold", type=int, default=2)
    p.add_argument("--round", type=int)
    p.add_argument("--kappa-method", choices=["indicator", "set_match"], default="indicator")
    p.add_argument("--coarse", dest="coarse", action="store_true", default=True,
                   help="include coarse-schema evaluation (default)")
    p.add_argument("--no-coarse", dest="coarse", action="store_false")
    p.add_argument("--out")
    p.add_argument("--text")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("annotate", help="LLM annotation runs plus ensemble voting")
    p.add_argument("--entities", required=True)
    p.add_argument("--schema")
    p.add_argument("--kind", choices=["hobby", "organization"])
    p.add_argument("--limit", type=int)
    p.add_argument("--template", help="prompt template file")
    p.add_argument("--template-id", default="orig")
    p.add_argument("--templates", help="comma list of template files (multi-prompt ensemble)")
    p.add_argument("--ensemble", type=int, default=1, help="self-ensemble size")
    p.add_argument("--vote-threshold", type=int)
    p.add_argument("--fallback", choices=["flag_unresolved", "plurality"],
                   default="flag_unresolved")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--max-attempts", type=int, default=5)
    p.add_argument("--workers", type=int, default=8)
    p.add_argument("--rps", type=float, help="request rate limit per second")
    p.add_argument("--strict-markers", action="store_true")
    p.add_argument("--no-cache", action="store_true")
    _add_llm_args(p, required=True)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("optimize", help="prompt-optimization harness")
    stage = p.add_subparsers(dest="stage", required=True)

    d = stage.add_parser("design", help="balanced optimization/evaluation split design")
    d.add_argument("--entities", required=True)
    d.add_argument("--schema")
    d.add_argument("--k-splits", type=int, default=5)
    d.add_argument("--opt-size", type=int, default=20)
    d.add_argument("--eval-size", type=int, default=30)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_optimize, stage="design")

    f = stage.add_parser("feedback", help="error-feedback document for an optimizer")
    f.add_argument("--design", required=True)
    f.add_argument("--split-index", type=int, required=True)
    f.add_argument("--entities", required=True)
    f.add_argument("--schema")
    f.add_argument("--gold", required=True)
    f.add_argument("--pred", required=True)
    f.add_argument("--template")
    f.add_argument("--template-id", default="orig")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_optimize, stage="feedback")

    e = stage.add_parser("evaluate", help="score candidate prompts vs parents")
    e.add_argument("--design", required=True)
    e.add_argument("--schema")
    e.add_argument("--gold", required=True)
    e.add_argument("--candidates", required=True)
    e.add_argument("--runs", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_optimize, stage="evaluate")

    p = sub.add_parser("report", help="distribution and multi-label statistics")
    p.add_argument("--entities", required=True)
    p.add_argument("--labels", required=True, help="final labels (votes.jsonl / gold.jsonl)")
    p.add_argument("--schema")
    p.add_argument("--weighting", choices=["unique", "mentions"], default="unique")
    p.add_argument("--runs", help="runs.jsonl for the run manifest section")
    p.add_argument("--out", required=True)
    p.add_argument("--text")
    p.add_argument("--csv")
    p.add_argument("--rank-csv", help="rank,mention_count series for distribution curves")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("mock-llm", help="deterministic scripted chat-completions mock")
    p.add_argument("--script", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8099)
    p.set_defaults(func=cmd_mock_llm)

    return parser


def _add_llm_args(p: argparse.ArgumentParser, required: bool) -> None:
    p.add_argument("--endpoint", required=required, help="chat-completions base URL")
    p.add_argument("--model", default="mock", help="model name for the request")
    p.add_argument("--temperature", type=float, default=0.3)
    p.add_argument("--top-p", type=float, default=1.0)
    p.add_argument("--top-k", type=int, default=40)
    p.add_argument("--max-tokens", type=int, default=300)
    p.add_argument("--timeout", type=float, default=60.0)
    if "--max-attempts" not in {a.option_strings[0] for a in p._actions if a.option_strings}:
        p.add_argument("--max-attempts", type=int, default=5)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        sys.stderr.write(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n"
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
