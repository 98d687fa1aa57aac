"""
cli.py - Command-Line Interface

    argpipe <subcommand> [options]

  ingest           validate corpus files (or raw .txt with --raw) → corpus.jsonl
  stats            token statistics of documents and reference summaries
  split            seeded train / validation / test split
  segment          C99 segmentation → segments.jsonl
  label            gold argumentative labels → labels.jsonl
  train            fit the segment classifier → model.json
  predict          classify segments → predictions.jsonl
  eval-classifier  precision / recall / F1 of a model on gold labels
  summarize        summaries of one method and parameter setting → summaries.jsonl
  score            automatic metrics of candidate summaries → report.json | report.csv
  experiment       full parameter grid → results/, report.md, report.csv
  serve-mock       run the offline HTTP completion / embedding service

Options shared by every subcommand: --config, --endpoint, --api-key-env,
-v/--quiet, --out-dir, --seed, --json, --workers. Settings in a --config
file (same keys as experiment configs) are defaults; flags override them.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict
from typing import Any, Dict, Iterable, List, Optional, Sequence

from config import (
    API_KEY_ENV,
    DECISION_THRESHOLD,
    DEFAULT_SEED,
    LOG_FORMAT,
    LOG_LEVEL,
    MOCK_HOST,
    MOCK_PORT,
    OUTPUT_DIR,
    SPLIT_RATIOS,
    TRAIN_EPOCHS,
    TRAIN_L2,
    TRAIN_LEARNING_RATE,
)
from corpus import (
    CaseDocument,
    corpus_stats,
    ingest,
    ingest_raw,
    render_stats,
    serialize,
    split_corpus,
    write_split,
)
from errors import (
    ArgpipeError,
    DuplicateCaseId,
    MalformedRecord,
    NoArgumentativeSegments,
    ProviderFailure,
    UsageError,
)
from experiment import (
    ExperimentConfig,
    argumentative_plan,
    build_completion_provider,
    build_providers,
    config_from_mapping,
    load_config,
    read_key_values,
    render_report,
    run_experiment,
)
from labeler import (
    TrainingParams,
    classification_report,
    is_annotated,
    label_gold,
    load_model,
    predict_segments,
    save_model,
    segment_record,
    train_classifier,
)
from metrics import MetricOptions, aggregate_reports, corpus_bleu, evaluate_pair
from segmenter import (
    SegmenterParams,
    load_segmentations,
    render_segment_stats,
    segment_corpus,
    segment_count_stats,
)
from summarizer import (
    DecodingParams,
    SummaryMethod,
    TokenBudgetPolicy,
    average_cost_per_summary,
    summarize_document,
)
from tokenizer import normalize

logger = logging.getLogger(__name__)

PATH_KEYS = ("corpus", "classifier_path")


class _Parser(argparse.ArgumentParser):
    """argparse that raises UsageError instead of exiting."""

    def error(self, message):
        raise UsageError(message)


# ── Shared plumbing ───────────────────────────────────────────────────────────

def configure_logging(verbose: int = 0, quiet: bool = False) -> None:
    if quiet:
        level = logging.WARNING
    elif verbose:
        level = logging.DEBUG
    else:
        level = getattr(logging, LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt="%H:%M:%S", stream=sys.stderr, force=True)


def _out_path(args, name: str) -> str:
    """Every output lands inside --out-dir, whatever directory ``name`` names."""
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, os.path.basename(name))


def _write_jsonl(path: str, records: Iterable[Dict[str, Any]]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
            count += 1
    return count


def _emit(args, payload: Dict[str, Any], text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True, default=str))
    else:
        print(text)


def _pipeline_config(args, corpus_path: Optional[str], **flags: Any) -> ExperimentConfig:
    """Settings from --config, then flags; paths end up absolute."""
    values: Dict[str, Any] = {}
    if args.config:
        base = os.path.dirname(os.path.abspath(args.config))
        values = dict(read_key_values(args.config))
        for key in PATH_KEYS:
            if values.get(key) and not os.path.isabs(values[key]):
                values[key] = os.path.normpath(os.path.join(base, values[key]))

    overrides = {
        "corpus": corpus_path,
        "endpoint": args.endpoint,
        "seed": args.seed,
        "workers": args.workers,
        **flags,
    }
    for key, value in overrides.items():
        if value is None:
            continue
        values[key] = os.path.abspath(value) if key in PATH_KEYS else value
    if "corpus" not in values:
        raise UsageError("a corpus path is required")
    return config_from_mapping(values, os.getcwd())


def _segmentations(args, corpus: Sequence[CaseDocument], cfg: ExperimentConfig, embedder):
    if getattr(args, "segments_file", None):
        segs = load_segmentations(args.segments_file)
        wanted = {d.case_id for d in corpus}
        missing = wanted - {s.doc_id for s in segs}
        if missing:
            raise MalformedRecord(0, f"no segmentation for {sorted(missing)[:5]}")
        return [s for s in segs if s.doc_id in wanted]
    target = None if getattr(args, "auto", False) else getattr(args, "target_segments", None) or cfg.target_segments
    return segment_corpus(corpus, embedder, SegmenterParams(cfg.mask_size, target), cfg.workers)


# ── Subcommands ───────────────────────────────────────────────────────────────

def cmd_ingest(args) -> int:
    docs: List[CaseDocument] = []
    if args.raw:
        docs = [ingest_raw(p) for p in args.paths]
    else:
        for path in args.paths:
            docs.extend(ingest(path))
    seen = set()
    for doc in docs:
        if doc.case_id in seen:
            raise DuplicateCaseId(doc.case_id)
        seen.add(doc.case_id)

    out = _out_path(args, "corpus.jsonl")
    serialize(docs, out)
    payload = {
        "documents": len(docs),
        "annotated": sum(1 for d in docs if is_annotated(d)),
        "with_reference": sum(1 for d in docs if d.reference_summary),
        "path": out,
    }
    _emit(args, payload, (
        f"{payload['documents']} documents ({payload['annotated']} annotated, "
        f"{payload['with_reference']} with reference summaries) → {out}"
    ))
    return 0


def cmd_stats(args) -> int:
    stats = corpus_stats(ingest(args.corpus))
    _emit(args, asdict(stats), render_stats(stats))
    return 0


def cmd_split(args) -> int:
    corpus = ingest(args.corpus)
    try:
        ratios = tuple(float(r) for r in args.ratios.split(","))
    except ValueError as exc:
        raise UsageError(f"--ratios must be three comma-separated numbers, got {args.ratios!r}") from exc
    split = split_corpus(corpus, ratios, _pipeline_config(args, args.corpus).seed)
    os.makedirs(args.out_dir, exist_ok=True)
    paths = write_split(split, corpus, args.out_dir)
    _emit(args, {**split.as_dict(), "paths": paths}, (
        f"train {len(split.train)} / validation {len(split.validation)} / test {len(split.test)} "
        f"(seed {split.seed}) → {args.out_dir}"
    ))
    return 0


def cmd_segment(args) -> int:
    corpus = ingest(args.corpus)
    cfg = _pipeline_config(args, args.corpus, embeddings=args.embeddings, mask_size=args.mask_size)
    _, embedder = build_providers(cfg, args.api_key_env)
    segs = _segmentations(args, corpus, cfg, embedder)
    out = _out_path(args, "segments.jsonl")
    _write_jsonl(out, (s.to_record() for s in segs))

    payload: Dict[str, Any] = {"documents": len(segs), "segments": sum(len(s) for s in segs), "path": out}
    text = f"{payload['documents']} documents → {payload['segments']} segments → {out}"
    annotated = [d for d in corpus if is_annotated(d)]
    if annotated:
        gold = label_gold(annotated, [s for s in segs if s.doc_id in {d.case_id for d in annotated}])
        per_doc: Dict[str, List[int]] = {}
        for seg in gold:
            per_doc.setdefault(seg.doc_id, []).append(int(seg.gold))
        rows = segment_count_stats(list(per_doc.values()))
        payload["stats"] = rows
        text += "\n\n" + render_segment_stats(rows)
    _emit(args, payload, text)
    return 0


def cmd_label(args) -> int:
    corpus = ingest(args.corpus)
    cfg = _pipeline_config(args, args.corpus, embeddings=args.embeddings, mask_size=args.mask_size)
    _, embedder = build_providers(cfg, args.api_key_env)
    labeled = label_gold(corpus, _segmentations(args, corpus, cfg, embedder))
    out = _out_path(args, "labels.jsonl")
    _write_jsonl(out, (segment_record(s) for s in labeled))

    per_doc: Dict[str, List[int]] = {}
    for seg in labeled:
        per_doc.setdefault(seg.doc_id, []).append(int(seg.gold))
    rows = segment_count_stats(list(per_doc.values()))
    _emit(args, {"segments": len(labeled), "stats": rows, "path": out}, render_segment_stats(rows))
    return 0


def cmd_train(args) -> int:
    corpus = ingest(args.corpus)
    cfg = _pipeline_config(args, args.corpus, embeddings=args.embeddings, mask_size=args.mask_size)
    _, embedder = build_providers(cfg, args.api_key_env)
    labeled = label_gold(corpus, _segmentations(args, corpus, cfg, embedder))
    params = TrainingParams(
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        l2=args.l2,
        seed=cfg.seed,
        class_weighting=not args.no_class_weights,
    )
    model = train_classifier(labeled, corpus, embedder, params)
    out = _out_path(args, "model.json")
    save_model(model, out)
    _emit(args, {"path": out, "dim": model.dim, "training_meta": model.training_meta}, (
        f"trained on {len(labeled)} segments, final loss "
        f"{model.training_meta['final_loss']:.6f} → {out}"
    ))
    return 0


def cmd_predict(args) -> int:
    corpus = ingest(args.corpus)
    cfg = _pipeline_config(args, args.corpus, embeddings=args.embeddings, mask_size=args.mask_size)
    _, embedder = build_providers(cfg, args.api_key_env)
    model = load_model(args.model)
    predicted = predict_segments(model, corpus, _segmentations(args, corpus, cfg, embedder), embedder, args.threshold)
    out = _out_path(args, "predictions.jsonl")
    _write_jsonl(out, (segment_record(s) for s in predicted))
    positive = sum(1 for s in predicted if int(s.predicted) == 1)
    _emit(args, {"segments": len(predicted), "argumentative": positive, "path": out},
          f"{positive} of {len(predicted)} segments argumentative → {out}")
    return 0


def cmd_eval_classifier(args) -> int:
    corpus = ingest(args.corpus)
    cfg = _pipeline_config(args, args.corpus, embeddings=args.embeddings, mask_size=args.mask_size)
    _, embedder = build_providers(cfg, args.api_key_env)
    model = load_model(args.model)
    predicted = predict_segments(model, corpus, _segmentations(args, corpus, cfg, embedder), embedder, args.threshold)
    scored = [s for s in predicted if s.gold is not None]
    report = classification_report([int(s.gold) for s in scored], [int(s.predicted) for s in scored])
    out = _out_path(args, "classifier_report.json")
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(report.as_dict(), fh, indent=2, sort_keys=True)

    lines = ["| Class | Precision | Recall | F1 | Support |", "|---|---|---|---|---|"]
    for name, row in report.per_class.items():
        lines.append(
            f"| {name} | {row['precision'] * 100:.2f} | {row['recall'] * 100:.2f} "
            f"| {row['f1'] * 100:.2f} | {row['support']} |"
        )
    lines.append(f"\nmacro F1 {report.macro_f1 * 100:.2f} over {report.count} segments")
    _emit(args, report.as_dict(), "\n".join(lines))
    return 0


def cmd_summarize(args) -> int:
    corpus = ingest(args.corpus)
    classifier_path = args.model if args.labels == "model" else args.predictions if args.labels == "injected" else None
    cfg = _pipeline_config(
        args, args.corpus,
        profile=args.profile, budget=args.budget, provider=args.provider,
        embeddings=args.embeddings, mask_size=args.mask_size,
        classifier=args.labels, classifier_path=classifier_path,
    )
    method = SummaryMethod(args.method)
    if args.profile:
        cfg = cfg.model_copy(update={"method_profiles": {}})
    _, embedder = build_providers(cfg, args.api_key_env)
    llm = build_completion_provider(cfg.provider, cfg.profile_for(method), cfg.endpoint, args.api_key_env)
    plan = {}
    if method == SummaryMethod.ARG_SEGMENTS:
        plan = argumentative_plan(cfg, corpus, embedder, _segmentations(args, corpus, cfg, embedder))

    params = DecodingParams(args.temperature, args.max_tokens)
    policy = TokenBudgetPolicy(cfg.budget_for(method))
    records, failed = [], {}
    for doc in corpus:
        segmentation, labels = plan.get(doc.case_id, (None, None))
        try:
            records.append(summarize_document(
                doc, method, llm, params, policy, segmentation, labels,
                profile=cfg.profile_for(method), max_in_flight=cfg.workers,
            ))
        except (NoArgumentativeSegments, ProviderFailure) as exc:
            logger.warning("%s: %s", doc.case_id, exc)
            failed[doc.case_id] = f"{type(exc).__name__}: {exc}"

    out = _out_path(args, "summaries.jsonl")
    _write_jsonl(out, (r.to_record() for r in records))
    total = sum(r.cost for r in records)
    payload = {
        "summaries": len(records),
        "failed": failed,
        "total_cost": total,
        "average_cost": average_cost_per_summary(records),
        "path": out,
    }
    _emit(args, payload, (
        f"{len(records)} summaries ({method.value}, T={args.temperature:g}, max_tokens={args.max_tokens}), "
        f"estimated cost ${total:.5f} (${payload['average_cost']:.5f} per summary) → {out}"
        + (f"\nno summary for: {', '.join(sorted(failed))}" if failed else "")
    ))
    return 0


def _read_candidates(path: str) -> Dict[str, str]:
    candidates = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                candidates[str(record["case_id"])] = str(record["summary"])
            except (ValueError, KeyError) as exc:
                raise MalformedRecord(line_number, f"candidate needs case_id and summary: {exc}") from exc
    return candidates


def cmd_score(args) -> int:
    candidates = _read_candidates(args.candidates)
    references = {d.case_id: d.reference_summary for d in ingest(args.references) if d.reference_summary}
    ids = sorted(set(candidates) & set(references))
    if not ids:
        raise MalformedRecord(0, "no case_id has both a candidate and a reference summary")
    missing = sorted(set(candidates) - set(references))
    if missing:
        logger.warning("%d candidates without a reference skipped: %s", len(missing), ", ".join(missing[:5]))

    embedder = None
    if not args.no_bertscore:
        cfg = _pipeline_config(args, args.references, embeddings=args.embeddings)
        _, embedder = build_providers(cfg, args.api_key_env)
    options = MetricOptions(bertscore_provider=embedder)
    reports = {cid: evaluate_pair(candidates[cid], references[cid], options) for cid in ids}
    aggregate = aggregate_reports(list(reports.values()))
    aggregate["corpus_bleu"] = corpus_bleu(
        [(normalize(candidates[cid]), [normalize(references[cid])]) for cid in ids]
    )

    out = _out_path(args, args.out)
    if out.endswith(".csv"):
        with open(out, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["case_id", "candidate_length", "rouge1", "rouge2", "rougeL", "bleu", "meteor", "bertscore"])
            for cid, r in reports.items():
                writer.writerow([
                    cid, r.candidate_length, r.rouge1.f1, r.rouge2.f1, r.rougeL.f1, r.bleu, r.meteor,
                    r.bertscore.f1 if r.bertscore is not None else "",
                ])
    else:
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(
                {"documents": {cid: r.as_dict() for cid, r in reports.items()}, "aggregate": aggregate},
                fh, indent=2, sort_keys=True,
            )

    text = "\n".join(
        [f"{len(ids)} pairs scored → {out}"]
        + [f"  {key:<16} {value:.4f}" for key, value in aggregate.items() if key != "count"]
    )
    _emit(args, {"aggregate": aggregate, "path": out}, text)
    return 0


def cmd_experiment(args) -> int:
    if not args.config:
        raise UsageError("experiment needs --config <file>")
    config = load_config(args.config)
    updates = {k: v for k, v in (("endpoint", args.endpoint), ("seed", args.seed), ("workers", args.workers)) if v is not None}
    if updates:
        config = config_from_mapping({**config.model_dump(), **updates})
    result = run_experiment(config, out_dir=args.out_dir, api_key_env=args.api_key_env)
    payload = {
        "grids": {m.value: [r.as_dict() for r in g.rows] for m, g in result.grids.items()},
        "comparison": [r.as_dict() for r in result.comparison.rows] if result.comparison else None,
        "documents": list(result.documents),
        "excluded": result.excluded,
        "total_cost": result.total_cost,
        "paths": result.paths,
    }
    _emit(args, payload, render_report(result))
    return 0


def cmd_serve_mock(args) -> int:
    import uvicorn

    from mock_server import app

    print()
    print("=" * 60)
    print("  argpipe mock provider")
    print("=" * 60)
    print(f"  Completions : http://{args.host}:{args.port}/completions")
    print(f"  Embeddings  : http://{args.host}:{args.port}/embeddings")
    print(f"  API docs    : http://{args.host}:{args.port}/docs")
    print("=" * 60)
    print()
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ── Parser ────────────────────────────────────────────────────────────────────

def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Flat key = value settings file")
    common.add_argument("--endpoint", help="Base URL of the HTTP providers")
    common.add_argument("--api-key-env", default=API_KEY_ENV, help="Environment variable holding the API key")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("--quiet", action="store_true")
    common.add_argument("--out-dir", default=OUTPUT_DIR, help="Directory for every output file")
    common.add_argument("--seed", type=int, help=f"Seed for all randomness (default {DEFAULT_SEED})")
    common.add_argument("--json", action="store_true", help="Machine-readable output")
    common.add_argument("--workers", type=int, help="Concurrent provider calls / documents")
    return common


def _pipeline_options() -> argparse.ArgumentParser:
    pipeline = argparse.ArgumentParser(add_help=False)
    pipeline.add_argument("--mask", "--mask-size", dest="mask_size", type=int, help="C99 rank mask size (odd)")
    count = pipeline.add_mutually_exclusive_group()
    count.add_argument("--segments", "--target-segments", dest="target_segments", type=int, metavar="N",
                       help="Fixed segment count per document")
    count.add_argument("--auto", action="store_true", help="Choose the segment count per document (default)")
    pipeline.add_argument("--segments-file", help="segments.jsonl to reuse instead of segmenting")
    return pipeline


def _embedding_options(*flags: str) -> argparse.ArgumentParser:
    embedding = argparse.ArgumentParser(add_help=False)
    embedding.add_argument(*flags, dest="embeddings", choices=("builtin", "http"), help="Sentence embedding provider")
    return embedding


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="argpipe", description="Argumentative-segment summarization pipeline")
    sub = parser.add_subparsers(dest="command", metavar="subcommand", required=True)
    common = _common_options()
    pipeline = _pipeline_options()
    segment_provider = _embedding_options("--provider", "--embeddings")

    def add(name: str, handler, help_text: str, *parents: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, parents=[common, *parents])
        p.set_defaults(handler=handler)
        return p

    p = add("ingest", cmd_ingest, "Validate and normalize corpus files")
    p.add_argument("paths", nargs="+")
    p.add_argument("--raw", action="store_true", help="Inputs are plain-text decisions, one per file")

    p = add("stats", cmd_stats, "Token statistics")
    p.add_argument("corpus")

    p = add("split", cmd_split, "Seeded train/validation/test split")
    p.add_argument("corpus")
    p.add_argument("--out", dest="out_dir", default=argparse.SUPPRESS, help="Same as --out-dir")
    p.add_argument("--ratios", default=",".join(str(r) for r in SPLIT_RATIOS))

    p = add("segment", cmd_segment, "C99 segmentation", pipeline, segment_provider)
    p.add_argument("corpus")

    p = add("label", cmd_label, "Gold argumentative labels", pipeline, segment_provider)
    p.add_argument("corpus")
    p.add_argument("--gold", action="store_true", help="IRC rule labels (the only source this command writes)")

    p = add("train", cmd_train, "Train the segment classifier", pipeline, segment_provider)
    p.add_argument("corpus")
    p.add_argument("--epochs", type=int, default=TRAIN_EPOCHS)
    p.add_argument("--lr", "--learning-rate", dest="learning_rate", type=float, default=TRAIN_LEARNING_RATE)
    p.add_argument("--l2", type=float, default=TRAIN_L2)
    p.add_argument("--no-class-weights", action="store_true")

    for name, handler, help_text in (
        ("predict", cmd_predict, "Classify segments"),
        ("eval-classifier", cmd_eval_classifier, "Evaluate a classifier on gold labels"),
    ):
        p = add(name, handler, help_text, pipeline, segment_provider)
        p.add_argument("corpus")
        p.add_argument("--model", required=True)
        p.add_argument("--threshold", type=float, default=DECISION_THRESHOLD)

    p = add("summarize", cmd_summarize, "Summarize a corpus", pipeline, _embedding_options("--embeddings"))
    p.add_argument("corpus")
    p.add_argument("--method", choices=[m.value for m in SummaryMethod], default=SummaryMethod.ARG_SEGMENTS.value)
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--max-tokens", type=int, default=128)
    p.add_argument("--budget", type=int)
    p.add_argument("--profile", choices=("small", "large"))
    p.add_argument("--provider", choices=("mock", "http"))
    p.add_argument("--labels", choices=("gold", "model", "injected"), help="Label source (default gold)")
    p.add_argument("--model", help="Classifier model for --labels model")
    p.add_argument("--predictions", help="Injected predictions for --labels injected")

    p = add("score", cmd_score, "Score candidate summaries")
    p.add_argument("--candidates", required=True, help="summaries.jsonl")
    p.add_argument("--references", required=True, help="Corpus with reference summaries")
    p.add_argument("--out", default="report.json", help="report.json or report.csv")
    p.add_argument("--embeddings", choices=("builtin", "http"))
    p.add_argument("--no-bertscore", action="store_true")

    add("experiment", cmd_experiment, "Run a configured experiment grid")

    p = add("serve-mock", cmd_serve_mock, "Serve the mock HTTP providers")
    p.add_argument("--host", default=MOCK_HOST)
    p.add_argument("--port", type=int, default=MOCK_PORT)
    return parser


# ── Dispatch ──────────────────────────────────────────────────────────────────

def _report_error(args, exc: BaseException) -> None:
    if getattr(args, "json", False):
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
    else:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(parser.format_usage())
        print(f"error: UsageError: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:   # --help
        return int(exc.code or 0)

    configure_logging(args.verbose, args.quiet)
    try:
        return args.handler(args)
    except UsageError as exc:
        _report_error(args, exc)
        return 2
    except (ArgpipeError, OSError, UnicodeDecodeError) as exc:
        logger.debug("command failed", exc_info=True)
        _report_error(args, exc)
        return 1
