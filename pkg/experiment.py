"""
experiment.py - Parameter-Grid Experiments and Result Tables

One run:

  corpus ──evaluation split──► documents
         ──segment + label (argseg only)──► argumentative spans
         ──for each (method, temperature, max_tokens) cell:
               summarize every document, score against its reference
         ──aggregate──► one row per cell + an average row
         ──render──► report.md / report.csv

Checkpoints
───────────
  Every document result is appended to results/<cell>.jsonl as soon as it is
  known. A rerun skips documents already present, so an interrupted run picks
  up where it stopped. Each line carries a fingerprint of the settings that
  affect results; a file written under other settings is discarded.

Failures
────────
  A document whose summary fails (provider error after retries, or no
  argumentative segment) in any cell is excluded from every cell, and listed
  in the report. Rows therefore always average the same document set.

Config file (flat key = value, '#' comments, comma-separated lists):

    corpus            = tiny.jsonl          # relative to the config file
    methods           = baseline, argseg
    profile           = small               # small | large
    method_profiles   = baseline: large     # optional per-method profile override
    temperatures      = 0, 0.3, 0.5, 0.8
    max_tokens        = 32, 64, 128         # default: the profile's grid
    budget            = 2500                # default: the profile's budget
    seed              = 7
    classifier        = gold                # gold | model | injected
    classifier_path   = model.json          # model file or injected predictions
    evaluation_split  = test                # test | all
    mask_size         = 11
    target_segments   = 2                   # default: chosen per document
    provider          = mock                # mock | http
    embeddings        = builtin             # builtin | http
"""

import csv
import hashlib
import io
import itertools
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config import (
    API_KEY_ENV,
    DEFAULT_PROFILE,
    DEFAULT_SEED,
    EMBEDDING_DIM,
    MAX_IN_FLIGHT,
    OUTPUT_DIR,
    PROFILES,
    PROVIDER_URL,
    RANK_MASK_SIZE,
    SPLIT_RATIOS,
    TEMPERATURE_GRID,
)
from corpus import CaseDocument, ingest, select, split_corpus
from embeddings import EmbeddingProvider, make_provider
from errors import ConfigError, EmptyRows, NoArgumentativeSegments, ProviderFailure
from labeler import (
    SegmentLabel,
    apply_injected,
    label_gold,
    labels_by_doc,
    load_injected_predictions,
    load_model,
    predict_segments,
)
from llm_client import CompletionProvider, HttpCompletionProvider, MockCompletionProvider
from metrics import MetricOptions, corpus_bleu, evaluate_pair
from segmenter import Segmentation, SegmenterParams, segment_corpus
from summarizer import (
    SUFFIX_TOKENS,
    DecodingParams,
    SummaryMethod,
    TokenBudgetPolicy,
    summarize_document,
)
from tokenizer import TOKENIZER_NAME, normalize

logger = logging.getLogger(__name__)

# one provider for every method, or one per method (per-method profiles)
LlmChoice = Union[CompletionProvider, Dict[SummaryMethod, CompletionProvider]]

COLUMNS = (
    "Parameters",
    "Avg. summary length",
    "Rouge-1",
    "Rouge-2",
    "Rouge-L",
    "BLEU",
    "METEOR",
    "BERTScore",
)

METHOD_NAMES = {
    SummaryMethod.BASELINE: "No Arg Seg.",
    SummaryMethod.ARG_SEGMENTS: "Arg Seg.",
}


# ── Configuration ─────────────────────────────────────────────────────────────

def _csv_tuple(value: Any) -> Any:
    if isinstance(value, str):
        return tuple(part.strip() for part in value.split(",") if part.strip())
    return value


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    corpus: str
    methods: Tuple[SummaryMethod, ...] = (SummaryMethod.ARG_SEGMENTS,)
    profile: str = DEFAULT_PROFILE
    method_profiles: Dict[SummaryMethod, str] = Field(default_factory=dict)
    temperatures: Tuple[float, ...] = TEMPERATURE_GRID
    max_tokens: Optional[Tuple[int, ...]] = None
    budget: Optional[int] = Field(default=None, gt=0)
    seed: int = DEFAULT_SEED
    classifier: Literal["gold", "model", "injected"] = "gold"
    classifier_path: Optional[str] = None
    evaluation_split: Literal["test", "all"] = "test"
    mask_size: int = RANK_MASK_SIZE
    target_segments: Optional[int] = Field(default=None, ge=1)
    provider: Literal["mock", "http"] = "mock"
    embeddings: Literal["builtin", "http"] = "builtin"
    endpoint: str = PROVIDER_URL
    bertscore: bool = True
    workers: int = Field(default=MAX_IN_FLIGHT, ge=1)

    @field_validator("methods", "temperatures", "max_tokens", mode="before")
    @classmethod
    def _split_lists(cls, value):
        return _csv_tuple(value)

    @field_validator("method_profiles", mode="before")
    @classmethod
    def _split_pairs(cls, value):
        if not isinstance(value, str):
            return value
        pairs = {}
        for part in value.split(","):
            if not part.strip():
                continue
            if ":" not in part:
                raise ValueError(f"expected method:profile, got {part.strip()!r}")
            method, profile = (p.strip() for p in part.split(":", 1))
            pairs[method] = profile
        return pairs

    @field_validator("methods")
    @classmethod
    def _methods(cls, value):
        if not value:
            raise ValueError("at least one method is required")
        if len(set(value)) != len(value):
            raise ValueError("methods must not repeat")
        return value

    @field_validator("temperatures")
    @classmethod
    def _temperatures(cls, value):
        if not value:
            raise ValueError("at least one temperature is required")
        for t in value:
            if not 0.0 <= t <= 1.0:
                raise ValueError(f"temperature {t} outside [0, 1]")
        return value

    @field_validator("max_tokens")
    @classmethod
    def _max_tokens(cls, value):
        if value is not None:
            if not value:
                raise ValueError("at least one max_tokens value is required")
            if any(m <= 0 for m in value):
                raise ValueError("max_tokens values must be positive")
        return value

    @model_validator(mode="after")
    def _consistent(self) -> "ExperimentConfig":
        for profile in (self.profile, *self.method_profiles.values()):
            if profile not in PROFILES:
                raise ValueError(f"unknown profile {profile!r}; known: {sorted(PROFILES)}")
        if self.classifier != "gold" and not self.classifier_path:
            raise ValueError(f"classifier = {self.classifier} needs classifier_path")
        return self

    def profile_for(self, method: Optional[SummaryMethod] = None) -> str:
        """The method's own profile when one is set, else ``profile``."""
        return self.method_profiles.get(method, self.profile) if method is not None else self.profile

    def grid_for(self, method: Optional[SummaryMethod] = None) -> Tuple[int, ...]:
        return self.max_tokens or tuple(PROFILES[self.profile_for(method)]["max_tokens_grid"])

    def budget_for(self, method: Optional[SummaryMethod] = None) -> int:
        return self.budget or int(PROFILES[self.profile_for(method)]["budget_tokens"])

    @property
    def max_tokens_grid(self) -> Tuple[int, ...]:
        return self.grid_for()

    @property
    def budget_tokens(self) -> int:
        return self.budget_for()

    def cells(self, method: SummaryMethod) -> List["Cell"]:
        """Grid cells in table order: temperature-major, then max_tokens."""
        return [
            Cell(method, t, m)
            for t, m in itertools.product(self.temperatures, self.grid_for(method))
        ]

    def fingerprint(self, method: Optional[SummaryMethod] = None) -> str:
        """Digest of every setting that changes a cell's results."""
        relevant = self.model_dump(
            mode="json", exclude={"corpus", "classifier_path", "endpoint", "workers", "methods",
                                  "temperatures", "max_tokens", "method_profiles"},
        )
        relevant["profile"] = self.profile_for(method)
        relevant["budget"] = self.budget_for(method)
        relevant["corpus"] = os.path.basename(self.corpus)
        relevant["classifier_path"] = os.path.basename(self.classifier_path or "")
        blob = json.dumps(relevant, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def config_from_mapping(values: Dict[str, Any], base_dir: str = ".") -> ExperimentConfig:
    values = dict(values)
    for key in ("corpus", "classifier_path"):
        path = values.get(key)
        if path and not os.path.isabs(path):
            values[key] = os.path.normpath(os.path.join(base_dir, path))
    try:
        return ExperimentConfig(**values)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "config"
        raise ConfigError(f"{where}: {first['msg']}") from exc


def read_key_values(path: str) -> Dict[str, str]:
    """Raw ``key = value`` pairs of a config file; keys must be ExperimentConfig fields."""
    values: Dict[str, str] = {}
    known = set(ExperimentConfig.model_fields)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc

    for line_number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_number}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{path}:{line_number}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{line_number}: {key!r} given twice")
        values[key] = value
    return values


def load_config(path: str) -> ExperimentConfig:
    """Parse a flat ``key = value`` file; relative paths resolve against its directory."""
    values = read_key_values(path)
    if "corpus" not in values:
        raise ConfigError(f"{path}: 'corpus' is required")
    return config_from_mapping(values, os.path.dirname(os.path.abspath(path)))


# ── Result types ──────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Cell:
    method: SummaryMethod
    temperature: float
    max_tokens: int

    @property
    def cell_id(self) -> str:
        return f"{self.method.value}_t{self.temperature:g}_m{self.max_tokens}"

    @property
    def parameters(self) -> str:
        return f"({self.temperature:g}, {self.max_tokens})"


@dataclass(frozen=True)
class ResultRow:
    method: str
    parameters: str
    avg_summary_length: float
    rouge1: float
    rouge2: float
    rougeL: float
    bleu: float                 # corpus-level
    meteor: float
    bertscore: Optional[float]
    sentence_bleu: float = 0.0  # mean of per-document BLEU
    cost: float = 0.0
    documents: int = 0
    temperature: Optional[float] = None
    max_tokens: Optional[int] = None
    is_average: bool = False

    def as_dict(self) -> Dict[str, object]:
        return asdict(self)


@dataclass
class GridResult:
    method: SummaryMethod
    rows: List[ResultRow]
    documents: Tuple[str, ...]
    excluded: Dict[str, str]
    total_cost: float


@dataclass
class MethodComparison:
    rows: List[ResultRow]
    costs: Dict[str, float]
    excluded: Dict[str, str]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    grids: Dict[SummaryMethod, GridResult]
    comparison: Optional[MethodComparison]
    documents: Tuple[str, ...]
    excluded: Dict[str, str]
    bertscore_provider: Optional[str] = None
    paths: Dict[str, str] = field(default_factory=dict)

    @property
    def total_cost(self) -> float:
        return sum(g.total_cost for g in self.grids.values())


# ── Providers & inputs ────────────────────────────────────────────────────────

def build_completion_provider(
    kind: str,
    profile: str,
    endpoint: Optional[str] = None,
    api_key_env: str = API_KEY_ENV,
) -> CompletionProvider:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    context = int(PROFILES[profile]["context_tokens"])
    if kind == "mock":
        return MockCompletionProvider(context_tokens=context)
    if kind == "http":
        return HttpCompletionProvider(endpoint or PROVIDER_URL, context_tokens=context, api_key_env=api_key_env)
    raise ConfigError(f"unknown completion provider {kind!r}")


def build_providers(
    config: ExperimentConfig, api_key_env: str = API_KEY_ENV
) -> Tuple[CompletionProvider, EmbeddingProvider]:
    llm = build_completion_provider(config.provider, config.profile, config.endpoint, api_key_env)
    embedder = make_provider(config.embeddings, config.endpoint, EMBEDDING_DIM, api_key_env=api_key_env)
    return llm, embedder


def evaluation_documents(config: ExperimentConfig, corpus: Sequence[CaseDocument]) -> List[CaseDocument]:
    """Documents scored by the run, sorted by case id."""
    if config.evaluation_split == "test":
        split = split_corpus(corpus, SPLIT_RATIOS, config.seed)
        docs = select(corpus, split.test)
    else:
        docs = list(corpus)
    if not docs:
        raise EmptyRows("the evaluation split is empty; use evaluation_split = all for tiny corpora")
    return sorted(docs, key=lambda d: d.case_id)


def argumentative_plan(
    config: ExperimentConfig,
    docs: Sequence[CaseDocument],
    embedder: EmbeddingProvider,
    segmentations: Optional[Sequence[Segmentation]] = None,
) -> Dict[str, Tuple[Segmentation, List[SegmentLabel]]]:
    """Segmentation and per-segment labels for every document, from the configured source."""
    if segmentations is None:
        params = SegmenterParams(config.mask_size, config.target_segments)
        segmentations = segment_corpus(docs, embedder, params, config.workers)
    if config.classifier == "gold":
        labeled = label_gold(docs, segmentations)
    elif config.classifier == "model":
        labeled = predict_segments(load_model(config.classifier_path), docs, segmentations, embedder)
    else:
        labeled = apply_injected(label_gold(docs, segmentations), load_injected_predictions(config.classifier_path))
    labels = labels_by_doc(labeled)
    return {seg.doc_id: (seg, labels[seg.doc_id]) for seg in segmentations}


def _check_context(config: ExperimentConfig, llm: CompletionProvider, method: Optional[SummaryMethod] = None) -> None:
    if not llm.context_tokens:
        return
    budget, grid = config.budget_for(method), config.grid_for(method)
    if budget + SUFFIX_TOKENS + max(grid) > llm.context_tokens:
        raise ConfigError(
            f"budget {budget} + {SUFFIX_TOKENS} suffix tokens + max_tokens "
            f"{max(grid)} exceeds the {llm.context_tokens}-token context"
        )


def _llm_for(llm: LlmChoice, method: SummaryMethod) -> CompletionProvider:
    return llm[method] if isinstance(llm, dict) else llm


# ── Checkpoints ───────────────────────────────────────────────────────────────

def _checkpoint_path(out_dir: str, cell: Cell) -> str:
    return os.path.join(out_dir, "results", f"{cell.cell_id}.jsonl")


def load_checkpoint(path: str, fingerprint: str) -> Dict[str, Dict[str, Any]]:
    """Entries already written for a cell, by case id; stale or torn lines are dropped."""
    if not os.path.exists(path):
        return {}
    entries: Dict[str, Dict[str, Any]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
            except ValueError:
                logger.warning("Ignoring torn checkpoint line in %s", path)
                continue
            if entry.get("fingerprint") != fingerprint:
                logger.warning("Checkpoint %s was written with other settings; starting the cell over", path)
                return {}
            entries[entry["case_id"]] = entry
    return entries


def _write_lines(path: str, entries: Sequence[Dict[str, Any]], mode: str) -> None:
    with open(path, mode, encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


# ── Grid ──────────────────────────────────────────────────────────────────────

def _run_document(
    doc: CaseDocument,
    cell: Cell,
    config: ExperimentConfig,
    llm: CompletionProvider,
    plan: Dict[str, Tuple[Segmentation, List[SegmentLabel]]],
    options: MetricOptions,
    fingerprint: str,
) -> Dict[str, Any]:
    entry: Dict[str, Any] = {"cell": cell.cell_id, "case_id": doc.case_id, "fingerprint": fingerprint}
    segmentation, labels = plan.get(doc.case_id, (None, None))
    try:
        record = summarize_document(
            doc, cell.method, llm,
            DecodingParams(cell.temperature, cell.max_tokens),
            TokenBudgetPolicy(config.budget_for(cell.method)),
            segmentation, labels,
            profile=config.profile_for(cell.method),
            max_in_flight=1,
        )
        report = evaluate_pair(record.final_summary, doc.reference_summary or "", options)
    except (ProviderFailure, NoArgumentativeSegments) as exc:
        logger.warning("%s failed in cell %s: %s", doc.case_id, cell.cell_id, exc)
        entry.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        return entry
    entry.update(status="ok", summary=record.to_record(), scores=report.flat())
    return entry


def run_cell(
    cell: Cell,
    docs: Sequence[CaseDocument],
    config: ExperimentConfig,
    llm: CompletionProvider,
    plan: Dict[str, Tuple[Segmentation, List[SegmentLabel]]],
    options: MetricOptions,
    out_dir: Optional[str] = None,
) -> Dict[str, Dict[str, Any]]:
    """
    Per-document entries for one cell, resuming from its checkpoint when there
    is one. Documents that failed in an earlier run are tried again.
    """
    fingerprint = config.fingerprint(cell.method)
    path = _checkpoint_path(out_dir, cell) if out_dir else None
    done = load_checkpoint(path, fingerprint) if path else {}
    wanted = {d.case_id for d in docs}
    done = {cid: e for cid, e in done.items() if cid in wanted and e.get("status") == "ok"}
    if path:
        os.makedirs(os.path.dirname(path), exist_ok=True)
        _write_lines(path, [done[cid] for cid in sorted(done)], "w")

    pending = [d for d in docs if d.case_id not in done]
    if done:
        logger.info("Cell %s: %d documents from checkpoint, %d to run", cell.cell_id, len(done), len(pending))

    def work(doc):
        return _run_document(doc, cell, config, llm, plan, options, fingerprint)

    with ThreadPoolExecutor(max_workers=config.workers, thread_name_prefix="cell") as pool:
        for entry in pool.map(work, pending):
            done[entry["case_id"]] = entry
            if path:
                _write_lines(path, [entry], "a")
    return done


def cell_row(
    cell: Cell,
    entries: Sequence[Dict[str, Any]],
    references: Dict[str, str],
) -> ResultRow:
    if not entries:
        raise EmptyRows(f"no documents left to score in cell {cell.cell_id}")
    entries = sorted(entries, key=lambda e: e["case_id"])
    scores = [e["scores"] for e in entries]

    def mean(key: str) -> float:
        return float(np.mean([s[key] for s in scores]))

    pairs = [
        (normalize(e["summary"]["summary"]), [normalize(references[e["case_id"]])])
        for e in entries
    ]
    has_bert = all("bertscore_f" in s for s in scores)
    return ResultRow(
        method=cell.method.value,
        parameters=cell.parameters,
        avg_summary_length=mean("candidate_length"),
        rouge1=mean("rouge1_f"),
        rouge2=mean("rouge2_f"),
        rougeL=mean("rougeL_f"),
        bleu=corpus_bleu(pairs),
        meteor=mean("meteor"),
        bertscore=mean("bertscore_f") if has_bert else None,
        sentence_bleu=mean("bleu"),
        cost=float(sum(e["summary"]["cost"] for e in entries)),
        documents=len(entries),
        temperature=cell.temperature,
        max_tokens=cell.max_tokens,
    )


def average_row(rows: Sequence[ResultRow], parameters: str = "Average") -> ResultRow:
    """Column-wise mean of the rows."""
    if not rows:
        raise EmptyRows("no rows to average")

    def mean(name: str) -> float:
        return float(np.mean([getattr(r, name) for r in rows]))

    berts = [r.bertscore for r in rows]
    return ResultRow(
        method=rows[0].method if len({r.method for r in rows}) == 1 else "all",
        parameters=parameters,
        avg_summary_length=mean("avg_summary_length"),
        rouge1=mean("rouge1"),
        rouge2=mean("rouge2"),
        rougeL=mean("rougeL"),
        bleu=mean("bleu"),
        meteor=mean("meteor"),
        bertscore=float(np.mean(berts)) if None not in berts else None,
        sentence_bleu=mean("sentence_bleu"),
        cost=mean("cost"),
        documents=rows[0].documents,
        is_average=True,
    )


def _run_methods(
    config: ExperimentConfig,
    corpus: Sequence[CaseDocument],
    llm: LlmChoice,
    embedder: Optional[EmbeddingProvider],
    out_dir: Optional[str],
    methods: Sequence[SummaryMethod],
) -> Tuple[Dict[SummaryMethod, GridResult], Tuple[str, ...], Dict[str, str]]:
    if not corpus:
        raise EmptyRows("empty corpus")
    for method in methods:
        _check_context(config, _llm_for(llm, method), method)
    if embedder is None:
        embedder = make_provider(config.embeddings, config.endpoint, EMBEDDING_DIM)

    docs = evaluation_documents(config, corpus)
    excluded: Dict[str, str] = {}
    for doc in docs:
        if not (doc.reference_summary or "").strip():
            excluded[doc.case_id] = "no reference summary"
    docs = [d for d in docs if d.case_id not in excluded]

    plan: Dict[str, Tuple[Segmentation, List[SegmentLabel]]] = {}
    if SummaryMethod.ARG_SEGMENTS in methods and docs:
        plan = argumentative_plan(config, docs, embedder)
    options = MetricOptions(bertscore_provider=embedder if config.bertscore else None)

    outcomes: Dict[Cell, Dict[str, Dict[str, Any]]] = {}
    for method in methods:
        for cell in config.cells(method):
            outcomes[cell] = run_cell(cell, docs, config, _llm_for(llm, method), plan, options, out_dir)
            for cid, entry in outcomes[cell].items():
                if entry["status"] != "ok" and cid not in excluded:
                    excluded[cid] = entry["error"]

    if excluded:
        logger.warning("Excluded %d documents from every cell: %s", len(excluded), ", ".join(sorted(excluded)))
    kept = tuple(d.case_id for d in docs if d.case_id not in excluded)
    references = {d.case_id: d.reference_summary for d in docs}

    grids: Dict[SummaryMethod, GridResult] = {}
    for method in methods:
        rows = [
            cell_row(cell, [outcomes[cell][cid] for cid in kept], references)
            for cell in config.cells(method)
        ]
        rows.append(average_row(rows))
        grids[method] = GridResult(
            method=method,
            rows=rows,
            documents=kept,
            excluded=dict(sorted(excluded.items())),
            total_cost=float(sum(r.cost for r in rows if not r.is_average)),
        )
        logger.info("%s: %d cells over %d documents", method.value, len(rows) - 1, len(kept))
    return grids, kept, dict(sorted(excluded.items()))


def run_grid(
    config: ExperimentConfig,
    corpus: Sequence[CaseDocument],
    llm: CompletionProvider,
    embedder: Optional[EmbeddingProvider] = None,
    out_dir: Optional[str] = None,
    method: Optional[SummaryMethod] = None,
) -> GridResult:
    """
    Summarize and score every evaluation document in every (temperature,
    max_tokens) cell of one method. Rows come in grid order followed by the
    average row. Checkpoints go to ``out_dir``/results when it is given.
    """
    method = method or config.methods[0]
    grids, _, _ = _run_methods(config, corpus, llm, embedder, out_dir, [method])
    return grids[method]


def _method_label(config: ExperimentConfig, method: SummaryMethod) -> str:
    if config.method_profiles:
        return f"{METHOD_NAMES[method]} ({config.profile_for(method)})"
    return METHOD_NAMES[method]


def _comparison(
    config: ExperimentConfig, grids: Dict[SummaryMethod, GridResult], excluded: Dict[str, str]
) -> MethodComparison:
    rows = [average_row(g.rows[:-1], _method_label(config, m)) for m, g in grids.items()]
    return MethodComparison(
        rows=rows,
        costs={m.value: g.total_cost for m, g in grids.items()},
        excluded=excluded,
    )


def compare_methods(
    corpus: Sequence[CaseDocument],
    config: ExperimentConfig,
    llm: LlmChoice,
    embedder: Optional[EmbeddingProvider] = None,
    out_dir: Optional[str] = None,
) -> MethodComparison:
    """
    One row per method (mean over its grid) plus the total estimated cost of
    each. Pass one provider per method when the methods use different profiles.
    """
    methods = [SummaryMethod.BASELINE, SummaryMethod.ARG_SEGMENTS]
    grids, _, excluded = _run_methods(config, corpus, llm, embedder, out_dir, methods)
    return _comparison(config, grids, excluded)


# ── Tables ────────────────────────────────────────────────────────────────────

def _row_values(row: ResultRow, show_method: bool) -> List[str]:
    label = row.parameters
    if show_method and not row.parameters.startswith(tuple(METHOD_NAMES.values())):
        label = f"{row.method} {label}"
    return [
        label,
        f"{row.avg_summary_length:.2f}",
        f"{row.rouge1 * 100:.2f}",
        f"{row.rouge2 * 100:.2f}",
        f"{row.rougeL * 100:.2f}",
        f"{row.bleu * 100:.2f}",
        f"{row.meteor:.2f}",
        f"{row.bertscore * 100:.2f}" if row.bertscore is not None else "-",
    ]


def render_table(rows: Sequence[ResultRow], fmt: str = "markdown") -> str:
    """
    Columns in fixed order (see COLUMNS). ROUGE, BLEU and BERTScore are shown
    ×100, METEOR as a raw fraction; everything with two decimals.
    """
    if not rows:
        raise EmptyRows("nothing to render")
    show_method = len({r.method for r in rows}) > 1
    body = [_row_values(r, show_method) for r in rows]
    if fmt == "markdown":
        lines = ["| " + " | ".join(COLUMNS) + " |", "|" + "---|" * len(COLUMNS)]
        lines += ["| " + " | ".join(values) + " |" for values in body]
        return "\n".join(lines) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        writer.writerows(body)
        return buf.getvalue()
    raise ConfigError(f"unknown table format {fmt!r}")


def parse_table(text: str, fmt: str = "markdown") -> List[Dict[str, Any]]:
    """Read a rendered table back: Parameters as text, other columns as floats (None for '-')."""
    if fmt == "markdown":
        raw = [
            [c.strip() for c in line.strip().strip("|").split("|")]
            for line in text.splitlines()
            if line.strip() and not line.startswith("|---")
        ]
    elif fmt == "csv":
        raw = [r for r in csv.reader(io.StringIO(text)) if r]
    else:
        raise ConfigError(f"unknown table format {fmt!r}")
    if not raw or tuple(raw[0]) != COLUMNS:
        raise ConfigError(f"unexpected table header {raw[0] if raw else None}")
    out = []
    for values in raw[1:]:
        row: Dict[str, Any] = {"Parameters": values[0]}
        for name, value in zip(COLUMNS[1:], values[1:]):
            row[name] = None if value == "-" else float(value)
        out.append(row)
    return out


# ── Full runs & reports ───────────────────────────────────────────────────────

def run_experiment(
    config: ExperimentConfig,
    llm: Optional[LlmChoice] = None,
    embedder: Optional[EmbeddingProvider] = None,
    out_dir: str = OUTPUT_DIR,
    corpus: Optional[Sequence[CaseDocument]] = None,
    api_key_env: str = API_KEY_ENV,
) -> ExperimentResult:
    """Run every configured method over its grid and write report.md / report.csv to ``out_dir``."""
    if llm is None:
        llm = {
            m: build_completion_provider(config.provider, config.profile_for(m), config.endpoint, api_key_env)
            for m in config.methods
        }
    if embedder is None:
        embedder = make_provider(config.embeddings, config.endpoint, EMBEDDING_DIM, api_key_env=api_key_env)
    if corpus is None:
        corpus = ingest(config.corpus)

    grids, kept, excluded = _run_methods(config, corpus, llm, embedder, out_dir, list(config.methods))
    result = ExperimentResult(
        config=config,
        grids=grids,
        comparison=_comparison(config, grids, excluded) if len(grids) > 1 else None,
        documents=kept,
        excluded=excluded,
        bertscore_provider=embedder.name if config.bertscore else None,
    )
    result.paths = write_report(result, out_dir)
    return result


def _budget_text(budgets: Dict[SummaryMethod, int]) -> str:
    if len(set(budgets.values())) == 1:
        return str(next(iter(budgets.values())))
    return ", ".join(f"{m.value} {b}" for m, b in budgets.items())


def render_report(result: ExperimentResult) -> str:
    config = result.config
    profiles = {m: config.profile_for(m) for m in result.grids}
    budgets = {m: config.budget_for(m) for m in result.grids}
    if len(set(profiles.values())) == 1:
        title = f"{next(iter(profiles.values()))} profile"
    else:
        title = ", ".join(f"{m.value} {p}" for m, p in profiles.items()) + " profiles"
    parts = [f"# Summarization results ({title})", ""]
    for method, grid in result.grids.items():
        parts += [f"## {_method_label(config, method)} ({method.value})", "", render_table(grid.rows)]
    if result.comparison is not None:
        parts += ["## Method comparison", "", render_table(result.comparison.rows)]
        parts += [
            "| Method | Total estimated cost (USD) |",
            "|---|---|",
            *[f"| {name} | {cost:.5f} |" for name, cost in result.comparison.costs.items()],
            "",
        ]

    bert = (
        f"raw greedy cosine over {result.bertscore_provider} token embeddings, no baseline rescaling"
        if result.bertscore_provider else "not computed"
    )
    excluded = (
        "; ".join(f"{cid} ({reason})" for cid, reason in result.excluded.items())
        if result.excluded else "none"
    )
    parts += [
        "---",
        "",
        f"- Documents evaluated: {len(result.documents)} ({config.evaluation_split} split, seed {config.seed})",
        f"- Token budget: {_budget_text(budgets)}; summary lengths counted with tokenizer {TOKENIZER_NAME}",
        "- BLEU: corpus level; ROUGE, BLEU and BERTScore ×100; METEOR raw",
        f"- BERTScore: {bert}",
        f"- Labels: {config.classifier}",
        f"- Excluded documents: {excluded}",
        f"- Total estimated cost: ${result.total_cost:.5f}",
        "",
    ]
    return "\n".join(parts)


def write_report(result: ExperimentResult, out_dir: str) -> Dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    md_path = os.path.join(out_dir, "report.md")
    csv_path = os.path.join(out_dir, "report.csv")
    with open(md_path, "w", encoding="utf-8") as fh:
        fh.write(render_report(result))
    rows = [row for grid in result.grids.values() for row in grid.rows]
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(render_table(rows, "csv"))
    logger.info("Wrote %s and %s", md_path, csv_path)
    return {"markdown": md_path, "csv": csv_path}
