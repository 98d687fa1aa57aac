"""
labeler.py - Argumentative Segment Labelling & Classification

Gold rule
─────────
  A segment is ARGUMENTATIVE (1) when at least one of its sentences carries an
  Issue, Reason or Conclusion annotation, NON_ARGUMENTATIVE (0) otherwise.

Learned classifier
──────────────────
  Logistic regression over pooled segment embeddings (mean of sentence vectors,
  L2-normalised), fitted by full-batch gradient descent with L2 on the weights
  and optional inverse-frequency class weights. A step that would raise the
  training loss is halved until it does not, so the recorded loss trajectory
  never increases. Prediction: score = sigmoid(w·x + b); a score equal to the
  threshold counts as ARGUMENTATIVE.

Model file (JSON):
  {"dim": int, "weights": [float], "bias": float, "feature_spec": str,
   "training_meta": {...}}

Injected predictions (line-delimited JSON):
  {"case_id": str, "segment_index": int, "label": 0 | 1}
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, ValidationError, model_validator

from config import DECISION_THRESHOLD, TRAIN_EPOCHS, TRAIN_L2, TRAIN_LEARNING_RATE
from corpus import CaseDocument
from embeddings import EmbeddingProvider
from errors import (
    DimensionMismatch,
    EmptyTestSet,
    LabelSegmentMismatch,
    MalformedRecord,
    NonFiniteLoss,
    SingleClassTrainingSet,
    SpanOutOfRange,
)
from segmenter import Segmentation, embed_sentences

logger = logging.getLogger(__name__)

Span = Tuple[int, int]


class SegmentLabel(IntEnum):
    NON_ARGUMENTATIVE = 0
    ARGUMENTATIVE = 1


@dataclass(frozen=True)
class LabeledSegment:
    doc_id: str
    index: int
    span: Span
    gold: Optional[SegmentLabel] = None
    predicted: Optional[SegmentLabel] = None
    score: Optional[float] = None

    def __post_init__(self):
        if (self.score is None) != (self.predicted is None):
            raise ValueError("score must be present exactly when a prediction is")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")

    @property
    def label(self) -> Optional[SegmentLabel]:
        """Prediction when there is one, otherwise the gold label."""
        return self.predicted if self.predicted is not None else self.gold


@dataclass(frozen=True)
class TrainingParams:
    epochs: int = TRAIN_EPOCHS
    learning_rate: float = TRAIN_LEARNING_RATE
    l2: float = TRAIN_L2
    seed: int = 7
    class_weighting: bool = True


@dataclass
class ClassifierModel:
    weights: np.ndarray
    bias: float
    feature_spec: str
    training_meta: Dict[str, object] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return int(self.weights.shape[0])


@dataclass(frozen=True)
class ClassificationReport:
    per_class: Dict[str, Dict[str, float]]
    macro_f1: float
    confusion: Dict[str, int]
    count: int

    @property
    def positive_f1(self) -> float:
        return self.per_class["argumentative"]["f1"]

    def as_dict(self) -> Dict[str, object]:
        return {
            "per_class": self.per_class,
            "macro_f1": self.macro_f1,
            "positive_f1": self.positive_f1,
            "confusion": self.confusion,
            "count": self.count,
        }


# ── Gold labels ───────────────────────────────────────────────────────────────

def _check_span(span: Span, doc: CaseDocument) -> None:
    start, end = span
    if not 0 <= start < end <= len(doc.sentences):
        raise SpanOutOfRange(
            f"span {span} outside document {doc.case_id!r} of {len(doc.sentences)} sentences"
        )


def gold_label(span: Span, doc: CaseDocument) -> SegmentLabel:
    _check_span(span, doc)
    start, end = span
    if any(s.irc is not None for s in doc.sentences[start:end]):
        return SegmentLabel.ARGUMENTATIVE
    return SegmentLabel.NON_ARGUMENTATIVE


def is_annotated(doc: CaseDocument) -> bool:
    return any(s.irc is not None for s in doc.sentences)


def label_gold(
    corpus: Sequence[CaseDocument], segmentations: Sequence[Segmentation]
) -> List[LabeledSegment]:
    by_id = {doc.case_id: doc for doc in corpus}
    out: List[LabeledSegment] = []
    for seg in segmentations:
        doc = by_id[seg.doc_id]
        for i, span in enumerate(seg.spans):
            out.append(LabeledSegment(seg.doc_id, i, span, gold=gold_label(span, doc)))
    return out


# ── Features ──────────────────────────────────────────────────────────────────

def _pool(vectors: np.ndarray) -> np.ndarray:
    mean = vectors.mean(axis=0)
    norm = np.linalg.norm(mean)
    return mean / norm if norm > 0 else mean


def featurize(span: Span, doc: CaseDocument, provider: EmbeddingProvider) -> np.ndarray:
    _check_span(span, doc)
    start, end = span
    return _pool(embed_sentences(provider, [s.text for s in doc.sentences[start:end]]))


def featurize_segments(
    segments: Sequence[LabeledSegment],
    corpus: Sequence[CaseDocument],
    provider: EmbeddingProvider,
) -> np.ndarray:
    """Feature matrix for many segments; each document is embedded once."""
    by_id = {doc.case_id: doc for doc in corpus}
    cache: Dict[str, np.ndarray] = {}
    rows = []
    for seg in segments:
        doc = by_id[seg.doc_id]
        _check_span(seg.span, doc)
        if seg.doc_id not in cache:
            cache[seg.doc_id] = embed_sentences(provider, [s.text for s in doc.sentences])
        start, end = seg.span
        rows.append(_pool(cache[seg.doc_id][start:end]))
    return np.vstack(rows) if rows else np.zeros((0, provider.dimension))


def feature_spec(provider: EmbeddingProvider) -> str:
    return f"{provider.name}:{provider.dimension}"


# ── Logistic regression ───────────────────────────────────────────────────────

def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def _loss(X, y, sample_w, w, b, l2) -> float:
    z = X @ w + b
    bce = np.logaddexp(0.0, z) - y * z
    return float(np.dot(sample_w, bce) + 0.5 * l2 * np.dot(w, w))


def fit_logistic(
    X: np.ndarray, y: np.ndarray, params: TrainingParams = TrainingParams()
) -> Tuple[np.ndarray, float, List[float]]:
    """Return (weights, bias, loss per epoch including the initial loss)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise SingleClassTrainingSet(
            f"training data needs both classes, got {n_pos} positive of {len(y)}"
        )

    if params.class_weighting:
        sample_w = np.where(y == 1, len(y) / (2.0 * n_pos), len(y) / (2.0 * (len(y) - n_pos)))
    else:
        sample_w = np.ones(len(y))
    sample_w = sample_w / sample_w.sum()

    rng = np.random.default_rng(params.seed)
    w = rng.normal(0.0, 0.01, X.shape[1])
    b = 0.0
    loss = _loss(X, y, sample_w, w, b, params.l2)
    if not math.isfinite(loss):
        raise NonFiniteLoss("initial loss is not finite")
    losses = [loss]

    for epoch in range(params.epochs):
        residual = sample_w * (sigmoid(X @ w + b) - y)
        grad_w = X.T @ residual + params.l2 * w
        grad_b = float(residual.sum())

        step = params.learning_rate
        while True:
            w_new = w - step * grad_w
            b_new = b - step * grad_b
            new_loss = _loss(X, y, sample_w, w_new, b_new, params.l2)
            if not math.isfinite(new_loss):
                raise NonFiniteLoss(f"loss became non-finite at epoch {epoch}")
            if new_loss <= loss:
                w, b, loss = w_new, b_new, new_loss
                break
            step /= 2.0
            if step < 1e-12:
                break   # at a minimum to machine precision; keep parameters
        losses.append(loss)

    logger.info("Trained on %d segments (%d positive); final loss %.6f", len(y), n_pos, loss)
    return w, b, losses


def train_classifier(
    labeled: Sequence[LabeledSegment],
    corpus: Sequence[CaseDocument],
    provider: EmbeddingProvider,
    params: TrainingParams = TrainingParams(),
) -> ClassifierModel:
    training = [s for s in labeled if s.gold is not None]
    if len(training) != len(labeled):
        logger.warning("%d segments without gold labels skipped", len(labeled) - len(training))
    X = featurize_segments(training, corpus, provider)
    y = np.array([int(s.gold) for s in training])
    w, b, losses = fit_logistic(X, y, params)
    return ClassifierModel(
        weights=w,
        bias=b,
        feature_spec=feature_spec(provider),
        training_meta={
            "epochs": params.epochs,
            "learning_rate": params.learning_rate,
            "l2": params.l2,
            "seed": params.seed,
            "class_weighting": params.class_weighting,
            "final_loss": losses[-1],
        },
    )


# ── Prediction ────────────────────────────────────────────────────────────────

def _check_compatible(model: ClassifierModel, provider: EmbeddingProvider) -> None:
    if provider.dimension and provider.dimension != model.dim:
        raise DimensionMismatch(
            f"model expects {model.dim}-dimensional features ({model.feature_spec}), "
            f"provider {provider.name!r} gives {provider.dimension}"
        )


def score_features(model: ClassifierModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.dim:
        raise DimensionMismatch(f"model expects {model.dim} features, got {X.shape[1]}")
    return sigmoid(X @ model.weights + model.bias)


def decide(score: float, threshold: float = DECISION_THRESHOLD) -> SegmentLabel:
    return SegmentLabel.ARGUMENTATIVE if score >= threshold else SegmentLabel.NON_ARGUMENTATIVE


def predict_label(
    model: ClassifierModel,
    span: Span,
    doc: CaseDocument,
    provider: EmbeddingProvider,
    threshold: float = DECISION_THRESHOLD,
) -> Tuple[SegmentLabel, float]:
    _check_compatible(model, provider)
    score = float(score_features(model, featurize(span, doc, provider))[0])
    return decide(score, threshold), score


def predict_segments(
    model: ClassifierModel,
    corpus: Sequence[CaseDocument],
    segmentations: Sequence[Segmentation],
    provider: EmbeddingProvider,
    threshold: float = DECISION_THRESHOLD,
) -> List[LabeledSegment]:
    """Predicted labels for every segment; gold labels kept where the document is annotated."""
    _check_compatible(model, provider)
    by_id = {doc.case_id: doc for doc in corpus}
    segments = []
    for seg in segmentations:
        doc = by_id[seg.doc_id]
        annotated = is_annotated(doc)
        for i, span in enumerate(seg.spans):
            segments.append(
                LabeledSegment(seg.doc_id, i, span, gold=gold_label(span, doc) if annotated else None)
            )
    if not segments:
        return []
    scores = score_features(model, featurize_segments(segments, corpus, provider))
    return [
        replace(s, predicted=decide(float(p), threshold), score=float(p))
        for s, p in zip(segments, scores)
    ]


# ── Evaluation ────────────────────────────────────────────────────────────────

def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def classification_report(
    gold: Sequence[int], predicted: Sequence[int]
) -> ClassificationReport:
    if len(gold) == 0:
        raise EmptyTestSet("no segments to evaluate")
    if len(gold) != len(predicted):
        raise LabelSegmentMismatch(f"{len(gold)} gold labels vs {len(predicted)} predictions")
    g = np.asarray(gold, dtype=int)
    p = np.asarray(predicted, dtype=int)
    tp = int(((g == 1) & (p == 1)).sum())
    fp = int(((g == 0) & (p == 1)).sum())
    fn = int(((g == 1) & (p == 0)).sum())
    tn = int(((g == 0) & (p == 0)).sum())

    per_class = {}
    for name, (hit, false_pos, miss) in (
        ("argumentative", (tp, fp, fn)),
        ("non_argumentative", (tn, fn, fp)),
    ):
        precision = _ratio(hit, hit + false_pos)
        recall = _ratio(hit, hit + miss)
        per_class[name] = {
            "precision": precision,
            "recall": recall,
            "f1": _f1(precision, recall),
            "support": hit + miss,
        }
    macro = (per_class["argumentative"]["f1"] + per_class["non_argumentative"]["f1"]) / 2.0
    return ClassificationReport(
        per_class=per_class,
        macro_f1=macro,
        confusion={"tp": tp, "fp": fp, "fn": fn, "tn": tn},
        count=len(g),
    )


def evaluate_classifier(
    model: ClassifierModel,
    test: Sequence[LabeledSegment],
    corpus: Sequence[CaseDocument],
    provider: EmbeddingProvider,
    threshold: float = DECISION_THRESHOLD,
) -> ClassificationReport:
    scored = [s for s in test if s.gold is not None]
    if not scored:
        raise EmptyTestSet("test set has no gold-labelled segments")
    _check_compatible(model, provider)
    scores = score_features(model, featurize_segments(scored, corpus, provider))
    return classification_report(
        [int(s.gold) for s in scored],
        [int(decide(float(p), threshold)) for p in scores],
    )


# ── Persistence ───────────────────────────────────────────────────────────────

class ModelFile(BaseModel):
    dim: int = Field(gt=0)
    weights: List[float]
    bias: float
    feature_spec: str
    training_meta: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _consistent(self) -> "ModelFile":
        if len(self.weights) != self.dim:
            raise ValueError(f"dim is {self.dim} but {len(self.weights)} weights given")
        if not all(math.isfinite(v) for v in [*self.weights, self.bias]):
            raise ValueError("weights must be finite")
        return self


def save_model(model: ClassifierModel, path: str) -> None:
    payload = ModelFile(
        dim=model.dim,
        weights=[float(v) for v in model.weights],
        bias=float(model.bias),
        feature_spec=model.feature_spec,
        training_meta=model.training_meta,
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(payload.model_dump_json(indent=2))


def load_model(path: str) -> ClassifierModel:
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read()
    try:
        data = ModelFile.model_validate_json(raw)
    except ValidationError as exc:
        raise MalformedRecord(1, f"invalid model file {path}: {exc.errors()[0]['msg']}") from exc
    return ClassifierModel(
        weights=np.asarray(data.weights, dtype=np.float64),
        bias=data.bias,
        feature_spec=data.feature_spec,
        training_meta=dict(data.training_meta),
    )


class InjectedPrediction(BaseModel):
    case_id: str
    segment_index: int = Field(ge=0)
    label: Literal[0, 1]


def load_injected_predictions(path: str) -> Dict[Tuple[str, int], SegmentLabel]:
    predictions: Dict[Tuple[str, int], SegmentLabel] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                item = InjectedPrediction.model_validate_json(line)
            except ValidationError as exc:
                raise MalformedRecord(line_number, exc.errors()[0]["msg"]) from exc
            predictions[(item.case_id, item.segment_index)] = SegmentLabel(item.label)
    return predictions


def apply_injected(
    segments: Sequence[LabeledSegment],
    predictions: Mapping[Tuple[str, int], SegmentLabel],
) -> List[LabeledSegment]:
    out = []
    for seg in segments:
        key = (seg.doc_id, seg.index)
        if key not in predictions:
            raise LabelSegmentMismatch(f"no injected prediction for segment {seg.index} of {seg.doc_id!r}")
        label = predictions[key]
        out.append(replace(seg, predicted=label, score=float(label)))
    return out


def labels_by_doc(segments: Sequence[LabeledSegment]) -> Dict[str, List[SegmentLabel]]:
    """Per-document label sequences (prediction, else gold) in segment order."""
    grouped: Dict[str, List[LabeledSegment]] = {}
    for seg in segments:
        grouped.setdefault(seg.doc_id, []).append(seg)
    return {
        doc_id: [s.label for s in sorted(segs, key=lambda s: s.index)]
        for doc_id, segs in grouped.items()
    }


def segment_record(seg: LabeledSegment) -> Dict[str, object]:
    return {
        "case_id": seg.doc_id,
        "segment_index": seg.index,
        "span": list(seg.span),
        "gold": None if seg.gold is None else int(seg.gold),
        "label": None if seg.predicted is None else int(seg.predicted),
        "score": seg.score,
    }
