"""
test_all.py - Full Test Suite

  1  Tokenizer & corpus       token rule, record validation, splits, statistics
  2  Segmenter                cosine, rank transform, C99 splitting, boundary recovery
  3  Labeler                  IRC rule, logistic classifier, reports, model files
  4  Summarizer               prompts, budget chunking, provider calls, cost
  5  Metrics                  ROUGE / BLEU / METEOR / BERTScore oracles
  6  Experiment               grid rows, averages, tables, resume, method ordering
  7  CLI                      exit codes, end-to-end pipeline, report determinism
  8  HTTP providers           mock service, retries, injected faults

Run:  python test_all.py        (or: pytest test_all.py)
"""

import contextlib
import hashlib
import io
import itertools
import json
import math
import os
import socket
import sys
import tempfile
import threading
import time

import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, HERE)

from config import EMBEDDING_DIM, PROMPT_SUFFIX
from corpus import (
    CaseDocument,
    IrcLabel,
    SentenceRecord,
    corpus_stats,
    ingest,
    ingest_raw,
    parse_record,
    render_stats,
    serialize,
    split_corpus,
    split_sentences,
    split_sizes,
)
from embeddings import HashedBagOfWordsProvider
from errors import (
    ConfigError,
    CorpusTooSmall,
    DimensionMismatch,
    DuplicateCaseId,
    EmptyCorpus,
    EmptyReference,
    EmptyRows,
    EmptyText,
    InvalidTargetCount,
    LabelSegmentMismatch,
    MalformedRecord,
    NoArgumentativeSegments,
    NonSquareMatrix,
    ProviderFailure,
    RequestTooLarge,
    SingleClassTrainingSet,
    UnknownProfile,
)
from labeler import (
    ClassifierModel,
    SegmentLabel,
    TrainingParams,
    apply_injected,
    classification_report,
    decide,
    featurize,
    fit_logistic,
    gold_label,
    label_gold,
    load_injected_predictions,
    load_model,
    predict_label,
    save_model,
    score_features,
)
from llm_client import MockCompletionProvider, Usage, prompt_body
from metrics import (
    PRF,
    EvalReport,
    MetricOptions,
    aggregate_reports,
    align,
    bert_score,
    bleu,
    count_chunks,
    evaluate_pair,
    lcs_length,
    meteor,
    meteor_from_counts,
    rouge_l,
    rouge_n,
)
from segmenter import (
    Segmentation,
    SegmenterParams,
    c99_segment,
    cosine,
    embed_sentences,
    load_segmentations,
    rank_matrix,
    render_segment_stats,
    segment_count_stats,
    segment_document,
    similarity_matrix,
)
from summarizer import (
    SUFFIX_TOKENS,
    DecodingParams,
    SummaryMethod,
    TokenBudgetPolicy,
    average_cost_per_summary,
    build_prompt,
    chunk_by_budget,
    estimate_cost,
    plan_chunks,
    select_argumentative_text,
    summarize_document,
)
from synthetic import (
    annotated_document,
    argument_corpus,
    budget_document,
    random_segmentation,
    separable_features,
    two_topic_corpus,
)
from tokenizer import count_tokens, leading_text, normalize, tokenize

FIXTURES = os.path.join(HERE, "fixtures")
TINY = os.path.join(FIXTURES, "tiny.jsonl")
EXPERIMENT_CFG = os.path.join(FIXTURES, "experiment.cfg")

# ── Helpers ───────────────────────────────────────────────────────────────────
PASS  = "[PASS]"
FAIL  = "[FAIL]"
INFO  = "[INFO]"
SEP   = "-" * 62

results = []


def check(label, condition, detail=""):
    status = PASS if condition else FAIL
    msg = f"  {status}  {label}"
    if detail:
        msg += f"\n           {detail}"
    print(msg)
    results.append((label, bool(condition)))
    if not condition and "pytest" in sys.modules:
        raise AssertionError(f"{label} {detail}".strip())
    return condition


def section(title):
    print(f"\n{SEP}")
    print(f"  {title}")
    print(SEP)


def raises(exc_type, fn, *args, **kwargs):
    try:
        fn(*args, **kwargs)
    except exc_type:
        return True
    except Exception as e:
        print(f"           raised {type(e).__name__}: {e}")
        return False
    return False


def close(a, b, tol=1e-9):
    return a is not None and b is not None and abs(a - b) <= tol


class StubTokenProvider:
    """Fixed token vectors: u and v are orthogonal unit vectors."""

    name = "stub"
    dimension = 2
    vectors = {"u": [1.0, 0.0], "v": [0.0, 1.0]}

    def embed(self, texts):
        return np.array([self.vectors[t] for t in texts])

    def embed_tokens(self, tokens):
        return self.embed(tokens)


def _doc(case_id, texts, irc=(), reference=None):
    irc = dict(irc)
    return CaseDocument(
        case_id,
        tuple(
            SentenceRecord(i, t, IrcLabel(irc[i]) if i in irc else None)
            for i, t in enumerate(texts)
        ),
        reference,
    )


# ─────────────────────────────────────────────────────────────────────────────
# 1 - Tokenizer & corpus
# ─────────────────────────────────────────────────────────────────────────────
def test_tokenizer_and_corpus():
    section("1 - Tokenizer & corpus")

    check("1a. word runs and single punctuation marks",
          tokenize("Tax appeal, dismissed.") == ["Tax", "appeal", ",", "dismissed", "."])
    check("1a. $40,000 splits into 4 tokens",
          tokenize("$40,000") == ["$", "40", ",", "000"], str(tokenize("$40,000")))
    check("1a. prompt suffix counts as 3 tokens", count_tokens(PROMPT_SUFFIX) == 3 == SUFFIX_TOKENS)
    check("1a. leading_text keeps the first n tokens",
          leading_text("The appeal is dismissed.", 3) == "The appeal is")
    check("1a. normalize lower-cases", normalize("The Appeal.") == ["the", "appeal", "."])

    corpus = ingest(TINY)
    check("1b. fixture has 3 documents", len(corpus) == 3)
    check("1b. IRC labels parsed",
          [s.irc.value if s.irc else None for s in corpus[0].sentences]
          == [None, "issue", None, "reason", "conclusion"])
    check("1b. document token counts 39 / 42 / 37",
          [d.token_count for d in corpus] == [39, 42, 37], str([d.token_count for d in corpus]))

    stats = corpus_stats(corpus)
    check("1c. document stats avg 118/3, max 42, min 37",
          close(stats.documents.average, 118 / 3) and stats.documents.maximum == 42
          and stats.documents.minimum == 37)
    check("1c. summary stats avg 11, max 13, min 9",
          close(stats.summaries.average, 11.0) and stats.summaries.maximum == 13
          and stats.summaries.minimum == 9)
    table = render_stats(stats)
    check("1c. rendered table row for court decisions",
          "| Court decision | 39.33 | 42 | 37 |" in table, table)
    check("1c. rendered table row for summaries",
          "| Human-written summary | 11.00 | 13 | 9 |" in table)

    bad_label = '{"case_id": "x", "sentences": [{"text": "A.", "irc": "holding"}]}'
    try:
        parse_record(bad_label, 4)
        check("1d. unknown IRC label rejected", False, "no error raised")
    except MalformedRecord as e:
        check("1d. unknown IRC label rejected with its line number", e.line_number == 4, str(e))
    check("1d. invalid JSON rejected", raises(MalformedRecord, parse_record, "not json", 2))
    check("1d. non-object record rejected", raises(MalformedRecord, parse_record, "[1, 2]"))
    check("1d. empty sentence list rejected",
          raises(MalformedRecord, parse_record, '{"case_id": "x", "sentences": []}'))
    check("1d. blank sentence text rejected",
          raises(MalformedRecord, parse_record, '{"case_id": "x", "sentences": [{"text": "   "}]}'))
    check("1d. reference summary optional",
          parse_record('{"case_id": "x", "sentences": [{"text": "A."}]}').reference_summary is None)

    with tempfile.TemporaryDirectory() as tmp:
        latin = os.path.join(tmp, "latin.jsonl")
        with open(latin, "wb") as fh:
            fh.write(b'{"case_id": "a", "sentences": [{"text": "A."}]}\n')
            fh.write(b'{"case_id": "b", "sentences": [{"text": "caf\xe9"}]}\n')
        try:
            ingest(latin)
            check("1d. invalid UTF-8 rejected with its line number", False, "no error raised")
        except MalformedRecord as e:
            check("1d. invalid UTF-8 rejected with its line number", e.line_number == 2, str(e))
        latin_txt = os.path.join(tmp, "latin.txt")
        with open(latin_txt, "wb") as fh:
            fh.write(b"The appeal is dismissed.\nCosts to the caf\xe9.")
        check("1d. raw text with invalid UTF-8 rejected", raises(MalformedRecord, ingest_raw, latin_txt))
        code, _, err = run_cli("stats", latin, "--quiet")
        check("1d. cli reports invalid UTF-8 with exit 1", code == 1 and "MalformedRecord" in err, err)

        dup = os.path.join(tmp, "dup.jsonl")
        with open(dup, "w", encoding="utf-8") as fh:
            line = '{"case_id": "same", "sentences": [{"text": "A."}]}\n'
            fh.write(line + "\n" + line)
        check("1e. duplicate case_id rejected", raises(DuplicateCaseId, ingest, dup))

        empty = os.path.join(tmp, "empty.jsonl")
        open(empty, "w").close()
        check("1e. empty file rejected", raises(EmptyCorpus, ingest, empty))

        copy = os.path.join(tmp, "copy.jsonl")
        serialize(corpus, copy)
        check("1e. serialize writes what ingest reads back", ingest(copy) == corpus)

    check("1f. split sizes for 10 documents", split_sizes(10) == (8, 1, 1))
    check("1f. split sizes for 1049 documents", split_sizes(1049) == (839, 105, 105))
    check("1f. split sizes for 3 documents", split_sizes(3) == (3, 0, 0))
    docs = two_topic_corpus(10, seed=1, per_topic=2)
    split = split_corpus(docs, seed=7)
    ids = sorted(split.train + split.validation + split.test)
    check("1f. split partitions the case ids",
          ids == sorted(d.case_id for d in docs) and len(set(ids)) == 10)
    check("1f. same seed → same split", split_corpus(docs, seed=7) == split)
    check("1f. fewer than 3 documents rejected", raises(CorpusTooSmall, split_corpus, docs[:2]))
    check("1f. ratios must sum to 1", raises(ConfigError, split_corpus, docs, (0.5, 0.2, 0.2)))

    check("1g. raw text sentence splitting",
          split_sentences("The appeal is dismissed. Costs follow, per the rules. e.g. none.")
          == ["The appeal is dismissed.", "Costs follow, per the rules. e.g. none."])


# ─────────────────────────────────────────────────────────────────────────────
# 2 - Segmenter
# ─────────────────────────────────────────────────────────────────────────────
def _inside_density(rank, cuts):
    mass = sum(rank[s:e, s:e].sum() for s, e in zip(cuts, cuts[1:]))
    area = sum((e - s) ** 2 for s, e in zip(cuts, cuts[1:]))
    return mass / area


def test_segmenter():
    section("2 - Segmenter")
    provider = HashedBagOfWordsProvider()

    check("2a. cosine((1,2,3),(4,5,6))",
          close(cosine([1, 2, 3], [4, 5, 6]), 32 / (math.sqrt(14) * math.sqrt(77))))
    check("2a. orthogonal vectors → 0", cosine([1, 0], [0, 1]) == 0.0)
    check("2a. zero vector → 0", cosine([0, 0], [1, 1]) == 0.0)
    check("2a. shared term gives positive similarity",
          cosine(provider.embed_one("tax appeal"), provider.embed_one("tax appeal court")) > 0)
    vectors = embed_sentences(provider, ["Tax appeal.", "Tax appeal."])
    check("2a. identical sentences embed identically",
          vectors.shape == (2, EMBEDDING_DIM) and np.array_equal(vectors[0], vectors[1]))
    check("2a. empty sentence list → ProviderFailure", raises(ProviderFailure, embed_sentences, provider, []))

    check("2b. 1×1 matrix ranks to 0", rank_matrix(np.array([[0.7]]), 3).tolist() == [[0.0]])
    check("2b. constant matrix ranks to zeros", not rank_matrix(np.full((6, 6), 0.3), 3).any())
    example = rank_matrix(np.array([[0, 9, 0], [0, 0, 0], [0, 0, 0]], dtype=float), 3)
    check("2b. strict maximum at (0,1) ranks 1.0", example[0, 1] == 1.0)
    check("2b. every other cell ranks 0", example.sum() == 1.0)
    rng = np.random.default_rng(3)
    raw = rng.random((12, 12))
    sim = (raw + raw.T) / 2
    ranks = rank_matrix(sim, 5)
    check("2b. ranks lie in [0, 1]", ranks.min() >= 0 and ranks.max() <= 1)
    check("2b. ranks invariant under a monotone rescaling",
          np.array_equal(ranks, rank_matrix(np.exp(3 * sim) - 7, 5)))
    check("2b. non-square input rejected", raises(NonSquareMatrix, rank_matrix, np.zeros((2, 3))))
    check("2b. even mask rejected", raises(ConfigError, rank_matrix, np.zeros((4, 4)), 4))

    block = np.zeros((10, 10))
    block[:5, :5] = 1.0
    block[5:, 5:] = 1.0
    check("2c. two 5×5 blocks split at 5", c99_segment(block, 2).boundaries == (5,))
    check("2c. target 1 → single segment", c99_segment(block, 1).spans == [(0, 10)])
    check("2c. target n → singletons", c99_segment(block, 10).boundaries == tuple(range(1, 10)))
    check("2c. target above n rejected", raises(InvalidTargetCount, c99_segment, block, 11))
    densities = c99_segment(block, 10).densities
    check("2c. inside density non-decreasing on the block matrix",
          all(b >= a - 1e-12 for a, b in zip(densities, densities[1:])), str(densities))

    optimal = True
    for trial in range(20):
        n = int(rng.integers(3, 14))
        raw = rng.random((n, n))
        r = (raw + raw.T) / 2
        seg = c99_segment(r, 2)
        scores = [_inside_density(r, [0, b, n]) for b in range(1, n)]
        best = int(np.argmax(scores)) + 1
        optimal &= seg.boundaries == (best,) and close(seg.densities[1], max(scores))
    check("2c. first split maximizes inside density (brute force)", optimal)

    partition = True
    for trial in range(50):
        n = int(rng.integers(1, 16))
        raw = rng.random((n, n))
        seg = c99_segment(rank_matrix((raw + raw.T) / 2, 3))
        spans = seg.spans
        partition &= (
            spans[0][0] == 0 and spans[-1][1] == n
            and all(s < e for s, e in spans)
            and all(a[1] == b[0] for a, b in zip(spans, spans[1:]))
        )
    check("2c. automatic segmentation always partitions the sentences", partition)

    corpus = two_topic_corpus(50, seed=7)
    params = SegmenterParams(target_segments=2)
    hits = sum(1 for d in corpus if segment_document(d, provider, params).boundaries[0] in (9, 10, 11))
    check("2d. two-topic boundary recovered in ≥ 90% of 50 documents", hits >= 45, f"{hits}/50")
    auto_hits = 0
    for d in corpus:
        found = segment_document(d, provider, SegmenterParams()).boundaries
        auto_hits += any(b in (9, 10, 11) for b in found)
    check("2d. automatic termination finds the two-topic boundary in ≥ 90% of 50 documents",
          auto_hits >= 45, f"{auto_hits}/50")
    doc = corpus[0]
    check("2d. deterministic boundaries",
          segment_document(doc, provider) == segment_document(doc, provider))
    single = _doc("one", ["Only sentence."])
    check("2d. one-sentence document → one segment", len(segment_document(single, provider)) == 1)

    rows = segment_count_stats([[1, 0, 0], [1, 1, 0, 0, 0]])
    check("2e. segment statistics",
          rows["argumentative"] == {"average": 1.5, "maximum": 2, "minimum": 1}
          and rows["total"] == {"average": 4.0, "maximum": 5, "minimum": 3})
    check("2e. rendered total row", "| Total | 4.00 | 5 | 3 |" in render_segment_stats(rows))

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "segments.jsonl")
        segs = [Segmentation("a", 5, (2, 4)), Segmentation("b", 1)]
        with open(path, "w", encoding="utf-8") as fh:
            for s in segs:
                fh.write(json.dumps(s.to_record()) + "\n")
        check("2f. segmentation records load back", load_segmentations(path) == segs)
        with open(path, "a", encoding="utf-8") as fh:
            fh.write('{"case_id": "c", "n_sentences": 3, "boundaries": [3]}\n')
        check("2f. out-of-range boundary rejected", raises(MalformedRecord, load_segmentations, path))


# ─────────────────────────────────────────────────────────────────────────────
# 3 - Labeler
# ─────────────────────────────────────────────────────────────────────────────
def test_labeler():
    section("3 - Labeler")
    corpus = ingest(TINY)
    c1 = corpus[0]

    check("3a. segment with a conclusion is argumentative",
          gold_label((4, 5), c1) == SegmentLabel.ARGUMENTATIVE)
    check("3a. segment without IRC is non-argumentative",
          gold_label((0, 1), c1) == SegmentLabel.NON_ARGUMENTATIVE)
    check("3a. segment with all IRC types is argumentative",
          gold_label((0, 5), c1) == SegmentLabel.ARGUMENTATIVE)

    rng = np.random.default_rng(11)
    rule_ok, totals_ok = True, True
    for i in range(1000):
        doc = annotated_document(rng, f"ann-{i}")
        seg = random_segmentation(rng, doc)
        labeled = label_gold([doc], [seg])
        for item in labeled:
            start, end = item.span
            expected = any(s.irc is not None for s in doc.sentences[start:end])
            rule_ok &= int(item.gold) == int(expected)
        arg = sum(1 for s in labeled if s.gold == SegmentLabel.ARGUMENTATIVE)
        non = sum(1 for s in labeled if s.gold == SegmentLabel.NON_ARGUMENTATIVE)
        totals_ok &= arg + non == len(seg)
    check("3b. gold label = OR of IRC flags (1000 random documents)", rule_ok)
    check("3b. argumentative + non-argumentative = total", totals_ok)

    X, y, direction = separable_features(rng, 400)
    X_test, y_test, _ = separable_features(rng, 200, direction=direction)
    w, b, losses = fit_logistic(X, y)
    model = ClassifierModel(w, b, "synthetic:16")
    predicted = [int(decide(s)) for s in score_features(model, X_test)]
    report = classification_report(y_test, predicted)
    check("3c. separable set: positive-class F1 ≥ 0.95", report.positive_f1 >= 0.95,
          f"F1={report.positive_f1:.4f}")
    check("3c. training loss never increases",
          all(later <= earlier + 1e-9 for earlier, later in zip(losses, losses[1:])))
    w2, b2, _ = fit_logistic(X, y)
    check("3c. same data and seed → identical weights", np.array_equal(w, w2) and b == b2)

    flat = np.ones((100, 4))
    labels = np.array([1] * 30 + [0] * 70)
    wf, bf, _ = fit_logistic(flat, labels, TrainingParams(epochs=500, l2=0.0, class_weighting=False))
    prior = float(score_features(ClassifierModel(wf, bf, "flat:4"), flat[:1])[0])
    check("3c. no signal → score ≈ class prior", abs(prior - 0.3) < 1e-3, f"score={prior:.5f}")
    check("3c. one class only rejected",
          raises(SingleClassTrainingSet, fit_logistic, flat, np.ones(100)))

    provider = HashedBagOfWordsProvider()
    zero = ClassifierModel(np.zeros(EMBEDDING_DIM), 0.0, "hashed-bow:512")
    check("3d. w = 0, b = 0 → score 0.5, argumentative",
          predict_label(zero, (0, 2), c1, provider) == (SegmentLabel.ARGUMENTATIVE, 0.5))
    saturated = ClassifierModel(np.zeros(EMBEDDING_DIM), 50.0, "hashed-bow:512")
    check("3d. b = 50 → score ≈ 1", predict_label(saturated, (0, 2), c1, provider)[1] > 1 - 1e-12)
    hand = ClassifierModel(np.array([0.5, 0.3]), 0.0, "hand:2")
    check("3d. w·x + b = 0.8 → sigmoid(0.8)",
          close(float(score_features(hand, [[1.0, 1.0]])[0]), 1 / (1 + math.exp(-0.8))))
    check("3d. dimension mismatch rejected",
          raises(DimensionMismatch, predict_label, hand, (0, 2), c1, provider))
    scores = np.linspace(0, 1, 21)
    check("3d. raising the threshold never adds positives",
          all(int(decide(s, 0.7)) <= int(decide(s, 0.4)) for s in scores))

    single = featurize((0, 1), c1, provider)
    vec = provider.embed_one(c1.sentences[0].text)
    check("3e. one-sentence feature is the normalized sentence vector",
          np.allclose(single, vec / np.linalg.norm(vec)))

    gold = [1] * 4 + [0] + [1] * 2 + [0] * 3
    pred = [1] * 4 + [1] + [0] * 2 + [0] * 3
    planted = classification_report(gold, pred)
    arg = planted.per_class["argumentative"]
    check("3f. planted confusion TP=4 FP=1 FN=2 TN=3",
          planted.confusion == {"tp": 4, "fp": 1, "fn": 2, "tn": 3})
    check("3f. P = 0.8, R = 2/3, F1 = 8/11",
          close(arg["precision"], 0.8) and close(arg["recall"], 2 / 3) and close(arg["f1"], 8 / 11))
    balanced = classification_report([1, 0, 1, 0], [1, 1, 1, 1])
    check("3f. all-positive on a balanced set: R = 1, P = 0.5",
          balanced.per_class["argumentative"]["recall"] == 1.0
          and balanced.per_class["argumentative"]["precision"] == 0.5)
    check("3f. perfect predictions → macro F1 1", classification_report(gold, gold).macro_f1 == 1.0)
    order = np.random.default_rng(2).permutation(len(gold))
    check("3f. F1 invariant under permutation",
          close(classification_report([gold[i] for i in order], [pred[i] for i in order]).positive_f1,
                planted.positive_f1))

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.json")
        save_model(model, path)
        loaded = load_model(path)
        check("3g. model file round trip", np.array_equal(loaded.weights, w) and loaded.bias == b)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"dim": 3, "weights": [0.1], "bias": 0.0, "feature_spec": "x"}, fh)
        check("3g. inconsistent model file rejected", raises(MalformedRecord, load_model, path))

        injected = os.path.join(tmp, "predictions.jsonl")
        with open(injected, "w", encoding="utf-8") as fh:
            fh.write('{"case_id": "c1", "segment_index": 0, "label": 0}\n')
            fh.write('{"case_id": "c1", "segment_index": 1, "label": 1}\n')
        segments = label_gold([c1], [Segmentation("c1", 5, (2,))])
        applied = apply_injected(segments, load_injected_predictions(injected))
        check("3g. injected predictions override labels",
              [int(s.label) for s in applied] == [0, 1] and applied[0].gold == SegmentLabel.ARGUMENTATIVE)
        three = label_gold([c1], [Segmentation("c1", 5, (2, 4))])
        check("3g. missing injected prediction rejected",
              raises(LabelSegmentMismatch, apply_injected, three, load_injected_predictions(injected)))


# ─────────────────────────────────────────────────────────────────────────────
# 4 - Summarizer
# ─────────────────────────────────────────────────────────────────────────────
def test_summarizer():
    section("4 - Summarizer")
    corpus = ingest(TINY)
    c1 = corpus[0]
    arg, non = SegmentLabel.ARGUMENTATIVE, SegmentLabel.NON_ARGUMENTATIVE

    check("4a. prompt = text + newline + TL;DR", build_prompt("Case facts.") == "Case facts.\nTL;DR")
    check("4a. blank text rejected", raises(EmptyText, build_prompt, "  "))
    check("4a. multi-line body preserved", prompt_body(build_prompt("a\n b ")) == "a\n b ")

    policy = TokenBudgetPolicy(2500)
    six_hundred = [" ".join(["w"] * 600)] * 10
    chunks = chunk_by_budget(six_hundred, policy)
    check("4b. 10 × 600 tokens, budget 2500 → 4/4/2 sentences",
          [c.sentence_span for c in chunks] == [(0, 4), (4, 8), (8, 10)])
    long_chunks = chunk_by_budget([" ".join(["w"] * 6000)], policy)
    check("4b. one 6000-token sentence → 2500/2500/1000",
          [c.token_count for c in long_chunks] == [2500, 2500, 1000]
          and [c.token_span for c in long_chunks] == [(0, 2500), (2500, 5000), (5000, 6000)])
    check("4b. short document → single chunk", len(chunk_by_budget([s.text for s in c1.sentences], policy)) == 1)

    rng = np.random.default_rng(5)
    within_budget, reconstructs = True, True
    for i in range(500):
        doc = budget_document(rng, f"budget-{i}")
        budget = int(rng.integers(50, 3001))
        pol = TokenBudgetPolicy(budget)
        planned = plan_chunks(doc, SummaryMethod.BASELINE, pol)
        reconstructs &= list(itertools.chain.from_iterable(tokenize(c.text) for c in planned)) == tokenize(doc.text)
        llm = MockCompletionProvider()
        summarize_document(doc, SummaryMethod.BASELINE, llm, DecodingParams(0.0, 16), pol, max_in_flight=1)
        within_budget &= all(count_tokens(r.prompt) <= budget + SUFFIX_TOKENS for r in llm.calls)
    check("4c. every prompt ≤ budget + suffix (500 random documents)", within_budget)
    check("4c. chunks reconstruct the token sequence", reconstructs)

    seg = Segmentation("c1", 5, (2, 4))
    check("4d. labels (1,0,1) select segments 0 and 2",
          select_argumentative_text(c1, seg, [arg, non, arg]) == [c1.span_text(0, 2), c1.span_text(4, 5)])
    check("4d. all argumentative → whole document",
          " ".join(select_argumentative_text(c1, seg, [arg, arg, arg])) == c1.text)
    check("4d. nothing argumentative → empty selection",
          select_argumentative_text(c1, seg, [non, non, non]) == [])
    check("4d. label count must match segments",
          raises(LabelSegmentMismatch, select_argumentative_text, c1, seg, [arg]))

    llm = MockCompletionProvider()
    record = summarize_document(c1, SummaryMethod.BASELINE, llm, DecodingParams(0.0, 5), policy)
    check("4e. mock baseline summary = leading tokens",
          record.final_summary == "The taxpayer appeals a reassessment", record.final_summary)

    llm = MockCompletionProvider()
    record = summarize_document(c1, SummaryMethod.ARG_SEGMENTS, llm, DecodingParams(0.0, 128), policy, seg, [arg] * 3)
    check("4e. three argumentative segments → three calls", len(llm.calls) == 3 and record.n_calls == 3)
    check("4e. parts in document order, joined by one space",
          record.parts == (c1.span_text(0, 2), c1.span_text(2, 4), c1.span_text(4, 5))
          and record.final_summary == c1.text)

    llm = MockCompletionProvider()
    summarize_document(c1, SummaryMethod.ARG_SEGMENTS, llm, DecodingParams(0.0, 128), policy, seg, [arg, non, arg])
    check("4e. non-argumentative text never reaches a prompt",
          [r.prompt for r in llm.calls] == [build_prompt(c1.span_text(0, 2)), build_prompt(c1.span_text(4, 5))])
    check("4e. no argumentative segment → NoArgumentativeSegments",
          raises(NoArgumentativeSegments, summarize_document, c1, SummaryMethod.ARG_SEGMENTS,
                 MockCompletionProvider(), DecodingParams(), policy, seg, [non] * 3))
    check("4e. prompt beyond the context window → RequestTooLarge",
          raises(RequestTooLarge, summarize_document, c1, SummaryMethod.BASELINE,
                 MockCompletionProvider(context_tokens=100), DecodingParams(0.0, 128), policy))

    grid = [
        summarize_document(c1, SummaryMethod.BASELINE, MockCompletionProvider(), DecodingParams(t, m), policy)
        for t in (0.0, 0.3, 0.5, 0.8) for m in (32, 64, 128)
    ]
    check("4f. 4 × 3 grid → 12 summary records", len(grid) == 12)
    again = summarize_document(c1, SummaryMethod.BASELINE, MockCompletionProvider(), DecodingParams(0.0, 32), policy)
    check("4f. mock at temperature 0 is referentially transparent", again == grid[0])

    small = estimate_cost(Usage(prompt_tokens=2500, completion_tokens=128), profile="small")
    large = estimate_cost(Usage(prompt_tokens=7500, completion_tokens=512), profile="large")
    check("4g. small profile 2500 + 128 → $0.05256", close(small, 0.05256, 1e-12), f"{small!r}")
    check("4g. large profile 7500 + 512 → $0.25572", close(large, 0.25572, 1e-12), f"{large!r}")
    check("4g. zero usage costs nothing", estimate_cost(Usage()) == 0.0)
    a, b = Usage(prompt_tokens=120, completion_tokens=7), Usage(prompt_tokens=33, completion_tokens=90)
    check("4g. cost is linear in usage",
          close(estimate_cost(a + b, profile="large"),
                estimate_cost(a, profile="large") + estimate_cost(b, profile="large"), 1e-15))
    check("4g. unknown profile rejected", raises(UnknownProfile, estimate_cost, a, None, "medium"))

    matched = {
        profile: [
            summarize_document(d, SummaryMethod.BASELINE, MockCompletionProvider(), DecodingParams(0.0, 64),
                               policy, profile=profile)
            for d in corpus
        ]
        for profile in ("small", "large")
    }
    ratio = average_cost_per_summary(matched["large"]) / average_cost_per_summary(matched["small"])
    check("4g. large:small cost ratio > 1 on matched usage", ratio > 1, f"ratio={ratio:.3f}")


# ─────────────────────────────────────────────────────────────────────────────
# 5 - Metrics
# ─────────────────────────────────────────────────────────────────────────────
def _subsequences(seq):
    return {tuple(seq[i] for i in range(len(seq)) if mask >> i & 1) for mask in range(1 << len(seq))}


def _min_chunks_brute(cand, ref):
    """(matches, fewest chunks) over every maximum exact-match alignment."""
    per_type = []
    for tok in sorted(set(cand) & set(ref)):
        ci = [i for i, t in enumerate(cand) if t == tok]
        ri = [j for j, t in enumerate(ref) if t == tok]
        k = min(len(ci), len(ri))
        per_type.append([
            list(zip(cs, rs))
            for cs in itertools.combinations(ci, k)
            for rs in itertools.permutations(ri, k)
        ])
    best = None
    matches = 0
    for combo in itertools.product(*per_type):
        pairs = [p for part in combo for p in part]
        matches = len(pairs)
        chunks = count_chunks(pairs)
        best = chunks if best is None else min(best, chunks)
    return matches, best or 0


def test_metrics():
    section("5 - Metrics")

    r1 = rouge_n("the cat sat on the mat".split(), "the cat is on the mat".split(), 1)
    check("5a. ROUGE-1 clipped overlap 5/6",
          close(r1.precision, 5 / 6) and close(r1.recall, 5 / 6) and close(r1.f1, 5 / 6))
    check("5a. ROUGE-N identical → 1", rouge_n(list("abcd"), list("abcd"), 2).f1 == 1.0)
    check("5a. ROUGE-N disjoint → 0", rouge_n(list("abc"), list("xyz"), 1).f1 == 0.0)
    check("5a. ROUGE-L LCS 3 → F1 3/4",
          lcs_length("a b c d".split(), "a c b d".split()) == 3
          and close(rouge_l("a b c d".split(), "a c b d".split()).f1, 3 / 4))
    check("5a. ROUGE-L empty candidate → 0", rouge_l([], ["a"]).f1 == 0.0)

    t0 = time.time()
    sequences = [
        seq for length in range(7) for seq in itertools.product("abc", repeat=length)
    ]
    subs = {seq: _subsequences(seq) for seq in sequences}
    mismatches = 0
    for i, a in enumerate(sequences):
        for b_seq in sequences[i:]:
            brute = max(len(s) for s in subs[a] & subs[b_seq])
            if lcs_length(a, b_seq) != brute:
                mismatches += 1
    check("5b. LCS equals exhaustive subsequence search (length ≤ 6, 3 symbols)",
          mismatches == 0, f"{mismatches} mismatches, {time.time() - t0:.1f}s")

    check("5c. BLEU clipping to zero",
          bleu("the the the the".split(), ["the cat".split()]) == 0.0)
    check("5c. BLEU half-length candidate with perfect precision → e^-1",
          close(bleu("a b c".split(), ["a b c d e f".split()]), math.exp(-1)))
    rng = np.random.default_rng(9)
    identity = True
    for _ in range(100):
        cand = [str(t) for t in rng.integers(0, 5, int(rng.integers(1, 12)))]
        identity &= close(bleu(cand, [cand]), 1.0)
    check("5c. bleu(c, {c}) = 1", identity)
    check("5c. BLEU needs a reference", raises(EmptyReference, bleu, ["a"], []))

    check("5d. METEOR identical 3 tokens → 1 − 1/54", close(meteor(list("xyz"), list("xyz")), 1 - 1 / 54))
    check("5d. METEOR swap → 0.5", close(meteor(["b", "a"], ["a", "b"]), 0.5))
    check("5d. METEOR no overlap → 0", meteor(["a"], ["b"]) == 0.0)
    penalized = [meteor_from_counts(4, chunks, 4, 4) for chunks in range(1, 5)]
    check("5d. more chunks → lower METEOR at fixed matches",
          all(a > b for a, b in zip(penalized, penalized[1:])))
    swapped = align("b a b b a".split(), "a b a a b".split())
    check("5d. alignment prefers fewer chunks: 4 matches in 2 chunks → 0.75",
          len(swapped) == 4 and count_chunks(swapped) == 2
          and close(meteor("b a b b a".split(), "a b a a b".split()), 0.75))
    t0 = time.time()
    suboptimal = 0
    for _ in range(600):
        cand = [str(c) for c in rng.choice(list("ab"), int(rng.integers(0, 7)))]
        ref = [str(c) for c in rng.choice(list("ab"), int(rng.integers(0, 7)))]
        pairs = align(cand, ref)
        if (len(pairs), count_chunks(pairs)) != _min_chunks_brute(cand, ref):
            suboptimal += 1
    check("5d. alignment matches exhaustive fewest-chunk search (length ≤ 6, 2 symbols)",
          suboptimal == 0, f"{suboptimal} suboptimal, {time.time() - t0:.1f}s")
    long_cand = ["the", "court"] * 40
    long_ref = ["the", "court"] * 40
    fallback = align(long_cand, long_ref, state_limit=10)
    check("5d. state limit falls back to a maximum alignment",
          len(fallback) == 80 and count_chunks(fallback) == 1)

    stub = StubTokenProvider()
    bs = bert_score(["u"], ["u", "v"], stub)
    check("5e. BERTScore cand {u}, ref {u, v} → P 1, R 0.5, F1 2/3",
          close(bs.precision, 1.0) and close(bs.recall, 0.5) and close(bs.f1, 2 / 3))
    check("5e. orthogonal single tokens → 0", bert_score(["u"], ["v"], stub).f1 == 0.0)
    hashed = HashedBagOfWordsProvider()
    check("5e. identical sequences → F1 1",
          close(bert_score(normalize("The appeal is dismissed."), normalize("The appeal is dismissed."), hashed).f1, 1.0))

    in_range = True
    relabel = dict(zip("abcde", "vwxyz"))
    renaming = True
    for _ in range(200):
        cand = [str(c) for c in rng.choice(list("abcde"), int(rng.integers(0, 12)))]
        ref = [str(c) for c in rng.choice(list("abcde"), int(rng.integers(0, 12)))]
        values = [
            rouge_n(cand, ref, 1).f1, rouge_n(cand, ref, 2).f1, rouge_l(cand, ref).f1,
            bleu(cand, [ref]), bert_score(cand, ref, hashed).f1,
        ]
        in_range &= all(0.0 <= v <= 1.0 for v in values) and 0.0 <= meteor(cand, ref) < 1.0
        cand2, ref2 = [relabel[t] for t in cand], [relabel[t] for t in ref]
        renaming &= (
            rouge_n(cand, ref, 2) == rouge_n(cand2, ref2, 2)
            and bleu(cand, [ref]) == bleu(cand2, [ref2])
        )
    check("5f. every metric stays within its range", in_range)
    check("5f. ROUGE-N and BLEU invariant under token renaming", renaming)

    candidate = "The officer ignored the documents."
    reference = "Judicial review is allowed because the officer ignored corroborating documents."
    report = evaluate_pair(candidate, reference)
    cand, ref = normalize(candidate), normalize(reference)
    overlap = sum(min(cand.count(t), ref.count(t)) for t in set(cand))
    brute_lcs = max(len(s) for s in _subsequences(cand) & _subsequences(ref))
    p, r = 5 / 6, 5 / 11
    expected_meteor = (10 * p * r / (r + 9 * p)) * (1 - 0.5 * (2 / 5) ** 3)
    check("5g. ROUGE-1 matches independent count",
          overlap == 5 and close(report.rouge1.precision, overlap / len(cand))
          and close(report.rouge1.recall, overlap / len(ref)))
    check("5g. ROUGE-2 = 3/5 precision, 3/10 recall",
          close(report.rouge2.precision, 3 / 5) and close(report.rouge2.recall, 3 / 10))
    check("5g. ROUGE-L matches brute-force LCS",
          brute_lcs == 5 and close(report.rougeL.recall, brute_lcs / len(ref)))
    check("5g. METEOR with 5 matches in 2 chunks", close(report.meteor, expected_meteor),
          f"{report.meteor!r} vs {expected_meteor!r}")
    check("5g. BLEU 0 (no matching 4-gram)", report.bleu == 0.0)
    check("5g. BERTScore off unless a provider is given", report.bertscore is None)
    same = evaluate_pair(reference, reference, MetricOptions(bertscore_provider=hashed))
    check("5g. candidate = reference → ROUGE, BLEU, BERTScore 1",
          same.rouge1.f1 == 1.0 and same.rougeL.f1 == 1.0 and close(same.bleu, 1.0)
          and close(same.bertscore.f1, 1.0) and close(same.meteor, 1 - 0.5 / len(ref) ** 3))
    check("5g. empty reference rejected", raises(EmptyReference, evaluate_pair, "x", "   "))

    def report_with(f1):
        prf = PRF(f1, f1, f1)
        return EvalReport(prf, prf, prf, 0.0, 0.0, None, 3)

    aggregate = aggregate_reports([report_with(0.4), report_with(0.6)])
    check("5h. aggregate of 0.4 and 0.6 → 0.5", close(aggregate["rouge1_f"], 0.5) and aggregate["count"] == 2)


# ─────────────────────────────────────────────────────────────────────────────
# 6 - Experiment
# ─────────────────────────────────────────────────────────────────────────────
def test_experiment():
    section("6 - Experiment")
    from experiment import (
        COLUMNS,
        ExperimentConfig,
        compare_methods,
        config_from_mapping,
        load_config,
        parse_table,
        render_table,
        run_experiment,
        run_grid,
    )

    corpus = ingest(TINY)
    cfg = load_config(EXPERIMENT_CFG)
    check("6a. config file parsed",
          cfg.corpus == TINY and cfg.methods == (SummaryMethod.BASELINE, SummaryMethod.ARG_SEGMENTS)
          and cfg.evaluation_split == "all" and cfg.max_tokens_grid == (32, 64, 128))
    cells = cfg.cells(SummaryMethod.BASELINE)
    check("6a. grid in table order",
          len(cells) == 12 and cells[0].parameters == "(0, 32)" and cells[1].parameters == "(0, 64)"
          and cells[-1].parameters == "(0.8, 128)")
    check("6a. temperature outside [0, 1] rejected",
          raises(ConfigError, config_from_mapping, {"corpus": TINY, "temperatures": "0, 1.5"}))
    check("6a. repeated method rejected",
          raises(ConfigError, config_from_mapping, {"corpus": TINY, "methods": "baseline, baseline"}))
    check("6a. model classifier needs a path",
          raises(ConfigError, config_from_mapping, {"corpus": TINY, "classifier": "model"}))
    with tempfile.TemporaryDirectory() as tmp:
        bad = os.path.join(tmp, "bad.cfg")
        with open(bad, "w", encoding="utf-8") as fh:
            fh.write("corpus = x.jsonl\nflavour = vanilla\n")
        check("6a. unknown config key rejected", raises(ConfigError, load_config, bad))

    baseline = ExperimentConfig(corpus=TINY, methods="baseline", evaluation_split="all")
    grid = run_grid(baseline, corpus, MockCompletionProvider(context_tokens=4097))
    rows = grid.rows
    check("6b. 4 × 3 grid → 12 rows + 1 average row",
          len(rows) == 13 and rows[-1].is_average and not any(r.is_average for r in rows[:-1]))
    check("6b. every row averages all 3 documents", all(r.documents == 3 for r in rows))
    check("6b. (0, 32) summaries are 32 tokens long", rows[0].avg_summary_length == 32.0)
    check("6b. (0, 64) summaries are whole documents", close(rows[1].avg_summary_length, 118 / 3))
    check("6b. (0, 32) cost = 223 tokens × $0.02/1000", close(rows[0].cost, 223 * 0.02 / 1000, 1e-12),
          f"{rows[0].cost!r}")
    columns_ok = all(
        close(getattr(rows[-1], name), float(np.mean([getattr(r, name) for r in rows[:-1]])))
        for name in ("avg_summary_length", "rouge1", "rouge2", "rougeL", "bleu", "meteor", "bertscore", "cost")
    )
    check("6b. average row = column-wise mean", columns_ok)
    again = run_grid(baseline, corpus, MockCompletionProvider(context_tokens=4097))
    check("6b. rerun gives identical rows", again.rows == rows)

    table = render_table(rows)
    lines = table.strip().splitlines()
    check("6c. header + separator + 13 data lines", len(lines) == 15)
    check("6c. columns in table order", lines[0] == "| " + " | ".join(COLUMNS) + " |")
    check("6c. one row → header + one line", len(render_table(rows[:1]).strip().splitlines()) == 3)
    round_trip = True
    for fmt in ("markdown", "csv"):
        parsed = parse_table(render_table(rows, fmt), fmt)
        for row, values in zip(rows, parsed):
            round_trip &= (
                values["Parameters"] == row.parameters
                and values["Rouge-1"] == float(f"{row.rouge1 * 100:.2f}")
                and values["METEOR"] == float(f"{row.meteor:.2f}")
                and values["BERTScore"] == float(f"{row.bertscore * 100:.2f}")
            )
    check("6c. rendered tables parse back at rendered precision", round_trip)
    check("6c. no rows → EmptyRows", raises(EmptyRows, render_table, []))

    arguments = argument_corpus(8, seed=3)
    ordering = ExperimentConfig(
        corpus="synthetic", methods="baseline, argseg", temperatures="0", max_tokens="32",
        evaluation_split="all", target_segments=2, bertscore=False,
    )
    llm = MockCompletionProvider()
    comparison = compare_methods(arguments, ordering, llm)
    no_arg, with_arg = comparison.rows
    check("6d. one row per method", [r.parameters for r in comparison.rows] == ["No Arg Seg.", "Arg Seg."])
    check("6d. argumentative segments beat baseline on ROUGE-1",
          with_arg.rouge1 > no_arg.rouge1, f"{with_arg.rouge1:.4f} vs {no_arg.rouge1:.4f}")
    logged = sum(
        estimate_cost(Usage(
            prompt_tokens=count_tokens(r.prompt),
            completion_tokens=count_tokens(leading_text(prompt_body(r.prompt), r.max_tokens)),
        ))
        for r in llm.calls
    )
    check("6d. method costs sum to the cost of every logged call",
          close(sum(comparison.costs.values()), logged, 1e-12))

    whole = ExperimentConfig(corpus=TINY, methods="baseline, argseg", temperatures="0", max_tokens="64",
                             evaluation_split="all", target_segments=1)
    same = compare_methods(corpus, whole, MockCompletionProvider())
    fields = ("avg_summary_length", "rouge1", "rouge2", "rougeL", "bleu", "meteor", "bertscore", "cost")
    check("6d. identical selections → identical rows",
          all(getattr(same.rows[0], f) == getattr(same.rows[1], f) for f in fields))

    failing = list(corpus) + [
        _doc("c4", ["The hearing was adjourned.", "Costs were reserved."], reference="Hearing adjourned."),
        _doc("c5", ["The appeal is allowed."], irc={0: "conclusion"}),
    ]
    partial = compare_methods(failing, whole, MockCompletionProvider())
    check("6e. failing and unreferenced documents excluded",
          sorted(partial.excluded) == ["c4", "c5"] and all(r.documents == 3 for r in partial.rows),
          str(partial.excluded))

    check("6e. budget beyond the context window rejected",
          raises(ConfigError, run_grid, ExperimentConfig(corpus=TINY, budget=4000, evaluation_split="all"),
                 corpus, MockCompletionProvider(context_tokens=4097)))
    check("6e. empty test split rejected",
          raises(EmptyRows, run_grid, ExperimentConfig(corpus=TINY), corpus, MockCompletionProvider()))

    with tempfile.TemporaryDirectory() as tmp:
        first = run_experiment(cfg, out_dir=tmp)
        with open(first.paths["markdown"], "rb") as fh:
            report_md = fh.read()
        with open(first.paths["csv"], "rb") as fh:
            report_csv = fh.read()
        results_dir = os.path.join(tmp, "results")
        check("6f. one checkpoint per cell", len(os.listdir(results_dir)) == 24)
        check("6f. report footer names the split and tokenizer",
              b"Documents evaluated: 3 (all split, seed 7)" in report_md and b"word-punct-v1" in report_md)

        torn = os.path.join(results_dir, "argseg_t0.3_m64.jsonl")
        with open(torn, "r", encoding="utf-8") as fh:
            kept = fh.readline()
        with open(torn, "w", encoding="utf-8") as fh:
            fh.write(kept + '{"case_id": "c2", "sta')
        os.remove(os.path.join(results_dir, "baseline_t0_m32.jsonl"))
        stale = os.path.join(results_dir, "baseline_t0.8_m128.jsonl")
        with open(stale, "r", encoding="utf-8") as fh:
            entries = [json.loads(line) for line in fh]
        with open(stale, "w", encoding="utf-8") as fh:
            for entry in entries:
                fh.write(json.dumps({**entry, "fingerprint": "stale"}) + "\n")
        os.remove(first.paths["markdown"])

        second = run_experiment(cfg, out_dir=tmp)
        with open(second.paths["markdown"], "rb") as fh:
            resumed_md = fh.read()
        with open(second.paths["csv"], "rb") as fh:
            resumed_csv = fh.read()
        check("6f. resumed run gives byte-identical tables", resumed_md == report_md and resumed_csv == report_csv)
        with open(torn, "r", encoding="utf-8") as fh:
            check("6f. torn checkpoint rewritten with 3 clean lines", len(fh.readlines()) == 3)

    class OutageProvider(MockCompletionProvider):
        def complete(self, request):
            raise ProviderFailure("completion endpoint unreachable", ConnectionError("connection refused"))

    single = ExperimentConfig(corpus=TINY, methods="baseline", temperatures="0", max_tokens="32",
                              evaluation_split="all")
    with tempfile.TemporaryDirectory() as tmp:
        check("6f. provider outage leaves nothing to score",
              raises(EmptyRows, run_grid, single, corpus, OutageProvider(), None, tmp))
        with open(os.path.join(tmp, "results", "baseline_t0_m32.jsonl"), encoding="utf-8") as fh:
            statuses = [json.loads(line)["status"] for line in fh]
        check("6f. failed documents checkpointed", statuses == ["failed"] * 3, str(statuses))
        recovered = run_grid(single, corpus, MockCompletionProvider(), None, tmp)
        check("6f. resume after an outage retries the failed documents",
              recovered.rows[0].documents == 3 and not recovered.excluded, str(recovered.excluded))

    mixed = ExperimentConfig(corpus=TINY, methods="baseline, argseg", temperatures="0", evaluation_split="all",
                             method_profiles="baseline: large, argseg: small")
    check("6g. per-method grids follow their profiles",
          [c.max_tokens for c in mixed.cells(SummaryMethod.BASELINE)] == [128, 256, 512]
          and [c.max_tokens for c in mixed.cells(SummaryMethod.ARG_SEGMENTS)] == [32, 64, 128]
          and mixed.budget_for(SummaryMethod.BASELINE) == 7500
          and mixed.budget_for(SummaryMethod.ARG_SEGMENTS) == 2500)
    check("6g. unknown per-method profile rejected",
          raises(ConfigError, config_from_mapping, {"corpus": TINY, "method_profiles": "baseline: huge"}))
    check("6g. malformed per-method profile rejected",
          raises(ConfigError, config_from_mapping, {"corpus": TINY, "method_profiles": "baseline"}))
    with tempfile.TemporaryDirectory() as tmp:
        headline = run_experiment(mixed, out_dir=tmp)
        large_only = run_grid(
            ExperimentConfig(corpus=TINY, methods="baseline", profile="large", temperatures="0",
                             evaluation_split="all"),
            corpus, MockCompletionProvider(context_tokens=8192),
        )
        small_only = run_grid(
            ExperimentConfig(corpus=TINY, methods="argseg", profile="small", temperatures="0",
                             evaluation_split="all"),
            corpus, MockCompletionProvider(context_tokens=4097),
        )
        check("6g. mixed-profile grids equal single-profile runs",
              headline.grids[SummaryMethod.BASELINE].rows == large_only.rows
              and headline.grids[SummaryMethod.ARG_SEGMENTS].rows == small_only.rows)
        labels = [r.parameters for r in headline.comparison.rows]
        check("6g. comparison rows name each profile", labels == ["No Arg Seg. (large)", "Arg Seg. (small)"], str(labels))
        with open(headline.paths["markdown"], encoding="utf-8") as fh:
            text = fh.read()
        check("6g. report names both profiles and budgets",
              "baseline large, argseg small profiles" in text and "baseline 7500, argseg 2500" in text)


# ─────────────────────────────────────────────────────────────────────────────
# 7 - CLI
# ─────────────────────────────────────────────────────────────────────────────
def run_cli(*argv):
    from cli import dispatch

    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = dispatch([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


def test_cli():
    section("7 - CLI")

    code, out, _ = run_cli("stats", TINY)
    check("7a. stats → exit 0", code == 0, str(code))
    check("7a. stats prints the token table", "| Court decision | 39.33 | 42 | 37 |" in out, out)
    code, out, _ = run_cli("stats", TINY, "--json")
    check("7a. --json output", code == 0 and json.loads(out)["documents"]["maximum"] == 42)

    code, _, err = run_cli("frobnicate")
    check("7b. unknown subcommand → exit 2 with usage", code == 2 and "usage" in err, err)
    code, _, _ = run_cli("stats")
    check("7b. missing argument → exit 2", code == 2)
    code, _, _ = run_cli("experiment", "--quiet")
    check("7b. experiment without --config → exit 2", code == 2)
    code, _, err = run_cli("stats", os.path.join(FIXTURES, "missing.jsonl"), "--quiet")
    check("7b. missing file → exit 1", code == 1 and err.startswith("error:"), err)

    with tempfile.TemporaryDirectory() as tmp:
        digests = []
        for name in ("run1", "run2"):
            out_dir = os.path.join(tmp, name)
            code, _, _ = run_cli("experiment", "--config", EXPERIMENT_CFG, "--out-dir", out_dir, "--quiet")
            check(f"7c. experiment ({name}) → exit 0", code == 0)
            with open(os.path.join(out_dir, "report.md"), "rb") as fh:
                digests.append(hashlib.sha256(fh.read()).hexdigest())
        check("7c. report.md identical across runs", digests[0] == digests[1])

        code, out, _ = run_cli("split", TINY, "--out-dir", os.path.join(tmp, "split"), "--json", "--quiet")
        check("7d. split → 3 / 0 / 0", code == 0 and len(json.loads(out)["train"]) == 3)

        raw = os.path.join(tmp, "decision.txt")
        with open(raw, "w", encoding="utf-8") as fh:
            fh.write("The appeal is dismissed. Costs follow.")
        ingest_dir = os.path.join(tmp, "ingest")
        code, _, _ = run_cli("ingest", raw, "--raw", "--out-dir", ingest_dir, "--quiet")
        raw_docs = ingest(os.path.join(ingest_dir, "corpus.jsonl")) if code == 0 else []
        check("7d. raw text ingested as one 2-sentence document",
              len(raw_docs) == 1 and raw_docs[0].case_id == "decision" and len(raw_docs[0].sentences) == 2)

        corpus_path = os.path.join(tmp, "arguments.jsonl")
        serialize(argument_corpus(8, seed=3), corpus_path)
        work = os.path.join(tmp, "pipeline")
        common = ["--out-dir", work, "--quiet", "--target-segments", "2"]
        steps = [
            ("segment", [corpus_path], "segments.jsonl"),
            ("label", [corpus_path], "labels.jsonl"),
            ("train", [corpus_path, "--epochs", "200"], "model.json"),
            ("predict", [corpus_path, "--model", os.path.join(work, "model.json")], "predictions.jsonl"),
            ("eval-classifier", [corpus_path, "--model", os.path.join(work, "model.json")], "classifier_report.json"),
            ("summarize", [corpus_path, "--method", "argseg", "--max-tokens", "64",
                           "--labels", "model", "--model", os.path.join(work, "model.json")], "summaries.jsonl"),
        ]
        for command, args, output in steps:
            code, _, err = run_cli(command, *args, *common)
            check(f"7e. {command} → exit 0 and {output}",
                  code == 0 and os.path.exists(os.path.join(work, output)), err.strip()[-200:])

        code, out, _ = run_cli(
            "score", "--candidates", os.path.join(work, "summaries.jsonl"), "--references", corpus_path,
            "--out", "report.csv", "--out-dir", work, "--json", "--quiet",
        )
        check("7e. score → exit 0 and report.csv",
              code == 0 and os.path.exists(os.path.join(work, "report.csv"))
              and "corpus_bleu" in json.loads(out)["aggregate"])
        with open(os.path.join(work, "segments.jsonl"), encoding="utf-8") as fh:
            check("7e. every document split in two", all(len(json.loads(l)["boundaries"]) == 1 for l in fh))

        flags_dir = os.path.join(tmp, "flags")
        code, _, err = run_cli("segment", corpus_path, "--segments", "2", "--mask", "11", "--provider", "builtin",
                               "--out-dir", flags_dir, "--quiet")
        fixed = []
        if code == 0:
            with open(os.path.join(flags_dir, "segments.jsonl"), encoding="utf-8") as fh:
                fixed = [json.loads(line) for line in fh]
        check("7f. segment --segments N --mask --provider builtin",
              code == 0 and len(fixed) == 8 and all(len(r["boundaries"]) == 1 for r in fixed), err.strip()[-200:])
        code, _, err = run_cli("segment", corpus_path, "--auto", "--out-dir", os.path.join(tmp, "auto"), "--quiet")
        check("7f. segment --auto → exit 0", code == 0, err.strip()[-200:])
        code, _, _ = run_cli("segment", corpus_path, "--segments", "2", "--auto", "--quiet")
        check("7f. --segments and --auto together → exit 2", code == 2)
        code, _, err = run_cli("label", corpus_path, "--gold", "--segments-file", os.path.join(flags_dir, "segments.jsonl"),
                               "--out-dir", flags_dir, "--quiet")
        check("7f. label --gold --segments-file → labels.jsonl",
              code == 0 and os.path.exists(os.path.join(flags_dir, "labels.jsonl")), err.strip()[-200:])
        code, _, err = run_cli("train", corpus_path, "--epochs", "50", "--lr", "0.5", "--seed", "1",
                               "--segments", "2", "--out-dir", flags_dir, "--quiet")
        check("7f. train --epochs --lr --seed → model.json",
              code == 0 and os.path.exists(os.path.join(flags_dir, "model.json")), err.strip()[-200:])
        split_dir = os.path.join(tmp, "split-out")
        code, _, _ = run_cli("split", TINY, "--seed", "7", "--out", split_dir, "--quiet")
        check("7f. split --seed --out", code == 0 and os.path.exists(os.path.join(split_dir, "train.jsonl")))


# ─────────────────────────────────────────────────────────────────────────────
# 8 - HTTP providers against the mock service
# ─────────────────────────────────────────────────────────────────────────────
def _free_port():
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_http_providers():
    section("8 - HTTP providers")
    try:
        import requests
        import uvicorn
        from embeddings import HttpEmbeddingProvider
        from experiment import ExperimentConfig, run_grid
        from llm_client import CompletionRequest, HttpCompletionProvider
        from mock_server import app
    except ImportError as e:
        check("8. imports", False, str(e))
        return

    port = _free_port()
    base = f"http://127.0.0.1:{port}"
    server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started and time.time() < deadline:
        time.sleep(0.05)
    print(f"  {INFO}  Mock service on {base}")

    def completions_served():
        return requests.get(f"{base}/health", timeout=5).json()["completions"]

    try:
        health = requests.get(f"{base}/health", timeout=5)
        check("8a. GET /health → 200 ok", health.status_code == 200 and health.json()["status"] == "ok")

        llm = HttpCompletionProvider(base, attempts=3, initial_wait=0.01)
        request = CompletionRequest(prompt=build_prompt("The appeal is dismissed."), temperature=0.0, max_tokens=3)
        response = llm.complete(request)
        check("8b. completion over HTTP follows the mock contract",
              response.text == "The appeal is" and response.usage.prompt_tokens == 8
              and response.usage.completion_tokens == 3, response.model_dump_json())

        before = completions_served()
        requests.post(f"{base}/faults", json={"count": 2, "status": 503}, timeout=5)
        check("8c. two 503s are retried", llm.complete(request).text == "The appeal is")
        check("8c. three requests reached the service", completions_served() == before + 3)

        requests.post(f"{base}/faults", json={"count": 1, "status": 429}, timeout=5)
        check("8c. 429 is retried", llm.complete(request).text == "The appeal is")

        requests.post(f"{base}/faults", json={"count": 3, "status": 500}, timeout=5)
        check("8c. failure after the last attempt → ProviderFailure", raises(ProviderFailure, llm.complete, request))

        before = completions_served()
        requests.post(f"{base}/faults", json={"count": 1, "status": 400}, timeout=5)
        check("8c. 400 fails without retry", raises(ProviderFailure, llm.complete, request)
              and completions_served() == before + 1)

        embedder = HttpEmbeddingProvider(base, attempts=3, initial_wait=0.01)
        vectors = embedder.embed(["tax appeal", "tax appeal"])
        check("8d. embeddings over HTTP",
              vectors.shape == (2, EMBEDDING_DIM) and np.array_equal(vectors[0], vectors[1])
              and embedder.dimension == EMBEDDING_DIM)

        corpus = ingest(TINY)
        cfg = ExperimentConfig(corpus=TINY, temperatures="0", max_tokens="32", evaluation_split="all",
                               bertscore=False, workers=2)
        remote = run_grid(cfg, corpus, llm, embedder)
        local = run_grid(cfg, corpus, MockCompletionProvider(), HashedBagOfWordsProvider())
        check("8e. grid over HTTP equals the in-process run", remote.rows == local.rows)

        with tempfile.TemporaryDirectory() as tmp:
            requests.post(f"{base}/faults", json={"count": 1, "status": 400}, timeout=5)
            code, out, err = run_cli("summarize", TINY, "--method", "baseline", "--provider", "http",
                                     "--endpoint", base, "--out-dir", tmp, "--json", "--quiet")
            payload = json.loads(out) if code == 0 else {}
            check("8f. summarize keeps going past a provider failure",
                  code == 0 and payload["summaries"] == 2 and len(payload["failed"]) == 1
                  and "ProviderFailure" in next(iter(payload["failed"].values())), err.strip()[-200:])
            written = []
            if code == 0:
                with open(os.path.join(tmp, "summaries.jsonl"), encoding="utf-8") as fh:
                    written = fh.readlines()
            check("8f. summaries of the other documents written", len(written) == 2)
    finally:
        server.should_exit = True
        thread.join(timeout=5)


# ─────────────────────────────────────────────────────────────────────────────
# Main
# ─────────────────────────────────────────────────────────────────────────────
def main():
    # UTF-8 output on Windows consoles
    sys.stdout = io.TextIOWrapper(sys.stdout.buffer, encoding="utf-8", errors="replace")
    sys.stderr = io.TextIOWrapper(sys.stderr.buffer, encoding="utf-8", errors="replace")

    print(f"\n{'='*62}")
    print("  argpipe -- Full Test Suite")
    print(f"{'='*62}")

    test_tokenizer_and_corpus()
    test_segmenter()
    test_labeler()
    test_summarizer()
    test_metrics()
    test_experiment()
    test_cli()
    test_http_providers()

    section("SUMMARY")
    passed  = sum(1 for _, ok in results if ok)
    failed  = sum(1 for _, ok in results if not ok)
    total   = len(results)

    print(f"\n  Total : {total}")
    print(f"  {PASS}  Passed: {passed}")
    if failed:
        print(f"  {FAIL}  Failed: {failed}")
        print("\n  Failed tests:")
        for label, ok in results:
            if not ok:
                print(f"    - {label}")
    else:
        print("\n  *** ALL TESTS PASSED ***")

    print()
    sys.exit(0 if failed == 0 else 1)


if __name__ == "__main__":
    main()
