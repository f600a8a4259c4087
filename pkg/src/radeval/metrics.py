"""Automated report-quality metrics.

Covers the NLG metrics (corpus BLEU-4, ROUGE-L, CIDEr-D), clinical
classification metrics (micro-averaged F1 over finding categories),
consensus-label construction, Kendall's tau-b rank correlation, ROC/AUC
with micro-averaging across conditions, exact-match graph overlap F1,
and percentile bootstrap confidence intervals.

All functions are pure and deterministic given seeds. Corpus-level
scores reduce in input order, so results are reproducible bit for bit.
"""

from __future__ import annotations

import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import kendalltau as _scipy_kendalltau

TokenSequence = tuple[str, ...]

ROUGE_L_BETA = 1.2  # recall-weighted, recorded in output metadata
CIDER_SIGMA = 6.0
CIDER_MAX_N = 4
CIDER_SCALE = 10.0
DEFAULT_BOOTSTRAP_RESAMPLES = 10_000


class MetricInputError(ValueError):
    """Inputs violate a metric's preconditions (length mismatch, empty corpus)."""


class DegenerateInputError(ValueError):
    """Statistic undefined on this input (all-ties ranking, single-class targets)."""


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> TokenSequence:
    """Lowercase and split on any non-alphanumeric run, dropping empties."""
    return tuple(_TOKEN_RE.findall(text.lower()))


# ---------------------------------------------------------------------------
# NLG metrics
# ---------------------------------------------------------------------------

def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(
    candidates: Sequence[TokenSequence],
    references: Sequence[TokenSequence],
    *,
    smooth: bool = False,
) -> float:
    """Corpus-level BLEU-4: clipped modified n-gram precisions (n=1..4),
    geometric mean, brevity penalty.

    Unsmoothed by default, so any empty n-gram overlap annihilates the
    score. `smooth=True` adds one to numerator and denominator for n>=2
    (sentence-level diagnostics only).
    """
    if len(candidates) != len(references):
        raise MetricInputError(
            f"candidate/reference length mismatch: {len(candidates)} != {len(references)}"
        )
    if not candidates:
        raise MetricInputError("empty corpus")

    clipped = [0] * 4
    totals = [0] * 4
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, 5):
            c_counts = _ngram_counts(cand, n)
            r_counts = _ngram_counts(ref, n)
            totals[n - 1] += sum(c_counts.values())
            clipped[n - 1] += sum(min(c, r_counts[g]) for g, c in c_counts.items())

    precisions = []
    for i in range(4):
        num, den = clipped[i], totals[i]
        if smooth and i > 0:
            num, den = num + 1, den + 1
        precisions.append(num / den if den else 0.0)
    if min(precisions) <= 0.0:
        return 0.0
    log_mean = sum(math.log(p) for p in precisions) / 4.0
    brevity = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return brevity * math.exp(log_mean)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    # rolling single-row DP
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(
    candidate: TokenSequence,
    reference: TokenSequence,
    *,
    beta: float = ROUGE_L_BETA,
) -> float:
    """ROUGE-L: LCS-based F-measure with recall-favoring beta. Defined as 0
    when either side (or both) is empty."""
    lcs = _lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    return ((1 + beta**2) * precision * recall) / (recall + beta**2 * precision)


def corpus_rouge_l(
    candidates: Sequence[TokenSequence],
    references: Sequence[TokenSequence],
    *,
    beta: float = ROUGE_L_BETA,
) -> float:
    """Mean pairwise ROUGE-L over an aligned corpus."""
    if len(candidates) != len(references):
        raise MetricInputError("candidate/reference length mismatch")
    if not candidates:
        raise MetricInputError("empty corpus")
    return sum(rouge_l(c, r, beta=beta) for c, r in zip(candidates, references)) / len(
        candidates
    )


def _all_ngram_counts(tokens: Sequence[str], max_n: int) -> Counter:
    counts: Counter = Counter()
    for n in range(1, max_n + 1):
        counts.update(_ngram_counts(tokens, n))
    return counts


def cider_d(
    candidates: Sequence[TokenSequence],
    references: Sequence[TokenSequence],
    corpus: Sequence[TokenSequence],
    *,
    sigma: float = CIDER_SIGMA,
    max_n: int = CIDER_MAX_N,
) -> float:
    """CIDEr-D: tf-idf n-gram cosine similarity averaged over n=1..4 with a
    gaussian length penalty (sigma=6) and a x10 scale.

    `corpus` supplies the documents over which n-gram document frequencies
    are counted (normally the reference set). Candidate counts are clipped
    against the reference in the similarity numerator.
    """
    if len(candidates) != len(references):
        raise MetricInputError("candidate/reference length mismatch")
    if not candidates:
        raise MetricInputError("empty corpus")
    corpus = list(corpus)
    if not corpus:
        raise MetricInputError("empty document-frequency corpus")

    doc_freq: Counter = Counter()
    for doc in corpus:
        doc_freq.update(set(_all_ngram_counts(doc, max_n)))
    log_num_docs = math.log(len(corpus))

    def tfidf(tokens: Sequence[str]):
        vecs = [defaultdict(float) for _ in range(max_n)]
        norms = [0.0] * max_n
        for gram, tf in _all_ngram_counts(tokens, max_n).items():
            idf = log_num_docs - math.log(max(1.0, doc_freq.get(gram, 0)))
            weight = tf * idf
            vecs[len(gram) - 1][gram] = weight
            norms[len(gram) - 1] += weight * weight
        return vecs, [math.sqrt(x) for x in norms]

    total = 0.0
    for cand, ref in zip(candidates, references):
        c_vecs, c_norms = tfidf(cand)
        r_vecs, r_norms = tfidf(ref)
        penalty = math.exp(-((len(cand) - len(ref)) ** 2) / (2.0 * sigma**2))
        sims = []
        for n in range(max_n):
            dot = sum(
                min(w, r_vecs[n][gram]) * r_vecs[n][gram]
                for gram, w in c_vecs[n].items()
            )
            norm = c_norms[n] * r_norms[n]
            sims.append(penalty * dot / norm if norm > 0.0 else 0.0)
        total += sum(sims) / max_n
    return CIDER_SCALE * total / len(candidates)


# ---------------------------------------------------------------------------
# Clinical classification metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MicroF1:
    f1: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int


def micro_f1(
    predicted: Sequence[Mapping],
    target: Sequence[Mapping],
    categories: Iterable,
    *,
    uncertain_positive: bool = False,
) -> MicroF1:
    """Micro-averaged F1 over (report, category) pairs.

    `predicted`/`target` are aligned per-report mappings from category to a
    label value exposing `.name` (or a plain string). POSITIVE counts as 1;
    UNCERTAIN counts as 1 only under `uncertain_positive`; everything else
    is 0.
    """
    if len(predicted) != len(target):
        raise MetricInputError(
            f"predicted/target length mismatch: {len(predicted)} != {len(target)}"
        )
    cats = tuple(categories)

    def as_binary(value) -> int:
        name = getattr(value, "name", value)
        if name == "POSITIVE":
            return 1
        if name == "UNCERTAIN" and uncertain_positive:
            return 1
        return 0

    tp = fp = fn = 0
    for pred_row, tgt_row in zip(predicted, target):
        for cat in cats:
            p = as_binary(pred_row[cat])
            t = as_binary(tgt_row[cat])
            if p and t:
                tp += 1
            elif p and not t:
                fp += 1
            elif t and not p:
                fn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
    return MicroF1(f1, precision, recall, tp, fp, fn)


@dataclass(frozen=True)
class ConsensusLabel:
    """Majority-vote (hard) and mean (soft) consensus over binary annotations."""

    hard: int
    soft: float
    n_annotations: int
    category: str | None = None


def majority_and_soft(annotations: Sequence[int], category: str | None = None) -> ConsensusLabel:
    if not annotations:
        raise MetricInputError("no annotations")
    if any(a not in (0, 1) for a in annotations):
        raise MetricInputError("annotations must be binary")
    soft = sum(annotations) / len(annotations)
    return ConsensusLabel(hard=int(soft > 0.5), soft=soft, n_annotations=len(annotations), category=category)


def kendall_tau_b(scores_a: Sequence[float], scores_b: Sequence[float]) -> float:
    """Kendall's tau-b with tie corrections in both arguments."""
    if len(scores_a) != len(scores_b):
        raise MetricInputError("length mismatch")
    if len(scores_a) < 2:
        raise MetricInputError("need at least 2 observations")
    if len(set(scores_a)) == 1 or len(set(scores_b)) == 1:
        raise DegenerateInputError("all-ties input: tau-b denominator is zero")
    return float(_scipy_kendalltau(scores_a, scores_b, variant="b").statistic)


# ---------------------------------------------------------------------------
# ROC
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RocPoint:
    fpr: float
    tpr: float
    threshold: float


@dataclass(frozen=True)
class RocCurve:
    points: tuple[RocPoint, ...]
    auc: float


def roc(scores: Sequence[float], targets: Sequence[int]) -> RocCurve:
    """ROC curve swept over the unique scores (predict positive at
    score >= threshold) with trapezoidal AUC. Requires both classes."""
    if len(scores) != len(targets):
        raise MetricInputError("length mismatch")
    scores = np.asarray(scores, dtype=float)
    targets = np.asarray(targets, dtype=int)
    n_pos = int(targets.sum())
    n_neg = int(len(targets) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DegenerateInputError("targets contain a single class")

    points = [RocPoint(0.0, 0.0, math.inf)]
    for threshold in sorted(set(scores.tolist()), reverse=True):
        predicted = scores >= threshold
        tp = int(np.sum(predicted & (targets == 1)))
        fp = int(np.sum(predicted & (targets == 0)))
        points.append(RocPoint(fp / n_neg, tp / n_pos, threshold))
    fprs = [p.fpr for p in points]
    tprs = [p.tpr for p in points]
    auc = float(np.trapezoid(tprs, fprs))
    return RocCurve(points=tuple(points), auc=auc)


def roc_micro_average(
    by_condition: Mapping[str, tuple[Sequence[float], Sequence[int]]],
) -> RocCurve:
    """Micro-averaged ROC: concatenate (score, target) pairs across
    conditions before sweeping."""
    scores: list[float] = []
    targets: list[int] = []
    for condition in sorted(by_condition):
        s, t = by_condition[condition]
        scores.extend(s)
        targets.extend(t)
    return roc(scores, targets)


# ---------------------------------------------------------------------------
# Graph overlap
# ---------------------------------------------------------------------------

class MalformedGraphError(ValueError):
    """Relation endpoint missing from the entity set."""


@dataclass(frozen=True)
class AnnotationGraph:
    """Pre-extracted entity/relation annotations for one report.

    Entities are (start, end, label) tuples; relations are
    (source entity, target entity, label) triples whose endpoints must be
    present in `entities`.
    """

    entities: frozenset
    relations: frozenset

    def __post_init__(self):
        for src, dst, _label in self.relations:
            if src not in self.entities or dst not in self.entities:
                raise MalformedGraphError(f"dangling relation endpoint: {src} -> {dst}")

    @classmethod
    def from_dict(cls, payload: Mapping) -> "AnnotationGraph":
        entities = [
            (int(e["start"]), int(e["end"]), str(e["label"]))
            for e in payload.get("entities", [])
        ]
        relations = []
        for r in payload.get("relations", []):
            src, dst = int(r["src"]), int(r["dst"])
            if not (0 <= src < len(entities)) or not (0 <= dst < len(entities)):
                raise MalformedGraphError(f"relation index out of range: {src} -> {dst}")
            relations.append((entities[src], entities[dst], str(r["label"])))
        return cls(entities=frozenset(entities), relations=frozenset(relations))


@dataclass(frozen=True)
class GraphF1:
    entity_f1: float
    relation_f1: float


def _set_f1(predicted: frozenset, reference: frozenset) -> float:
    if not predicted and not reference:
        return 1.0
    tp = len(predicted & reference)
    denom = len(predicted) + len(reference)
    return 2 * tp / denom if denom else 1.0


def graph_f1(predicted: AnnotationGraph, reference: AnnotationGraph) -> GraphF1:
    """Exact-match F1 over entity tuples and relation triples."""
    return GraphF1(
        entity_f1=_set_f1(predicted.entities, reference.entities),
        relation_f1=_set_f1(predicted.relations, reference.relations),
    )


def corpus_graph_f1(
    predicted: Sequence[AnnotationGraph], reference: Sequence[AnnotationGraph]
) -> GraphF1:
    if len(predicted) != len(reference):
        raise MetricInputError("predicted/reference length mismatch")
    if not predicted:
        raise MetricInputError("empty corpus")
    pair_scores = [graph_f1(p, r) for p, r in zip(predicted, reference)]
    return GraphF1(
        entity_f1=sum(s.entity_f1 for s in pair_scores) / len(pair_scores),
        relation_f1=sum(s.relation_f1 for s in pair_scores) / len(pair_scores),
    )


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------

_STATISTICS: dict[str, Callable] = {
    "mean": np.mean,
    "median": np.median,
    "sum": np.sum,
    "std": np.std,
    "min": np.min,
    "max": np.max,
}

_VECTORIZABLE = {"mean", "median", "sum", "std", "min", "max"}


@dataclass(frozen=True)
class BootstrapResult:
    point: float
    lower: float
    upper: float


def _resolve_statistic(statistic) -> tuple[Callable, str | None]:
    if callable(statistic):
        return statistic, None
    try:
        return _STATISTICS[statistic], statistic
    except KeyError:
        raise MetricInputError(
            f"unknown statistic {statistic!r}; known: {sorted(_STATISTICS)}"
        ) from None


def bootstrap_ci(
    values: Sequence[float],
    statistic="mean",
    n_resamples: int = DEFAULT_BOOTSTRAP_RESAMPLES,
    level: float = 0.95,
    seed: int = 0,
) -> BootstrapResult:
    """Percentile bootstrap interval for a named aggregator or callable.

    Resampling recipe (fixed for reproducibility): with
    rng = np.random.default_rng(seed), the resample index matrix is
    rng.integers(0, n, size=(n_resamples, n)) and row i defines resample i.
    The point estimate is the statistic on the full sample.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise MetricInputError("empty input")
    if n_resamples < 1:
        raise MetricInputError("n_resamples must be >= 1")
    stat_fn, name = _resolve_statistic(statistic)
    point = float(stat_fn(values))

    rng = np.random.default_rng(seed)
    n = values.size
    stats = np.empty(n_resamples, dtype=float)
    # chunked to bound memory; the index stream is identical to one big call
    chunk = max(1, min(n_resamples, 4_000_000 // max(1, n)))
    done = 0
    while done < n_resamples:
        rows = min(chunk, n_resamples - done)
        idx = rng.integers(0, n, size=(rows, n))
        if name in _VECTORIZABLE:
            stats[done : done + rows] = stat_fn(values[idx], axis=1)
        else:
            for i in range(rows):
                stats[done + i] = stat_fn(values[idx[i]])
        done += rows

    alpha = (1.0 - level) / 2.0
    lower, upper = np.percentile(stats, [100 * alpha, 100 * (1 - alpha)])
    return BootstrapResult(point=point, lower=float(lower), upper=float(upper))


def bootstrap_metric_ci(
    n_items: int,
    metric_fn: Callable[[Sequence[int]], float],
    n_resamples: int = DEFAULT_BOOTSTRAP_RESAMPLES,
    level: float = 0.95,
    seed: int = 0,
) -> BootstrapResult:
    """Percentile bootstrap for corpus-level metrics that must be recomputed
    per resample. `metric_fn` maps a sequence of item indices to a score;
    the point estimate uses the identity index order. Same index recipe as
    `bootstrap_ci`."""
    if n_items < 1:
        raise MetricInputError("empty input")
    point = float(metric_fn(range(n_items)))
    rng = np.random.default_rng(seed)
    stats = np.empty(n_resamples, dtype=float)
    for i in range(n_resamples):
        idx = rng.integers(0, n_items, size=n_items)
        stats[i] = metric_fn(idx.tolist())
    alpha = (1.0 - level) / 2.0
    lower, upper = np.percentile(stats, [100 * alpha, 100 * (1 - alpha)])
    return BootstrapResult(point=point, lower=float(lower), upper=float(upper))
