"""Corpus ingest, report section parsing, training filters, example
weights, and stratified evaluation sampling.

A corpus is immutable after ingest: every operation that changes
membership or strata returns a new `Corpus`. Sampling uses numpy's
default PCG64 generator so study samples are reproducible from the seed
recorded in the output manifest.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from . import metrics


class DatasetTag(Enum):
    US = "US"
    INDIA = "INDIA"
    SYNTHETIC = "SYNTHETIC"


class View(Enum):
    AP = "AP"
    PA = "PA"
    LATERAL = "LATERAL"
    UNKNOWN = "UNKNOWN"


class Stratum(Enum):
    NORMAL = "NORMAL"
    ABNORMAL = "ABNORMAL"
    UNLABELED = "UNLABELED"


class Split(Enum):
    TRAIN = "TRAIN"
    VALIDATION = "VALIDATION"
    TEST = "TEST"


class Source(Enum):
    HUMAN_ORIGINAL = "HUMAN_ORIGINAL"
    MODEL_GENERATED = "MODEL_GENERATED"
    CLINICIAN_AI_EDITED = "CLINICIAN_AI_EDITED"


class IngestError(ValueError):
    """File-level ingest failure (unreadable, wrong container format)."""


class DegeneratePrevalenceError(ValueError):
    """A dataset's TRAIN split is single-stratum: inverse-prevalence
    weights would divide by zero."""


class InsufficientStratumError(ValueError):
    """A stratified sample request exceeds the available cases."""


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    dataset_tag: DatasetTag
    image_ref: str
    view: View
    stratum: Stratum
    split: Split


@dataclass(frozen=True)
class ReportDocument:
    """Findings + impression text with source attribution.

    `text` is the canonical display form (findings and impression joined
    by a single newline); `tokens` is the cached token sequence and is
    recomputed whenever a document is constructed.
    """

    report_id: str
    case_id: str
    findings: str
    impression: str
    source: Source
    tokens: metrics.TokenSequence = field(init=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tokens", metrics.tokenize(self.text))

    @property
    def text(self) -> str:
        if self.findings:
            return f"{self.findings}\n{self.impression}"
        return self.impression

    @classmethod
    def from_text(
        cls, report_id: str, case_id: str, text: str, source: Source
    ) -> "ReportDocument":
        """Rebuild a document from canonical text (first newline splits the
        sections; no newline means impression only)."""
        if "\n" in text:
            findings, impression = text.split("\n", 1)
        else:
            findings, impression = "", text
        return cls(report_id, case_id, findings, impression, source)


@dataclass(frozen=True)
class TrainingMixConfig:
    lambda_us: float
    lambda_india: float
    prior_reference_lexicon: tuple[str, ...]

    def __post_init__(self):
        if self.lambda_us < 0 or self.lambda_india < 0:
            raise ValueError("dataset coefficients must be nonnegative")
        if self.lambda_us + self.lambda_india <= 0:
            raise ValueError("at least one dataset coefficient must be positive")


@dataclass(frozen=True)
class ExampleWeight:
    case_id: str
    dataset_tag: DatasetTag
    stratum: Stratum
    weight: float


class Sections(NamedTuple):
    findings: str
    impression: str


def normalize_whitespace(text: str) -> str:
    """Collapse runs of spaces/newlines/tabs to single spaces, trim ends."""
    return " ".join(text.split())


_SECTION_MARKER_RE = re.compile(r"(?im)^[ \t]*(FINDINGS|IMPRESSION)[ \t]*:")


def extract_sections(raw_report: str) -> Sections | None:
    """Split a raw report on FINDINGS:/IMPRESSION: markers (case-insensitive,
    at line starts, leading whitespace tolerated) and whitespace-normalize
    each section.

    Returns None when the impression marker or its content is missing.
    A report with an impression but no findings marker keeps an empty
    findings section.
    """
    markers = list(_SECTION_MARKER_RE.finditer(raw_report))
    sections: dict[str, str] = {}
    for i, marker in enumerate(markers):
        name = marker.group(1).upper()
        if name in sections:
            continue
        end = markers[i + 1].start() if i + 1 < len(markers) else len(raw_report)
        sections[name] = normalize_whitespace(raw_report[marker.end() : end])
    impression = sections.get("IMPRESSION", "")
    if not impression:
        return None
    return Sections(findings=sections.get("FINDINGS", ""), impression=impression)


def load_prior_reference_lexicon(path: str | Path | None = None) -> tuple[str, ...]:
    """Phrase patterns signalling references to prior studies; ships as a
    versioned data file."""
    if path is None:
        text = resources.files("radeval.data").joinpath(
            "prior_reference_lexicon.txt"
        ).read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    phrases = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line.lower().startswith("version:"):
            continue
        phrases.append(line.lower())
    return tuple(phrases)


def detect_prior_reference(report, lexicon: Sequence[str]) -> bool:
    """True iff any lexicon pattern occurs (case-insensitive) in the
    normalized findings or impression text."""
    if not lexicon:
        raise ValueError("prior-reference lexicon is empty")
    if isinstance(report, str):
        haystack = normalize_whitespace(report).lower()
    else:
        haystack = normalize_whitespace(f"{report.findings} {report.impression}").lower()
    return any(normalize_whitespace(p).lower() in haystack for p in lexicon)


# ---------------------------------------------------------------------------
# Corpus container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Corpus:
    """Immutable case + report collection keyed by case_id."""

    _cases: dict[str, CaseRecord]
    _reports: dict[str, ReportDocument]  # case_id -> corpus report

    @classmethod
    def build(
        cls, cases: Iterable[CaseRecord], reports: Iterable[ReportDocument]
    ) -> "Corpus":
        case_map: dict[str, CaseRecord] = {}
        for case in cases:
            if case.case_id in case_map:
                raise IngestError(f"duplicate case_id {case.case_id!r}")
            case_map[case.case_id] = case
        report_map: dict[str, ReportDocument] = {}
        for report in reports:
            if report.case_id not in case_map:
                raise IngestError(f"report for unknown case {report.case_id!r}")
            if report.case_id in report_map:
                raise IngestError(f"second report for case {report.case_id!r}")
            if not report.impression:
                raise IngestError(f"empty impression for case {report.case_id!r}")
            report_map[report.case_id] = report
        return cls(_cases=case_map, _reports=report_map)

    def __len__(self) -> int:
        return len(self._cases)

    def case_ids(self) -> list[str]:
        return sorted(self._cases)

    def cases(self) -> list[CaseRecord]:
        return [self._cases[cid] for cid in self.case_ids()]

    def get_case(self, case_id: str) -> CaseRecord:
        return self._cases[case_id]

    def get_report(self, case_id: str) -> ReportDocument:
        return self._reports[case_id]

    def reports(self) -> list[ReportDocument]:
        return [self._reports[cid] for cid in self.case_ids() if cid in self._reports]

    def subset(self, case_ids: Iterable[str]) -> "Corpus":
        keep = set(case_ids)
        return Corpus(
            _cases={cid: c for cid, c in self._cases.items() if cid in keep},
            _reports={cid: r for cid, r in self._reports.items() if cid in keep},
        )

    def with_strata(self, strata: Mapping[str, Stratum]) -> "Corpus":
        cases = {
            cid: replace(case, stratum=strata.get(cid, case.stratum))
            for cid, case in self._cases.items()
        }
        return Corpus(_cases=cases, _reports=dict(self._reports))


def derive_strata(corpus: Corpus, abnormality_fn: Callable[[ReportDocument], int]) -> Corpus:
    """Fill strata from a binary abnormality function over each case's
    report (0 -> NORMAL, 1 -> ABNORMAL)."""
    strata = {}
    for case in corpus.cases():
        report = corpus.get_report(case.case_id)
        strata[case.case_id] = (
            Stratum.ABNORMAL if abnormality_fn(report) else Stratum.NORMAL
        )
    return corpus.with_strata(strata)


# ---------------------------------------------------------------------------
# Ingest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Rejection:
    line: int
    case_id: str | None
    reason: str


@dataclass(frozen=True)
class IngestResult:
    corpus: Corpus
    rejections: tuple[Rejection, ...]


_REQUIRED_FIELDS = ("case_id", "dataset_tag", "image_ref", "view", "split", "report", "source")


def _parse_enum(enum_cls, value, field_name: str):
    try:
        return enum_cls(str(value).upper())
    except ValueError:
        raise ValueError(f"invalid {field_name}: {value!r}") from None


def _record_to_case_report(
    record: Mapping, *_, stratum: Stratum = Stratum.UNLABELED
) -> tuple[CaseRecord, ReportDocument]:
    for name in _REQUIRED_FIELDS:
        if name not in record or record[name] in (None, ""):
            raise ValueError(f"missing required field: {name}")
    report_spec = record["report"]
    if not isinstance(report_spec, Mapping):
        raise ValueError("report must be an object")
    if "raw" in report_spec:
        sections = extract_sections(str(report_spec["raw"]))
        if sections is None:
            raise ValueError("empty impression")
    else:
        findings = normalize_whitespace(str(report_spec.get("findings", "")))
        impression = normalize_whitespace(str(report_spec.get("impression", "")))
        if not impression:
            raise ValueError("empty impression")
        sections = Sections(findings, impression)
    case_id = str(record["case_id"])
    if "stratum" in record and record["stratum"]:
        stratum = _parse_enum(Stratum, record["stratum"], "stratum")
    case = CaseRecord(
        case_id=case_id,
        dataset_tag=_parse_enum(DatasetTag, record["dataset_tag"], "dataset_tag"),
        image_ref=str(record["image_ref"]),
        view=_parse_enum(View, record["view"], "view"),
        stratum=stratum,
        split=_parse_enum(Split, record["split"], "split"),
    )
    report = ReportDocument(
        report_id=f"{case_id}/corpus",
        case_id=case_id,
        findings=sections.findings,
        impression=sections.impression,
        source=_parse_enum(Source, record["source"], "source"),
    )
    return case, report


def _iter_jsonl(path: Path):
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            yield lineno, line


def _csv_row_to_record(row: Mapping[str, str]) -> dict:
    record = {k: v for k, v in row.items() if k not in ("raw_report", "findings", "impression")}
    raw = (row.get("raw_report") or "").strip()
    if raw:
        record["report"] = {"raw": raw}
    else:
        record["report"] = {
            "findings": row.get("findings") or "",
            "impression": row.get("impression") or "",
        }
    return record


def ingest_corpus(path: str | Path, format: str = "jsonl") -> IngestResult:
    """Read a corpus file, admitting every well-formed record.

    Malformed records are reported with their line number; a record whose
    case_id was already admitted is rejected as a duplicate. Raises
    IngestError only for file-level failures.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"unreadable file: {path}")
    fmt = format.lower()
    if fmt not in ("jsonl", "csv"):
        raise IngestError(f"unknown format: {format!r}")

    cases: dict[str, CaseRecord] = {}
    reports: dict[str, ReportDocument] = {}
    rejections: list[Rejection] = []

    def admit(lineno: int, record: Mapping):
        case_id = record.get("case_id")
        case_id = str(case_id) if case_id not in (None, "") else None
        try:
            case, report = _record_to_case_report(record)
        except ValueError as exc:
            rejections.append(Rejection(lineno, case_id, str(exc)))
            return
        if case.case_id in cases:
            rejections.append(Rejection(lineno, case.case_id, "duplicate case_id"))
            return
        cases[case.case_id] = case
        reports[case.case_id] = report

    if fmt == "jsonl":
        for lineno, line in _iter_jsonl(path):
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                rejections.append(Rejection(lineno, None, f"invalid JSON: {exc.msg}"))
                continue
            if not isinstance(record, Mapping):
                rejections.append(Rejection(lineno, None, "record is not an object"))
                continue
            admit(lineno, record)
    else:
        with path.open("r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise IngestError("empty CSV file")
            for lineno, row in enumerate(reader, 2):  # header is line 1
                admit(lineno, _csv_row_to_record(row))

    return IngestResult(
        corpus=Corpus(_cases=cases, _reports=reports), rejections=tuple(rejections)
    )


# ---------------------------------------------------------------------------
# Training filters and weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Removal:
    case_id: str
    reason: str


@dataclass(frozen=True)
class FilterResult:
    corpus: Corpus
    removed: tuple[Removal, ...]


def filter_training_set(
    corpus: Corpus, prior_lexicon: Sequence[str] | None = None
) -> FilterResult:
    """Drop TRAIN cases that are lateral-only, lack an impression, or refer
    to prior studies. VALIDATION and TEST membership is never altered."""
    lexicon = tuple(prior_lexicon) if prior_lexicon is not None else load_prior_reference_lexicon()
    removed: list[Removal] = []
    keep: list[str] = []
    for case in corpus.cases():
        if case.split is not Split.TRAIN:
            keep.append(case.case_id)
            continue
        report = corpus.get_report(case.case_id)
        if case.view is View.LATERAL:
            removed.append(Removal(case.case_id, "lateral view"))
        elif not report.impression:
            removed.append(Removal(case.case_id, "no impression"))
        elif detect_prior_reference(report, lexicon):
            removed.append(Removal(case.case_id, "prior reference"))
        else:
            keep.append(case.case_id)
    return FilterResult(corpus=corpus.subset(keep), removed=tuple(removed))


def compute_example_weights(
    corpus: Corpus, split: Split = Split.TRAIN
) -> list[ExampleWeight]:
    """Inverse-prevalence weights per dataset: NORMAL cases weigh
    1/p_normal and ABNORMAL cases 1/(1 - p_normal), computed within each
    dataset_tag's chosen split."""
    grouped: dict[DatasetTag, list[CaseRecord]] = {}
    for case in corpus.cases():
        if case.split is split:
            grouped.setdefault(case.dataset_tag, []).append(case)
    if not grouped:
        raise ValueError(f"no cases in split {split.value}")

    weights: list[ExampleWeight] = []
    for tag in sorted(grouped, key=lambda t: t.value):
        cases = grouped[tag]
        unlabeled = [c.case_id for c in cases if c.stratum is Stratum.UNLABELED]
        if unlabeled:
            raise ValueError(
                f"{len(unlabeled)} unlabeled case(s) in {tag.value} {split.value}; "
                "derive strata first"
            )
        n_normal = sum(1 for c in cases if c.stratum is Stratum.NORMAL)
        p_normal = n_normal / len(cases)
        if p_normal in (0.0, 1.0):
            raise DegeneratePrevalenceError(
                f"dataset {tag.value} {split.value} split is single-stratum "
                f"(p_normal={p_normal})"
            )
        for case in cases:
            w = 1.0 / p_normal if case.stratum is Stratum.NORMAL else 1.0 / (1.0 - p_normal)
            weights.append(ExampleWeight(case.case_id, tag, case.stratum, w))
    weights.sort(key=lambda w: w.case_id)
    return weights


def stratified_sample(
    corpus: Corpus,
    n_normal: int,
    n_abnormal: int,
    seed: int,
    split: Split | None = None,
) -> list[str]:
    """Draw n_normal + n_abnormal distinct case_ids with the requested
    strata, deterministically for a given seed (numpy PCG64, sampling
    without replacement from case_id-sorted pools)."""
    pools = {Stratum.NORMAL: [], Stratum.ABNORMAL: []}
    for case in corpus.cases():
        if split is not None and case.split is not split:
            continue
        if case.stratum in pools:
            pools[case.stratum].append(case.case_id)

    rng = np.random.default_rng(seed)
    chosen: list[str] = []
    for stratum, count in ((Stratum.NORMAL, n_normal), (Stratum.ABNORMAL, n_abnormal)):
        pool = pools[stratum]
        if count > len(pool):
            raise InsufficientStratumError(
                f"requested {count} {stratum.value} cases, only {len(pool)} available"
            )
        if count:
            picks = rng.choice(np.array(pool, dtype=object), size=count, replace=False)
            chosen.extend(str(p) for p in picks)
    return chosen


# ---------------------------------------------------------------------------
# Corpus handle persistence
# ---------------------------------------------------------------------------

def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write the normalized corpus handle (external schema plus the derived
    stratum field)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for case in corpus.cases():
            report = corpus.get_report(case.case_id)
            record = {
                "case_id": case.case_id,
                "dataset_tag": case.dataset_tag.value,
                "image_ref": case.image_ref,
                "view": case.view.value,
                "split": case.split.value,
                "report": {"findings": report.findings, "impression": report.impression},
                "source": report.source.value,
                "stratum": case.stratum.value,
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_corpus(path: str | Path) -> Corpus:
    """Load a corpus handle written by save_corpus. Strict: any rejection
    is an error here, unlike ingest_corpus."""
    result = ingest_corpus(path, format="jsonl")
    if result.rejections:
        first = result.rejections[0]
        raise IngestError(
            f"corpus handle has {len(result.rejections)} bad record(s); "
            f"first: line {first.line}: {first.reason}"
        )
    return result.corpus
