"""Aggregation of recorded study responses into machine-readable results:
preference distributions with inter-rater agreement buckets, error-rate
and error-type summaries with bootstrap confidence intervals, and the
overlap analysis of cases with errors in either source.

All aggregates are computed from a read-only store snapshot and are
invariant to event-log ordering. Unblinding goes through the slot-key
hash recorded at task generation; any mismatch aborts the analysis.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import Source
from .metrics import BootstrapResult, bootstrap_ci
from .workflow import (
    Choice,
    EditReason,
    PreferenceTask,
    WorkflowStore,
    _slot_key,
)

CANDIDATE_SOURCES = (Source.MODEL_GENERATED, Source.CLINICIAN_AI_EDITED)


class AnalysisError(ValueError):
    pass


class IncompleteTaskError(AnalysisError):
    """A counted task is missing one of its two responses."""


class BlindingIntegrityError(AnalysisError):
    """Slot-to-source mapping no longer matches what was recorded at
    task generation."""


class MissingEvaluationError(AnalysisError):
    """A case lacks one source's correction assessment."""


def _source_kind(source: Source) -> str:
    return "candidate" if source in CANDIDATE_SOURCES else "original"


def _check_slot_key(store: WorkflowStore, task: PreferenceTask) -> None:
    expected = store.task_slot_keys.get(task.task_id)
    actual = _slot_key(
        task.task_id,
        store.reports[task.slot_a].source,
        store.reports[task.slot_b].source,
    )
    if expected != actual:
        raise BlindingIntegrityError(
            f"task {task.task_id}: slot-source mapping drifted since generation"
        )


# ---------------------------------------------------------------------------
# Preference distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PreferenceGroupStats:
    n_responses: int
    candidate_preferred: float
    original_preferred: float
    equivalent: float
    n_pairs: int
    both_prefer_original: float
    at_least_one_candidate_equivalent_or_better: float
    pair_matrix: dict


@dataclass(frozen=True)
class PreferenceSummary:
    groups: dict  # (dataset_tag, stratum) -> PreferenceGroupStats


def preference_distribution(
    store: WorkflowStore,
    phase: str = "preference",
    task_ids: Iterable[str] | None = None,
) -> PreferenceSummary:
    """Unblind recorded choices and aggregate three-way fractions at the
    response level plus pair-level agreement buckets per
    (dataset_tag, stratum) group."""
    if task_ids is None:
        tasks = [
            t
            for t in store.tasks.values()
            if t.kind == "preference" and t.phase == phase
        ]
    else:
        tasks = [store.tasks[tid] for tid in task_ids]
    if not tasks:
        raise AnalysisError(f"no {phase} tasks to analyze")

    counts: dict = {}
    for task in sorted(tasks, key=lambda t: t.task_id):
        _check_slot_key(store, task)
        responses = store.task_responses(task.task_id)
        assigned = store.assignments.get(task.task_id, ())
        if len(responses) != len(assigned) or not responses:
            raise IncompleteTaskError(
                f"task {task.task_id}: {len(responses)}/{len(assigned)} responses"
            )
        case = store.cases[task.case_id]
        key = (case.dataset_tag.value, case.stratum.value)
        bucket = counts.setdefault(
            key,
            {
                "responses": {"candidate": 0, "original": 0, "equivalent": 0},
                "pairs": 0,
                "both_original": 0,
                "pair_matrix": {},
            },
        )
        kinds = []
        for response in responses:
            if response.choice is Choice.EQUIVALENT:
                kind = "equivalent"
            else:
                slot = task.slot_a if response.choice is Choice.A else task.slot_b
                kind = _source_kind(store.reports[slot].source)
            kinds.append(kind)
            bucket["responses"][kind] += 1
        bucket["pairs"] += 1
        if all(k == "original" for k in kinds):
            bucket["both_original"] += 1
        matrix_key = "|".join(sorted(kinds))
        bucket["pair_matrix"][matrix_key] = bucket["pair_matrix"].get(matrix_key, 0) + 1

    groups = {}
    for key, bucket in sorted(counts.items()):
        n = sum(bucket["responses"].values())
        pairs = bucket["pairs"]
        groups[key] = PreferenceGroupStats(
            n_responses=n,
            candidate_preferred=bucket["responses"]["candidate"] / n,
            original_preferred=bucket["responses"]["original"] / n,
            equivalent=bucket["responses"]["equivalent"] / n,
            n_pairs=pairs,
            both_prefer_original=bucket["both_original"] / pairs,
            at_least_one_candidate_equivalent_or_better=1.0
            - bucket["both_original"] / pairs,
            pair_matrix=dict(sorted(bucket["pair_matrix"].items())),
        )
    return PreferenceSummary(groups=groups)


# ---------------------------------------------------------------------------
# Error rates and error types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ErrorGroupStats:
    n_assessments: int
    mean_errors: BootstrapResult
    mean_significant: BootstrapResult
    frac_with_error: BootstrapResult
    frac_with_significant: BootstrapResult


@dataclass(frozen=True)
class ErrorSummary:
    groups: dict  # (dataset_tag, stratum, source) -> ErrorGroupStats


@dataclass(frozen=True)
class ErrorTypeGroupStats:
    n_assessments: int
    mean_by_reason: dict  # reason name -> BootstrapResult


@dataclass(frozen=True)
class ErrorTypeSummary:
    groups: dict


@dataclass(frozen=True)
class OverlapGroupStats:
    n_cases: int
    candidate_only: int
    original_only: int
    both: int
    significant_candidate_only: int
    significant_original_only: int
    significant_both: int
    significant_non_overlap_fraction: float | None


@dataclass(frozen=True)
class OverlapSummary:
    groups: dict  # dataset_tag -> OverlapGroupStats (plus "ALL")


def _correction_assessments(store: WorkflowStore):
    """(group key, case_id, response) triples for every recorded correction
    response. Means are computed across report-assessments: both raters'
    assessments of a report enter the denominator."""
    for task in sorted(
        (t for t in store.tasks.values() if t.kind == "correction"),
        key=lambda t: t.task_id,
    ):
        case = store.cases[task.case_id]
        source = store.reports[task.report_id].source
        key = (case.dataset_tag.value, case.stratum.value, source.value)
        for response in store.task_responses(task.task_id):
            yield key, task.case_id, response


def error_rate_summary(
    store: WorkflowStore,
    n_resamples: int = 10_000,
    level: float = 0.95,
    seed: int = 0,
) -> ErrorSummary:
    """Mean (clinically significant) errors per report and the fraction of
    assessments with at least one, per (dataset_tag, stratum, source),
    with percentile-bootstrap confidence intervals. Zero-error reports
    stay in the denominator."""
    per_group: dict = {}
    for key, _case_id, response in _correction_assessments(store):
        rows = per_group.setdefault(key, [])
        total = len(response.edits)
        significant = sum(1 for e in response.edits if e.clinically_significant)
        rows.append((total, significant))

    groups = {}
    for key, rows in sorted(per_group.items()):
        totals = [float(t) for t, _ in rows]
        sigs = [float(s) for _, s in rows]
        has_err = [1.0 if t else 0.0 for t, _ in rows]
        has_sig = [1.0 if s else 0.0 for _, s in rows]
        ci = lambda vals: bootstrap_ci(vals, "mean", n_resamples, level, seed)
        groups[key] = ErrorGroupStats(
            n_assessments=len(rows),
            mean_errors=ci(totals),
            mean_significant=ci(sigs),
            frac_with_error=ci(has_err),
            frac_with_significant=ci(has_sig),
        )
    return ErrorSummary(groups=groups)


def error_type_distribution(
    store: WorkflowStore,
    n_resamples: int = 10_000,
    level: float = 0.95,
    seed: int = 0,
) -> ErrorTypeSummary:
    """Mean per-assessment edit counts for each disagreement reason,
    grouped like error_rate_summary."""
    per_group: dict = {}
    for key, _case_id, response in _correction_assessments(store):
        rows = per_group.setdefault(key, [])
        reason_counts = {reason.value: 0 for reason in EditReason}
        for edit in response.edits:
            reason_counts[edit.reason.value] += 1
        rows.append(reason_counts)

    groups = {}
    for key, rows in sorted(per_group.items()):
        by_reason = {}
        for reason in EditReason:
            values = [float(r[reason.value]) for r in rows]
            by_reason[reason.value] = bootstrap_ci(values, "mean", n_resamples, level, seed)
        groups[key] = ErrorTypeGroupStats(n_assessments=len(rows), mean_by_reason=by_reason)
    return ErrorTypeSummary(groups=groups)


def overlap_analysis(store: WorkflowStore) -> OverlapSummary:
    """Set algebra over cases with at least one (significant) error per
    source, per dataset and overall. Every counted case must have both
    its sources assessed."""
    case_flags: dict = {}
    for key, case_id, response in _correction_assessments(store):
        dataset_tag, _stratum, source = key
        kind = "candidate" if Source(source) in CANDIDATE_SOURCES else "original"
        flags = case_flags.setdefault(
            case_id,
            {"dataset_tag": dataset_tag, "seen": set(), "error": set(), "significant": set()},
        )
        flags["seen"].add(kind)
        if response.edits:
            flags["error"].add(kind)
        if any(e.clinically_significant for e in response.edits):
            flags["significant"].add(kind)

    if not case_flags:
        raise AnalysisError("no correction responses recorded")
    for case_id, flags in sorted(case_flags.items()):
        if flags["seen"] != {"candidate", "original"}:
            missing = {"candidate", "original"} - flags["seen"]
            raise MissingEvaluationError(
                f"case {case_id}: missing {sorted(missing)} evaluation"
            )

    def tally(case_ids: Sequence[str]) -> OverlapGroupStats:
        err_c = {c for c in case_ids if "candidate" in case_flags[c]["error"]}
        err_o = {c for c in case_ids if "original" in case_flags[c]["error"]}
        sig_c = {c for c in case_ids if "candidate" in case_flags[c]["significant"]}
        sig_o = {c for c in case_ids if "original" in case_flags[c]["significant"]}
        sig_union = len(sig_c | sig_o)
        sig_both = len(sig_c & sig_o)
        return OverlapGroupStats(
            n_cases=len(case_ids),
            candidate_only=len(err_c - err_o),
            original_only=len(err_o - err_c),
            both=len(err_c & err_o),
            significant_candidate_only=len(sig_c - sig_o),
            significant_original_only=len(sig_o - sig_c),
            significant_both=sig_both,
            significant_non_overlap_fraction=(
                (sig_union - sig_both) / sig_union if sig_union else None
            ),
        )

    groups = {}
    tags = sorted({flags["dataset_tag"] for flags in case_flags.values()})
    for tag in tags:
        ids = sorted(c for c, f in case_flags.items() if f["dataset_tag"] == tag)
        groups[tag] = tally(ids)
    groups["ALL"] = tally(sorted(case_flags))
    return OverlapSummary(groups=groups)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

_GROUP_FIELDS = {
    "preference": ("dataset_tag", "stratum"),
    "collaboration": ("dataset_tag", "stratum"),
    "errors": ("dataset_tag", "stratum", "source"),
    "error_types": ("dataset_tag", "stratum", "source"),
    "overlap": ("dataset_tag",),
}

_PERCENT_METRICS = {
    "candidate_preferred",
    "original_preferred",
    "equivalent",
    "both_prefer_original",
    "at_least_one_candidate_equivalent_or_better",
    "frac_with_error",
    "frac_with_significant",
    "significant_non_overlap_fraction",
}


def _summary_to_records(name: str, summary) -> list[dict]:
    fields = _GROUP_FIELDS[name]
    records = []
    for key in sorted(summary.groups):
        group_key = key if isinstance(key, tuple) else (key,)
        record = dict(zip(fields, group_key))
        record["stats"] = asdict(summary.groups[key])
        records.append(record)
    return records


def _records_to_summary(name: str, records: Sequence[Mapping]):
    fields = _GROUP_FIELDS[name]

    def mk_ci(d) -> BootstrapResult:
        return BootstrapResult(point=d["point"], lower=d["lower"], upper=d["upper"])

    groups: dict = {}
    for record in records:
        key = tuple(record[f] for f in fields)
        stats = record["stats"]
        if name in ("preference", "collaboration"):
            groups[key] = PreferenceGroupStats(**stats)
        elif name == "errors":
            groups[key] = ErrorGroupStats(
                n_assessments=stats["n_assessments"],
                mean_errors=mk_ci(stats["mean_errors"]),
                mean_significant=mk_ci(stats["mean_significant"]),
                frac_with_error=mk_ci(stats["frac_with_error"]),
                frac_with_significant=mk_ci(stats["frac_with_significant"]),
            )
        elif name == "error_types":
            groups[key] = ErrorTypeGroupStats(
                n_assessments=stats["n_assessments"],
                mean_by_reason={
                    reason: mk_ci(ci) for reason, ci in stats["mean_by_reason"].items()
                },
            )
        else:
            groups[key[0]] = OverlapGroupStats(**stats)
    if name in ("preference", "collaboration"):
        return PreferenceSummary(groups=groups)
    if name == "errors":
        return ErrorSummary(groups=groups)
    if name == "error_types":
        return ErrorTypeSummary(groups=groups)
    return OverlapSummary(groups=groups)


def _flat_metrics(name: str, stats: Mapping) -> list[tuple[str, float | None, float | None, float | None]]:
    """(metric, value, ci_lower, ci_upper) rows in a fixed order."""
    rows: list[tuple[str, float | None, float | None, float | None]] = []
    for metric, value in stats.items():
        if metric == "pair_matrix":
            for combo, count in value.items():
                rows.append((f"pairs[{combo}]", float(count), None, None))
        elif metric == "mean_by_reason":
            for reason, ci in value.items():
                rows.append((f"mean[{reason}]", ci["point"], ci["lower"], ci["upper"]))
        elif isinstance(value, Mapping) and {"point", "lower", "upper"} <= set(value):
            rows.append((metric, value["point"], value["lower"], value["upper"]))
        elif value is None:
            rows.append((metric, None, None, None))
        else:
            rows.append((metric, float(value), None, None))
    return rows


def _format_value(metric: str, value: float | None) -> str:
    if value is None:
        return ""
    # percentages at one decimal place in CSV; JSON keeps full precision
    if metric in _PERCENT_METRICS or metric.startswith("pct"):
        return f"{100.0 * value:.1f}"
    if float(value).is_integer() and abs(value) >= 1:
        return str(int(value))
    return f"{value:.6f}"


def export_results(
    summaries: Mapping[str, object],
    out_dir: str | Path,
    metadata: Mapping | None = None,
) -> dict[str, Path]:
    """Write results.json plus one long-format CSV per summary
    (one row per group x metric, deterministic order). Returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}

    document = {"metadata": dict(metadata or {})}
    for name in sorted(summaries):
        if name not in _GROUP_FIELDS:
            raise AnalysisError(f"unknown summary kind {name!r}")
        document[name] = _summary_to_records(name, summaries[name])
    json_path = out_dir / "results.json"
    json_path.write_text(
        json.dumps(document, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    written["json"] = json_path

    for name in sorted(summaries):
        fields = _GROUP_FIELDS[name]
        csv_path = out_dir / f"{name}.csv"
        with csv_path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([*fields, "metric", "value", "ci_lower", "ci_upper"])
            for record in document[name]:
                group_values = [record[f] for f in fields]
                for metric, value, lo, hi in _flat_metrics(name, record["stats"]):
                    writer.writerow(
                        [
                            *group_values,
                            metric,
                            _format_value(metric, value),
                            _format_value(metric, lo),
                            _format_value(metric, hi),
                        ]
                    )
        written[name] = csv_path
    return written


def import_results(path: str | Path) -> dict:
    """Rebuild summaries from an exported results.json (round-trip of
    export_results)."""
    document = json.loads(Path(path).read_text("utf-8"))
    summaries = {}
    for name in _GROUP_FIELDS:
        if name in document:
            summaries[name] = _records_to_summary(name, document[name])
    return summaries
