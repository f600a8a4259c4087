"""Shared fixtures: an engineered-study builder that turns per-case
assessment blueprints into a fully recorded workflow store."""

import pytest

from radeval.corpus import CaseRecord, DatasetTag, ReportDocument, Source, Split, Stratum, View
from radeval.events import EventLog
from radeval.workflow import (
    CorrectionResponse,
    EditReason,
    RaterProfile,
    SpanEdit,
    WorkflowStore,
    assign_raters,
    generate_correction_tasks,
    text_sha256,
)

TS = 1_700_000_000.0

# long enough to host many non-overlapping single-char spans
FILLER_FINDINGS = "The lungs show stable wellexpanded fields with preserved volume bilaterally today."


def _edits_for(blueprint, text_len):
    """blueprint: list of (reason, significant) tuples -> non-overlapping spans."""
    edits = []
    for i, (reason, significant) in enumerate(blueprint):
        start = i * 3
        assert start + 1 < text_len
        edits.append(
            SpanEdit(
                start=start,
                end=start + 2,
                reason=reason,
                clinically_significant=significant,
                replacement="zz",
            )
        )
    return tuple(edits)


@pytest.fixture
def build_correction_study(tmp_path):
    """Factory: cases_spec is a list of dicts
    {tag, stratum, candidate: [a1, a2], original: [a1, a2]} where each
    assessment a_i is a list of (EditReason, significant) tuples. Builds
    the full event-sourced study and records every response."""

    def build(cases_spec, log_name="events.log"):
        store = WorkflowStore(EventLog(tmp_path / log_name, fsync=False))
        raters = [RaterProfile(f"r{i:03d}") for i in range(4)]
        for rater in raters:
            store.register_rater(rater)
        cases, reports = [], []
        for i, spec in enumerate(cases_spec):
            case = CaseRecord(
                case_id=f"case-{i:05d}",
                dataset_tag=spec.get("tag", DatasetTag.INDIA),
                image_ref=f"images/{i:05d}.png",
                view=View.PA,
                stratum=spec.get("stratum", Stratum.ABNORMAL),
                split=Split.TEST,
            )
            cases.append(case)
            store.register_case(case)
            human = ReportDocument(
                f"{case.case_id}/human", case.case_id,
                FILLER_FINDINGS, "Human impression.", Source.HUMAN_ORIGINAL,
            )
            candidate = ReportDocument(
                f"{case.case_id}/cand", case.case_id,
                FILLER_FINDINGS, "Candidate impression.", Source.MODEL_GENERATED,
            )
            store.register_report(human)
            store.register_report(candidate)
            reports.extend([human, candidate])

        tasks = generate_correction_tasks(cases, reports, seed=0)
        store.add_tasks(tasks)
        plan = assign_raters(tasks, raters, per_task=2)
        store.assign(plan)

        by_case = {}
        for task in tasks:
            source = store.reports[task.report_id].source
            key = "candidate" if source is Source.MODEL_GENERATED else "original"
            by_case.setdefault(task.case_id, {})[key] = task

        timestamp = TS
        for i, spec in enumerate(cases_spec):
            case_id = f"case-{i:05d}"
            for key in ("candidate", "original"):
                task = by_case[case_id][key]
                text = store.task_display_text(task.task_id)
                assessments = spec.get(key, [[], []])
                assert len(assessments) == 2, "two raters per task"
                for rater_id, blueprint in zip(store.assignments[task.task_id], assessments):
                    store.record_response(
                        CorrectionResponse(
                            task_id=task.task_id,
                            rater_id=rater_id,
                            image_quality_ok=True,
                            edits=_edits_for(blueprint, len(text)),
                            displayed_text_sha256=text_sha256(text),
                            timestamp=timestamp,
                        )
                    )
                    timestamp += 1.0
        return store

    return build


def assessment(n_finding=0, n_location=0, n_severity=0, n_significant=0):
    """One rater's assessment: edit blueprint with n_significant of the
    edits flagged clinically significant (assigned greedily)."""
    reasons = (
        [EditReason.INCORRECT_FINDING] * n_finding
        + [EditReason.INCORRECT_LOCATION] * n_location
        + [EditReason.INCORRECT_SEVERITY] * n_severity
    )
    return [(reason, i < n_significant) for i, reason in enumerate(reasons)]
