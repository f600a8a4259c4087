"""Workflow tests: blinded task generation, constraint-checked rater
assignment, idempotent response recording, edit application with a
segment-rebuild oracle, the collaboration round, and event-log replay
equivalence on randomized studies."""

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from radeval.corpus import CaseRecord, DatasetTag, ReportDocument, Source, Split, Stratum, View
from radeval.events import EventLog
from radeval.workflow import (
    AssignmentInfeasibleError,
    Choice,
    CorrectionResponse,
    DuplicateSubmissionError,
    EditReason,
    PreferenceResponse,
    RaterProfile,
    SpanEdit,
    SpanError,
    UnassignedRaterError,
    UnknownTaskError,
    WorkflowError,
    WorkflowStore,
    apply_edits,
    assign_raters,
    generate_correction_tasks,
    generate_preference_tasks,
    text_sha256,
)

TS = 1_700_000_000.0


def make_case(case_id, tag=DatasetTag.INDIA, stratum=Stratum.ABNORMAL):
    return CaseRecord(case_id, tag, f"images/{case_id}.png", View.PA, stratum, Split.TEST)


def make_human(case_id, findings="Moderate cardiomegaly is seen.", impression="Cardiomegaly."):
    return ReportDocument(f"{case_id}/human", case_id, findings, impression, Source.HUMAN_ORIGINAL)


def make_candidate(case_id, findings="No pleural effusion seen.", impression="No acute process."):
    return ReportDocument(f"{case_id}/cand", case_id, findings, impression, Source.MODEL_GENERATED)


def fresh_store(tmp_path, name="events.log"):
    return WorkflowStore(EventLog(tmp_path / name, fsync=False))


def seeded_study(store, n_cases=4, n_raters=4, tag=DatasetTag.INDIA):
    cases, humans, candidates = [], [], []
    for i in range(n_cases):
        case = make_case(f"c{i:03d}", tag=tag)
        cases.append(case)
        store.register_case(case)
        human, candidate = make_human(case.case_id), make_candidate(case.case_id)
        humans.append(human)
        candidates.append(candidate)
        store.register_report(human)
        store.register_report(candidate)
    raters = [RaterProfile(f"r{i:02d}") for i in range(n_raters)]
    for rater in raters:
        store.register_rater(rater)
    return cases, humans, candidates, raters


# ---------------------------------------------------------------------------
# preference task generation
# ---------------------------------------------------------------------------

def test_single_case_task_contains_both_reports(tmp_path):
    store = fresh_store(tmp_path)
    cases, humans, candidates, _ = seeded_study(store, n_cases=1)
    (task,) = generate_preference_tasks(cases, humans, candidates, seed=0)
    assert {task.slot_a, task.slot_b} == {humans[0].report_id, candidates[0].report_id}
    assert task.case_id == cases[0].case_id


def test_missing_report_rejected():
    case = make_case("c1")
    with pytest.raises(WorkflowError, match="missing its candidate"):
        generate_preference_tasks([case], [make_human("c1")], [], seed=0)


def test_slot_assignment_is_a_fair_seeded_coin():
    n = 10_000
    cases = [make_case(f"c{i:05d}") for i in range(n)]
    humans = [make_human(c.case_id) for c in cases]
    candidates = [make_candidate(c.case_id) for c in cases]
    tasks = generate_preference_tasks(cases, humans, candidates, seed=99)
    human_in_a = sum(1 for t in tasks if t.slot_a.endswith("/human")) / n
    assert abs(human_in_a - 0.5) <= 0.015
    again = generate_preference_tasks(cases, humans, candidates, seed=99)
    assert [t.slot_a for t in again] == [t.slot_a for t in tasks]


def test_serialized_task_payload_is_blinded(tmp_path):
    store = fresh_store(tmp_path)
    cases, humans, candidates, _ = seeded_study(store)
    tasks = generate_preference_tasks(cases, humans, candidates, seed=1)
    store.add_tasks(tasks)
    for task in tasks:
        payload = store.task_payload(task.task_id)
        serialized = json.dumps(payload)
        assert "source" not in serialized.lower()
        for marker in ("HUMAN_ORIGINAL", "MODEL_GENERATED", "CLINICIAN_AI_EDITED", "/human", "/cand"):
            assert marker not in serialized


def test_correction_task_ids_do_not_reveal_report_identity(tmp_path):
    store = fresh_store(tmp_path)
    cases, humans, candidates, _ = seeded_study(store, n_cases=30)
    tasks = generate_correction_tasks(cases, humans + candidates, seed=5)
    assert len(tasks) == 60
    # which suffix the human report lands on must vary across cases
    human_slots = {
        t.task_id.rsplit("-", 1)[1]
        for t in tasks
        if t.report_id.endswith("/human")
    }
    assert human_slots == {"0", "1"}
    for task in tasks:
        payload_keys = set(json.loads(json.dumps({
            "task_id": task.task_id, "case_id": task.case_id
        })))
        assert "report_id" not in payload_keys


# ---------------------------------------------------------------------------
# assignment
# ---------------------------------------------------------------------------

def test_two_raters_five_tasks_everyone_gets_all():
    tasks = generate_correction_tasks(
        [make_case(f"c{i}") for i in range(5)],
        [make_human(f"c{i}") for i in range(5)],
        seed=0,
    )
    raters = [RaterProfile("a"), RaterProfile("b")]
    plan = assign_raters(tasks, raters, per_task=2)
    assert all(set(v) == {"a", "b"} for v in plan.values())


def test_excluded_rater_never_assigned_to_case():
    cases = [make_case(f"c{i}") for i in range(6)]
    tasks = generate_correction_tasks(cases, [make_human(c.case_id) for c in cases], seed=0)
    raters = [RaterProfile(f"r{i}") for i in range(4)]
    exclusions = {("r0", "c2"), ("r1", "c4")}
    plan = assign_raters(tasks, raters, per_task=2, exclusions=exclusions)
    for task in tasks:
        for rater_id in plan[task.task_id]:
            assert (rater_id, task.case_id) not in exclusions


def test_load_balanced_within_one_without_exclusions():
    cases = [make_case(f"c{i:03d}") for i in range(101)]
    tasks = generate_correction_tasks(cases, [make_human(c.case_id) for c in cases], seed=0)
    raters = [RaterProfile(f"r{i:02d}") for i in range(7)]
    plan = assign_raters(tasks, raters, per_task=2)
    load = {r.rater_id: 0 for r in raters}
    for rater_ids in plan.values():
        assert len(set(rater_ids)) == 2
        for rid in rater_ids:
            load[rid] += 1
    assert max(load.values()) - min(load.values()) <= 1


def test_infeasible_assignment_raises():
    tasks = generate_correction_tasks([make_case("c0")], [make_human("c0")], seed=0)
    with pytest.raises(AssignmentInfeasibleError):
        assign_raters(tasks, [RaterProfile("only")], per_task=2)
    with pytest.raises(AssignmentInfeasibleError):
        assign_raters(
            tasks,
            [RaterProfile("a"), RaterProfile("b")],
            per_task=2,
            exclusions={("a", "c0")},
        )


def test_sixteen_raters_554_tasks_constraint_checker_oracle():
    rng = np.random.default_rng(554)
    cases = [make_case(f"c{i:04d}") for i in range(554)]
    tasks = generate_correction_tasks(cases, [make_human(c.case_id) for c in cases], seed=1)
    assert len(tasks) == 554
    raters = [RaterProfile(f"r{i:02d}") for i in range(16)]
    exclusions = {
        (f"r{rng.integers(0, 16):02d}", f"c{rng.integers(0, 554):04d}")
        for _ in range(300)
    }
    plan = assign_raters(tasks, raters, per_task=2, exclusions=exclusions)

    # independent constraint checker
    assert set(plan) == {t.task_id for t in tasks}
    case_of = {t.task_id: t.case_id for t in tasks}
    for task_id, rater_ids in plan.items():
        assert len(rater_ids) == 2 and len(set(rater_ids)) == 2
        for rid in rater_ids:
            assert (rid, case_of[task_id]) not in exclusions


# ---------------------------------------------------------------------------
# response recording
# ---------------------------------------------------------------------------

def _preference_setup(tmp_path):
    store = fresh_store(tmp_path)
    cases, humans, candidates, raters = seeded_study(store, n_cases=2, n_raters=3)
    tasks = generate_preference_tasks(cases, humans, candidates, seed=1)
    store.add_tasks(tasks)
    plan = assign_raters(tasks, raters, per_task=2)
    store.assign(plan)
    return store, tasks, plan


def test_record_valid_preference_response(tmp_path):
    store, tasks, plan = _preference_setup(tmp_path)
    task = tasks[0]
    rater = plan[task.task_id][0]
    seq = store.record_response(
        PreferenceResponse(task.task_id, rater, Choice.A, "clearer impression", TS)
    )
    assert isinstance(seq, int)
    assert not store.is_complete(task.task_id)
    store.record_response(
        PreferenceResponse(task.task_id, plan[task.task_id][1], Choice.EQUIVALENT, "same info", TS)
    )
    assert store.is_complete(task.task_id)


def test_resubmission_identical_payload_idempotent(tmp_path):
    store, tasks, plan = _preference_setup(tmp_path)
    response = PreferenceResponse(tasks[0].task_id, plan[tasks[0].task_id][0], Choice.B, "better", TS)
    first = store.record_response(response)
    second = store.record_response(response)
    assert first == second
    assert len([k for k in store.responses if k[0] == tasks[0].task_id]) == 1


def test_double_submission_with_differing_payload_conflicts(tmp_path):
    store, tasks, plan = _preference_setup(tmp_path)
    rater = plan[tasks[0].task_id][0]
    store.record_response(PreferenceResponse(tasks[0].task_id, rater, Choice.B, "better", TS))
    with pytest.raises(DuplicateSubmissionError):
        store.record_response(PreferenceResponse(tasks[0].task_id, rater, Choice.A, "changed mind", TS))


def test_unknown_task_and_unassigned_rater_rejected(tmp_path):
    store, tasks, plan = _preference_setup(tmp_path)
    with pytest.raises(UnknownTaskError):
        store.record_response(PreferenceResponse("nope", "r00", Choice.A, "x", TS))
    outsider = [r for r in store.raters if r not in plan[tasks[0].task_id]][0]
    with pytest.raises(UnassignedRaterError):
        store.record_response(PreferenceResponse(tasks[0].task_id, outsider, Choice.A, "x", TS))


def test_empty_justification_rejected(tmp_path):
    store, tasks, plan = _preference_setup(tmp_path)
    with pytest.raises(WorkflowError, match="justification"):
        store.record_response(
            PreferenceResponse(tasks[0].task_id, plan[tasks[0].task_id][0], Choice.A, "  ", TS)
        )


def _correction_setup(tmp_path):
    store = fresh_store(tmp_path)
    cases, humans, candidates, raters = seeded_study(store, n_cases=2, n_raters=3)
    tasks = generate_correction_tasks(cases, humans + candidates, seed=2)
    store.add_tasks(tasks)
    plan = assign_raters(tasks, raters, per_task=2)
    store.assign(plan)
    return store, tasks, plan


def test_correction_response_with_edits(tmp_path):
    store, tasks, plan = _correction_setup(tmp_path)
    task = tasks[0]
    text = store.task_display_text(task.task_id)
    edit = SpanEdit(0, 8, EditReason.INCORRECT_SEVERITY, True, "Severe")
    seq = store.record_response(
        CorrectionResponse(task.task_id, plan[task.task_id][0], True, (edit,), text_sha256(text), TS)
    )
    assert seq >= 0


def test_correction_hash_mismatch_rejected(tmp_path):
    store, tasks, plan = _correction_setup(tmp_path)
    with pytest.raises(WorkflowError, match="hash"):
        store.record_response(
            CorrectionResponse(tasks[0].task_id, plan[tasks[0].task_id][0], True, (), "deadbeef", TS)
        )


def test_correction_out_of_bounds_span_rejected(tmp_path):
    store, tasks, plan = _correction_setup(tmp_path)
    text = store.task_display_text(tasks[0].task_id)
    edit = SpanEdit(0, len(text) + 5, EditReason.INCORRECT_FINDING, False, "x")
    with pytest.raises(SpanError):
        store.record_response(
            CorrectionResponse(tasks[0].task_id, plan[tasks[0].task_id][0], True, (edit,),
                               text_sha256(text), TS)
        )


def test_failed_quality_gate_forbids_edits(tmp_path):
    store, tasks, plan = _correction_setup(tmp_path)
    text = store.task_display_text(tasks[0].task_id)
    edit = SpanEdit(0, 2, EditReason.INCORRECT_FINDING, False, "x")
    with pytest.raises(WorkflowError, match="quality"):
        store.record_response(
            CorrectionResponse(tasks[0].task_id, plan[tasks[0].task_id][0], False, (edit,),
                               text_sha256(text), TS)
        )
    # gate answered no with zero edits completes the task for that rater
    seq = store.record_response(
        CorrectionResponse(tasks[0].task_id, plan[tasks[0].task_id][0], False, (),
                           text_sha256(text), TS)
    )
    assert seq >= 0


# ---------------------------------------------------------------------------
# apply_edits
# ---------------------------------------------------------------------------

def test_apply_single_edit_splices_replacement():
    report = ReportDocument("r", "c", "There is no pleural effusion today.", "Clear.", Source.MODEL_GENERATED)
    start = report.text.index("no pleural effusion")
    edit = SpanEdit(start, start + len("no pleural effusion"),
                    EditReason.INCORRECT_FINDING, True, "small right pleural effusion")
    edited = apply_edits(report, [edit])
    assert edited.text == "There is small right pleural effusion today.\nClear."
    assert edited.source is Source.CLINICIAN_AI_EDITED
    assert edited.case_id == report.case_id


def test_apply_empty_edit_list_changes_only_source():
    report = ReportDocument("r", "c", "Findings text.", "Impression text.", Source.MODEL_GENERATED)
    edited = apply_edits(report, [])
    assert edited.text == report.text
    assert edited.source is Source.CLINICIAN_AI_EDITED


def test_apply_edits_matches_segment_rebuild_oracle():
    rng = np.random.default_rng(44)
    for _ in range(100):
        length = int(rng.integers(20, 60))
        text = "".join(chr(97 + int(v)) for v in rng.integers(0, 26, size=length))
        report = ReportDocument.from_text("r", "c", text, Source.MODEL_GENERATED)
        cuts = sorted(rng.choice(length + 1, size=6, replace=False).tolist())
        spans = [(cuts[0], cuts[1]), (cuts[2], cuts[3]), (cuts[4], cuts[5])]
        spans = [(a, b) for a, b in spans if a < b]
        edits = [
            SpanEdit(a, b, EditReason.INCORRECT_FINDING, False, f"[{i}]")
            for i, (a, b) in enumerate(spans)
        ]
        edited = apply_edits(report, edits)
        # oracle: rebuild from untouched segments + replacements
        rebuilt = []
        cursor = 0
        for i, (a, b) in enumerate(spans):
            rebuilt.append(text[cursor:a])
            rebuilt.append(f"[{i}]")
            cursor = b
        rebuilt.append(text[cursor:])
        assert edited.text == "".join(rebuilt)


@given(st.data())
def test_apply_edits_preserves_bytes_outside_spans(data):
    text = data.draw(st.text(alphabet="abcdef .", min_size=10, max_size=40))
    report = ReportDocument.from_text("r", "c", text, Source.MODEL_GENERATED)
    a = data.draw(st.integers(0, len(text) - 2))
    b = data.draw(st.integers(a + 1, len(text) - 1))
    replacement = data.draw(st.text(alphabet="xyz", max_size=8))
    edited = apply_edits(
        report, [SpanEdit(a, b, EditReason.INCORRECT_LOCATION, False, replacement)]
    )
    assert edited.text[:a] == text[:a]
    assert edited.text[a + len(replacement):] == text[b:]


def test_overlapping_spans_rejected():
    report = ReportDocument.from_text("r", "c", "abcdefghij", Source.MODEL_GENERATED)
    edits = [
        SpanEdit(0, 5, EditReason.INCORRECT_FINDING, False, "x"),
        SpanEdit(4, 8, EditReason.INCORRECT_FINDING, False, "y"),
    ]
    with pytest.raises(SpanError, match="overlap"):
        apply_edits(report, edits)


def test_out_of_bounds_span_rejected():
    report = ReportDocument.from_text("r", "c", "abc", Source.MODEL_GENERATED)
    with pytest.raises(SpanError, match="bounds"):
        apply_edits(report, [SpanEdit(0, 9, EditReason.INCORRECT_FINDING, False, "x")])


# ---------------------------------------------------------------------------
# collaboration round
# ---------------------------------------------------------------------------

def _run_correction_phase(store, tasks, plan, edit_cases):
    """Answer every correction task; raters edit the model report only for
    case_ids in edit_cases."""
    for task in tasks:
        text = store.task_display_text(task.task_id)
        is_model = store.reports[task.report_id].source is Source.MODEL_GENERATED
        for rater_id in plan[task.task_id]:
            edits = ()
            if is_model and task.case_id in edit_cases:
                edits = (SpanEdit(0, 2, EditReason.INCORRECT_FINDING, True, "XX"),)
            store.record_response(
                CorrectionResponse(task.task_id, rater_id, True, edits, text_sha256(text), TS)
            )


def test_collaboration_round_subset_and_exclusions(tmp_path):
    store = fresh_store(tmp_path)
    cases, humans, candidates, raters = seeded_study(store, n_cases=6, n_raters=6)
    tasks = generate_correction_tasks(cases, humans + candidates, seed=3)
    store.add_tasks(tasks)
    plan = assign_raters(tasks, raters, per_task=2)
    store.assign(plan)
    edited_cases = {"c000", "c002", "c003"}
    _run_correction_phase(store, tasks, plan, edited_cases)

    collab_tasks, exclusions = store.generate_collaboration_round(seed=11)
    assert {t.case_id for t in collab_tasks} == edited_cases
    for task in collab_tasks:
        sources = {store.reports[task.slot_a].source, store.reports[task.slot_b].source}
        assert sources == {Source.HUMAN_ORIGINAL, Source.CLINICIAN_AI_EDITED}
        model_task = next(
            t for t in tasks
            if t.case_id == task.case_id
            and store.reports[t.report_id].source is Source.MODEL_GENERATED
        )
        for rater_id in plan[model_task.task_id]:
            assert (rater_id, task.case_id) in exclusions
    # no-edit cases emit no collaboration task
    assert not any(t.case_id == "c001" for t in collab_tasks)


def test_collaboration_requires_a_completed_correction_phase(tmp_path):
    store = fresh_store(tmp_path)
    cases, humans, candidates, raters = seeded_study(store, n_cases=2)
    tasks = generate_correction_tasks(cases, humans + candidates, seed=3)
    store.add_tasks(tasks)
    plan = assign_raters(tasks, raters, per_task=2)
    store.assign(plan)
    with pytest.raises(WorkflowError, match="no completed correction"):
        store.generate_collaboration_round(seed=0)


def test_collaboration_fifty_cases_thirty_edited_yields_thirty_tasks(tmp_path):
    store = fresh_store(tmp_path)
    cases, humans, candidates, raters = seeded_study(store, n_cases=50, n_raters=8)
    tasks = generate_correction_tasks(cases, humans + candidates, seed=4)
    store.add_tasks(tasks)
    plan = assign_raters(tasks, raters, per_task=2)
    store.assign(plan)
    rng = np.random.default_rng(30)
    edited = set(
        f"c{int(i):03d}" for i in rng.choice(50, size=30, replace=False)
    )
    _run_correction_phase(store, tasks, plan, edited)
    collab_tasks, _ = store.generate_collaboration_round(seed=12)
    assert len(collab_tasks) == 30


def test_collaboration_applies_the_recorded_edits(tmp_path):
    store = fresh_store(tmp_path)
    cases, humans, candidates, raters = seeded_study(store, n_cases=1)
    tasks = generate_correction_tasks(cases, humans + candidates, seed=5)
    store.add_tasks(tasks)
    plan = assign_raters(tasks, raters, per_task=2)
    store.assign(plan)
    _run_correction_phase(store, tasks, plan, {"c000"})
    (collab_task,), _ = store.generate_collaboration_round(seed=1)
    edited_id = (
        collab_task.slot_a
        if store.reports[collab_task.slot_a].source is Source.CLINICIAN_AI_EDITED
        else collab_task.slot_b
    )
    assert store.reports[edited_id].text.startswith("XX")


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

def test_event_log_replay_reconstructs_state(tmp_path):
    store = fresh_store(tmp_path)
    cases, humans, candidates, raters = seeded_study(store, n_cases=5, n_raters=5)
    pref = generate_preference_tasks(cases, humans, candidates, seed=6)
    corr = generate_correction_tasks(cases, humans + candidates, seed=7)
    store.add_tasks(pref)
    store.add_tasks(corr)
    plan = assign_raters(pref + corr, raters, per_task=2)
    store.assign(plan, order_seed=3)
    rng = np.random.default_rng(0)
    for task in pref:
        for rater_id in plan[task.task_id]:
            store.record_response(PreferenceResponse(
                task.task_id, rater_id,
                list(Choice)[rng.integers(0, 3)], "because", TS + float(rng.integers(0, 50)),
            ))
    _run_correction_phase(store, corr, plan, {"c001", "c004"})
    store.generate_collaboration_round(seed=8)

    replayed = WorkflowStore(EventLog(store.log.path, fsync=False))
    assert replayed.state_snapshot() == store.state_snapshot()


def test_rater_queue_is_deterministic_permutation(tmp_path):
    store, tasks, plan = _preference_setup(tmp_path)
    for rater_id, queue in store.rater_queues.items():
        assigned = {tid for tid, rids in plan.items() if rater_id in rids}
        assert set(queue) == assigned
    replayed = WorkflowStore(EventLog(store.log.path, fsync=False))
    assert replayed.rater_queues == store.rater_queues


def test_next_task_skips_answered(tmp_path):
    store, tasks, plan = _preference_setup(tmp_path)
    rater = plan[tasks[0].task_id][0]
    first = store.next_task_for(rater)
    store.record_response(PreferenceResponse(first, rater, Choice.A, "ok", TS))
    second = store.next_task_for(rater)
    assert second != first


def test_rater_history_is_derived_and_grows_monotonically(tmp_path):
    store, tasks, plan = _preference_setup(tmp_path)
    rater = plan[tasks[0].task_id][0]
    assert store.rater_history(rater) == set()
    store.record_response(PreferenceResponse(tasks[0].task_id, rater, Choice.A, "ok", TS))
    first = store.rater_history(rater)
    assert first == {(tasks[0].case_id, "preference")}
    remaining = [t for t in tasks if rater in plan[t.task_id] and t.task_id != tasks[0].task_id]
    for task in remaining:
        store.record_response(PreferenceResponse(task.task_id, rater, Choice.B, "ok", TS))
    assert first <= store.rater_history(rater)
