"""Blinded human-evaluation workflow: task generation, rater assignment,
response recording, edit application, and the collaboration round.

All state lives in (and is reconstructed from) the append-only event
log: a `WorkflowStore` opened on an existing log replays it and arrives
at exactly the state the original writer held. Task payloads sent to
raters never carry report source metadata; the slot-to-source key for
later unblinding is recorded server-side at generation time as a hash,
which analysis re-derives and checks.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import CaseRecord, DatasetTag, ReportDocument, Source, Split, Stratum, View
from .events import EventLog


class WorkflowError(ValueError):
    """Generic workflow precondition failure."""


class UnknownTaskError(WorkflowError):
    pass


class UnassignedRaterError(WorkflowError):
    pass


class DuplicateSubmissionError(WorkflowError):
    """Double submission with a differing payload."""


class AssignmentInfeasibleError(WorkflowError):
    """Fewer eligible raters than required for some task."""


class SpanError(WorkflowError):
    """Out-of-bounds or overlapping edit spans."""


class EditReason(Enum):
    INCORRECT_FINDING = "INCORRECT_FINDING"
    INCORRECT_LOCATION = "INCORRECT_LOCATION"
    INCORRECT_SEVERITY = "INCORRECT_SEVERITY"


# display labels shown to raters; payloads carry the enum names
REASON_LABELS = {
    EditReason.INCORRECT_FINDING: "finding I do not agree with is present",
    EditReason.INCORRECT_LOCATION: "incorrect location of finding",
    EditReason.INCORRECT_SEVERITY: "incorrect severity of finding",
}


class Choice(Enum):
    A = "A"
    B = "B"
    EQUIVALENT = "EQUIVALENT"


@dataclass(frozen=True)
class RaterProfile:
    rater_id: str
    qualifications: str = ""


@dataclass(frozen=True)
class PreferenceTask:
    task_id: str
    case_id: str
    slot_a: str  # report_id presented as option A
    slot_b: str
    blinding_seed: int
    phase: str = "preference"  # "preference" or "collaboration"

    kind = "preference"


@dataclass(frozen=True)
class CorrectionTask:
    task_id: str
    case_id: str
    report_id: str
    phase: str = "correction"

    kind = "correction"


@dataclass(frozen=True)
class SpanEdit:
    start: int  # char offsets into the displayed text, end-exclusive
    end: int
    reason: EditReason
    clinically_significant: bool
    replacement: str


@dataclass(frozen=True)
class PreferenceResponse:
    task_id: str
    rater_id: str
    choice: Choice
    justification: str
    timestamp: float

    kind = "preference"


@dataclass(frozen=True)
class CorrectionResponse:
    task_id: str
    rater_id: str
    image_quality_ok: bool
    edits: tuple[SpanEdit, ...]
    displayed_text_sha256: str
    timestamp: float

    kind = "correction"


def text_sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _slot_key(task_id: str, source_a: Source, source_b: Source) -> str:
    return text_sha256(f"{task_id}|{source_a.value}|{source_b.value}")


# ---------------------------------------------------------------------------
# Task generation (pure functions)
# ---------------------------------------------------------------------------

def generate_preference_tasks(
    cases: Sequence[CaseRecord],
    human_reports: Sequence[ReportDocument],
    candidate_reports: Sequence[ReportDocument],
    seed: int,
    phase: str = "preference",
) -> list[PreferenceTask]:
    """One blinded task per case; the human/candidate slot assignment is a
    seeded coin flip recorded as the task's blinding seed."""
    human_by_case = _index_unique(human_reports, "human")
    candidate_by_case = _index_unique(candidate_reports, "candidate")
    rng = np.random.default_rng(seed)
    tasks = []
    for case in sorted(cases, key=lambda c: c.case_id):
        if case.case_id not in human_by_case:
            raise WorkflowError(f"case {case.case_id} missing its human report")
        if case.case_id not in candidate_by_case:
            raise WorkflowError(f"case {case.case_id} missing its candidate report")
        blinding_seed = int(rng.integers(0, 2**31))
        human = human_by_case[case.case_id].report_id
        candidate = candidate_by_case[case.case_id].report_id
        slot_a, slot_b = (human, candidate) if blinding_seed % 2 == 0 else (candidate, human)
        tasks.append(
            PreferenceTask(
                task_id=f"{phase}-{case.case_id}",
                case_id=case.case_id,
                slot_a=slot_a,
                slot_b=slot_b,
                blinding_seed=blinding_seed,
                phase=phase,
            )
        )
    return tasks


def _index_unique(reports: Iterable[ReportDocument], label: str) -> dict[str, ReportDocument]:
    index: dict[str, ReportDocument] = {}
    for report in reports:
        if report.case_id in index:
            raise WorkflowError(f"case {report.case_id} has more than one {label} report")
        index[report.case_id] = report
    return index


def generate_correction_tasks(
    cases: Sequence[CaseRecord],
    reports: Sequence[ReportDocument],
    seed: int,
) -> list[CorrectionTask]:
    """One single-report task per (case, report); within a case the task
    suffix order is a seeded shuffle so the task id betrays nothing about
    the report's source."""
    by_case: dict[str, list[ReportDocument]] = {}
    for report in reports:
        by_case.setdefault(report.case_id, []).append(report)
    rng = np.random.default_rng(seed)
    tasks = []
    for case in sorted(cases, key=lambda c: c.case_id):
        docs = sorted(by_case.get(case.case_id, []), key=lambda r: r.report_id)
        if not docs:
            raise WorkflowError(f"case {case.case_id} has no reports to correct")
        order = rng.permutation(len(docs))
        for slot, doc_index in enumerate(order):
            tasks.append(
                CorrectionTask(
                    task_id=f"correction-{case.case_id}-{slot}",
                    case_id=case.case_id,
                    report_id=docs[int(doc_index)].report_id,
                )
            )
    return tasks


def assign_raters(
    tasks: Sequence,
    raters: Sequence[RaterProfile],
    per_task: int = 2,
    exclusions: Iterable[tuple[str, str]] = (),
) -> dict[str, tuple[str, ...]]:
    """Greedy load-balanced assignment of `per_task` distinct raters per
    task, honoring (rater_id, case_id) exclusions. Load stays within one
    task across raters whenever the exclusion structure allows it."""
    excluded = set(exclusions)
    load = {r.rater_id: 0 for r in raters}
    plan: dict[str, tuple[str, ...]] = {}
    for task in sorted(tasks, key=lambda t: t.task_id):
        eligible = [r.rater_id for r in raters if (r.rater_id, task.case_id) not in excluded]
        if len(eligible) < per_task:
            raise AssignmentInfeasibleError(
                f"task {task.task_id}: {len(eligible)} eligible raters, need {per_task}"
            )
        eligible.sort(key=lambda rid: (load[rid], rid))
        chosen = tuple(eligible[:per_task])
        for rid in chosen:
            load[rid] += 1
        plan[task.task_id] = chosen
    return plan


def apply_edits(
    report: ReportDocument,
    edits: Sequence[SpanEdit],
    report_id: str | None = None,
) -> ReportDocument:
    """Splice replacement texts into the report's canonical text.

    Spans must be in-bounds and non-overlapping; edits are applied in
    descending span-start order so earlier offsets stay valid. Text
    outside the spans is byte-identical to the original. The result
    carries CLINICIAN_AI_EDITED source.
    """
    text = report.text
    validate_spans(edits, len(text))
    new_text = text
    for edit in sorted(edits, key=lambda e: e.start, reverse=True):
        new_text = new_text[: edit.start] + edit.replacement + new_text[edit.end :]
    return ReportDocument.from_text(
        report_id=report_id or f"{report.report_id}::edited",
        case_id=report.case_id,
        text=new_text,
        source=Source.CLINICIAN_AI_EDITED,
    )


def validate_spans(edits: Sequence[SpanEdit], text_length: int) -> None:
    for edit in edits:
        if not (0 <= edit.start < edit.end <= text_length):
            raise SpanError(f"span [{edit.start}, {edit.end}) out of bounds (text length {text_length})")
    ordered = sorted(edits, key=lambda e: e.start)
    for a, b in zip(ordered, ordered[1:]):
        if b.start < a.end:
            raise SpanError(f"overlapping spans [{a.start},{a.end}) and [{b.start},{b.end})")


# ---------------------------------------------------------------------------
# Serialization codecs (event payloads)
# ---------------------------------------------------------------------------

def _case_to_dict(case: CaseRecord) -> dict:
    return {
        "case_id": case.case_id,
        "dataset_tag": case.dataset_tag.value,
        "image_ref": case.image_ref,
        "view": case.view.value,
        "stratum": case.stratum.value,
        "split": case.split.value,
    }


def _case_from_dict(d: Mapping) -> CaseRecord:
    return CaseRecord(
        case_id=d["case_id"],
        dataset_tag=DatasetTag(d["dataset_tag"]),
        image_ref=d["image_ref"],
        view=View(d["view"]),
        stratum=Stratum(d["stratum"]),
        split=Split(d["split"]),
    )


def _report_to_dict(report: ReportDocument) -> dict:
    return {
        "report_id": report.report_id,
        "case_id": report.case_id,
        "findings": report.findings,
        "impression": report.impression,
        "source": report.source.value,
    }


def _report_from_dict(d: Mapping) -> ReportDocument:
    return ReportDocument(
        report_id=d["report_id"],
        case_id=d["case_id"],
        findings=d["findings"],
        impression=d["impression"],
        source=Source(d["source"]),
    )


def _task_to_dict(task) -> dict:
    if task.kind == "preference":
        return {
            "kind": "preference",
            "task_id": task.task_id,
            "case_id": task.case_id,
            "slot_a": task.slot_a,
            "slot_b": task.slot_b,
            "blinding_seed": task.blinding_seed,
            "phase": task.phase,
        }
    return {
        "kind": "correction",
        "task_id": task.task_id,
        "case_id": task.case_id,
        "report_id": task.report_id,
        "phase": task.phase,
    }


def _task_from_dict(d: Mapping):
    if d["kind"] == "preference":
        return PreferenceTask(
            task_id=d["task_id"],
            case_id=d["case_id"],
            slot_a=d["slot_a"],
            slot_b=d["slot_b"],
            blinding_seed=d["blinding_seed"],
            phase=d["phase"],
        )
    return CorrectionTask(
        task_id=d["task_id"],
        case_id=d["case_id"],
        report_id=d["report_id"],
        phase=d["phase"],
    )


def response_to_dict(response) -> dict:
    if response.kind == "preference":
        return {
            "kind": "preference",
            "task_id": response.task_id,
            "rater_id": response.rater_id,
            "choice": response.choice.value,
            "justification": response.justification,
            "timestamp": response.timestamp,
        }
    return {
        "kind": "correction",
        "task_id": response.task_id,
        "rater_id": response.rater_id,
        "image_quality_ok": response.image_quality_ok,
        "edits": [
            {
                "start": e.start,
                "end": e.end,
                "reason": e.reason.value,
                "clinically_significant": e.clinically_significant,
                "replacement": e.replacement,
            }
            for e in response.edits
        ],
        "displayed_text_sha256": response.displayed_text_sha256,
        "timestamp": response.timestamp,
    }


def response_from_dict(d: Mapping):
    if d["kind"] == "preference":
        return PreferenceResponse(
            task_id=d["task_id"],
            rater_id=d["rater_id"],
            choice=Choice(d["choice"]),
            justification=d["justification"],
            timestamp=d["timestamp"],
        )
    return CorrectionResponse(
        task_id=d["task_id"],
        rater_id=d["rater_id"],
        image_quality_ok=d["image_quality_ok"],
        edits=tuple(
            SpanEdit(
                start=e["start"],
                end=e["end"],
                reason=EditReason(e["reason"]),
                clinically_significant=e["clinically_significant"],
                replacement=e["replacement"],
            )
            for e in d["edits"]
        ),
        displayed_text_sha256=d["displayed_text_sha256"],
        timestamp=d["timestamp"],
    )


def _canonical(d: dict) -> str:
    return json.dumps(d, sort_keys=True, ensure_ascii=False)


# ---------------------------------------------------------------------------
# Store
# ---------------------------------------------------------------------------

class WorkflowStore:
    """Event-sourced workflow state over a single append-only log.

    Opening a store on an existing log replays every event through the
    same apply path used by live mutations, so reconstructed state is
    identical to the writer's.
    """

    def __init__(self, log: EventLog):
        self.log = log
        self._write_lock = threading.Lock()  # submissions serialize here
        self.cases: dict[str, CaseRecord] = {}
        self.reports: dict[str, ReportDocument] = {}
        self.raters: dict[str, RaterProfile] = {}
        self.tasks: dict = {}
        self.task_slot_keys: dict[str, str] = {}
        self.exclusions: set[tuple[str, str, str]] = set()  # (rater, case, phase)
        self.assignments: dict[str, tuple[str, ...]] = {}
        self.rater_queues: dict[str, list[str]] = {}
        self.responses: dict[tuple[str, str], tuple[int, dict]] = {}
        for event in log.iter_events():
            self._apply(event)

    # -- mutations ---------------------------------------------------------

    def register_case(self, case: CaseRecord) -> int:
        if case.case_id in self.cases:
            raise WorkflowError(f"case {case.case_id} already registered")
        return self._commit({"kind": "case_registered", "case": _case_to_dict(case)})

    def register_report(self, report: ReportDocument) -> int:
        if report.report_id in self.reports:
            raise WorkflowError(f"report {report.report_id} already registered")
        if report.case_id not in self.cases:
            raise WorkflowError(f"report references unknown case {report.case_id}")
        return self._commit({"kind": "report_registered", "report": _report_to_dict(report)})

    def register_rater(self, rater: RaterProfile) -> int:
        if rater.rater_id in self.raters:
            raise WorkflowError(f"rater {rater.rater_id} already registered")
        return self._commit(
            {
                "kind": "rater_registered",
                "rater": {"rater_id": rater.rater_id, "qualifications": rater.qualifications},
            }
        )

    def add_tasks(self, tasks: Sequence, exclusions: Iterable[tuple[str, str]] = ()) -> int:
        """Record generated tasks plus any rater/case exclusions they carry.

        Exclusions are scoped to the phase of the tasks being added (a
        rater barred from a case's collaboration round may still hold
        that case's earlier correction assignment). The slot-to-source
        key of each preference task is hashed here, at generation time,
        for the unblinding consistency check."""
        exclusion_pairs = set(exclusions)
        phases = {t.phase for t in tasks}
        if exclusion_pairs and len(phases) != 1:
            raise WorkflowError("exclusions require a single-phase task batch")
        slot_keys = {}
        for task in tasks:
            if task.task_id in self.tasks:
                raise WorkflowError(f"task {task.task_id} already exists")
            for report_id in self._task_report_ids(task):
                if report_id not in self.reports:
                    raise WorkflowError(f"task {task.task_id} references unknown report {report_id}")
            if task.kind == "preference":
                slot_keys[task.task_id] = _slot_key(
                    task.task_id,
                    self.reports[task.slot_a].source,
                    self.reports[task.slot_b].source,
                )
        phase = next(iter(phases)) if exclusion_pairs else None
        return self._commit(
            {
                "kind": "tasks_created",
                "tasks": [_task_to_dict(t) for t in tasks],
                "slot_keys": slot_keys,
                "exclusions": sorted([rid, cid, phase] for rid, cid in exclusion_pairs),
            }
        )

    def assign(self, plan: Mapping[str, Sequence[str]], order_seed: int = 0) -> int:
        for task_id, rater_ids in plan.items():
            if task_id not in self.tasks:
                raise UnknownTaskError(task_id)
            task = self.tasks[task_id]
            for rid in rater_ids:
                if rid not in self.raters:
                    raise WorkflowError(f"unknown rater {rid}")
                if (rid, task.case_id, task.phase) in self.exclusions:
                    raise WorkflowError(
                        f"assignment violates exclusion: rater {rid} on case "
                        f"{task.case_id} ({task.phase})"
                    )
        return self._commit(
            {
                "kind": "raters_assigned",
                "plan": {tid: list(rids) for tid, rids in sorted(plan.items())},
                "order_seed": order_seed,
            }
        )

    def record_response(self, response) -> int:
        """Validate and durably record a rater response; idempotent for
        byte-identical resubmissions. Submissions serialize through the
        writer lock and are acknowledged in sequence-number order."""
        with self._write_lock:
            return self._record_response_locked(response)

    def _record_response_locked(self, response) -> int:
        task = self.tasks.get(response.task_id)
        if task is None:
            raise UnknownTaskError(response.task_id)
        assigned = self.assignments.get(response.task_id, ())
        if response.rater_id not in assigned:
            raise UnassignedRaterError(
                f"rater {response.rater_id} not assigned to task {response.task_id}"
            )
        if task.kind != response.kind:
            raise WorkflowError(
                f"{response.kind} response for {task.kind} task {response.task_id}"
            )
        payload = response_to_dict(response)
        existing = self.responses.get((response.task_id, response.rater_id))
        if existing is not None:
            seq, stored = existing
            if _canonical(stored) == _canonical(payload):
                return seq
            raise DuplicateSubmissionError(
                f"task {response.task_id} already answered by {response.rater_id} "
                "with a different payload"
            )
        if response.kind == "preference":
            if not response.justification.strip():
                raise WorkflowError("justification must be non-empty")
        else:
            display = self.reports[task.report_id].text
            if response.displayed_text_sha256 != text_sha256(display):
                raise WorkflowError("displayed-text hash mismatch (stale task text)")
            validate_spans(response.edits, len(display))
            if not response.image_quality_ok and response.edits:
                raise WorkflowError("edits recorded despite failed image-quality gate")
        return self._commit({"kind": "response_recorded", "response": payload})

    def _commit(self, event: dict) -> int:
        seq = self.log.append(event)
        event = dict(event)
        event["seq"] = seq
        self._apply(event)
        return seq

    # -- event application (shared by live mutation and replay) -------------

    def _apply(self, event: Mapping) -> None:
        kind = event["kind"]
        if kind == "case_registered":
            case = _case_from_dict(event["case"])
            self.cases[case.case_id] = case
        elif kind == "report_registered":
            report = _report_from_dict(event["report"])
            self.reports[report.report_id] = report
        elif kind == "rater_registered":
            r = event["rater"]
            self.raters[r["rater_id"]] = RaterProfile(r["rater_id"], r["qualifications"])
        elif kind == "tasks_created":
            for task_dict in event["tasks"]:
                task = _task_from_dict(task_dict)
                self.tasks[task.task_id] = task
            self.task_slot_keys.update(event["slot_keys"])
            self.exclusions.update((rid, cid, phase) for rid, cid, phase in event["exclusions"])
        elif kind == "raters_assigned":
            order_seed = event["order_seed"]
            for task_id, rater_ids in event["plan"].items():
                self.assignments[task_id] = tuple(rater_ids)
                for rid in rater_ids:
                    self.rater_queues.setdefault(rid, []).append(task_id)
            for rid, queue in self.rater_queues.items():
                self.rater_queues[rid] = _presentation_order(queue, rid, order_seed)
        elif kind == "response_recorded":
            payload = event["response"]
            self.responses[(payload["task_id"], payload["rater_id"])] = (
                event["seq"],
                payload,
            )
        else:
            raise WorkflowError(f"unknown event kind {kind!r}")

    @staticmethod
    def _task_report_ids(task) -> tuple[str, ...]:
        if task.kind == "preference":
            return (task.slot_a, task.slot_b)
        return (task.report_id,)

    # -- queries -------------------------------------------------------------

    def task_display_text(self, task_id: str) -> str:
        task = self.tasks[task_id]
        if task.kind != "correction":
            raise WorkflowError(f"task {task_id} has no single display text")
        return self.reports[task.report_id].text

    def task_payload(self, task_id: str) -> dict:
        """The blinded payload served to raters: report texts only, no
        source metadata anywhere."""
        task = self.tasks.get(task_id)
        if task is None:
            raise UnknownTaskError(task_id)
        if task.kind == "preference":
            return {
                "task_id": task.task_id,
                "kind": "preference",
                "phase": task.phase,
                "case_id": task.case_id,
                "report_a": self.reports[task.slot_a].text,
                "report_b": self.reports[task.slot_b].text,
            }
        text = self.reports[task.report_id].text
        return {
            "task_id": task.task_id,
            "kind": "correction",
            "phase": task.phase,
            "case_id": task.case_id,
            "report_text": text,
            "report_text_sha256": text_sha256(text),
        }

    def exclusions_for(self, phase: str) -> set[tuple[str, str]]:
        """(rater_id, case_id) pairs barred from the given phase."""
        return {(rid, cid) for rid, cid, p in self.exclusions if p == phase}

    def rater_history(self, rater_id: str) -> set[tuple[str, str]]:
        """(case_id, task kind) pairs this rater has completed; derived
        from the response log, so it is append-only by construction."""
        history = set()
        for (task_id, rid) in self.responses:
            if rid == rater_id:
                task = self.tasks[task_id]
                history.add((task.case_id, task.kind))
        return history

    def next_task_for(self, rater_id: str) -> str | None:
        for task_id in self.rater_queues.get(rater_id, []):
            if (task_id, rater_id) not in self.responses:
                return task_id
        return None

    def task_responses(self, task_id: str) -> list:
        found = []
        for (tid, _rid), (seq, payload) in self.responses.items():
            if tid == task_id:
                found.append((seq, response_from_dict(payload)))
        found.sort(key=lambda item: item[0])
        return [resp for _seq, resp in found]

    def quality_gate_pending(self, task_id: str, rater_id: str) -> bool:
        return (task_id, rater_id) not in self.responses

    def is_complete(self, task_id: str) -> bool:
        assigned = self.assignments.get(task_id, ())
        return bool(assigned) and all(
            (task_id, rid) in self.responses for rid in assigned
        )

    def state_snapshot(self) -> dict:
        """Canonical JSON-able state image for replay-equivalence checks."""
        return {
            "cases": {cid: _case_to_dict(c) for cid, c in sorted(self.cases.items())},
            "reports": {rid: _report_to_dict(r) for rid, r in sorted(self.reports.items())},
            "raters": {
                rid: {"rater_id": r.rater_id, "qualifications": r.qualifications}
                for rid, r in sorted(self.raters.items())
            },
            "tasks": {tid: _task_to_dict(t) for tid, t in sorted(self.tasks.items())},
            "task_slot_keys": dict(sorted(self.task_slot_keys.items())),
            "exclusions": sorted(list(e) for e in self.exclusions),
            "assignments": {tid: list(r) for tid, r in sorted(self.assignments.items())},
            "rater_queues": {rid: list(q) for rid, q in sorted(self.rater_queues.items())},
            "responses": {
                f"{tid}|{rid}": {"seq": seq, "payload": payload}
                for (tid, rid), (seq, payload) in sorted(self.responses.items())
            },
        }

    # -- collaboration round -------------------------------------------------

    def generate_collaboration_round(
        self, seed: int, variant: str = "first_completed"
    ) -> tuple[list[PreferenceTask], set[tuple[str, str]]]:
        """Build the second preference round from completed corrections.

        Restricted to cases whose model report received at least one edit;
        the chosen correction's replacements are spliced into the model
        report, paired against the human original with fresh blinding, and
        the raters who corrected that model report are excluded from the
        case. `variant` picks the edit reconciliation: "first_completed"
        (default, earliest response with edits) or "all_variants" (one
        task per editing rater).
        """
        if variant not in ("first_completed", "all_variants"):
            raise WorkflowError(f"unknown variant {variant!r}")
        correction_tasks = [t for t in self.tasks.values() if t.kind == "correction"]
        if not any(self.is_complete(t.task_id) for t in correction_tasks):
            raise WorkflowError("no completed correction phase")

        rng = np.random.default_rng(seed)
        new_tasks: list[PreferenceTask] = []
        new_reports: list[ReportDocument] = []
        exclusions: set[tuple[str, str]] = set()

        for case_id in sorted({t.case_id for t in correction_tasks}):
            case_tasks = [t for t in correction_tasks if t.case_id == case_id]
            if not all(self.is_complete(t.task_id) for t in case_tasks):
                continue
            model_tasks = [
                t for t in case_tasks
                if self.reports[t.report_id].source is Source.MODEL_GENERATED
            ]
            if not model_tasks:
                continue
            human = self._case_report(case_id, Source.HUMAN_ORIGINAL)
            for model_task in sorted(model_tasks, key=lambda t: t.task_id):
                model_report = self.reports[model_task.report_id]
                responses = self.task_responses(model_task.task_id)
                editing = [r for r in responses if r.edits]
                if not editing:
                    continue
                exclusions.update((r.rater_id, case_id) for r in responses)
                if variant == "first_completed":
                    editing = editing[:1]
                for idx, correction in enumerate(editing):
                    suffix = "" if variant == "first_completed" else f"-v{idx}"
                    edited = apply_edits(
                        model_report,
                        correction.edits,
                        report_id=f"{model_report.report_id}::edit{suffix or '0'}",
                    )
                    new_reports.append(edited)
                    blinding_seed = int(rng.integers(0, 2**31))
                    slot_a, slot_b = (
                        (human.report_id, edited.report_id)
                        if blinding_seed % 2 == 0
                        else (edited.report_id, human.report_id)
                    )
                    new_tasks.append(
                        PreferenceTask(
                            task_id=f"collaboration-{case_id}{suffix}",
                            case_id=case_id,
                            slot_a=slot_a,
                            slot_b=slot_b,
                            blinding_seed=blinding_seed,
                            phase="collaboration",
                        )
                    )
        if not new_tasks:
            return [], set()
        for report in new_reports:
            self.register_report(report)
        self.add_tasks(new_tasks, exclusions)
        return new_tasks, exclusions

    def _case_report(self, case_id: str, source: Source) -> ReportDocument:
        matches = [
            r for r in self.reports.values()
            if r.case_id == case_id and r.source is source
        ]
        if len(matches) != 1:
            raise WorkflowError(
                f"case {case_id}: expected exactly one {source.value} report, "
                f"found {len(matches)}"
            )
        return matches[0]


def _presentation_order(task_ids: Sequence[str], rater_id: str, order_seed: int) -> list[str]:
    """Deterministic per-rater shuffle of the assigned tasks (order effects)."""
    digest = hashlib.sha256(rater_id.encode("utf-8")).digest()
    rng = np.random.default_rng([order_seed, int.from_bytes(digest[:4], "big")])
    ordered = sorted(set(task_ids))
    return [ordered[i] for i in rng.permutation(len(ordered))]
