#!/usr/bin/env python3
"""Record the frontend contract fixtures from the live Python service.

Writes into the frontend fixtures directory:
  span_fixtures.json     50 word-snapping/round-trip cases (server-side
                         snapping oracle + displayed-text hashes)
  payload_fixtures.json  served task payloads with the exact request
                         bodies the service accepted for them
  reasons.json           the disagreement-reason enum and display labels
  service.schema.json    copy of the wire-contract schema

Usage:
    python scripts/export_ui_fixtures.py --out frontend/fixtures
"""

import argparse
import hashlib
import json
import re
import shutil
from importlib import resources
from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient

from radeval.corpus import CaseRecord, DatasetTag, ReportDocument, Source, Split, Stratum, View
from radeval.events import EventLog
from radeval.service import ServiceConfig, create_app
from radeval.workflow import (
    REASON_LABELS,
    EditReason,
    RaterProfile,
    WorkflowStore,
    assign_raters,
    generate_correction_tasks,
    generate_preference_tasks,
)

_WORD = re.compile(r"[A-Za-z0-9]")

REPORT_TEXTS = [
    "The lungs are clear. The cardiomediastinal silhouette is within normal limits.\nNo acute cardiopulmonary process.",
    "There is a small right-sided pleural effusion with adjacent atelectasis.\nSmall right pleural effusion.",
    "Moderate cardiomegaly is present. Mild pulmonary edema is seen.\nCardiomegaly with mild pulmonary edema.",
    "Patchy opacities in the right lower lobe concerning for pneumonia.\nRight lower lobe pneumonia.",
    "A dual lead pacemaker is in place. No pleural effusion or pneumothorax.\nNo acute process.",
    "Low lung volumes without focal consolidation. No displaced rib fracture is seen.\nNo acute abnormality.",
    "Endotracheal tube tip is 4 cm above the carina. Lungs remain clear.\nSupport devices in standard position.",
    "Severe cardiomegaly with mild vascular congestion is again demonstrated.\nSevere cardiomegaly.",
    "There is a large left pneumothorax. A chest tube is in place.\nLarge left pneumothorax.",
    "Blunting of the costophrenic angle suggests a small pleural effusion.\nProbable small left effusion.",
]


def snap_to_word(text: str, start: int, end: int):
    """Server-side snapping rule (the oracle the UI must match): trim the
    edges inward to word characters, then expand outward to whole words."""
    start = max(0, min(start, len(text)))
    end = max(start, min(end, len(text)))
    while start < end and not _WORD.match(text[start]):
        start += 1
    while end > start and not _WORD.match(text[end - 1]):
        end -= 1
    if start >= end:
        return None
    while start > 0 and _WORD.match(text[start - 1]):
        start -= 1
    while end < len(text) and _WORD.match(text[end]):
        end += 1
    return start, end


def build_span_fixtures(n_cases: int = 50, seed: int = 13) -> list[dict]:
    rng = np.random.default_rng(seed)
    fixtures = []
    while len(fixtures) < n_cases:
        text = REPORT_TEXTS[int(rng.integers(0, len(REPORT_TEXTS)))]
        raw_start = int(rng.integers(0, len(text) - 2))
        raw_end = int(rng.integers(raw_start + 1, min(len(text), raw_start + 40)))
        snapped = snap_to_word(text, raw_start, raw_end)
        if snapped is None:
            continue
        start, end = snapped
        fixtures.append(
            {
                "id": len(fixtures) + 1,
                "text": text,
                "raw_start": raw_start,
                "raw_end": raw_end,
                "start": start,
                "end": end,
                "highlighted": text[start:end],
                "text_sha256": hashlib.sha256(text.encode("utf-8")).hexdigest(),
            }
        )
    return fixtures


def build_payload_fixtures(tmp_dir: Path) -> list[dict]:
    store = WorkflowStore(EventLog(tmp_dir / "fixture-events.log", fsync=False))
    raters = [RaterProfile("fixture-rater-a"), RaterProfile("fixture-rater-b")]
    for rater in raters:
        store.register_rater(rater)
    cases, humans, candidates = [], [], []
    for i in range(3):
        case = CaseRecord(f"fx{i}", DatasetTag.INDIA, f"images/fx{i}.png", View.PA,
                          Stratum.ABNORMAL, Split.TEST)
        cases.append(case)
        store.register_case(case)
        human = ReportDocument.from_text(
            f"fx{i}/h", case.case_id, REPORT_TEXTS[2 * i], Source.HUMAN_ORIGINAL
        )
        cand = ReportDocument.from_text(
            f"fx{i}/m", case.case_id, REPORT_TEXTS[2 * i + 1], Source.MODEL_GENERATED
        )
        humans.append(human)
        candidates.append(cand)
        store.register_report(human)
        store.register_report(cand)
    pref = generate_preference_tasks(cases, humans, candidates, seed=31)
    corr = generate_correction_tasks(cases, humans + candidates, seed=32)
    store.add_tasks(pref)
    store.add_tasks(corr)
    plan = assign_raters(pref + corr, raters, per_task=2)
    store.assign(plan, order_seed=33)

    config = ServiceConfig(data_dir=str(tmp_dir), token_secret="fixture-secret",
                           admin_token="fixture-admin")
    client = TestClient(create_app(store, config))

    recorded = []
    for rater in raters:
        token = client.post("/v1/session", json={"rater_id": rater.rater_id}).json()["token"]
        headers = {"Authorization": f"Bearer {token}"}
        while True:
            body = client.get("/v1/tasks/next", headers=headers).json()
            if body["status"] == "done":
                break
            task = body["task"]
            if task["kind"] == "preference":
                request = {
                    "kind": "preference",
                    "task_id": task["task_id"],
                    "choice": "EQUIVALENT" if rater.rater_id.endswith("b") else "A",
                    "justification": "fixture justification text",
                    "timestamp": 1700000000.0,
                }
            else:
                text = task["report_text"]
                snapped = snap_to_word(text, 4, min(24, len(text) - 1))
                start, end = snapped
                request = {
                    "kind": "correction",
                    "task_id": task["task_id"],
                    "image_quality_ok": True,
                    "edits": [
                        {
                            "start": start,
                            "end": end,
                            "reason": "INCORRECT_SEVERITY",
                            "clinically_significant": True,
                            "replacement": "mild",
                        }
                    ],
                    "displayed_text_sha256": task["report_text_sha256"],
                    "timestamp": 1700000000.0,
                }
            response = client.post("/v1/responses", json=request, headers=headers)
            assert response.status_code == 200, response.text
            recorded.append(
                {
                    "task": task,
                    "request": request,
                    "sequence_number": response.json()["sequence_number"],
                    "highlighted": (
                        task["report_text"][request["edits"][0]["start"]:request["edits"][0]["end"]]
                        if task["kind"] == "correction"
                        else None
                    ),
                }
            )
    return recorded


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="frontend/fixtures")
    parser.add_argument("--tmp", default="/tmp/radeval-fixture-study")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tmp = Path(args.tmp)
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)

    spans = build_span_fixtures()
    (out / "span_fixtures.json").write_text(json.dumps(spans, indent=2) + "\n")
    payloads = build_payload_fixtures(tmp)
    (out / "payload_fixtures.json").write_text(json.dumps(payloads, indent=2) + "\n")
    reasons = {
        "reasons": [r.value for r in EditReason],
        "labels": {r.value: label for r, label in REASON_LABELS.items()},
    }
    (out / "reasons.json").write_text(json.dumps(reasons, indent=2) + "\n")
    schema_text = resources.files("radeval.data").joinpath("service.schema.json").read_text()
    (out / "service.schema.json").write_text(schema_text)
    print(f"wrote {len(spans)} span fixtures, {len(payloads)} payload fixtures -> {out}")


if __name__ == "__main__":
    main()
