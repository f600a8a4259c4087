#!/usr/bin/env python3
"""End-to-end demo: synthesize a corpus, run both evaluation phases with
simulated raters, build the collaboration round, and export results.

Usage:
    python scripts/run_demo_study.py --workdir demo_study --seed 0
"""

import argparse
import json
from pathlib import Path

import numpy as np

from radeval import corpus as corpus_mod
from radeval import labeler
from radeval.analysis import (
    error_rate_summary,
    error_type_distribution,
    export_results,
    overlap_analysis,
    preference_distribution,
)
from radeval.events import EventLog
from radeval.synthetic import ABNORMAL_TEMPLATES, generate_corpus, write_corpus
from radeval.workflow import (
    Choice,
    CorrectionResponse,
    EditReason,
    PreferenceResponse,
    RaterProfile,
    SpanEdit,
    WorkflowStore,
    assign_raters,
    generate_correction_tasks,
    generate_preference_tasks,
    text_sha256,
)


def simulated_candidate(report, rng) -> tuple[str, str]:
    """A 'model' report: usually the human text, sometimes a swapped one."""
    if rng.random() < 0.7:
        return report.findings, report.impression
    findings, impression = ABNORMAL_TEMPLATES[int(rng.integers(0, len(ABNORMAL_TEMPLATES)))]
    return findings, impression


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="demo_study")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--cases", type=int, default=40)
    args = parser.parse_args()
    rng = np.random.default_rng(args.seed)
    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    # corpus: small, defect-free, stratified
    synthetic = generate_corpus(
        n_cases=args.cases, seed=args.seed,
        n_prior_reference=0, n_lateral=0, n_missing_impression=0,
        n_prior_reference_test=0,
    )
    write_corpus(synthetic, workdir / "corpus.jsonl", workdir / "manifest.json")
    ingested = corpus_mod.ingest_corpus(workdir / "corpus.jsonl").corpus
    labeled = corpus_mod.derive_strata(
        ingested, lambda r: labeler.derive_abnormality(labeler.label_report(r))
    )

    store = WorkflowStore(EventLog(workdir / "events.log", fsync=False))
    candidates = []
    for case in labeled.cases():
        store.register_case(case)
        human = labeled.get_report(case.case_id)
        store.register_report(human)
        findings, impression = simulated_candidate(human, rng)
        candidate = corpus_mod.ReportDocument(
            report_id=f"{case.case_id}/candidate",
            case_id=case.case_id,
            findings=findings,
            impression=impression,
            source=corpus_mod.Source.MODEL_GENERATED,
        )
        store.register_report(candidate)
        candidates.append(candidate)

    raters = [RaterProfile(f"rater-{i:02d}", "certified radiologist") for i in range(6)]
    for rater in raters:
        store.register_rater(rater)

    pref_tasks = generate_preference_tasks(
        labeled.cases(), labeled.reports(), candidates, seed=args.seed
    )
    corr_tasks = generate_correction_tasks(
        labeled.cases(), labeled.reports() + candidates, seed=args.seed + 1
    )
    store.add_tasks(pref_tasks)
    store.add_tasks(corr_tasks)
    plan = assign_raters(pref_tasks + corr_tasks, raters, per_task=2)
    store.assign(plan, order_seed=args.seed)

    # simulated rater behaviour
    timestamp = 1_700_000_000.0
    for task in pref_tasks:
        for rater_id in plan[task.task_id]:
            roll = rng.random()
            choice = Choice.A if roll < 0.4 else Choice.B if roll < 0.8 else Choice.EQUIVALENT
            store.record_response(PreferenceResponse(
                task_id=task.task_id, rater_id=rater_id, choice=choice,
                justification="more clinically complete", timestamp=timestamp,
            ))
            timestamp += 1
    for task in corr_tasks:
        text = store.task_display_text(task.task_id)
        for rater_id in plan[task.task_id]:
            edits = ()
            if rng.random() < 0.3 and "." in text:
                end = text.index(".") + 1
                edits = (SpanEdit(
                    start=0, end=end,
                    reason=list(EditReason)[int(rng.integers(0, 3))],
                    clinically_significant=bool(rng.random() < 0.5),
                    replacement="Mild basilar atelectasis.",
                ),)
            store.record_response(CorrectionResponse(
                task_id=task.task_id, rater_id=rater_id, image_quality_ok=True,
                edits=edits, displayed_text_sha256=text_sha256(text), timestamp=timestamp,
            ))
            timestamp += 1

    collab_tasks, exclusions = store.generate_collaboration_round(seed=args.seed + 2)
    if collab_tasks:
        collab_plan = assign_raters(collab_tasks, raters, per_task=2, exclusions=exclusions)
        store.assign(collab_plan, order_seed=args.seed + 2)
        for task in collab_tasks:
            for rater_id in collab_plan[task.task_id]:
                roll = rng.random()
                choice = Choice.A if roll < 0.45 else Choice.B if roll < 0.9 else Choice.EQUIVALENT
                store.record_response(PreferenceResponse(
                    task_id=task.task_id, rater_id=rater_id, choice=choice,
                    justification="edited report reads better", timestamp=timestamp,
                ))
                timestamp += 1

    summaries = {
        "preference": preference_distribution(store),
        "errors": error_rate_summary(store, n_resamples=2000, seed=args.seed),
        "error_types": error_type_distribution(store, n_resamples=2000, seed=args.seed),
        "overlap": overlap_analysis(store),
    }
    if collab_tasks:
        summaries["collaboration"] = preference_distribution(store, phase="collaboration")
    paths = export_results(summaries, workdir / "results", metadata={"seed": args.seed})
    print(json.dumps({name: str(path) for name, path in paths.items()}, indent=2))


if __name__ == "__main__":
    main()
