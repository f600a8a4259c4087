"""Command-line entry points for the corpus pipeline, metric scoring,
decoding simulation, study task management, analysis, and the service."""

from __future__ import annotations

import csv
import json
import sys
import time
from pathlib import Path

import click

from . import analysis as analysis_mod
from . import corpus as corpus_mod
from . import decoder as decoder_mod
from . import labeler as labeler_mod
from . import metrics as metrics_mod
from .events import EventLog
from .workflow import (
    RaterProfile,
    WorkflowStore,
    assign_raters,
    generate_correction_tasks,
    generate_preference_tasks,
)


@click.group()
def main():
    """Radiology-report evaluation toolkit."""


# ---------------------------------------------------------------------------
# Corpus pipeline
# ---------------------------------------------------------------------------

@main.command()
@click.argument("path", type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["jsonl", "csv"]), default="jsonl")
@click.option("--out", type=click.Path(), required=True, help="Normalized corpus handle to write.")
def ingest(path, fmt, out):
    """Ingest a corpus file, reporting rejected records with line numbers."""
    result = corpus_mod.ingest_corpus(path, format=fmt)
    corpus_mod.save_corpus(result.corpus, out)
    click.echo(f"admitted {len(result.corpus)} case(s) -> {out}")
    for rejection in result.rejections:
        click.echo(
            f"rejected line {rejection.line}"
            f" ({rejection.case_id or '?'}): {rejection.reason}",
            err=True,
        )
    if result.rejections:
        click.echo(f"{len(result.rejections)} rejection(s)", err=True)


@main.command("filter-train")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--lexicon", type=click.Path(exists=True), default=None,
              help="Prior-reference phrase list (default: packaged).")
def filter_train(corpus_path, out, lexicon):
    """Apply the training-set filters (lateral view, no impression, prior
    references). VALIDATION/TEST are untouched."""
    corp = corpus_mod.load_corpus(corpus_path)
    phrases = corpus_mod.load_prior_reference_lexicon(lexicon)
    result = corpus_mod.filter_training_set(corp, phrases)
    corpus_mod.save_corpus(result.corpus, out)
    by_reason: dict[str, int] = {}
    for removal in result.removed:
        by_reason[removal.reason] = by_reason.get(removal.reason, 0) + 1
        click.echo(f"removed {removal.case_id}: {removal.reason}", err=True)
    click.echo(
        f"kept {len(result.corpus)} case(s), removed {len(result.removed)} "
        f"({json.dumps(by_reason, sort_keys=True)}) -> {out}"
    )


_LABEL_CHAR = {
    labeler_mod.LabelValue.POSITIVE: "P",
    labeler_mod.LabelValue.NEGATIVE: "N",
    labeler_mod.LabelValue.UNCERTAIN: "U",
    labeler_mod.LabelValue.NOT_MENTIONED: "",
}


@main.command()
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True, help="labels.csv")
@click.option("--corpus-out", type=click.Path(), default=None,
              help="Also write the corpus handle with derived strata.")
@click.option("--lexicon", type=click.Path(exists=True), default=None)
def label(corpus_path, out, corpus_out, lexicon):
    """Run the rule-based labeler over every corpus report."""
    corp = corpus_mod.load_corpus(corpus_path)
    lex = labeler_mod.load_lexicon(lexicon) if lexicon else labeler_mod.default_lexicon()
    categories = list(labeler_mod.FindingCategory)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["case_id", "report_id", *[c.value for c in categories]])
        for case in corp.cases():
            report = corp.get_report(case.case_id)
            labels = labeler_mod.label_report(report, lex)
            writer.writerow(
                [case.case_id, report.report_id, *[_LABEL_CHAR[labels[c]] for c in categories]]
            )
    click.echo(f"labeled {len(corp)} report(s) -> {out}")
    if corpus_out:
        labeled = corpus_mod.derive_strata(
            corp, lambda r: labeler_mod.derive_abnormality(labeler_mod.label_report(r, lex))
        )
        corpus_mod.save_corpus(labeled, corpus_out)
        click.echo(f"strata derived -> {corpus_out}")


@main.command()
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True, help="weights.csv")
@click.option("--split", type=click.Choice([s.value for s in corpus_mod.Split]), default="TRAIN")
def weights(corpus_path, out, split):
    """Inverse-prevalence example weights for the chosen split."""
    corp = corpus_mod.load_corpus(corpus_path)
    rows = corpus_mod.compute_example_weights(corp, corpus_mod.Split(split))
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["case_id", "dataset_tag", "stratum", "weight"])
        for w in rows:
            writer.writerow([w.case_id, w.dataset_tag.value, w.stratum.value, f"{w.weight:.6f}"])
    click.echo(f"wrote {len(rows)} weight(s) -> {out}")


@main.command()
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--normal", type=int, required=True)
@click.option("--abnormal", type=int, required=True)
@click.option("--seed", type=int, required=True)
@click.option("--split", type=click.Choice([s.value for s in corpus_mod.Split]), default=None)
@click.option("--out", type=click.Path(), default="-", help="Manifest JSON ('-' for stdout).")
def sample(corpus_path, normal, abnormal, seed, split, out):
    """Deterministic stratified sample; the manifest records the seed and
    PRNG so the draw is auditable."""
    corp = corpus_mod.load_corpus(corpus_path)
    ids = corpus_mod.stratified_sample(
        corp, normal, abnormal, seed, corpus_mod.Split(split) if split else None
    )
    manifest = {
        "seed": seed,
        "prng": "numpy.random.default_rng (PCG64)",
        "n_normal": normal,
        "n_abnormal": abnormal,
        "split": split,
        "case_ids": ids,
    }
    text = json.dumps(manifest, indent=2, sort_keys=True)
    if out == "-":
        click.echo(text)
    else:
        Path(out).write_text(text + "\n", encoding="utf-8")
        click.echo(f"sampled {len(ids)} case(s) -> {out}")


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def _load_report_texts(path):
    docs = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            text = " ".join(
                part for part in (record.get("findings", ""), record.get("impression", "")) if part
            )
            docs[record["report_id"]] = text
    return docs


def _load_graphs(path):
    graphs = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            graphs[record["report_id"]] = metrics_mod.AnnotationGraph.from_dict(record)
    return graphs


@main.command()
@click.option("--pred", type=click.Path(exists=True), required=True)
@click.option("--ref", type=click.Path(exists=True), required=True)
@click.option("--metrics", "metric_names", default="bleu4,rouge,cider,f1-all,f1-top5")
@click.option("--pred-graphs", type=click.Path(exists=True), default=None)
@click.option("--ref-graphs", type=click.Path(exists=True), default=None)
@click.option("--bootstrap", "n_resamples", type=int, default=1000)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), required=True, help="metrics.json")
def score(pred, ref, metric_names, pred_graphs, ref_graphs, n_resamples, seed, out):
    """Automated metric suite for aligned prediction / reference JSONL files
    (records of {report_id, findings, impression})."""
    pred_texts = _load_report_texts(pred)
    ref_texts = _load_report_texts(ref)
    if set(pred_texts) != set(ref_texts):
        raise click.ClickException("pred and ref report_ids do not match")
    report_ids = sorted(pred_texts)
    cand_tokens = [metrics_mod.tokenize(pred_texts[rid]) for rid in report_ids]
    ref_tokens = [metrics_mod.tokenize(ref_texts[rid]) for rid in report_ids]

    lex = labeler_mod.default_lexicon()
    requested = [m.strip() for m in metric_names.split(",") if m.strip()]
    needs_labels = {"f1-all", "f1-top5"} & set(requested)
    if needs_labels:
        pred_labels = [labeler_mod.label_report(pred_texts[rid], lex) for rid in report_ids]
        ref_labels = [labeler_mod.label_report(ref_texts[rid], lex) for rid in report_ids]

    graph_pairs = None
    if "graph-f1" in requested:
        if not pred_graphs or not ref_graphs:
            raise click.ClickException("graph-f1 requires --pred-graphs and --ref-graphs")
        pg, rg = _load_graphs(pred_graphs), _load_graphs(ref_graphs)
        graph_pairs = [(pg[rid], rg[rid]) for rid in report_ids if rid in pg and rid in rg]

    def metric_fn(name):
        if name == "bleu4":
            return lambda idx: metrics_mod.bleu4(
                [cand_tokens[i] for i in idx], [ref_tokens[i] for i in idx]
            )
        if name == "rouge":
            return lambda idx: metrics_mod.corpus_rouge_l(
                [cand_tokens[i] for i in idx], [ref_tokens[i] for i in idx]
            )
        if name == "cider":
            return lambda idx: metrics_mod.cider_d(
                [cand_tokens[i] for i in idx], [ref_tokens[i] for i in idx],
                [ref_tokens[i] for i in idx],
            )
        if name in ("f1-all", "f1-top5"):
            cats = (
                tuple(labeler_mod.FindingCategory)
                if name == "f1-all"
                else labeler_mod.TOP5_CATEGORIES
            )
            return lambda idx: metrics_mod.micro_f1(
                [pred_labels[i] for i in idx], [ref_labels[i] for i in idx], cats
            ).f1
        if name == "graph-f1":
            return lambda idx: metrics_mod.corpus_graph_f1(
                [graph_pairs[i][0] for i in idx], [graph_pairs[i][1] for i in idx]
            ).entity_f1
        raise click.ClickException(f"unknown metric {name!r}")

    results = {}
    for name in requested:
        fn = metric_fn(name)
        n_items = len(graph_pairs) if name == "graph-f1" else len(report_ids)
        ci = metrics_mod.bootstrap_metric_ci(n_items, fn, n_resamples, 0.95, seed)
        results[name] = {"point": ci.point, "ci_lower": ci.lower, "ci_upper": ci.upper}

    by_category = {}
    if needs_labels:
        for category in labeler_mod.FindingCategory:
            r = metrics_mod.micro_f1(pred_labels, ref_labels, (category,))
            by_category[category.value] = {
                "f1": r.f1, "precision": r.precision, "recall": r.recall,
            }

    # metric names at the top level, per the metrics.json interface
    document = dict(results)
    document["by_category"] = by_category
    document["metadata"] = {
        "n_reports": len(report_ids),
        "bootstrap_resamples": n_resamples,
        "seed": seed,
        "rouge_l_beta": metrics_mod.ROUGE_L_BETA,
    }
    Path(out).write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    click.echo(f"wrote {out}")


# ---------------------------------------------------------------------------
# Decoding simulation
# ---------------------------------------------------------------------------

@main.command("decode-sim")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True,
              help="Toy Markov model JSON.")
@click.option("--beam", type=int, default=None, help="Beam search with this width.")
@click.option("--nucleus", type=float, default=None, help="Nucleus sampling with this p.")
@click.option("--samples", type=int, default=decoder_mod.DEFAULT_N_SAMPLES)
@click.option("--seed", type=int, default=0)
@click.option("--max-length", type=int, default=decoder_mod.DEFAULT_MAX_LENGTH)
@click.option("--ensemble", is_flag=True,
              help="With --nucleus: label each sample and print category fractions.")
def decode_sim(model_path, beam, nucleus, samples, seed, max_length, ensemble):
    """Run the decoder against a toy model file."""
    if (beam is None) == (nucleus is None):
        raise click.ClickException("choose exactly one of --beam or --nucleus")
    model = decoder_mod.ToyMarkovModel.load(model_path)
    if beam is not None:
        config = decoder_mod.DecodeConfig(beam_width=beam, max_length=max_length, seed=seed)
        for hyp in decoder_mod.beam_search(model, None, config):
            click.echo(json.dumps(
                {"tokens": list(hyp.tokens), "log_likelihood": hyp.log_likelihood}
            ))
        return
    config = decoder_mod.DecodeConfig(
        nucleus_p=nucleus, n_samples=samples, max_length=max_length, seed=seed
    )
    if ensemble:
        fractions = decoder_mod.ensemble_condition_probabilities(
            model, None, config, lambda text: labeler_mod.label_report(text)
        )
        click.echo(json.dumps(
            {getattr(c, "value", str(c)): f for c, f in sorted(
                fractions.items(), key=lambda kv: getattr(kv[0], "value", str(kv[0]))
            )},
            indent=2,
        ))
        return
    import numpy as np

    rng = np.random.default_rng(seed)
    for _ in range(samples):
        hyp = decoder_mod.nucleus_sample(model, None, config, rng=rng)
        click.echo(json.dumps(
            {"tokens": list(hyp.tokens), "log_likelihood": hyp.log_likelihood}
        ))


# ---------------------------------------------------------------------------
# Study tasks
# ---------------------------------------------------------------------------

def _open_study(study_dir, fsync=True) -> WorkflowStore:
    study = Path(study_dir)
    study.mkdir(parents=True, exist_ok=True)
    return WorkflowStore(EventLog(study / "events.log", fsync=fsync))


def _load_candidate_reports(path):
    docs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            docs.append(
                corpus_mod.ReportDocument(
                    report_id=record["report_id"],
                    case_id=record["case_id"],
                    findings=corpus_mod.normalize_whitespace(record.get("findings", "")),
                    impression=corpus_mod.normalize_whitespace(record.get("impression", "")),
                    source=corpus_mod.Source.MODEL_GENERATED,
                )
            )
    return docs


@main.group()
def tasks():
    """Generate, assign, and export blinded evaluation tasks."""


@tasks.command("generate")
@click.option("--study", "study_dir", type=click.Path(), required=True,
              help="Study directory (corpus.jsonl, candidates.jsonl, events.log).")
@click.option("--phase", type=click.Choice(["preference", "correction", "collaboration"]),
              required=True)
@click.option("--seed", type=int, required=True)
@click.option("--variant", type=click.Choice(["first_completed", "all_variants"]),
              default="first_completed", help="Collaboration edit reconciliation.")
def tasks_generate(study_dir, phase, seed, variant):
    study = Path(study_dir)
    store = _open_study(study)
    if phase == "collaboration":
        new_tasks, exclusions = store.generate_collaboration_round(seed, variant)
        click.echo(f"generated {len(new_tasks)} collaboration task(s), "
                   f"{len(exclusions)} exclusion(s)")
        return
    corp = corpus_mod.load_corpus(study / "corpus.jsonl")
    candidates = _load_candidate_reports(study / "candidates.jsonl")
    for case in corp.cases():
        if case.case_id not in store.cases:
            store.register_case(case)
        report = corp.get_report(case.case_id)
        if report.report_id not in store.reports:
            store.register_report(report)
    for doc in candidates:
        if doc.report_id not in store.reports:
            store.register_report(doc)
    if phase == "preference":
        new_tasks = generate_preference_tasks(corp.cases(), corp.reports(), candidates, seed)
    else:
        new_tasks = generate_correction_tasks(corp.cases(), corp.reports() + candidates, seed)
    store.add_tasks(new_tasks)
    click.echo(f"generated {len(new_tasks)} {phase} task(s)")


@tasks.command("assign")
@click.option("--study", "study_dir", type=click.Path(exists=True), required=True)
@click.option("--raters", "raters_path", type=click.Path(exists=True), required=True,
              help="CSV with rater_id[,qualifications].")
@click.option("--per-task", type=int, default=2)
@click.option("--order-seed", type=int, default=0)
@click.option("--phase", default=None, help="Assign only this phase's tasks.")
def tasks_assign(study_dir, raters_path, per_task, order_seed, phase):
    store = _open_study(study_dir)
    profiles = []
    with open(raters_path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            profiles.append(RaterProfile(row["rater_id"], row.get("qualifications", "") or ""))
    for profile in profiles:
        if profile.rater_id not in store.raters:
            store.register_rater(profile)
    todo = [
        t for t in store.tasks.values()
        if t.task_id not in store.assignments and (phase is None or t.phase == phase)
    ]
    assigned = 0
    for task_phase in sorted({t.phase for t in todo}):
        phase_tasks = [t for t in todo if t.phase == task_phase]
        plan = assign_raters(
            phase_tasks, profiles, per_task, store.exclusions_for(task_phase)
        )
        store.assign(plan, order_seed)
        assigned += len(plan)
    click.echo(f"assigned {assigned} task(s) across {len(profiles)} rater(s)")


@tasks.command("export")
@click.option("--study", "study_dir", type=click.Path(exists=True), required=True)
@click.option("--format", "fmt", type=click.Choice(["jsonl"]), default="jsonl")
@click.option("--out", type=click.Path(), default="-")
def tasks_export(study_dir, fmt, out):
    """Export blinded task payloads (with assignments) as JSONL."""
    store = _open_study(study_dir)
    lines = []
    for task_id in sorted(store.tasks):
        lines.append(json.dumps({
            "task": store.task_payload(task_id),
            "raters": list(store.assignments.get(task_id, ())),
            "complete": store.is_complete(task_id),
        }, ensure_ascii=False, sort_keys=True))
    text = "\n".join(lines) + ("\n" if lines else "")
    if out == "-":
        click.echo(text, nl=False)
    else:
        Path(out).write_text(text, encoding="utf-8")
        click.echo(f"exported {len(lines)} task(s) -> {out}", err=True)


# ---------------------------------------------------------------------------
# Analysis and service
# ---------------------------------------------------------------------------

@main.command()
@click.option("--log", "log_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--bootstrap", "n_resamples", type=int, default=10_000)
@click.option("--seed", type=int, default=0)
def analyze(log_path, out_dir, n_resamples, seed):
    """Aggregate a study event log into result tables."""
    store = WorkflowStore(EventLog(log_path, fsync=False))
    summaries = {}
    for phase in ("preference", "collaboration"):
        phase_tasks = [
            t for t in store.tasks.values()
            if t.kind == "preference" and t.phase == phase
        ]
        if not phase_tasks:
            continue
        complete = [t.task_id for t in phase_tasks if store.is_complete(t.task_id)]
        incomplete = len(phase_tasks) - len(complete)
        if incomplete:
            click.echo(f"{phase}: excluding {incomplete} incomplete task(s)", err=True)
        if complete:
            summaries[phase] = analysis_mod.preference_distribution(
                store, phase=phase, task_ids=complete
            )
    if any(t.kind == "correction" for t in store.tasks.values()):
        summaries["errors"] = analysis_mod.error_rate_summary(store, n_resamples, seed=seed)
        summaries["error_types"] = analysis_mod.error_type_distribution(
            store, n_resamples, seed=seed
        )
        summaries["overlap"] = analysis_mod.overlap_analysis(store)
    if not summaries:
        raise click.ClickException("event log contains no analyzable tasks")
    paths = analysis_mod.export_results(
        summaries,
        out_dir,
        metadata={
            "bootstrap_resamples": n_resamples,
            "seed": seed,
            "confidence_level": 0.95,
            "generated_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        },
    )
    for name, path in sorted(paths.items()):
        click.echo(f"{name}: {path}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def serve(config_path):
    """Run the annotation service (config file with env overrides)."""
    import uvicorn

    from .service import ServiceConfig, create_app

    config = ServiceConfig.load(config_path)
    store = _open_study(Path(config.data_dir))
    app = create_app(store, config)
    uvicorn.run(app, host=config.listen_host, port=config.listen_port)


if __name__ == "__main__":
    sys.exit(main())
