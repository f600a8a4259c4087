"""Analysis tests: unblinded preference tallies, engineered error-rate
reproductions (exact), overlap set algebra, export round-trips, and
order-independence of every aggregate."""

import json
from importlib import resources

import numpy as np
import pytest

from conftest import assessment
from radeval.analysis import (
    BlindingIntegrityError,
    IncompleteTaskError,
    MissingEvaluationError,
    error_rate_summary,
    error_type_distribution,
    export_results,
    import_results,
    overlap_analysis,
    preference_distribution,
)
from radeval.corpus import DatasetTag, Source, Stratum
from radeval.events import EventLog
from radeval.metrics import bootstrap_ci
from radeval.workflow import (
    Choice,
    EditReason,
    PreferenceResponse,
    RaterProfile,
    WorkflowStore,
    assign_raters,
    generate_preference_tasks,
)

TS = 1_700_000_000.0


def _preference_store(tmp_path, n_cases, chooser, tag=DatasetTag.INDIA,
                      stratum=Stratum.ABNORMAL, log_name="pref.log"):
    """chooser(case_index, rater_index, task, store) -> Choice"""
    from radeval.corpus import CaseRecord, ReportDocument, Split, View

    store = WorkflowStore(EventLog(tmp_path / log_name, fsync=False))
    raters = [RaterProfile(f"r{i}") for i in range(4)]
    for rater in raters:
        store.register_rater(rater)
    cases, humans, candidates = [], [], []
    for i in range(n_cases):
        case = CaseRecord(f"c{i:05d}", tag, f"img/{i}.png", View.PA, stratum, Split.TEST)
        cases.append(case)
        store.register_case(case)
        human = ReportDocument(f"c{i:05d}/h", case.case_id, "Findings.", "Human.", Source.HUMAN_ORIGINAL)
        cand = ReportDocument(f"c{i:05d}/m", case.case_id, "Findings.", "Model.", Source.MODEL_GENERATED)
        humans.append(human)
        candidates.append(cand)
        store.register_report(human)
        store.register_report(cand)
    tasks = generate_preference_tasks(cases, humans, candidates, seed=7)
    store.add_tasks(tasks)
    plan = assign_raters(tasks, raters, per_task=2)
    store.assign(plan)
    for i, task in enumerate(tasks):
        for j, rater_id in enumerate(plan[task.task_id]):
            store.record_response(
                PreferenceResponse(task.task_id, rater_id, chooser(i, j, task, store),
                                   "justified", TS + i * 10 + j)
            )
    return store, tasks, plan


def _candidate_slot(task, store):
    return (
        Choice.A
        if store.reports[task.slot_a].source is Source.MODEL_GENERATED
        else Choice.B
    )


def _original_slot(task, store):
    return Choice.A if _candidate_slot(task, store) is Choice.B else Choice.B


# ---------------------------------------------------------------------------
# preference distribution
# ---------------------------------------------------------------------------

def test_both_choose_candidate_gives_fraction_one(tmp_path):
    store, _, _ = _preference_store(
        tmp_path, 2, lambda i, j, task, s: _candidate_slot(task, s)
    )
    summary = preference_distribution(store)
    stats = summary.groups[("INDIA", "ABNORMAL")]
    assert stats.candidate_preferred == 1.0
    assert stats.original_preferred == 0.0
    assert stats.equivalent == 0.0
    assert stats.both_prefer_original == 0.0
    assert stats.at_least_one_candidate_equivalent_or_better == 1.0


def test_engineered_ninety_percent_agreement_bucket(tmp_path):
    # in 90% of cases at least one rater rates the candidate
    # equivalent-or-better; in the rest both prefer the original
    def chooser(i, j, task, store):
        if i < 90:
            return _candidate_slot(task, store) if j == 0 else _original_slot(task, store)
        return _original_slot(task, store)

    store, _, _ = _preference_store(tmp_path, 100, chooser, stratum=Stratum.NORMAL)
    stats = preference_distribution(store).groups[("INDIA", "NORMAL")]
    assert stats.at_least_one_candidate_equivalent_or_better == pytest.approx(0.90, abs=0)
    assert stats.both_prefer_original == pytest.approx(0.10, abs=0)
    assert stats.n_pairs == 100


def test_random_responses_match_tally_oracle(tmp_path):
    rng = np.random.default_rng(15)
    decisions = {}

    def chooser(i, j, task, store):
        roll = rng.random()
        if roll < 0.4:
            choice = _candidate_slot(task, store)
            kind = "candidate"
        elif roll < 0.8:
            choice = _original_slot(task, store)
            kind = "original"
        else:
            choice = Choice.EQUIVALENT
            kind = "equivalent"
        decisions[(i, j)] = kind
        return choice

    n = 500
    store, _, _ = _preference_store(tmp_path, n, chooser)
    stats = preference_distribution(store).groups[("INDIA", "ABNORMAL")]
    tally = {"candidate": 0, "original": 0, "equivalent": 0}
    for kind in decisions.values():
        tally[kind] += 1
    assert stats.candidate_preferred == pytest.approx(tally["candidate"] / (2 * n), abs=0)
    assert stats.original_preferred == pytest.approx(tally["original"] / (2 * n), abs=0)
    assert stats.equivalent == pytest.approx(tally["equivalent"] / (2 * n), abs=0)
    both_original = sum(
        1 for i in range(n)
        if decisions[(i, 0)] == "original" and decisions[(i, 1)] == "original"
    )
    assert stats.both_prefer_original == pytest.approx(both_original / n, abs=0)
    assert stats.candidate_preferred + stats.original_preferred + stats.equivalent == pytest.approx(
        1.0, abs=1e-9
    )


def test_incomplete_task_is_an_error(tmp_path):
    store, tasks, plan = _preference_store(tmp_path, 2, lambda i, j, t, s: Choice.EQUIVALENT)
    extra = WorkflowStore(EventLog(tmp_path / "x.log", fsync=False))
    # drop one response by rebuilding a partial store
    for event in store.log.iter_events():
        if event["kind"] == "response_recorded" and event["seq"] == len(store.log) - 1:
            continue
        extra._apply(event)
    with pytest.raises(IncompleteTaskError):
        preference_distribution(extra)


def test_slot_key_integrity_check(tmp_path):
    store, tasks, _ = _preference_store(tmp_path, 1, lambda i, j, t, s: Choice.EQUIVALENT)
    store.task_slot_keys[tasks[0].task_id] = "tampered"
    with pytest.raises(BlindingIntegrityError):
        preference_distribution(store)


# ---------------------------------------------------------------------------
# error rates (engineered, exact)
# ---------------------------------------------------------------------------

def test_three_reports_zero_one_two_errors(build_correction_study):
    # 3 candidate assessments with 0, 1, 2 errors; pad to whole cases
    spec = [
        {
            "candidate": [assessment(), assessment(n_finding=1)],
            "original": [assessment(), assessment()],
        },
        {
            "candidate": [assessment(n_finding=2), assessment()],
            "original": [assessment(), assessment()],
        },
    ]
    store = build_correction_study(spec)
    stats = error_rate_summary(store, n_resamples=200).groups[
        ("INDIA", "ABNORMAL", "MODEL_GENERATED")
    ]
    assert stats.n_assessments == 4
    assert stats.mean_errors.point == pytest.approx(3 / 4, abs=0)
    assert stats.frac_with_error.point == pytest.approx(2 / 4, abs=0)


def test_engineered_paper_means_twelve_nine(build_correction_study):
    """100 candidate assessments over 50 IND1 abnormal cases engineered to
    12 total errors, 9 clinically significant; originals carry 15/11."""
    spec = []
    cand_assessments = (
        [assessment(n_finding=1, n_significant=1)] * 9        # 9 significant singles
        + [assessment(n_finding=1)] * 3                        # 3 non-significant singles
        + [assessment()] * 88
    )
    orig_assessments = (
        [assessment(n_finding=1, n_significant=1)] * 11
        + [assessment(n_finding=1)] * 4
        + [assessment()] * 85
    )
    for i in range(50):
        spec.append(
            {
                "candidate": [cand_assessments[2 * i], cand_assessments[2 * i + 1]],
                "original": [orig_assessments[2 * i], orig_assessments[2 * i + 1]],
            }
        )
    store = build_correction_study(spec)
    summary = error_rate_summary(store, n_resamples=100)
    cand = summary.groups[("INDIA", "ABNORMAL", "MODEL_GENERATED")]
    orig = summary.groups[("INDIA", "ABNORMAL", "HUMAN_ORIGINAL")]
    assert cand.n_assessments == 100
    assert cand.mean_errors.point == pytest.approx(0.12, abs=0)
    assert cand.mean_significant.point == pytest.approx(0.09, abs=0)
    assert orig.mean_errors.point == pytest.approx(0.15, abs=0)
    assert orig.mean_significant.point == pytest.approx(0.11, abs=0)
    assert cand.mean_significant.point <= cand.mean_errors.point


def test_error_rate_cis_match_independent_resampler(build_correction_study):
    rng = np.random.default_rng(61)
    counts = [int(rng.integers(0, 4)) for _ in range(40)]
    spec = []
    for i in range(0, 40, 4):
        spec.append(
            {
                "candidate": [assessment(n_finding=counts[i]), assessment(n_finding=counts[i + 1])],
                "original": [assessment(n_finding=counts[i + 2]), assessment(n_finding=counts[i + 3])],
            }
        )
    store = build_correction_study(spec)
    stats = error_rate_summary(store, n_resamples=2000, seed=17).groups[
        ("INDIA", "ABNORMAL", "MODEL_GENERATED")
    ]
    # the candidate assessments in store order: per case, two raters
    cand_counts = [float(counts[i]) for base in range(0, 40, 4) for i in (base, base + 1)]
    oracle = bootstrap_ci(cand_counts, "mean", n_resamples=2000, seed=17)
    assert stats.mean_errors.point == pytest.approx(oracle.point, abs=1e-12)
    assert stats.mean_errors.lower == pytest.approx(oracle.lower, abs=1e-12)
    assert stats.mean_errors.upper == pytest.approx(oracle.upper, abs=1e-12)


def test_adding_zero_error_case_never_increases_means(build_correction_study):
    base_spec = [
        {
            "candidate": [assessment(n_finding=2, n_significant=1), assessment(n_finding=1)],
            "original": [assessment(), assessment()],
        }
    ]
    extended_spec = base_spec + [
        {"candidate": [assessment(), assessment()], "original": [assessment(), assessment()]}
    ]
    small = error_rate_summary(build_correction_study(base_spec, "a.log"), n_resamples=50)
    large = error_rate_summary(build_correction_study(extended_spec, "b.log"), n_resamples=50)
    key = ("INDIA", "ABNORMAL", "MODEL_GENERATED")
    assert large.groups[key].mean_errors.point <= small.groups[key].mean_errors.point
    assert large.groups[key].frac_with_error.point <= small.groups[key].frac_with_error.point


# ---------------------------------------------------------------------------
# error types
# ---------------------------------------------------------------------------

def test_single_reason_leaves_others_zero(build_correction_study):
    spec = [
        {
            "candidate": [assessment(n_finding=2), assessment(n_finding=1)],
            "original": [assessment(), assessment()],
        }
    ]
    store = build_correction_study(spec)
    stats = error_type_distribution(store, n_resamples=50).groups[
        ("INDIA", "ABNORMAL", "MODEL_GENERATED")
    ]
    assert stats.mean_by_reason["INCORRECT_FINDING"].point == pytest.approx(1.5, abs=0)
    assert stats.mean_by_reason["INCORRECT_LOCATION"].point == 0.0
    assert stats.mean_by_reason["INCORRECT_SEVERITY"].point == 0.0


def test_engineered_reason_means_27_8_6(build_correction_study):
    """100 US abnormal candidate assessments with reason totals 27/8/6."""
    per_assessment = (
        [assessment(n_finding=2, n_location=1)] * 5      # 10 finding, 5 location
        + [assessment(n_finding=1, n_location=1)] * 3     # 3 finding, 3 location
        + [assessment(n_finding=1, n_severity=1)] * 6     # 6 finding, 6 severity
        + [assessment(n_finding=1)] * 8                   # 8 finding
        + [assessment()] * 78
    )
    assert len(per_assessment) == 100
    spec = []
    for i in range(50):
        spec.append(
            {
                "tag": DatasetTag.US,
                "candidate": [per_assessment[2 * i], per_assessment[2 * i + 1]],
                "original": [assessment(), assessment()],
            }
        )
    store = build_correction_study(spec)
    summary = error_type_distribution(store, n_resamples=50)
    stats = summary.groups[("US", "ABNORMAL", "MODEL_GENERATED")]
    assert stats.mean_by_reason["INCORRECT_FINDING"].point == pytest.approx(0.27, abs=0)
    assert stats.mean_by_reason["INCORRECT_LOCATION"].point == pytest.approx(0.08, abs=0)
    assert stats.mean_by_reason["INCORRECT_SEVERITY"].point == pytest.approx(0.06, abs=0)
    # totals consistent with the error-rate view: 0.41 mean errors
    rates = error_rate_summary(store, n_resamples=50)
    assert rates.groups[("US", "ABNORMAL", "MODEL_GENERATED")].mean_errors.point == pytest.approx(
        0.41, abs=0
    )


def test_error_types_random_match_tally_oracle(build_correction_study):
    rng = np.random.default_rng(3)
    blueprints = []
    for _ in range(20):
        blueprints.append(
            assessment(
                n_finding=int(rng.integers(0, 3)),
                n_location=int(rng.integers(0, 2)),
                n_severity=int(rng.integers(0, 2)),
            )
        )
    spec = [
        {"candidate": [blueprints[2 * i], blueprints[2 * i + 1]],
         "original": [assessment(), assessment()]}
        for i in range(10)
    ]
    store = build_correction_study(spec)
    stats = error_type_distribution(store, n_resamples=50).groups[
        ("INDIA", "ABNORMAL", "MODEL_GENERATED")
    ]
    for reason in EditReason:
        expected = sum(
            sum(1 for r, _ in bp if r is reason) for bp in blueprints
        ) / len(blueprints)
        assert stats.mean_by_reason[reason.value].point == pytest.approx(expected, abs=1e-12)


# ---------------------------------------------------------------------------
# overlap analysis
# ---------------------------------------------------------------------------

def test_disjoint_error_sets_full_non_overlap(build_correction_study):
    spec = [
        {"candidate": [assessment(n_finding=1, n_significant=1), assessment()],
         "original": [assessment(), assessment()]},
        {"candidate": [assessment(), assessment()],
         "original": [assessment(n_finding=1, n_significant=1), assessment()]},
    ]
    store = build_correction_study(spec)
    stats = overlap_analysis(store).groups["INDIA"]
    assert stats.significant_candidate_only == 1
    assert stats.significant_original_only == 1
    assert stats.significant_both == 0
    assert stats.significant_non_overlap_fraction == pytest.approx(1.0, abs=0)


def test_engineered_venn_seventy_nine_percent(build_correction_study):
    """100 significant-error IND1 cases: 44 candidate-only, 35
    original-only, 21 both -> 79% non-overlapping."""
    spec = []
    sig = assessment(n_finding=1, n_significant=1)
    for _ in range(44):
        spec.append({"candidate": [sig, assessment()], "original": [assessment(), assessment()]})
    for _ in range(35):
        spec.append({"candidate": [assessment(), assessment()], "original": [sig, assessment()]})
    for _ in range(21):
        spec.append({"candidate": [sig, assessment()], "original": [sig, assessment()]})
    store = build_correction_study(spec)
    stats = overlap_analysis(store).groups["INDIA"]
    assert stats.significant_candidate_only == 44
    assert stats.significant_original_only == 35
    assert stats.significant_both == 21
    assert stats.significant_non_overlap_fraction == pytest.approx(0.79, abs=0)


def test_overlap_random_sets_match_set_oracle(build_correction_study):
    rng = np.random.default_rng(8)
    flags = [(bool(rng.random() < 0.5), bool(rng.random() < 0.5)) for _ in range(30)]
    spec = []
    for cand_err, orig_err in flags:
        spec.append(
            {
                "candidate": [assessment(n_finding=1) if cand_err else assessment(), assessment()],
                "original": [assessment(n_finding=1) if orig_err else assessment(), assessment()],
            }
        )
    store = build_correction_study(spec)
    stats = overlap_analysis(store).groups["INDIA"]
    cand_set = {i for i, (c, _) in enumerate(flags) if c}
    orig_set = {i for i, (_, o) in enumerate(flags) if o}
    assert stats.candidate_only == len(cand_set - orig_set)
    assert stats.original_only == len(orig_set - cand_set)
    assert stats.both == len(cand_set & orig_set)
    assert stats.both <= min(len(cand_set), len(orig_set)) if cand_set and orig_set else True


def test_overlap_requires_both_sources(tmp_path, build_correction_study):
    store = build_correction_study(
        [{"candidate": [assessment(), assessment()], "original": [assessment(), assessment()]}]
    )
    # surgically remove the original-report responses
    partial = WorkflowStore(EventLog(tmp_path / "partial.log", fsync=False))
    original_task_ids = {
        t.task_id
        for t in store.tasks.values()
        if t.kind == "correction" and store.reports[t.report_id].source is Source.HUMAN_ORIGINAL
    }
    for event in store.log.iter_events():
        if (
            event["kind"] == "response_recorded"
            and event["response"]["task_id"] in original_task_ids
        ):
            continue
        partial._apply(event)
    with pytest.raises(MissingEvaluationError):
        overlap_analysis(partial)


# ---------------------------------------------------------------------------
# aggregation invariants
# ---------------------------------------------------------------------------

def test_aggregates_invariant_to_event_permutation(tmp_path, build_correction_study):
    spec = [
        {"candidate": [assessment(n_finding=1, n_significant=1), assessment()],
         "original": [assessment(n_location=1), assessment()]},
        {"candidate": [assessment(), assessment()],
         "original": [assessment(n_severity=2), assessment()]},
    ]
    store = build_correction_study(spec)
    events = store.log.read_all()

    # responses shuffled (structure events must still precede usage)
    structure = [e for e in events if e["kind"] != "response_recorded"]
    responses = [e for e in events if e["kind"] == "response_recorded"]
    rng = np.random.default_rng(1)
    shuffled = [responses[i] for i in rng.permutation(len(responses))]
    permuted = WorkflowStore(EventLog(tmp_path / "perm.log", fsync=False))
    for event in structure + shuffled:
        permuted._apply(event)

    base = error_rate_summary(store, n_resamples=100, seed=3)
    perm = error_rate_summary(permuted, n_resamples=100, seed=3)
    assert base == perm
    assert overlap_analysis(store) == overlap_analysis(permuted)


# ---------------------------------------------------------------------------
# export / import
# ---------------------------------------------------------------------------

def test_export_empty_study_header_only_csv(tmp_path):
    from radeval.analysis import ErrorSummary

    paths = export_results({"errors": ErrorSummary(groups={})}, tmp_path / "out")
    content = paths["errors"].read_text()
    assert content.splitlines() == ["dataset_tag,stratum,source,metric,value,ci_lower,ci_upper"]


def test_export_import_round_trip(tmp_path, build_correction_study):
    spec = [
        {"candidate": [assessment(n_finding=1, n_significant=1), assessment()],
         "original": [assessment(), assessment()]}
    ]
    store = build_correction_study(spec)
    summaries = {
        "errors": error_rate_summary(store, n_resamples=100),
        "error_types": error_type_distribution(store, n_resamples=100),
        "overlap": overlap_analysis(store),
    }
    paths = export_results(summaries, tmp_path / "out", metadata={"seed": 0})
    loaded = import_results(paths["json"])
    assert loaded["errors"] == summaries["errors"]
    assert loaded["error_types"] == summaries["error_types"]
    assert loaded["overlap"] == summaries["overlap"]


def test_export_validates_against_shipped_schema(tmp_path, build_correction_study):
    jsonschema = pytest.importorskip("jsonschema")
    spec = [
        {"candidate": [assessment(n_finding=1), assessment()],
         "original": [assessment(), assessment()]}
    ]
    store = build_correction_study(spec)
    summaries = {
        "errors": error_rate_summary(store, n_resamples=100),
        "error_types": error_type_distribution(store, n_resamples=100),
        "overlap": overlap_analysis(store),
    }
    paths = export_results(summaries, tmp_path / "out")
    document = json.loads(paths["json"].read_text())
    schema = json.loads(
        resources.files("radeval.data").joinpath("results.schema.json").read_text()
    )
    jsonschema.validate(document, schema)


def test_export_percentages_one_decimal_in_csv(tmp_path, build_correction_study):
    spec = [
        {"candidate": [assessment(n_finding=1), assessment(n_finding=1)],
         "original": [assessment(), assessment()]},
        {"candidate": [assessment(), assessment()],
         "original": [assessment(), assessment()]},
    ]
    store = build_correction_study(spec)
    paths = export_results(
        {"errors": error_rate_summary(store, n_resamples=100)}, tmp_path / "out"
    )
    rows = paths["errors"].read_text().splitlines()
    frac_rows = [r for r in rows if ",frac_with_error," in r]
    assert any(",50.0," in r for r in frac_rows)  # 2/4 assessments -> 50.0%
