"""Seeded synthetic corpus generator with a defect manifest.

Produces a desk-scale corpus in the external JSONL schema along with a
manifest recording exactly which cases carry which seeded defect
(missing impression, lateral-only view, prior-study references) and the
intended stratum of every case. Report texts come from templates whose
rule-based labels are known by construction, so the manifest's strata
are what the labeler must derive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# (findings sentences, impression) whose derived abnormality is 0
NORMAL_TEMPLATES = [
    (
        "The lungs are clear. The cardiomediastinal silhouette is within normal limits.",
        "No acute cardiopulmonary process.",
    ),
    (
        "Clear lungs without focal consolidation. No pleural effusion or pneumothorax.",
        "No acute process.",
    ),
    (
        "The lungs are well expanded and clear. No pleural effusion or pneumothorax is seen.",
        "No acute cardiopulmonary abnormality.",
    ),
    (
        "Heart size is normal. No focal consolidation, pneumothorax, or pleural effusion.",
        "Normal study.",
    ),
]

# templates whose derived abnormality is 1
ABNORMAL_TEMPLATES = [
    (
        "There is a small right-sided pleural effusion with adjacent atelectasis.",
        "Small right pleural effusion with atelectasis.",
    ),
    (
        "Moderate cardiomegaly is present. Mild pulmonary edema is seen.",
        "Cardiomegaly with mild pulmonary edema.",
    ),
    (
        "Patchy opacities in the right lower lobe concerning for pneumonia.",
        "Right lower lobe pneumonia.",
    ),
    (
        "There is a large left pneumothorax. A chest tube is in place.",
        "Large left pneumothorax.",
    ),
    (
        "A displaced fracture of the right sixth rib is noted. Lungs grossly clear.",
        "Right sixth rib fracture.",
    ),
]

# appended to findings; they trip the prior-reference filter without
# touching any finding-category phrase
PRIOR_REFERENCE_SENTENCES = [
    "As compared to the previous radiograph, there has been no significant change.",
    "The patient has been intubated since prior exam.",
    "Stable appearance compared to prior study.",
    "No interval change.",
]


@dataclass(frozen=True)
class SyntheticCorpus:
    records: tuple[dict, ...]
    manifest: dict


def _raw_report(findings: str, impression: str, rng: np.random.Generator) -> str:
    """Raw two-section report with randomized marker casing and padding."""
    def marker(name: str) -> str:
        styles = [name.upper(), name.capitalize(), name.lower()]
        style = styles[int(rng.integers(0, len(styles)))]
        lead = " " * int(rng.integers(0, 3))
        pad = " " * int(rng.integers(0, 2))
        return f"{lead}{style}{pad}:"

    gap = "\n" * int(rng.integers(1, 3))
    body_f = findings.replace(". ", ".\n" if rng.random() < 0.3 else ". ")
    return f"{marker('findings')} {body_f}{gap}{marker('impression')} {impression}"


def generate_corpus(
    n_cases: int = 500,
    seed: int = 0,
    n_prior_reference: int = 120,
    n_lateral: int = 25,
    n_missing_impression: int = 15,
    n_prior_reference_test: int = 10,
    train_fraction: float = 0.7,
    validation_fraction: float = 0.1,
    normal_fraction: float = 0.65,
) -> SyntheticCorpus:
    """Build a corpus of n_cases with the requested seeded defects.

    Defects are disjoint and live in the TRAIN split, except the
    prior-reference-in-TEST group, which exists to check that evaluation
    splits are never filtered. Every record's intended stratum (from its
    template family) is recorded in the manifest.
    """
    rng = np.random.default_rng(seed)
    n_train = int(n_cases * train_fraction)
    n_val = int(n_cases * validation_fraction)
    n_defects = n_prior_reference + n_lateral + n_missing_impression
    if n_defects > n_train:
        raise ValueError("more TRAIN defects than TRAIN cases")
    if n_prior_reference_test > n_cases - n_train - n_val:
        raise ValueError("more TEST prior references than TEST cases")

    case_ids = [f"case-{i:05d}" for i in range(n_cases)]
    splits = (
        ["TRAIN"] * n_train
        + ["VALIDATION"] * n_val
        + ["TEST"] * (n_cases - n_train - n_val)
    )

    train_ids = case_ids[:n_train]
    defect_ids = [train_ids[i] for i in rng.permutation(n_train)[:n_defects]]
    prior_ids = set(defect_ids[:n_prior_reference])
    lateral_ids = set(defect_ids[n_prior_reference : n_prior_reference + n_lateral])
    missing_ids = set(defect_ids[n_prior_reference + n_lateral :])
    test_ids = case_ids[n_train + n_val :]
    prior_test_ids = set(
        test_ids[i] for i in rng.permutation(len(test_ids))[:n_prior_reference_test]
    )

    records = []
    manifest_strata = {}
    manifest_tags = {}
    for case_id, split in zip(case_ids, splits):
        tag = "US" if rng.random() < 0.6 else "INDIA"
        is_normal = bool(rng.random() < normal_fraction)
        templates = NORMAL_TEMPLATES if is_normal else ABNORMAL_TEMPLATES
        findings, impression = templates[int(rng.integers(0, len(templates)))]

        if case_id in prior_ids or case_id in prior_test_ids:
            extra = PRIOR_REFERENCE_SENTENCES[
                int(rng.integers(0, len(PRIOR_REFERENCE_SENTENCES)))
            ]
            findings = f"{findings} {extra}"

        view = "LATERAL" if case_id in lateral_ids else ("AP" if rng.random() < 0.5 else "PA")

        if case_id in missing_ids:
            report = {"raw": f"FINDINGS: {findings}"}
        elif rng.random() < 0.5:
            report = {"raw": _raw_report(findings, impression, rng)}
        else:
            report = {"findings": findings, "impression": impression}

        records.append(
            {
                "case_id": case_id,
                "dataset_tag": tag,
                "image_ref": f"images/{case_id}.png",
                "view": view,
                "split": split,
                "report": report,
                "source": "HUMAN_ORIGINAL",
            }
        )
        manifest_strata[case_id] = "NORMAL" if is_normal else "ABNORMAL"
        manifest_tags[case_id] = tag

    manifest = {
        "seed": seed,
        "n_cases": n_cases,
        "prng": "numpy.random.default_rng (PCG64)",
        "defects": {
            "prior_reference": sorted(prior_ids),
            "lateral": sorted(lateral_ids),
            "missing_impression": sorted(missing_ids),
            "prior_reference_test": sorted(prior_test_ids),
        },
        "strata": manifest_strata,
        "dataset_tags": manifest_tags,
        "splits": dict(zip(case_ids, splits)),
    }
    return SyntheticCorpus(records=tuple(records), manifest=manifest)


def write_corpus(synthetic: SyntheticCorpus, corpus_path: str | Path, manifest_path: str | Path) -> None:
    corpus_path = Path(corpus_path)
    with corpus_path.open("w", encoding="utf-8", newline="\n") as fh:
        for record in synthetic.records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    Path(manifest_path).write_text(
        json.dumps(synthetic.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
