#!/usr/bin/env python3
"""Generate a seeded synthetic corpus plus its defect manifest.

Usage:
    python scripts/generate_synthetic_corpus.py --out corpus.jsonl \
        --manifest manifest.json --cases 500 --seed 0
"""

import argparse

from radeval.synthetic import generate_corpus, write_corpus


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="corpus JSONL path")
    parser.add_argument("--manifest", required=True, help="manifest JSON path")
    parser.add_argument("--cases", type=int, default=500)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--prior-reference", type=int, default=120)
    parser.add_argument("--lateral", type=int, default=25)
    parser.add_argument("--missing-impression", type=int, default=15)
    args = parser.parse_args()

    synthetic = generate_corpus(
        n_cases=args.cases,
        seed=args.seed,
        n_prior_reference=args.prior_reference,
        n_lateral=args.lateral,
        n_missing_impression=args.missing_impression,
    )
    write_corpus(synthetic, args.out, args.manifest)
    defects = synthetic.manifest["defects"]
    print(
        f"wrote {len(synthetic.records)} records to {args.out} "
        f"(prior={len(defects['prior_reference'])}, lateral={len(defects['lateral'])}, "
        f"missing_impression={len(defects['missing_impression'])})"
    )


if __name__ == "__main__":
    main()
