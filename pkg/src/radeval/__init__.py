"""radeval: radiology-report evaluation and blinded annotation toolkit.

Subpackages by concern: `corpus` (ingest, sectioning, filters, weights,
sampling), `labeler` (rule-based finding extraction), `metrics` (NLG and
clinical metrics, bootstrap CIs), `decoder` (beam search, nucleus
sampling, sampling ensembles), `workflow` (blinded tasks, event-sourced
responses), `analysis` (result aggregation and export), `service` (HTTP
interface), `cli` (command line).
"""

__version__ = "0.1.0"
