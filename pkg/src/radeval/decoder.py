"""Autoregressive decoding over a pluggable conditional token model.

The model contract is a single query: given an opaque conditioning
handle and a token prefix, return finite log-probabilities over the
vocabulary plus the end-of-sequence token. On top of that this module
provides exact sequence scoring, length-bounded beam search (default
width 3), nucleus sampling (default p=0.9), and the sampling ensemble
that turns 250 stochastic decodes into per-category condition
probabilities for ROC analysis.

Determinism: ties everywhere break lexicographically on token
sequences, and all sampling flows through a single numpy PCG64
generator seeded from the decode config.
"""

from __future__ import annotations

import json
import math
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .metrics import TokenSequence

EOS_TOKEN = "</s>"

DEFAULT_BEAM_WIDTH = 3
DEFAULT_NUCLEUS_P = 0.9
DEFAULT_N_SAMPLES = 250
DEFAULT_MAX_LENGTH = 128  # unstated upstream; recorded in config metadata

_PROB_SUM_TOLERANCE = 1e-6


class ModelContractError(ValueError):
    """The model returned a distribution that does not sum to 1."""


class OutOfVocabularyError(KeyError):
    """A scored token is absent from the model's distribution."""


class ConditionalTokenModel(Protocol):
    def next_token_logprobs(
        self, context, prefix: TokenSequence
    ) -> Mapping[str, float]: ...


@dataclass(frozen=True)
class DecodeConfig:
    beam_width: int = DEFAULT_BEAM_WIDTH
    nucleus_p: float = DEFAULT_NUCLEUS_P
    max_length: int = DEFAULT_MAX_LENGTH
    n_samples: int = DEFAULT_N_SAMPLES
    seed: int = 0

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if not (0.0 < self.nucleus_p <= 1.0):
            raise ValueError("nucleus_p must be in (0, 1]")
        if self.max_length < 1:
            raise ValueError("max_length must be >= 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


@dataclass(frozen=True)
class Hypothesis:
    tokens: TokenSequence
    log_likelihood: float


def _query(model: ConditionalTokenModel, context, prefix: TokenSequence) -> Mapping[str, float]:
    dist = model.next_token_logprobs(context, prefix)
    total = sum(math.exp(lp) for lp in dist.values())
    if abs(total - 1.0) > _PROB_SUM_TOLERANCE:
        raise ModelContractError(f"probabilities sum to {total}, not 1")
    return dist


def sequence_log_likelihood(
    model: ConditionalTokenModel, context, tokens: Sequence[str]
) -> float:
    """Sum of stepwise token log-probabilities, end-of-sequence included."""
    total = 0.0
    prefix: TokenSequence = ()
    for token in tokens:
        if token == EOS_TOKEN:
            raise OutOfVocabularyError("end-of-sequence token inside the sequence")
        dist = _query(model, context, prefix)
        if token not in dist:
            raise OutOfVocabularyError(token)
        total += dist[token]
        prefix = prefix + (token,)
    total += _query(model, context, prefix)[EOS_TOKEN]
    return total


def beam_search(
    model: ConditionalTokenModel, context, config: DecodeConfig
) -> list[Hypothesis]:
    """Length-bounded beam search with exact log-likelihoods.

    Per step every extension and every end-of-sequence candidate compete
    for the same beam_width slots (so beam_width 1 is exactly greedy
    argmax decoding); candidates that finish leave the beam for a
    completed pool. The search stops when the beam empties, when the
    pool's worst kept score strictly exceeds the best active score
    (extensions only add log-probs <= 0), or at max_length, where
    survivors are closed with their end-of-sequence term. Ties break
    lexicographically on the token sequence.
    """
    width = config.beam_width
    sort_key = lambda item: (-item[1], item[0])

    active: list[tuple[TokenSequence, float]] = [((), 0.0)]
    completed: list[tuple[TokenSequence, float]] = []

    for _ in range(config.max_length):
        merged: list[tuple[TokenSequence, float, bool]] = []
        for tokens, ll in active:
            dist = _query(model, context, tokens)
            for token in sorted(dist):
                lp = dist[token]
                if token == EOS_TOKEN:
                    merged.append((tokens, ll + lp, True))
                else:
                    merged.append((tokens + (token,), ll + lp, False))
        merged.sort(key=lambda item: (-item[1], item[0]))
        selected = merged[:width]
        active = [(tokens, ll) for tokens, ll, finished in selected if not finished]
        completed.extend((tokens, ll) for tokens, ll, finished in selected if finished)
        completed.sort(key=sort_key)
        del completed[width:]
        if not active:
            break
        if len(completed) == width and completed[-1][1] > active[0][1]:
            active = []
            break

    for tokens, ll in active:  # max_length reached: close with EOS
        completed.append((tokens, ll + _query(model, context, tokens)[EOS_TOKEN]))
    completed.sort(key=sort_key)
    return [
        Hypothesis(tokens, ll)
        for tokens, ll in completed[:width]
        if ll > float("-inf")
    ]


def nucleus_filter(logprobs: Mapping[str, float], p: float) -> dict[str, float]:
    """Probability-sorted smallest vocabulary prefix with mass >= p (the
    crossing token included), renormalized. Returns linear probabilities
    in nucleus order."""
    ranked = sorted(logprobs.items(), key=lambda kv: (-math.exp(kv[1]), kv[0]))
    kept: list[tuple[str, float]] = []
    mass = 0.0
    for token, lp in ranked:
        prob = math.exp(lp)
        kept.append((token, prob))
        mass += prob
        if mass >= p:
            break
    return {token: prob / mass for token, prob in kept}


def nucleus_sample(
    model: ConditionalTokenModel,
    context,
    config: DecodeConfig,
    rng: np.random.Generator | None = None,
) -> Hypothesis:
    """Sample one sequence with nucleus (top-p) sampling.

    Per step the next token is the first in nucleus order whose
    cumulative renormalized mass exceeds a single uniform draw from
    `rng` (fresh PCG64 from config.seed when not supplied). The reported
    log-likelihood uses the unfiltered model distribution, with the
    end-of-sequence term always included (forced at max_length).
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    tokens: TokenSequence = ()
    ll = 0.0
    for _ in range(config.max_length):
        dist = _query(model, context, tokens)
        nucleus = nucleus_filter(dist, config.nucleus_p)
        u = float(rng.random())
        chosen = None
        acc = 0.0
        for token, prob in nucleus.items():
            acc += prob
            if u < acc:
                chosen = token
                break
        if chosen is None:  # float slack at the tail
            chosen = next(reversed(nucleus))
        ll += dist[chosen]
        if chosen == EOS_TOKEN:
            return Hypothesis(tokens, ll)
        tokens = tokens + (chosen,)
    ll += _query(model, context, tokens)[EOS_TOKEN]
    return Hypothesis(tokens, ll)


def ensemble_condition_probabilities(
    model: ConditionalTokenModel,
    context,
    config: DecodeConfig,
    labeler: Callable[[str], Mapping],
) -> dict:
    """Estimate per-category condition probabilities from a sampling
    ensemble: draw n_samples reports via nucleus sampling, label each,
    and return the POSITIVE fraction per category.

    All draws share one generator seeded from config.seed, so the
    ensemble is reproducible and each fraction is an exact multiple of
    1/n_samples.
    """
    rng = np.random.default_rng(config.seed)
    counts: dict = {}
    for _ in range(config.n_samples):
        hyp = nucleus_sample(model, context, config, rng=rng)
        labels = labeler(" ".join(hyp.tokens))
        for category, value in labels.items():
            name = getattr(value, "name", value)
            if name == "POSITIVE":
                counts[category] = counts.get(category, 0) + 1
            else:
                counts.setdefault(category, 0)
    return {category: n / config.n_samples for category, n in counts.items()}


# ---------------------------------------------------------------------------
# Test backends
# ---------------------------------------------------------------------------

class ToyModelError(ValueError):
    """Malformed toy model file."""


def _log(prob: float) -> float:
    return math.log(prob) if prob > 0.0 else float("-inf")


class ToyMarkovModel:
    """First-order Markov chain over a small vocabulary, loaded from JSON.

    File schema: {"vocab": [...], "start": {token: prob},
    "transitions": {token: {token: prob}}}. Distributions are linear
    probabilities over vocab plus "</s>"; omitted tokens get probability
    zero, and a token with no transition row is absorbing (EOS with
    probability one). Each row must sum to 1 within 1e-6.
    """

    def __init__(self, vocab: Sequence[str], start: Mapping[str, float],
                 transitions: Mapping[str, Mapping[str, float]]):
        self.vocab = tuple(vocab)
        if EOS_TOKEN in self.vocab:
            raise ToyModelError(f"vocab must not contain {EOS_TOKEN!r}")
        self._rows: dict[str | None, dict[str, float]] = {}
        self._rows[None] = self._build_row(start, "start")
        for token, row in transitions.items():
            if token not in self.vocab:
                raise ToyModelError(f"transition row for unknown token {token!r}")
            self._rows[token] = self._build_row(row, f"transitions[{token}]")

    def _build_row(self, row: Mapping[str, float], where: str) -> dict[str, float]:
        support = set(self.vocab) | {EOS_TOKEN}
        unknown = set(row) - support
        if unknown:
            raise ToyModelError(f"{where}: unknown tokens {sorted(unknown)}")
        total = sum(row.values())
        if abs(total - 1.0) > _PROB_SUM_TOLERANCE:
            raise ToyModelError(f"{where}: probabilities sum to {total}, not 1")
        return {token: _log(float(row.get(token, 0.0))) for token in sorted(support)}

    @classmethod
    def from_dict(cls, payload: Mapping) -> "ToyMarkovModel":
        try:
            return cls(payload["vocab"], payload["start"], payload.get("transitions", {}))
        except KeyError as exc:
            raise ToyModelError(f"missing field {exc.args[0]!r}") from None

    @classmethod
    def load(cls, path: str | Path) -> "ToyMarkovModel":
        return cls.from_dict(json.loads(Path(path).read_text("utf-8")))

    def next_token_logprobs(self, context, prefix: TokenSequence) -> dict[str, float]:
        key = prefix[-1] if prefix else None
        row = self._rows.get(key)
        if row is None:  # absorbing state
            row = {t: float("-inf") for t in self.vocab}
            row[EOS_TOKEN] = 0.0
        return dict(row)


class LineProtocolModel:
    """Adapter for an external generator speaking the line protocol over a
    subprocess pipe: one JSON request {"prefix": [...], "context_id": ...}
    per line, one JSON response {"logprobs": {token: value}} per line."""

    def __init__(self, argv: Sequence[str]):
        self._proc = subprocess.Popen(
            list(argv),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def next_token_logprobs(self, context, prefix: TokenSequence) -> dict[str, float]:
        request = json.dumps({"prefix": list(prefix), "context_id": context})
        assert self._proc.stdin is not None and self._proc.stdout is not None
        self._proc.stdin.write(request + "\n")
        self._proc.stdin.flush()
        line = self._proc.stdout.readline()
        if not line:
            raise ModelContractError("model subprocess closed its output")
        response = json.loads(line)
        return {str(t): float(lp) for t, lp in response["logprobs"].items()}

    def close(self) -> None:
        if self._proc.stdin:
            self._proc.stdin.close()
        self._proc.wait(timeout=10)

    def __enter__(self) -> "LineProtocolModel":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
