"""Rule-based finding extraction from chest X-ray report text.

Scans report text for phrases from a versioned lexicon, assigns each
mention a polarity via sentence-scoped negation/uncertainty cues, folds
mentions into a per-category label vector over the 14 finding
categories, and derives the binary abnormality label used for corpus
stratification and example weighting.

The polarity rule is deliberately simple and fully testable: within a
sentence, an uncertainty cue within a 6-token window on either side of
the phrase marks the mention UNCERTAIN; otherwise a negation cue within
the 6 tokens preceding the phrase marks it NEGATIVE; otherwise POSITIVE.
Phrases may carry a lexicon polarity override (used for explicit-normal
statements such as "no acute cardiopulmonary process").
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence


class FindingCategory(Enum):
    ATELECTASIS = "atelectasis"
    CARDIOMEGALY = "cardiomegaly"
    CONSOLIDATION = "consolidation"
    EDEMA = "edema"
    ENLARGED_CARDIOMEDIASTINUM = "enlarged_cardiomediastinum"
    FRACTURE = "fracture"
    LUNG_LESION = "lung_lesion"
    LUNG_OPACITY = "lung_opacity"
    NO_FINDING = "no_finding"
    PLEURAL_EFFUSION = "pleural_effusion"
    PLEURAL_OTHER = "pleural_other"
    PNEUMONIA = "pneumonia"
    PNEUMOTHORAX = "pneumothorax"
    SUPPORT_DEVICES = "support_devices"


# categories that count as thoracic abnormalities for stratification
PATHOLOGY_CATEGORIES: tuple[FindingCategory, ...] = tuple(
    c
    for c in FindingCategory
    if c not in (FindingCategory.NO_FINDING, FindingCategory.SUPPORT_DEVICES)
)

# most prevalent categories, used for the "top 5" F1 subset
TOP5_CATEGORIES: tuple[FindingCategory, ...] = (
    FindingCategory.ATELECTASIS,
    FindingCategory.CARDIOMEGALY,
    FindingCategory.EDEMA,
    FindingCategory.CONSOLIDATION,
    FindingCategory.PLEURAL_EFFUSION,
)


class Polarity(Enum):
    POSITIVE = "POSITIVE"
    NEGATIVE = "NEGATIVE"
    UNCERTAIN = "UNCERTAIN"


class LabelValue(Enum):
    POSITIVE = "POSITIVE"
    NEGATIVE = "NEGATIVE"
    UNCERTAIN = "UNCERTAIN"
    NOT_MENTIONED = "NOT_MENTIONED"


_PRECEDENCE = {
    LabelValue.POSITIVE: 3,
    LabelValue.UNCERTAIN: 2,
    LabelValue.NEGATIVE: 1,
    LabelValue.NOT_MENTIONED: 0,
}

CUE_WINDOW = 6  # tokens


@dataclass(frozen=True)
class Mention:
    category: FindingCategory
    start: int  # char offsets, start-inclusive / end-exclusive
    end: int
    polarity: Polarity


class LabelVector(Mapping):
    """Per-category assignment over the 14 finding categories."""

    __slots__ = ("_values",)

    def __init__(self, values: Mapping[FindingCategory, LabelValue] | None = None):
        full = {c: LabelValue.NOT_MENTIONED for c in FindingCategory}
        if values:
            full.update(values)
        self._values = full

    def __getitem__(self, category: FindingCategory) -> LabelValue:
        return self._values[category]

    def __iter__(self) -> Iterator[FindingCategory]:
        return iter(FindingCategory)

    def __len__(self) -> int:
        return len(FindingCategory)

    def __eq__(self, other) -> bool:
        if isinstance(other, LabelVector):
            return self._values == other._values
        return NotImplemented

    def __repr__(self) -> str:
        mentioned = {
            c.value: v.name for c, v in self._values.items() if v is not LabelValue.NOT_MENTIONED
        }
        return f"LabelVector({mentioned})"


class LexiconError(ValueError):
    """Malformed lexicon file."""


@dataclass(frozen=True)
class LexiconEntry:
    category: FindingCategory
    phrase: str
    polarity_override: Polarity | None = None


@dataclass(frozen=True)
class Lexicon:
    version: str
    entries: tuple[LexiconEntry, ...]
    negation_cues: tuple[str, ...]
    uncertainty_cues: tuple[str, ...]


def parse_lexicon(text: str) -> Lexicon:
    """Parse the sectioned lexicon format.

    A `version:` header, then `[negation_cues]` / `[uncertainty_cues]`
    sections with one cue per line, and a `[phrases]` section with
    tab-separated `category<TAB>phrase[<TAB>polarity]` lines.
    """
    version = "unversioned"
    section = None
    entries: list[LexiconEntry] = []
    negation: list[str] = []
    uncertainty: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.lower().startswith("version:"):
            version = line.split(":", 1)[1].strip()
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in ("negation_cues", "uncertainty_cues", "phrases"):
                raise LexiconError(f"line {lineno}: unknown section [{section}]")
            continue
        if section == "negation_cues":
            negation.append(line.lower())
        elif section == "uncertainty_cues":
            uncertainty.append(line.lower())
        elif section == "phrases":
            parts = [p.strip() for p in line.split("\t")]
            if len(parts) < 2:
                raise LexiconError(f"line {lineno}: expected category<TAB>phrase")
            try:
                category = FindingCategory(parts[0].lower())
            except ValueError:
                raise LexiconError(f"line {lineno}: unknown category {parts[0]!r}") from None
            override = None
            if len(parts) >= 3 and parts[2]:
                try:
                    override = Polarity[parts[2].upper()]
                except KeyError:
                    raise LexiconError(f"line {lineno}: bad polarity {parts[2]!r}") from None
            entries.append(LexiconEntry(category, parts[1].lower(), override))
        else:
            raise LexiconError(f"line {lineno}: content outside any section")
    if not entries:
        raise LexiconError("lexicon has no phrase entries")
    return Lexicon(version, tuple(entries), tuple(negation), tuple(uncertainty))


def load_lexicon(path: str | Path | None = None) -> Lexicon:
    """Load a lexicon file; the packaged default when no path is given."""
    if path is None:
        text = resources.files("radeval.data").joinpath("finding_lexicon.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return parse_lexicon(text)


_default_lexicon: Lexicon | None = None


def default_lexicon() -> Lexicon:
    global _default_lexicon
    if _default_lexicon is None:
        _default_lexicon = load_lexicon()
    return _default_lexicon


# ---------------------------------------------------------------------------
# Sentence and token scanning
# ---------------------------------------------------------------------------

_ABBREVIATIONS = {"dr", "mr", "mrs", "ms", "prof", "vs", "st"}
_WORD_RE = re.compile(r"[A-Za-z0-9]+")
_SENTENCE_BREAK_RE = re.compile(r"[.!?]+(?=\s)|\n")


def split_sentences(text: str) -> list[tuple[int, int]]:
    """Character spans of sentences: split on ./?/! followed by whitespace
    (with an abbreviation stoplist) and on hard newlines."""
    spans: list[tuple[int, int]] = []
    start = 0
    for match in _SENTENCE_BREAK_RE.finditer(text):
        if match.group(0)[0] == ".":
            prev = _WORD_RE.findall(text[start : match.start()])
            if prev and prev[-1].lower() in _ABBREVIATIONS:
                continue
        end = match.end()
        if text[start:end].strip():
            spans.append((start, end))
        start = end
    if text[start:].strip():
        spans.append((start, len(text)))
    return spans


def _phrase_pattern(phrase: str) -> re.Pattern:
    words = _WORD_RE.findall(phrase)
    body = r"[^A-Za-z0-9]+".join(re.escape(w) for w in words)
    return re.compile(rf"(?<![A-Za-z0-9]){body}(?![A-Za-z0-9])", re.IGNORECASE)


_pattern_cache: dict[str, re.Pattern] = {}


def _cached_pattern(phrase: str) -> re.Pattern:
    pat = _pattern_cache.get(phrase)
    if pat is None:
        pat = _pattern_cache[phrase] = _phrase_pattern(phrase)
    return pat


def _cue_tokens(cues: Iterable[str]) -> list[tuple[str, ...]]:
    return [tuple(_WORD_RE.findall(cue.lower())) for cue in cues]


def _match_cue_at(tokens: list[str], index: int, cues: list[tuple[str, ...]]) -> bool:
    for cue in cues:
        if tokens[index : index + len(cue)] == list(cue):
            return True
    return False


def extract_mentions(report, lexicon: Lexicon | None = None) -> list[Mention]:
    """Find every lexicon phrase occurrence in the report text, assign
    polarity via the cue rule, and return mentions sorted by span start.

    `report` may be any object with a `.text` attribute or a plain string.
    """
    text = report if isinstance(report, str) else report.text
    lexicon = lexicon or default_lexicon()
    negation = _cue_tokens(lexicon.negation_cues)
    uncertainty = _cue_tokens(lexicon.uncertainty_cues)

    mentions: list[Mention] = []
    for sent_start, sent_end in split_sentences(text):
        sentence = text[sent_start:sent_end]
        words = list(_WORD_RE.finditer(sentence))
        tokens = [w.group(0).lower() for w in words]
        starts = [w.start() for w in words]

        for entry in lexicon.entries:
            for match in _cached_pattern(entry.phrase).finditer(sentence):
                if entry.polarity_override is not None:
                    polarity = entry.polarity_override
                else:
                    # token index range covered by the match
                    first = next(
                        (i for i, w in enumerate(words) if w.start() >= match.start()), len(words)
                    )
                    last = first
                    while last < len(words) and words[last].end() <= match.end():
                        last += 1
                    polarity = _polarity_from_cues(tokens, first, last, negation, uncertainty)
                mentions.append(
                    Mention(
                        category=entry.category,
                        start=sent_start + match.start(),
                        end=sent_start + match.end(),
                        polarity=polarity,
                    )
                )
    mentions.sort(key=lambda m: (m.start, m.end, m.category.value))
    return mentions


def _polarity_from_cues(
    tokens: list[str],
    first: int,
    last: int,
    negation: list[tuple[str, ...]],
    uncertainty: list[tuple[str, ...]],
) -> Polarity:
    for i in range(max(0, first - CUE_WINDOW), first):
        if _match_cue_at(tokens, i, uncertainty):
            return Polarity.UNCERTAIN
    for i in range(last, min(len(tokens), last + CUE_WINDOW)):
        if _match_cue_at(tokens, i, uncertainty):
            return Polarity.UNCERTAIN
    for i in range(max(0, first - CUE_WINDOW), first):
        if _match_cue_at(tokens, i, negation):
            return Polarity.NEGATIVE
    return Polarity.POSITIVE


def aggregate_labels(mentions: Sequence[Mention]) -> LabelVector:
    """Fold one report's mentions into a label vector.

    Per category the strongest polarity wins (POSITIVE > UNCERTAIN >
    NEGATIVE > NOT_MENTIONED). NO_FINDING is POSITIVE only when an
    explicit normal statement was found and no pathology category came
    out POSITIVE or UNCERTAIN.
    """
    values: dict[FindingCategory, LabelValue] = {}
    for mention in mentions:
        value = LabelValue[mention.polarity.name]
        current = values.get(mention.category, LabelValue.NOT_MENTIONED)
        if _PRECEDENCE[value] > _PRECEDENCE[current]:
            values[mention.category] = value

    pathology_present = any(
        values.get(c) in (LabelValue.POSITIVE, LabelValue.UNCERTAIN)
        for c in PATHOLOGY_CATEGORIES
    )
    normal_statement = values.get(FindingCategory.NO_FINDING) is LabelValue.POSITIVE
    if normal_statement and not pathology_present:
        values[FindingCategory.NO_FINDING] = LabelValue.POSITIVE
    else:
        values.pop(FindingCategory.NO_FINDING, None)
    return LabelVector(values)


def derive_abnormality(
    labels: Mapping[FindingCategory, LabelValue],
    *,
    include_support_devices: bool = False,
    uncertain_abnormal: bool = False,
) -> int:
    """1 iff any pathology category is POSITIVE, else 0.

    SUPPORT_DEVICES does not count by default (a pacemaker is not a
    thoracic abnormality); UNCERTAIN does not count by default. Both are
    flag-selectable.
    """
    categories: tuple[FindingCategory, ...] = PATHOLOGY_CATEGORIES
    if include_support_devices:
        categories = categories + (FindingCategory.SUPPORT_DEVICES,)
    abnormal_values = {LabelValue.POSITIVE}
    if uncertain_abnormal:
        abnormal_values.add(LabelValue.UNCERTAIN)
    return int(any(labels[c] in abnormal_values for c in categories))


def label_report(report, lexicon: Lexicon | None = None) -> LabelVector:
    """Convenience: extract mentions and aggregate in one step."""
    return aggregate_labels(extract_mentions(report, lexicon))
