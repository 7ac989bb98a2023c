"""Closed-QA accuracy and concept-overlap factuality metrics.

Concept extraction is a deterministic dictionary scan against a lexicon
of surface forms; an external entity-linker can substitute behind the
same interface.  Precision is the shared-concept fraction of the
generated set, recall the shared fraction of the reference set, F1 their
harmonic mean.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

from .errors import DataError
from .jsonlio import read_jsonl
from .textutil import sha256_hex


@dataclass(frozen=True)
class ConceptSet:
    concepts: frozenset[str]
    source_hash: str | None = None

    @classmethod
    def of(cls, concepts: Iterable[str], source_text: str | None = None) -> "ConceptSet":
        return cls(
            concepts=frozenset(c.strip().upper() for c in concepts if c.strip()),
            source_hash=sha256_hex(source_text) if source_text is not None else None,
        )

    def __len__(self) -> int:
        return len(self.concepts)


class ConceptExtractor(Protocol):
    def extract(self, text: str) -> ConceptSet: ...


@dataclass
class ConceptLexicon:
    """Surface-form to concept-id mapping with deterministic lookup."""

    entries: dict[str, str] = field(default_factory=dict)  # lower surface -> id
    version: str = "fixture-1"

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]], version: str = "fixture-1") -> "ConceptLexicon":
        entries = {}
        for surface, concept_id in pairs:
            surface_norm = surface.strip().lower()
            if not surface_norm:
                raise DataError("empty lexicon surface form")
            entries[surface_norm] = concept_id.strip().upper()
        return cls(entries=entries, version=version)

    @classmethod
    def load(cls, path: str | Path, version: str | None = None) -> "ConceptLexicon":
        """Load a line-delimited lexicon of {surface, concept_id} records."""
        pairs = []
        for lineno, obj in read_jsonl(path):
            try:
                pairs.append((obj["surface"], obj["concept_id"]))
            except (KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad lexicon record: {exc}") from exc
        return cls.from_pairs(pairs, version=version or f"file:{Path(path).name}")

    def __len__(self) -> int:
        return len(self.entries)


_TOKEN = re.compile(r"\w+")


def extract_concepts(text: str, lexicon: ConceptLexicon) -> ConceptSet:
    """Longest-match, case-insensitive, token-boundary-respecting scan.

    Overlaps resolve longest-first, left-to-right: a matched span is
    consumed, and scanning resumes after it.  Matches must start at a
    token start and end at a token end.
    """
    if not lexicon.entries:
        raise DataError("empty lexicon")
    lower = text.lower()
    tokens = [(m.start(), m.end(), m.group()) for m in _TOKEN.finditer(lower)]
    token_ends = {end for _, end, _ in tokens}

    by_first_token: dict[str, list[str]] = {}
    for surface in lexicon.entries:
        first = _TOKEN.search(surface)
        if first is None:
            continue
        by_first_token.setdefault(first.group(), []).append(surface)
    for surfaces in by_first_token.values():
        surfaces.sort(key=len, reverse=True)

    found: set[str] = set()
    i = 0
    while i < len(tokens):
        start, _, token_text = tokens[i]
        matched_end = None
        for surface in by_first_token.get(token_text, ()):  # longest first
            end = start + len(surface)
            if lower.startswith(surface, start) and end in token_ends:
                found.add(lexicon.entries[surface])
                matched_end = end
                break
        if matched_end is None:
            i += 1
        else:
            while i < len(tokens) and tokens[i][0] < matched_end:
                i += 1
    return ConceptSet(concepts=frozenset(found), source_hash=sha256_hex(text))


@dataclass(frozen=True)
class PrfResult:
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


def umls_prf(c_ref: ConceptSet | frozenset | set, c_gen: ConceptSet | frozenset | set) -> PrfResult:
    """Concept-overlap precision/recall/F1.

    P = |ref & gen| / |gen|, R = |ref & gen| / |ref|, F1 = 2PR/(P+R).
    Conventions: an empty side scores 0 on its metric; two empty sets are
    a vacuous perfect match (P=R=F1=1); P=R=0 gives F1=0.
    """
    ref = c_ref.concepts if isinstance(c_ref, ConceptSet) else frozenset(c_ref)
    gen = c_gen.concepts if isinstance(c_gen, ConceptSet) else frozenset(c_gen)
    if not ref and not gen:
        return PrfResult(1.0, 1.0, 1.0)
    inter = len(ref & gen)
    precision = inter / len(gen) if gen else 0.0
    recall = inter / len(ref) if ref else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return PrfResult(precision, recall, f1)


def umls_corpus_report(
    pairs: list[tuple[str, str]], lexicon: ConceptLexicon
) -> dict:
    """Mean per-item P/R/F1 over (reference_text, generated_text) pairs.

    The headline factuality number reported is the mean per-item F1; mean
    P and R are included alongside it.
    """
    if not pairs:
        raise ValueError("no text pairs")
    totals = {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    for ref_text, gen_text in pairs:
        result = umls_prf(extract_concepts(ref_text, lexicon),
                          extract_concepts(gen_text, lexicon))
        for key, value in result.to_dict().items():
            totals[key] += value
    n = len(pairs)
    report = {key: total / n for key, total in totals.items()}
    report["n"] = n
    return report


def extract_option_letter(text: str, n_options: int = 5) -> str | None:
    """First standalone option letter (A..), case-insensitive.

    Mirrors common VQA harness practice: "The answer is (b)." yields "B";
    outputs with no standalone letter yield None.
    """
    if not 1 <= n_options <= 5:
        raise ValueError("n_options must be in 1..5")
    letters = "ABCDE"[:n_options]
    m = re.search(rf"\b([{letters}{letters.lower()}])\b", text)
    return m.group(1).upper() if m else None


@dataclass
class AccuracyReport:
    accuracy: float
    n: int
    unmatched: list[str] = field(default_factory=list)  # ids with no extractable letter

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "n": self.n, "unmatched": self.unmatched}


def accuracy(
    preds: list[str],
    golds: list[str],
    n_options: int = 5,
    ids: list[str] | None = None,
) -> AccuracyReport:
    """Exact-match accuracy after option-letter extraction from raw outputs.

    Outputs with no extractable letter count as wrong and are flagged in
    the report.
    """
    if not preds or not golds:
        raise ValueError("empty predictions or golds")
    if len(preds) != len(golds):
        raise ValueError(f"length mismatch: {len(preds)} preds vs {len(golds)} golds")
    item_ids = ids if ids is not None else [str(i) for i in range(len(preds))]
    letters = "ABCDE"[:n_options]
    correct = 0
    unmatched = []
    for item_id, pred, gold in zip(item_ids, preds, golds):
        gold_norm = gold.strip().upper()
        if gold_norm not in letters:
            raise DataError(f"gold answer must be a single letter in {letters}: {gold!r}")
        extracted = extract_option_letter(pred, n_options=n_options)
        if extracted is None:
            unmatched.append(item_id)
        elif extracted == gold_norm:
            correct += 1
    return AccuracyReport(accuracy=correct / len(preds), n=len(preds), unmatched=unmatched)
