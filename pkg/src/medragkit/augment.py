"""LLM-driven augmentation: reports, sub-image captions, QA pairs, translation.

Every operation funnels through the shared client with templated prompts
and parses replies against the "Report:/Question:/Answer:" section
contract.  Malformed output earns exactly one re-prompt, then a hard
error, which keeps pipelines deterministic under the mock provider.
"""

from __future__ import annotations

import dataclasses
import math
import random
import re
from pathlib import Path
from dataclasses import dataclass, field

from .corpus import CaseRecord, Roi, segment_long_annotation
from .errors import DataError, ResponseFormatError
from .llmclient import LlmClient, LlmRequest, Message, request_with_retry
from .retrieval import Index, Query, RetrievalResult, retrieve_context
from .textutil import parse_numbered_list, word_count
from . import prompts

TASK_TYPES = ("closed_qa", "open_qa", "caption", "report", "translation")
PROVENANCES = ("human_annotated", "synthetic")

QA_BASE = 3
QA_WORDS_PER_EXTRA = 80
QA_MIN = 3
QA_MAX = 10

# Per-doc word budget when injecting retrieved context verbatim.
CONTEXT_WORD_BUDGET = 300

_OPTION_MARKER = re.compile(r"(?:^|\s)\(?([A-E])[).:]", re.MULTILINE)


@dataclass
class PromptBundle:
    """Assembled provider prompt: system + retrieved context + instruction
    + format block + image attachments."""

    system: str
    guideline_context: list[str] = field(default_factory=list)
    instruction: str = ""
    format_block: str = prompts.FORMAT_REPORT_QA
    attachments: list[bytes | str] = field(default_factory=list)

    def validate(self, max_context: int | None = None) -> None:
        if "Question:" not in self.format_block or "Answer:" not in self.format_block:
            raise DataError("format_block must request the Report:/Question:/Answer: layout")
        if max_context is not None and len(self.guideline_context) > max_context:
            raise DataError(
                f"context length {len(self.guideline_context)} exceeds retrieval k {max_context}"
            )

    def messages(self) -> list[Message]:
        parts = [self.system]
        if self.guideline_context:
            parts.append(prompts.CONTEXT_HEADER)
            parts.extend(self.guideline_context)
        if self.instruction:
            parts.append(self.instruction)
        parts.append(self.format_block)
        return [Message("user", "\n\n".join(parts))]


@dataclass(frozen=True)
class Turn:
    role: str
    text: str


@dataclass
class InstructionSample:
    sample_id: str
    images: list[str] = field(default_factory=list)
    turns: list[Turn] = field(default_factory=list)
    task_type: str = "open_qa"
    provenance: str = "synthetic"
    language: str = "en"
    source_case: str | None = None
    context_docs: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if not self.sample_id:
            raise DataError("sample_id empty")
        if self.task_type not in TASK_TYPES:
            raise DataError(f"unknown task_type: {self.task_type}")
        if self.provenance not in PROVENANCES:
            raise DataError(f"unknown provenance: {self.provenance}")
        if self.language not in ("en", "zh"):
            raise DataError(f"unknown language: {self.language}")
        if not self.turns:
            raise DataError("sample has no turns")
        for i, turn in enumerate(self.turns):
            expected = "user" if i % 2 == 0 else "assistant"
            if turn.role != expected:
                raise DataError(
                    f"turn {i} must be {expected}, got {turn.role} "
                    "(turns alternate user/assistant starting with user)"
                )
        if self.task_type == "closed_qa":
            for turn in self.turns:
                if turn.role != "user":
                    continue
                letters = {m for m in _OPTION_MARKER.findall(turn.text)}
                if len(letters) < 2:
                    raise DataError("closed_qa user turn lacks enumerated options")

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "images": list(self.images),
            "turns": [{"role": t.role, "text": t.text} for t in self.turns],
            "task_type": self.task_type,
            "provenance": self.provenance,
            "language": self.language,
            "source_case": self.source_case,
            "context_docs": list(self.context_docs),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InstructionSample":
        return cls(
            sample_id=d["sample_id"],
            images=list(d.get("images", [])),
            turns=[Turn(t["role"], t["text"]) for t in d.get("turns", [])],
            task_type=d.get("task_type", "open_qa"),
            provenance=d.get("provenance", "synthetic"),
            language=d.get("language", "en"),
            source_case=d.get("source_case"),
            context_docs=list(d.get("context_docs", [])),
        )


@dataclass
class ParsedReply:
    report: str | None
    pairs: list[tuple[str, str]]
    raw: str


_SECTION = re.compile(r"(report|question|answer)\s*:", re.IGNORECASE)


def parse_report_qa(raw: str, expect_report: bool = False) -> ParsedReply:
    """Split a reply on case-insensitive Report:/Question:/Answer: markers.

    Multiple Question/Answer pairs are allowed; text before the first
    marker is ignored; the verbatim input is retained for audit.
    """
    sections: list[tuple[str, str]] = []
    matches = list(_SECTION.finditer(raw))
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(raw)
        sections.append((m.group(1).lower(), raw[m.end():end].strip()))

    report: str | None = None
    pairs: list[tuple[str, str]] = []
    pending_question: str | None = None
    for name, content in sections:
        if name == "report":
            if pending_question is not None:
                raise ResponseFormatError("dangling question: no Answer: before next section")
            if report is None:
                report = content
        elif name == "question":
            if pending_question is not None:
                raise ResponseFormatError("dangling question: no Answer: before next question")
            pending_question = content
        else:  # answer
            if pending_question is None:
                raise ResponseFormatError("Answer: without a preceding Question:")
            pairs.append((pending_question, content))
            pending_question = None
    if pending_question is not None:
        raise ResponseFormatError("dangling question: reply ended without an Answer:")
    if expect_report and report is None:
        raise ResponseFormatError("unparseable response: missing 'Report:' marker")
    return ParsedReply(report=report, pairs=pairs, raw=raw)


def _truncate_words(text: str, budget: int) -> str:
    tokens = text.split()
    if len(tokens) <= budget:
        return text
    return " ".join(tokens[:budget])


def render_rois(rois: list[Roi]) -> list[str]:
    return [
        f"region ({r.x0:g},{r.y0:g})-({r.x1:g},{r.y1:g}): {r.label}".rstrip(": ")
        for r in rois
    ]


def generate_report(
    images: list[bytes | str],
    context: list[str],
    rois: list[Roi],
    llm: LlmClient,
    existing_caption: str | None = None,
    model: str = "gpt-4o",
    modality: str = "medical image",
    context_budget: int = CONTEXT_WORD_BUDGET,
) -> str:
    """One grounded provider call producing a clinical report.

    Unannotated inputs (no existing caption) must come with retrieved
    context; generating from the image alone is refused.
    """
    if existing_caption is None and not context:
        raise ValueError("ungrounded augmentation refused: no retrieved context")
    instruction_parts = [prompts.REPORT_INSTRUCTION]
    if existing_caption:
        instruction_parts.append(f"Existing expert caption to ground and augment:\n{existing_caption}")
    if rois:
        instruction_parts.append(prompts.ROI_HEADER + "\n" + "\n".join(render_rois(rois)))
    bundle = PromptBundle(
        system=prompts.REPORT_SYSTEM.format(modality=modality),
        guideline_context=[_truncate_words(c, context_budget) for c in context],
        instruction="\n".join(instruction_parts),
        format_block=prompts.FORMAT_REPORT_QA,
        attachments=list(images),
    )
    bundle.validate()

    def parse(raw: str) -> str:
        parsed = parse_report_qa(raw, expect_report=True)
        assert parsed.report is not None
        return parsed.report

    report, _ = request_with_retry(
        llm, model, bundle.messages(), parse, attachments=bundle.attachments
    )
    return report


def generate_subimage_captions(
    case: CaseRecord, llm: LlmClient, model: str = "gpt-4o"
) -> CaseRecord:
    """Fill captions for captionless images from the case-level findings.

    Captioned images are untouched; a fully captioned case is returned
    as-is with no provider call.
    """
    if not case.image_findings:
        raise ValueError("case has no image_findings to caption from")
    captionless = [img for img in case.images if not img.caption]
    if not captionless:
        return case
    n = len(captionless)
    image_list = "\n".join(f"{i + 1}. {img.image_id}" for i, img in enumerate(captionless))
    prompt = prompts.SUBIMAGE_CAPTIONS.format(
        total=len(case.images), n=n, image_list=image_list, findings=case.image_findings
    )

    def parse(raw: str) -> list[str]:
        items = parse_numbered_list(raw)
        if len(items) != n:
            raise ResponseFormatError(f"expected {n} captions, parsed {len(items)}")
        return items

    captions, _ = request_with_retry(llm, model, [Message("user", prompt)], parse)
    by_id = {img.image_id: cap for img, cap in zip(captionless, captions)}
    new_images = [
        dataclasses.replace(img, caption=by_id.get(img.image_id, img.caption))
        for img in case.images
    ]
    return dataclasses.replace(case, images=new_images)


def qa_pair_count(text: str) -> int:
    """Length-proxy pair count: 3 + floor(words/80), clamped to [3, 10]."""
    return max(QA_MIN, min(QA_MAX, QA_BASE + word_count(text) // QA_WORDS_PER_EXTRA))


def generate_qapairs(
    caption_or_report: str,
    images: list[str],
    llm: LlmClient,
    source_case: str,
    provenance: str = "synthetic",
    context_docs: list[str] | None = None,
    language: str = "en",
    task_type: str = "open_qa",
    model: str = "gpt-4o",
    id_prefix: str | None = None,
) -> list[InstructionSample]:
    """Generate n QA pairs from a caption/report, n driven by its length.

    A pair-count mismatch triggers one re-prompt; the retry's output is
    accepted if it holds at least 3 pairs (extras beyond 10 are cut).
    """
    if not caption_or_report.strip():
        raise ValueError("empty source text for QA generation")
    n = qa_pair_count(caption_or_report)
    prompt = "\n\n".join(
        [
            prompts.QA_INSTRUCTION.format(n=n),
            prompts.FORMAT_QA_ONLY,
            f"Here is the text:\n{caption_or_report}",
        ]
    )
    messages = [Message("user", prompt)]
    atts = list(images)

    resp = llm.call(LlmRequest(model, messages, atts))
    pairs: list[tuple[str, str]] | None = None
    try:
        first = parse_report_qa(resp.text).pairs
        if len(first) == n:
            pairs = first
    except ResponseFormatError:
        pass
    if pairs is None:
        retry = messages + [Message("assistant", resp.text),
                            Message("user", prompts.RETRY_SUFFIX)]
        resp2 = llm.call(LlmRequest(model, retry, atts))
        second = parse_report_qa(resp2.text).pairs
        if len(second) < QA_MIN:
            raise ResponseFormatError(
                f"fewer than {QA_MIN} parseable pairs after retry ({len(second)})"
            )
        pairs = second[:QA_MAX]

    prefix = id_prefix or source_case
    samples = []
    for i, (question, answer) in enumerate(pairs, start=1):
        sample = InstructionSample(
            sample_id=f"{prefix}-qa{i:02d}",
            images=list(images),
            turns=[Turn("user", question), Turn("assistant", answer)],
            task_type=task_type,
            provenance=provenance,
            language=language,
            source_case=source_case,
            context_docs=list(context_docs or []),
        )
        sample.validate()
        samples.append(sample)
    return samples


def translate_subset(
    samples: list[InstructionSample],
    fraction: float,
    seed: int,
    llm: LlmClient,
    model: str = "gpt-4o",
) -> list[InstructionSample]:
    """Translate a seeded uniform sample of ceil(fraction*N) samples to Chinese.

    Returns the translated copies (language="zh", id suffixed "-zh");
    originals are left untouched for the caller to retain.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    if not samples:
        return []
    count = math.ceil(fraction * len(samples))
    rng = random.Random(seed)
    chosen = sorted(rng.sample(range(len(samples)), count))
    translated = []
    for idx in chosen:
        src = samples[idx]
        turns = []
        for turn in src.turns:
            resp = llm.call(
                LlmRequest(model, [Message("user", prompts.TRANSLATE_ZH.format(text=turn.text))])
            )
            turns.append(Turn(turn.role, resp.text.strip()))
        copy = dataclasses.replace(
            src, sample_id=f"{src.sample_id}-zh", turns=turns, language="zh",
            images=list(src.images), context_docs=list(src.context_docs),
        )
        copy.validate()
        translated.append(copy)
    return translated


# ---------------------------------------------------------------------------
# Corpus-level orchestration (used by the CLI augment stage)
# ---------------------------------------------------------------------------


def _case_query(record: CaseRecord) -> Query:
    text_parts = [img.caption for img in record.images if img.caption]
    for part in (record.clinical_history, record.image_findings):
        if part:
            text_parts.append(part)
    image = next((img.uri for img in record.images if Path(img.uri).is_file()), None)
    return Query(
        text="\n".join(text_parts) if text_parts else None,
        image=image,
        source_case=record.id,
    )


def _caption_samples(record: CaseRecord, provenance: str,
                     context_docs: list[str]) -> list[InstructionSample]:
    samples = []
    for img in record.images:
        if not img.caption:
            continue
        sample = InstructionSample(
            sample_id=f"{record.id}-cap-{img.image_id}",
            images=[img.uri],
            turns=[Turn("user", "Describe the medical image in detail."),
                   Turn("assistant", img.caption)],
            task_type="caption",
            provenance=provenance,
            language=record.language,
            source_case=record.id,
            context_docs=list(context_docs),
        )
        sample.validate()
        samples.append(sample)
    return samples


def augment_case(
    record: CaseRecord,
    index: Index,
    embed,
    llm: LlmClient,
    k: int = 4,
    require_guideline: bool = True,
    model: str = "gpt-4o",
) -> tuple[list[InstructionSample], list[RetrievalResult]]:
    """Run the full augmentation path for one case.

    Human-annotated cases are segmented/captioned as needed and mined for
    QA pairs (provenance human_annotated).  Unannotated cases go through
    retrieval-grounded report generation first; their samples carry the
    retrieved doc ids as provenance.
    """
    image_uris = [img.uri for img in record.images]
    if record.human_annotated:
        working = record
        if not _fully_sectioned(working):
            if working.image_findings and working.discussion:
                # long sections already split out; only captions are missing
                working = generate_subimage_captions(working, llm, model=model)
            elif working.image_findings or working.discussion:
                working = segment_long_annotation(working, llm, model=model)
            # captions-only cases have no long annotation to expand
        base_text = working.image_findings or working.discussion or "\n".join(
            img.caption for img in working.images if img.caption
        )
        samples = _caption_samples(working, "human_annotated", [])
        samples += generate_qapairs(
            base_text, image_uris, llm, source_case=record.id,
            provenance="human_annotated", language=record.language, model=model,
        )
        return samples, []

    results = retrieve_context(
        index, _case_query(record), k=k, embed=embed,
        require_guideline=require_guideline, exclude_case=record.id,
    )
    doc_by_id = {doc.doc_id: doc for doc in index.docs}
    context_texts = [doc_by_id[r.doc_id].text for r in results if doc_by_id[r.doc_id].text]
    rois = [roi for img in record.images for roi in img.rois]
    existing = next((img.caption for img in record.images if img.caption), None)
    report = generate_report(
        image_uris, context_texts, rois, llm,
        existing_caption=existing, model=model,
    )
    doc_ids = [r.doc_id for r in results]
    report_sample = InstructionSample(
        sample_id=f"{record.id}-report",
        images=image_uris,
        turns=[Turn("user", "Write a detailed clinical report for the image."),
               Turn("assistant", report)],
        task_type="report",
        provenance="synthetic",
        language=record.language,
        source_case=record.id,
        context_docs=doc_ids,
    )
    report_sample.validate()
    samples = [report_sample]
    samples += generate_qapairs(
        report, image_uris, llm, source_case=record.id,
        provenance="synthetic", context_docs=doc_ids,
        language=record.language, model=model,
    )
    return samples, results


def _fully_sectioned(record: CaseRecord) -> bool:
    return bool(record.image_findings) and bool(record.discussion) and all(
        img.caption for img in record.images
    )


def augment_corpus(
    records: list[CaseRecord],
    index: Index,
    embed,
    llm: LlmClient,
    k: int = 4,
    require_guideline: bool = True,
    model: str = "gpt-4o",
) -> tuple[list[InstructionSample], list[dict]]:
    """Augment every case in input order; returns (samples, audit records).

    Audit records pair each emitted sample with the request hashes of the
    provider calls made for its case.
    """
    all_samples: list[InstructionSample] = []
    audit: list[dict] = []
    for record in records:
        mark = len(llm.audit_log)
        samples, _ = augment_case(
            record, index, embed, llm, k=k,
            require_guideline=require_guideline, model=model,
        )
        keys = [e.request_key for e in llm.audit_log[mark:]]
        for sample in samples:
            audit.append({"sample_id": sample.sample_id, "request_keys": keys})
        all_samples.extend(samples)
    return all_samples, audit
