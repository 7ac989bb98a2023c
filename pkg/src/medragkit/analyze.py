"""Distribution analysis, modality/question classification, expert audits."""

from __future__ import annotations

import random
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

from .corpus import ModalityLabel
from .errors import ResponseFormatError
from .llmclient import LlmClient, Message, request_with_retry
from .textutil import round_half_up
from . import prompts


class QuestionClass(Enum):
    KNOWLEDGE_BASED = "knowledge_based"
    INFERENCE_BASED = "inference_based"


# Raw classifier replies are first matched against the enum values, then
# against this synonym table (normalized: lowercase, punctuation stripped).
MODALITY_SYNONYMS: dict[str, ModalityLabel] = {
    "x ray": ModalityLabel.XRAY,
    "xray": ModalityLabel.XRAY,
    "radiograph": ModalityLabel.XRAY,
    "chest radiograph": ModalityLabel.XRAY,
    "chest x ray": ModalityLabel.XRAY,
    "plain film": ModalityLabel.XRAY,
    "cxr": ModalityLabel.XRAY,
    "dsa": ModalityLabel.DSA,
    "digital subtraction angiography": ModalityLabel.DSA,
    "angiography": ModalityLabel.DSA,
    "angiogram": ModalityLabel.DSA,
    "ct": ModalityLabel.CT,
    "ct scan": ModalityLabel.CT,
    "computed tomography": ModalityLabel.CT,
    "cat scan": ModalityLabel.CT,
    "mr": ModalityLabel.MR,
    "mri": ModalityLabel.MR,
    "magnetic resonance": ModalityLabel.MR,
    "magnetic resonance imaging": ModalityLabel.MR,
    "pet": ModalityLabel.PET_SPECT,
    "spect": ModalityLabel.PET_SPECT,
    "pet spect": ModalityLabel.PET_SPECT,
    "pet ct": ModalityLabel.PET_SPECT,
    "nuclear medicine": ModalityLabel.PET_SPECT,
    "scintigraphy": ModalityLabel.PET_SPECT,
    "ultrasound": ModalityLabel.ULTRASOUND,
    "us": ModalityLabel.ULTRASOUND,
    "sonography": ModalityLabel.ULTRASOUND,
    "ultrasonography": ModalityLabel.ULTRASOUND,
    "doppler": ModalityLabel.ULTRASOUND,
    "histopathology": ModalityLabel.HISTOPATHOLOGY,
    "pathology": ModalityLabel.HISTOPATHOLOGY,
    "histology": ModalityLabel.HISTOPATHOLOGY,
    "micrograph": ModalityLabel.HISTOPATHOLOGY,
    "simulated chart": ModalityLabel.SIMULATED_CHART,
    "chart": ModalityLabel.SIMULATED_CHART,
    "graph": ModalityLabel.SIMULATED_CHART,
    "plot": ModalityLabel.SIMULATED_CHART,
    "diagram": ModalityLabel.SIMULATED_CHART,
    "statistical chart": ModalityLabel.SIMULATED_CHART,
    "non medical": ModalityLabel.NON_MEDICAL,
    "nonmedical": ModalityLabel.NON_MEDICAL,
    "photo": ModalityLabel.NON_MEDICAL,
    "photograph": ModalityLabel.NON_MEDICAL,
    "natural image": ModalityLabel.NON_MEDICAL,
    "other": ModalityLabel.OTHER,
}

_QUESTION_SYNONYMS: dict[str, QuestionClass] = {
    "knowledge": QuestionClass.KNOWLEDGE_BASED,
    "knowledge based": QuestionClass.KNOWLEDGE_BASED,
    "knowledge_based": QuestionClass.KNOWLEDGE_BASED,
    "recall": QuestionClass.KNOWLEDGE_BASED,
    "inference": QuestionClass.INFERENCE_BASED,
    "inference based": QuestionClass.INFERENCE_BASED,
    "inference_based": QuestionClass.INFERENCE_BASED,
    "reasoning": QuestionClass.INFERENCE_BASED,
}

_NORMALIZE = re.compile(r"[^a-z0-9]+")


def _normalize_reply(reply: str) -> str:
    return _NORMALIZE.sub(" ", reply.strip().lower()).strip()


def map_modality_reply(reply: str) -> ModalityLabel | None:
    """Exact enum-value match first, then the synonym table; None if neither."""
    norm = _normalize_reply(reply)
    for label in ModalityLabel:
        if norm == _normalize_reply(label.value):
            return label
    return MODALITY_SYNONYMS.get(norm)


def classify_modality(
    image: bytes | str | None,
    caption: str | None,
    llm: LlmClient,
    model: str = "gpt-4o",
    audit: list[dict] | None = None,
) -> ModalityLabel:
    """Classify an image (and/or its caption) onto the closed modality enum.

    An unmappable reply falls back to Other and leaves a note in the audit
    trail instead of failing the batch.
    """
    if image is None and caption is None:
        raise ValueError("classify_modality needs an image or a caption")
    payload = caption if caption else "(see attached image)"
    prompt = prompts.CLASSIFY_MODALITY.format(payload=payload)
    from .llmclient import LlmRequest

    attachments = [image] if image is not None else []
    resp = llm.call(LlmRequest(model, [Message("user", prompt)], attachments))
    label = map_modality_reply(resp.text)
    note = None
    if label is None:
        label = ModalityLabel.OTHER
        note = f"unmappable reply: {resp.text.strip()!r}"
    if audit is not None:
        audit.append(
            {"input": payload, "response": resp.text, "label": label.value, "note": note}
        )
    return label


@dataclass
class DistributionReport:
    counts: dict[ModalityLabel, int]
    percentages: dict[ModalityLabel, float]
    total: int
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "counts": {label.value: self.counts[label] for label in ModalityLabel},
            "percentages": {label.value: self.percentages[label] for label in ModalityLabel},
            "total": self.total,
            "seed": self.seed,
        }

    def format_table(self) -> str:
        width = max(len(label.value) for label in ModalityLabel)
        lines = [f"{'modality':<{width}}  {'count':>8}  {'percent':>8}"]
        for label in ModalityLabel:
            lines.append(
                f"{label.value:<{width}}  {self.counts[label]:>8}  "
                f"{self.percentages[label]:>8.2f}"
            )
        lines.append(f"{'total':<{width}}  {self.total:>8}  {100.0:>8.2f}")
        return "\n".join(lines)


def distribution_report(
    labels: list[ModalityLabel], seed: int | None = None
) -> DistributionReport:
    """Exact counts and 2-decimal percentages over a label list."""
    if not labels:
        raise ValueError("empty label list")
    counter = Counter(labels)
    total = len(labels)
    counts = {label: counter.get(label, 0) for label in ModalityLabel}
    percentages = {
        label: round_half_up(100.0 * counts[label] / total, 2) for label in ModalityLabel
    }
    return DistributionReport(counts=counts, percentages=percentages, total=total, seed=seed)


def audit_sample(
    labels_model: list,
    n: int = 100,
    seed: int = 0,
    item_ids: list[str] | None = None,
) -> list[dict]:
    """Draw a seeded uniform sample (without replacement) for expert review.

    Returns sheet rows {item_id, model_label, expert_label=None} ordered by
    item position.
    """
    if n > len(labels_model):
        raise ValueError(f"sample size {n} exceeds population {len(labels_model)}")
    rng = random.Random(seed)
    chosen = sorted(rng.sample(range(len(labels_model)), n))
    ids = item_ids if item_ids is not None else [str(i) for i in range(len(labels_model))]
    if len(ids) != len(labels_model):
        raise ValueError("item_ids length mismatch")

    def as_str(label) -> str:
        return label.value if isinstance(label, Enum) else str(label)

    return [
        {"item_id": ids[i], "model_label": as_str(labels_model[i]), "expert_label": None}
        for i in chosen
    ]


def audit_accuracy(sheet: list[dict], labels_expert: list) -> float:
    """Fraction of sheet rows whose model label exactly matches the expert's."""
    if len(sheet) != len(labels_expert):
        raise ValueError(
            f"sheet size {len(sheet)} != expert labels {len(labels_expert)}"
        )

    def as_str(label) -> str:
        return label.value if isinstance(label, Enum) else str(label)

    matches = sum(
        1 for row, expert in zip(sheet, labels_expert)
        if row["model_label"] == as_str(expert)
    )
    return matches / len(sheet)


def classify_question(
    question: str,
    answer: str | None,
    llm: LlmClient,
    model: str = "gpt-4o",
    audit: list[dict] | None = None,
) -> QuestionClass:
    """Classify a QA item as knowledge_based or inference_based."""
    if not question.strip():
        raise ValueError("empty question")
    prompt = prompts.CLASSIFY_QUESTION.format(question=question, answer=answer or "(none)")

    def parse(raw: str) -> QuestionClass:
        mapped = _QUESTION_SYNONYMS.get(_normalize_reply(raw))
        if mapped is None:
            raise ResponseFormatError(f"unmappable question class: {raw.strip()!r}")
        return mapped

    result, raw = request_with_retry(llm, model, [Message("user", prompt)], parse)
    if audit is not None:
        audit.append({"question": question, "response": raw, "label": result.value})
    return result


def agreement(labels_a: list, labels_b: list) -> float:
    """Simple percent agreement between two equal-length label lists."""
    if not labels_a or not labels_b:
        raise ValueError("empty label lists")
    if len(labels_a) != len(labels_b):
        raise ValueError(f"length mismatch: {len(labels_a)} != {len(labels_b)}")
    equal = sum(1 for a, b in zip(labels_a, labels_b) if a == b)
    return equal / len(labels_a)


def expert_majority(expert_labels: list[list[QuestionClass]]) -> list[QuestionClass]:
    """Per-item majority vote across experts; ties go to inference_based."""
    if not expert_labels:
        raise ValueError("no expert label lists")
    lengths = {len(lst) for lst in expert_labels}
    if len(lengths) != 1:
        raise ValueError("expert label lists differ in length")
    result = []
    for votes in zip(*expert_labels):
        knowledge = sum(1 for v in votes if v is QuestionClass.KNOWLEDGE_BASED)
        inference = len(votes) - knowledge
        result.append(
            QuestionClass.KNOWLEDGE_BASED if knowledge > inference
            else QuestionClass.INFERENCE_BASED
        )
    return result


def knowledge_share(labels: list[QuestionClass]) -> float:
    """Percentage of knowledge_based items, rounded to 1 decimal."""
    if not labels:
        raise ValueError("empty label list")
    count = sum(1 for lab in labels if lab is QuestionClass.KNOWLEDGE_BASED)
    return round_half_up(100.0 * count / len(labels), 1)
