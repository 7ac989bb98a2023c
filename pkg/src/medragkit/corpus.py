"""Case-record schemas plus ingestion, filtering, and slice sampling.

A corpus is a UTF-8 line-delimited file of case records.  Ingestion
validates every record against the type invariants and collects failures
into a rejects report instead of aborting the batch, so large ingests
survive dirty rows.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

from .errors import DataError, ResponseFormatError
from .llmclient import LlmClient, Message, request_with_retry
from .textutil import parse_numbered_list, word_count
from . import prompts


class ModalityLabel(Enum):
    XRAY = "XRay"
    DSA = "DSA"
    CT = "CT"
    MR = "MR"
    PET_SPECT = "PET_SPECT"
    ULTRASOUND = "Ultrasound"
    HISTOPATHOLOGY = "Histopathology"
    SIMULATED_CHART = "SimulatedChart"
    NON_MEDICAL = "NonMedical"
    OTHER = "Other"


SOURCES = frozenset(
    {
        "eurorad",
        "radiopaedia",
        "pmc",
        "mimic",
        "padchest",
        "deeplesion",
        "lld",
        "mamamia",
        "quilt",
        "vqa_benchmark",
        "other",
    }
)

# Sources whose records are required to carry at least one image.  Benchmark
# QA collections and the catch-all bucket may hold text-only entries.
IMAGE_BEARING_SOURCES = SOURCES - {"vqa_benchmark", "other"}

LANGUAGES = ("en", "zh")


@dataclass(frozen=True)
class Roi:
    """Axis-aligned bounding box in normalized [0,1] coordinates."""

    x0: float
    y0: float
    x1: float
    y1: float
    label: str = ""

    def validate(self) -> None:
        coords = (self.x0, self.y0, self.x1, self.y1)
        if not all(0.0 <= c <= 1.0 for c in coords):
            raise DataError(f"roi coordinates out of [0,1]: {coords}")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise DataError(f"roi box degenerate: {coords}")

    def to_dict(self) -> dict:
        return {"x0": self.x0, "y0": self.y0, "x1": self.x1, "y1": self.y1,
                "label": self.label}

    @classmethod
    def from_dict(cls, d: dict) -> "Roi":
        return cls(x0=d["x0"], y0=d["y0"], x1=d["x1"], y1=d["y1"],
                   label=d.get("label", ""))


@dataclass
class ImageRef:
    image_id: str
    uri: str
    caption: str | None = None
    rois: list[Roi] = field(default_factory=list)
    volume_id: str | None = None
    slice_index: int | None = None
    annotated_slice: bool = False

    def validate(self) -> None:
        if not self.image_id:
            raise DataError("image_id empty")
        if (self.slice_index is None) != (self.volume_id is None):
            if self.slice_index is not None:
                raise DataError("slice_index without volume_id")
            raise DataError("volume_id without slice_index")
        if self.slice_index is not None and self.slice_index < 0:
            raise DataError(f"negative slice_index: {self.slice_index}")
        for roi in self.rois:
            roi.validate()

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "uri": self.uri,
            "caption": self.caption,
            "rois": [r.to_dict() for r in self.rois],
            "volume_id": self.volume_id,
            "slice_index": self.slice_index,
            "annotated_slice": self.annotated_slice,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImageRef":
        return cls(
            image_id=d.get("image_id", ""),
            uri=d.get("uri", ""),
            caption=d.get("caption"),
            rois=[Roi.from_dict(r) for r in d.get("rois", [])],
            volume_id=d.get("volume_id"),
            slice_index=d.get("slice_index"),
            annotated_slice=bool(d.get("annotated_slice", False)),
        )


@dataclass
class CaseRecord:
    id: str
    source: str
    images: list[ImageRef] = field(default_factory=list)
    clinical_history: str | None = None
    image_findings: str | None = None
    discussion: str | None = None
    modality_label: ModalityLabel | None = None
    human_annotated: bool = False
    language: str = "en"
    provenance: dict[str, Any] = field(default_factory=dict)

    def has_annotation_text(self) -> bool:
        return bool(
            any(img.caption for img in self.images)
            or self.image_findings
            or self.discussion
        )

    def validate(self) -> None:
        if not self.id:
            raise DataError("id empty")
        if self.source not in SOURCES:
            raise DataError(f"unknown source: {self.source}")
        if self.language not in LANGUAGES:
            raise DataError(f"unknown language: {self.language}")
        if self.source in IMAGE_BEARING_SOURCES and not self.images:
            raise DataError(f"images empty for image-bearing source: {self.source}")
        seen_images: set[str] = set()
        volumes: dict[str, set[int]] = {}
        for img in self.images:
            img.validate()
            if img.image_id in seen_images:
                raise DataError(f"duplicate image_id: {img.image_id}")
            seen_images.add(img.image_id)
            if img.volume_id is not None:
                indices = volumes.setdefault(img.volume_id, set())
                if img.slice_index in indices:
                    raise DataError(
                        f"duplicate slice_index {img.slice_index} in volume {img.volume_id}"
                    )
                indices.add(img.slice_index)
        if self.human_annotated and not self.has_annotation_text():
            raise DataError("human_annotated without annotation text")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "source": self.source,
            "images": [img.to_dict() for img in self.images],
            "clinical_history": self.clinical_history,
            "image_findings": self.image_findings,
            "discussion": self.discussion,
            "modality_label": self.modality_label.value if self.modality_label else None,
            "human_annotated": self.human_annotated,
            "language": self.language,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CaseRecord":
        modality = d.get("modality_label")
        return cls(
            id=d.get("id", ""),
            source=d.get("source", ""),
            images=[ImageRef.from_dict(i) for i in d.get("images", [])],
            clinical_history=d.get("clinical_history"),
            image_findings=d.get("image_findings"),
            discussion=d.get("discussion"),
            modality_label=ModalityLabel(modality) if modality else None,
            human_annotated=bool(d.get("human_annotated", False)),
            language=d.get("language", "en"),
            provenance=d.get("provenance", {}),
        )


@dataclass
class RejectEntry:
    line: int
    id: str | None
    reason: str

    def to_dict(self) -> dict:
        return {"line": self.line, "id": self.id, "reason": self.reason}


@dataclass
class IngestResult:
    records: list[CaseRecord]
    rejects: list[RejectEntry]


INGEST_FORMATS = ("cases",)


def ingest(path: str | Path, format: str = "cases") -> IngestResult:
    """Read and validate a line-delimited corpus file.

    Valid records come back in file order; every invalid row becomes a
    reject entry carrying its line number and failure reason.
    """
    if format not in INGEST_FORMATS:
        raise DataError(f"unknown format tag: {format}")
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"unreadable file: {p}: {exc}") from exc

    records: list[CaseRecord] = []
    rejects: list[RejectEntry] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            rejects.append(RejectEntry(lineno, None, f"invalid JSON: {exc.msg}"))
            continue
        try:
            record = CaseRecord.from_dict(obj)
            record.validate()
            if record.id in seen_ids:
                raise DataError(f"duplicate id: {record.id}")
        except (DataError, ValueError, TypeError, KeyError) as exc:
            rejects.append(RejectEntry(lineno, obj.get("id") if isinstance(obj, dict) else None,
                                       str(exc)))
            continue
        seen_ids.add(record.id)
        records.append(record)
    return IngestResult(records=records, rejects=rejects)


def filter_short_captions(
    records: list[CaseRecord], min_words: int = 20
) -> tuple[list[CaseRecord], list[CaseRecord]]:
    """Drop captions shorter than `min_words` whitespace tokens.

    A caption is dropped iff its token count is strictly below the
    threshold.  Records left with no caption and no other annotation text
    land in the dropped list; everything else is kept (with the short
    captions cleared on a copy -- inputs are never mutated).  kept+dropped
    partition the input by record id.
    """
    if min_words < 1:
        raise ValueError("min_words must be >= 1")
    kept: list[CaseRecord] = []
    dropped: list[CaseRecord] = []
    for record in records:
        survivors = 0
        new_images: list[ImageRef] = []
        changed = False
        for img in record.images:
            if img.caption is not None and word_count(img.caption) < min_words:
                new_images.append(dataclasses.replace(img, caption=None))
                changed = True
            else:
                if img.caption is not None:
                    survivors += 1
                new_images.append(img)
        other_text = bool(record.clinical_history or record.image_findings
                          or record.discussion)
        if survivors == 0 and not other_text:
            dropped.append(record)
        elif changed:
            kept.append(dataclasses.replace(record, images=new_images))
        else:
            kept.append(record)
    return kept, dropped


def even_indices(n: int, m: int) -> list[int]:
    """Pick m evenly spaced indices from range(n), endpoints included.

    The rule is round(i*(n-1)/(m-1)) for i in 0..m-1 with half-up rounding
    (computed in exact integer arithmetic), deduplicated then backfilled
    left-to-right with the smallest unused indices.
    """
    if n < 0 or m < 0:
        raise ValueError("n and m must be nonnegative")
    if m >= n:
        return list(range(n))
    if m == 0:
        return []
    if m == 1:
        return [0]
    chosen: list[int] = []
    seen: set[int] = set()
    b = m - 1
    for i in range(m):
        idx = (2 * i * (n - 1) + b) // (2 * b)
        if idx not in seen:
            seen.add(idx)
            chosen.append(idx)
    fill = 0
    while len(chosen) < m:
        while fill in seen:
            fill += 1
        seen.add(fill)
        chosen.append(fill)
    return sorted(chosen)


def sample_slices(volume: list[ImageRef], cap: int = 20) -> list[ImageRef]:
    """Reduce a 3D volume's 2D slices to at most `cap`, keeping annotated ones.

    All annotated slices are retained whenever they fit the cap; the
    remaining budget is filled by evenly spaced selection over the
    non-annotated slices (ordered by slice_index).  If annotated slices
    alone exceed the cap, sampling happens evenly among them instead.
    Output is sorted by slice_index and fully deterministic.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    if not volume:
        return []
    volume_ids = {img.volume_id for img in volume}
    if len(volume_ids) != 1 or None in volume_ids:
        raise DataError(f"mixed volume_ids: {sorted(str(v) for v in volume_ids)}")
    if any(img.slice_index is None for img in volume):
        raise DataError("missing slice_index")
    indices = [img.slice_index for img in volume]
    if len(set(indices)) != len(indices):
        raise DataError("duplicate slice_index in volume")

    ordered = sorted(volume, key=lambda img: img.slice_index)
    if len(ordered) <= cap:
        return ordered

    annotated = [img for img in ordered if img.annotated_slice]
    others = [img for img in ordered if not img.annotated_slice]
    if len(annotated) >= cap:
        picked = [annotated[i] for i in even_indices(len(annotated), cap)]
    else:
        budget = cap - len(annotated)
        picked = annotated + [others[i] for i in even_indices(len(others), budget)]
    return sorted(picked, key=lambda img: img.slice_index)


def _is_fully_segmented(record: CaseRecord) -> bool:
    return (
        bool(record.image_findings)
        and bool(record.discussion)
        and all(img.caption for img in record.images)
    )


def segment_long_annotation(
    record: CaseRecord, llm: LlmClient, model: str = "gpt-4o"
) -> CaseRecord:
    """Split one long human annotation into the three standard sections.

    Three templated provider calls produce, in order: per-image findings
    (one per image), a consolidated image-findings text, and a discussion.
    The record's original field values are preserved under provenance.
    Returns the input unchanged when all three sections already exist.
    """
    if not record.human_annotated:
        raise ValueError("segment_long_annotation requires a human-annotated record")
    annotation_parts = [t for t in (record.image_findings, record.discussion) if t]
    if not annotation_parts:
        raise ValueError("no long annotation present to segment")
    if _is_fully_segmented(record):
        return record

    from .augment import parse_report_qa  # local import avoids a module cycle

    annotation = "\n\n".join(annotation_parts)
    image_list = "\n".join(
        f"{i + 1}. {img.image_id}" for i, img in enumerate(record.images)
    )
    n = len(record.images)

    def parse_report(raw: str) -> str:
        parsed = parse_report_qa(raw, expect_report=True)
        assert parsed.report is not None
        return parsed.report

    def parse_per_image(raw: str) -> list[str]:
        items = parse_numbered_list(parse_report(raw))
        if len(items) != n:
            raise ResponseFormatError(
                f"expected {n} per-image findings, parsed {len(items)}"
            )
        return items

    per_image, _ = request_with_retry(
        llm, model,
        [Message("user", prompts.SEGMENT_PER_IMAGE.format(
            n=n, image_list=image_list, annotation=annotation))],
        parse_per_image,
    )
    per_image_block = "\n".join(
        f"{i + 1}. {text}" for i, text in enumerate(per_image)
    )
    consolidated, _ = request_with_retry(
        llm, model,
        [Message("user", prompts.SEGMENT_CONSOLIDATE.format(
            per_image=per_image_block, annotation=annotation))],
        parse_report,
    )
    discussion, _ = request_with_retry(
        llm, model,
        [Message("user", prompts.SEGMENT_DISCUSSION.format(
            findings=consolidated, history=record.clinical_history or "(none)"))],
        parse_report,
    )

    provenance = dict(record.provenance)
    provenance["segmented"] = True
    original_captions = {
        img.image_id: img.caption for img in record.images if img.caption
    }
    if original_captions:
        provenance["original_captions"] = original_captions
    if record.image_findings:
        provenance["original_image_findings"] = record.image_findings
    if record.discussion:
        provenance["original_discussion"] = record.discussion

    new_images = [
        dataclasses.replace(img, caption=per_image[i])
        for i, img in enumerate(record.images)
    ]
    return dataclasses.replace(
        record,
        images=new_images,
        image_findings=consolidated,
        discussion=discussion,
        provenance=provenance,
    )
