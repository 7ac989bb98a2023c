"""Dual-corpus multimodal retrieval with score fusion.

The index holds two kinds of documents: pure-text guidelines and
image-text cases.  Scoring fuses modalities at the feature level: the sum
of a side's text and image vectors (absent modalities are zero vectors)
is dotted against the other side's sum.  Constrained top-k guarantees at
least one pure-text guideline in every retrieved context whenever the
corpus contains one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .embedding import EmbeddingClient
from .errors import DataError, ProviderError
from .jsonlio import dumps_canonical

FORMAT_VERSION = 1

KIND_TEXT_GUIDELINE = "text_guideline"
KIND_IMAGE_CASE = "image_case"
DOC_KINDS = (KIND_TEXT_GUIDELINE, KIND_IMAGE_CASE)


@dataclass
class RetrievalDoc:
    doc_id: str
    kind: str
    text: str = ""
    image: bytes | str | None = None  # payload embedded at build time, not persisted
    text_vec: np.ndarray | None = None
    image_vec: np.ndarray | None = None
    source_case: str | None = None

    def combined_vec(self, dim: int) -> np.ndarray:
        vec = np.zeros(dim)
        if self.text_vec is not None:
            vec = vec + self.text_vec
        if self.image_vec is not None:
            vec = vec + self.image_vec
        return vec

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "kind": self.kind,
            "text": self.text,
            "text_vec": None if self.text_vec is None else [float(x) for x in self.text_vec],
            "image_vec": None if self.image_vec is None else [float(x) for x in self.image_vec],
            "source_case": self.source_case,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RetrievalDoc":
        return cls(
            doc_id=d["doc_id"],
            kind=d["kind"],
            text=d.get("text", ""),
            image=d.get("image"),
            text_vec=None if d.get("text_vec") is None else np.array(d["text_vec"]),
            image_vec=None if d.get("image_vec") is None else np.array(d["image_vec"]),
            source_case=d.get("source_case"),
        )


@dataclass
class Query:
    text: str | None = None
    image: bytes | str | None = None
    text_vec: np.ndarray | None = None
    image_vec: np.ndarray | None = None
    source_case: str | None = None

    def validate(self) -> None:
        if self.text is None and self.image is None and self.text_vec is None \
                and self.image_vec is None:
            raise DataError("query needs text or image")

    def combined_vec(self, dim: int) -> np.ndarray:
        vec = np.zeros(dim)
        if self.text_vec is not None:
            vec = vec + self.text_vec
        if self.image_vec is not None:
            vec = vec + self.image_vec
        return vec


@dataclass(frozen=True)
class RetrievalResult:
    doc_id: str
    score: float
    kind: str

    def to_dict(self) -> dict:
        return {"doc_id": self.doc_id, "score": self.score, "kind": self.kind}


@dataclass
class RejectedDoc:
    doc_id: str
    reason: str

    def to_dict(self) -> dict:
        return {"doc_id": self.doc_id, "reason": self.reason}


def _normalized(vec: np.ndarray, dim: int, doc_id: str) -> np.ndarray:
    arr = np.asarray(vec, dtype=float)
    if arr.shape != (dim,):
        raise DataError(f"dimension mismatch for {doc_id}: {arr.shape[0] if arr.ndim == 1 else arr.shape} != {dim}")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise DataError(f"zero vector for {doc_id}")
    return arr / norm


@dataclass
class Index:
    dim: int
    docs: list[RetrievalDoc] = field(default_factory=list)
    rejects: list[RejectedDoc] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.docs)

    def save(self, path: str | Path) -> None:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        header = {
            "format_version": FORMAT_VERSION,
            "dim": self.dim,
            "doc_count": len(self.docs),
        }
        with p.open("w", encoding="utf-8") as fh:
            fh.write(dumps_canonical(header) + "\n")
            for doc in self.docs:
                fh.write(dumps_canonical(doc.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Index":
        p = Path(path)
        try:
            lines = p.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise DataError(f"unreadable index: {p}: {exc}") from exc
        if not lines:
            raise DataError(f"empty index file: {p}")
        header = json.loads(lines[0])
        if header.get("format_version") != FORMAT_VERSION:
            raise DataError(f"unsupported index format_version: {header.get('format_version')}")
        docs = [RetrievalDoc.from_dict(json.loads(line)) for line in lines[1:] if line.strip()]
        if len(docs) != header.get("doc_count"):
            raise DataError(
                f"index doc_count mismatch: header {header.get('doc_count')}, found {len(docs)}"
            )
        return cls(dim=int(header["dim"]), docs=docs)


def _embed_doc(doc: RetrievalDoc, embed: EmbeddingClient, dim: int) -> RetrievalDoc:
    if doc.kind not in DOC_KINDS:
        raise DataError(f"unknown doc kind: {doc.kind}")
    if doc.kind == KIND_TEXT_GUIDELINE and doc.image_vec is not None:
        raise DataError("text_guideline must not carry an image vector")

    text_vec = None
    if doc.text_vec is not None:
        text_vec = _normalized(doc.text_vec, dim, doc.doc_id)
    elif doc.text:
        text_vec = _normalized(embed.embed_text(doc.text), dim, doc.doc_id)

    image_vec = None
    if doc.kind == KIND_IMAGE_CASE:
        if doc.image_vec is not None:
            image_vec = _normalized(doc.image_vec, dim, doc.doc_id)
        elif doc.image is not None:
            try:
                image_vec = _normalized(embed.embed_image(doc.image), dim, doc.doc_id)
            except OSError as exc:
                raise DataError(f"unreadable image payload for {doc.doc_id}: {exc}") from exc

    if text_vec is None and image_vec is None:
        raise DataError("no embeddable payload")
    doc.text_vec = text_vec
    doc.image_vec = image_vec
    return doc


def build_index(docs: list[RetrievalDoc], embed: EmbeddingClient) -> Index:
    """Embed every doc's available modalities and assemble an index.

    Per-doc embedding failures are retried once, then the doc is rejected
    with a reason; rebuilding from the same inputs with the deterministic
    stub embedder is byte-identical.
    """
    if not docs:
        raise DataError("empty corpus")
    index = Index(dim=embed.dim)
    seen: set[str] = set()
    for doc in docs:
        if doc.doc_id in seen:
            index.rejects.append(RejectedDoc(doc.doc_id, "duplicate doc_id"))
            continue
        seen.add(doc.doc_id)
        try:
            try:
                index.docs.append(_embed_doc(doc, embed, index.dim))
            except ProviderError:
                index.docs.append(_embed_doc(doc, embed, index.dim))
        except (DataError, ProviderError) as exc:
            index.rejects.append(RejectedDoc(doc.doc_id, str(exc)))
    if not index.docs:
        raise DataError("empty corpus after rejects")
    return index


def _resolve_query(query: Query, embed: EmbeddingClient | None, dim: int) -> Query:
    query.validate()
    if query.text_vec is None and query.text is not None:
        if embed is None:
            raise DataError("query text needs an embedding client")
        query.text_vec = _normalized(embed.embed_text(query.text), dim, "query")
    if query.image_vec is None and query.image is not None:
        if embed is None:
            raise DataError("query image needs an embedding client")
        query.image_vec = _normalized(embed.embed_image(query.image), dim, "query")
    if query.text_vec is None and query.image_vec is None:
        raise DataError("query has no resolvable modality")
    return query


def fusion_score(q: Query | RetrievalDoc, c: RetrievalDoc, dim: int | None = None) -> float:
    """Feature-level fusion: (q.text+q.image) . (c.text+c.image), absent = 0."""
    if q.text_vec is None and q.image_vec is None:
        raise DataError("query side has no vectors")
    if c.text_vec is None and c.image_vec is None:
        raise DataError("candidate side has no vectors")
    if dim is None:
        probe = q.text_vec if q.text_vec is not None else q.image_vec
        dim = int(probe.shape[0])
    return float(np.dot(q.combined_vec(dim), c.combined_vec(dim)))


def retrieve_context(
    index: Index,
    query: Query,
    k: int = 4,
    embed: EmbeddingClient | None = None,
    require_guideline: bool = True,
    exclude_case: str | None = None,
) -> list[RetrievalResult]:
    """Top-k by fusion score with the at-least-one-guideline constraint.

    If the corpus contains any pure-text guideline and the plain top-k has
    none, the lowest-scoring member is swapped for the best guideline.
    Docs originating from `exclude_case` are never returned.  Ties break by
    doc_id ascending; asking for more than the corpus holds returns all of
    it (constraint still applied).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not index.docs:
        raise DataError("empty index")
    query = _resolve_query(query, embed, index.dim)
    exclude = exclude_case if exclude_case is not None else query.source_case

    qvec = query.combined_vec(index.dim)
    scored: list[tuple[float, RetrievalDoc]] = []
    for doc in index.docs:
        if exclude is not None and doc.source_case == exclude:
            continue
        scored.append((float(np.dot(qvec, doc.combined_vec(index.dim))), doc))
    if not scored:
        raise DataError("empty index after source-case exclusion")
    scored.sort(key=lambda pair: (-pair[0], pair[1].doc_id))

    top = scored[: min(k, len(scored))]
    if require_guideline and not any(d.kind == KIND_TEXT_GUIDELINE for _, d in top):
        guidelines = [(s, d) for s, d in scored if d.kind == KIND_TEXT_GUIDELINE]
        if guidelines:
            top[-1] = guidelines[0]
            top.sort(key=lambda pair: (-pair[0], pair[1].doc_id))
    return [RetrievalResult(doc_id=d.doc_id, score=s, kind=d.kind) for s, d in top]


def load_docs(path: str | Path) -> list[RetrievalDoc]:
    """Read retrieval docs from a line-delimited file."""
    from .jsonlio import read_jsonl

    docs: list[RetrievalDoc] = []
    for lineno, obj in read_jsonl(path):
        try:
            docs.append(RetrievalDoc.from_dict(obj))
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}:{lineno}: bad doc record: {exc}") from exc
    return docs


def docs_from_cases(records: list[Any]) -> list[RetrievalDoc]:
    """Lift case records into image_case retrieval docs (text = joined annotation)."""
    docs = []
    for record in records:
        parts = [img.caption for img in record.images if img.caption]
        for text in (record.image_findings, record.discussion):
            if text:
                parts.append(text)
        image_payload = next(
            (img.uri for img in record.images if Path(img.uri).is_file()), None
        )
        docs.append(
            RetrievalDoc(
                doc_id=f"case-{record.id}",
                kind=KIND_IMAGE_CASE,
                text="\n".join(parts),
                image=image_payload,
                source_case=record.id,
            )
        )
    return docs
