"""Staged training-data manifests over an instruction-sample store.

Stages are strict filters: pretrain keeps caption samples whose caption
has at least 20 words, instruction keeps synthetic provenance only,
annealing keeps human-annotated provenance only.  Manifests reference
sample ids, never payloads, and are byte-deterministic per seed.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .augment import InstructionSample
from .errors import ManifestError
from .jsonlio import dumps_canonical
from .textutil import word_count

STAGES = ("pretrain", "instruction", "annealing")

PRETRAIN_MIN_CAPTION_WORDS = 20


@dataclass
class TrainingManifest:
    stage: str
    sample_ids: list[str] = field(default_factory=list)
    seed: int = 0
    removals: int = 0
    # per-sample {source, provenance, language}; in-memory only, enables
    # leakage exclusion and count reporting without re-reading the store
    sample_meta: dict[str, dict] = field(default_factory=dict)

    @property
    def counts_provenance(self) -> dict[str, int]:
        return self._count("provenance")

    @property
    def counts_language(self) -> dict[str, int]:
        return self._count("language")

    def _count(self, key: str) -> dict[str, int]:
        counts: dict[str, int] = {}
        for sid in self.sample_ids:
            value = self.sample_meta.get(sid, {}).get(key, "unknown")
            counts[value] = counts.get(value, 0) + 1
        return dict(sorted(counts.items()))

    def validate(self) -> None:
        if self.stage not in STAGES:
            raise ManifestError(f"unknown stage: {self.stage}")
        if not self.sample_ids:
            raise ManifestError("stage filter yields zero samples")
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise ManifestError("duplicate sample ids in manifest")

    def header(self) -> dict:
        return {
            "stage": self.stage,
            "seed": self.seed,
            "counts": {
                "provenance": self.counts_provenance,
                "language": self.counts_language,
            },
            "size": len(self.sample_ids),
            "removals": self.removals,
        }

    def write(self, path: str | Path) -> None:
        self.validate()
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        with p.open("w", encoding="utf-8") as fh:
            fh.write(dumps_canonical(self.header()) + "\n")
            for sample_id in self.sample_ids:
                fh.write(sample_id + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "TrainingManifest":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines:
            raise ManifestError(f"empty manifest file: {path}")
        header = json.loads(lines[0])
        manifest = cls(
            stage=header["stage"],
            sample_ids=[line for line in lines[1:] if line.strip()],
            seed=header.get("seed", 0),
            removals=header.get("removals", 0),
        )
        manifest.validate()
        return manifest


def _meta(sample: InstructionSample) -> dict:
    return {
        "source": sample.source_case,
        "provenance": sample.provenance,
        "language": sample.language,
    }


def _stage_filter(samples: list[InstructionSample], stage: str) -> list[InstructionSample]:
    if stage == "annealing":
        return [s for s in samples if s.provenance == "human_annotated"]
    if stage == "instruction":
        return [s for s in samples if s.provenance == "synthetic"]
    if stage == "pretrain":
        picked = []
        for s in samples:
            if s.task_type != "caption":
                continue
            caption = next((t.text for t in reversed(s.turns) if t.role == "assistant"), "")
            if word_count(caption) >= PRETRAIN_MIN_CAPTION_WORDS:
                picked.append(s)
        return picked
    raise ManifestError(f"unknown stage: {stage}")


def build_manifest(
    store: list[InstructionSample],
    stage: str,
    seed: int = 0,
    limit: int | None = None,
) -> TrainingManifest:
    """Apply the stage filter, shuffle with the seed, and optionally cap size."""
    if not store:
        raise ManifestError("empty sample store")
    filtered = _stage_filter(store, stage)
    if not filtered:
        raise ManifestError("stage filter yields zero samples")
    rng = random.Random(seed)
    shuffled = list(filtered)
    rng.shuffle(shuffled)
    if limit is not None:
        if limit < 1:
            raise ManifestError("limit must be >= 1")
        shuffled = shuffled[:limit]
    return TrainingManifest(
        stage=stage,
        sample_ids=[s.sample_id for s in shuffled],
        seed=seed,
        sample_meta={s.sample_id: _meta(s) for s in shuffled},
    )


def exclude_benchmark_leakage(
    manifest: TrainingManifest,
    benchmark_ids: set[str] | list[str],
    store: list[InstructionSample] | None = None,
) -> TrainingManifest:
    """Drop samples whose source case id is in the benchmark exclusion list.

    The returned manifest reports the removal count; an all-excluded
    manifest comes back empty and fails downstream validation with
    "stage filter yields zero samples".
    """
    excluded = set(benchmark_ids)
    meta = dict(manifest.sample_meta)
    if store is not None:
        meta.update({s.sample_id: _meta(s) for s in store if s.sample_id in set(manifest.sample_ids)})
    kept_ids = [
        sid for sid in manifest.sample_ids if meta.get(sid, {}).get("source") not in excluded
    ]
    removed = len(manifest.sample_ids) - len(kept_ids)
    return TrainingManifest(
        stage=manifest.stage,
        sample_ids=kept_ids,
        seed=manifest.seed,
        removals=manifest.removals + removed,
        sample_meta={sid: meta[sid] for sid in kept_ids if sid in meta},
    )
