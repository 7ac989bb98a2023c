"""Run configuration shared by every CLI subcommand.

Defaults pin the pipeline's standard knobs: retrieval k=4 with the
guideline constraint on, slice cap 20, caption filter at 20 words,
temperature 0.  A config file round-trips through JSON; validation lists
every problem before any work starts.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .jsonlio import dumps_canonical
from .textutil import sha256_hex

# fields that never influence results and are excluded from the config hash
_VOLATILE_FIELDS = ("output_dir", "cache_dir", "mock_script")


@dataclass
class RunConfig:
    corpus_paths: list[str] = field(default_factory=list)
    docs_path: str | None = None
    provider: str = "mock"  # "mock" | "http"
    mock_script: str | None = None
    model: str = "gpt-4o"
    judge_model: str = "gpt-4"
    retrieval_k: int = 4
    require_guideline: bool = True
    slice_cap: int = 20
    min_caption_words: int = 20
    qa_base: int = 3
    qa_words_per_extra: int = 80
    qa_min: int = 3
    qa_max: int = 10
    temperature: float = 0.0
    embed_dim: int = 512
    embed_url: str | None = None
    seed: int = 0
    rps: float | None = None
    parallelism: int = field(default_factory=lambda: os.cpu_count() or 1)
    cache_dir: str | None = None
    output_dir: str = "out"
    pipeline: list[dict] = field(default_factory=list)

    def validate(self) -> None:
        problems = []
        if self.provider not in ("mock", "http"):
            problems.append(f"provider must be mock or http, got {self.provider!r}")
        if self.provider == "mock" and self.mock_script is not None \
                and not Path(self.mock_script).exists():
            problems.append(f"mock_script not found: {self.mock_script}")
        if self.retrieval_k < 1:
            problems.append("retrieval_k must be >= 1")
        if self.slice_cap < 1:
            problems.append("slice_cap must be >= 1")
        if self.min_caption_words < 1:
            problems.append("min_caption_words must be >= 1")
        if not (1 <= self.qa_min <= self.qa_max):
            problems.append("qa_min/qa_max must satisfy 1 <= qa_min <= qa_max")
        if self.qa_words_per_extra < 1:
            problems.append("qa_words_per_extra must be >= 1")
        if self.temperature < 0:
            problems.append("temperature must be >= 0")
        if self.embed_dim < 1:
            problems.append("embed_dim must be >= 1")
        if self.rps is not None and self.rps <= 0:
            problems.append("rps must be positive")
        if self.parallelism < 1:
            problems.append("parallelism must be >= 1")
        for path in self.corpus_paths:
            if not Path(path).exists():
                problems.append(f"corpus path not found: {path}")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"unreadable config: {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid config JSON: {path}: {exc}") from exc
        return cls.from_dict(data)

    def config_hash(self) -> str:
        data = self.to_dict()
        for key in _VOLATILE_FIELDS:
            data.pop(key, None)
        return sha256_hex(dumps_canonical(data))
