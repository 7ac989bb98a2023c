"""Three-aspect judge pipeline: style normalization, rubric extraction,
per-aspect 0-5 scoring, and overall averaging.

Isolation contract: the model answer is first rewritten by the judge
model seeing nothing but the answer; aspect scoring then sees only the
normalized answer plus the extracted rubric part -- never the gold
answer.  The prompt builder enforces this mechanically.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import IsolationError, MedragError, ResponseFormatError
from .llmclient import LlmClient, LlmRequest, Message, request_with_retry
from .textutil import parse_numbered_list, round_half_up, sha256_hex
from . import prompts

ASPECTS = ("key_points", "inference", "evidence")

_EXTRACTION_TEMPLATES = {
    "key_points": prompts.EXTRACT_KEY_POINTS,
    "inference": prompts.EXTRACT_REASONING,
    "evidence": prompts.EXTRACT_EVIDENCE,
}

_SCORING_TEMPLATES = {
    "key_points": prompts.SCORE_KEY_POINTS,
    "inference": prompts.SCORE_INFERENCE,
    "evidence": prompts.SCORE_EVIDENCE,
}


@dataclass
class JudgeRubric:
    key_points: list[str]
    reasoning_steps: list[str]
    evidence: list[str]
    question_id: str | None = None
    gold_hash: str | None = None

    def part(self, aspect: str) -> list[str]:
        return {
            "key_points": self.key_points,
            "inference": self.reasoning_steps,
            "evidence": self.evidence,
        }[aspect]

    def validate(self) -> None:
        for aspect in ASPECTS:
            if not self.part(aspect):
                raise MedragError(f"rubric part {aspect} is empty")


@dataclass
class AspectScores:
    key_points: float
    inference: float
    evidence: float
    overall: float

    @classmethod
    def from_aspects(cls, key_points: float, inference: float, evidence: float) -> "AspectScores":
        return cls(
            key_points=key_points,
            inference=inference,
            evidence=evidence,
            overall=overall(key_points, inference, evidence),
        )

    def to_dict(self) -> dict:
        return {
            "key_points": self.key_points,
            "inference": self.inference,
            "evidence": self.evidence,
            "overall": self.overall,
        }

    def rounded(self) -> dict:
        return {k: round_half_up(v, 2) for k, v in self.to_dict().items()}


def normalize_style(answer: str, llm: LlmClient, model: str = "gpt-4") -> str:
    """Rewrite an answer in the judge model's own style.

    The prompt contains only the answer -- no question, no gold -- so style
    normalization cannot leak scoring information.
    """
    if not answer.strip():
        raise ValueError("empty answer")
    resp = llm.call(
        LlmRequest(model, [Message("user", prompts.NORMALIZE_STYLE.format(answer=answer))])
    )
    return resp.text.strip()


def extract_rubric(
    question: str, gold_answer: str, llm: LlmClient, model: str = "gpt-4"
) -> JudgeRubric:
    """Three extraction calls over the gold answer: key points, diagnostic
    reasoning steps, evidence items -- each parsed from a numbered list."""
    if not question.strip() or not gold_answer.strip():
        raise ValueError("question and gold answer must be nonempty")

    def parse(raw: str) -> list[str]:
        items = parse_numbered_list(raw)
        if not items:
            raise ResponseFormatError("unparseable numbered list")
        return items

    parts = {}
    for aspect in ASPECTS:
        prompt = _EXTRACTION_TEMPLATES[aspect].format(question=question, answer=gold_answer)
        parts[aspect], _ = request_with_retry(llm, model, [Message("user", prompt)], parse)
    rubric = JudgeRubric(
        key_points=parts["key_points"],
        reasoning_steps=parts["inference"],
        evidence=parts["evidence"],
        gold_hash=sha256_hex(gold_answer),
    )
    rubric.validate()
    return rubric


def build_aspect_prompt(
    answer_normalized: str,
    rubric_part: list[str],
    aspect: str,
    gold_text: str | None = None,
) -> str:
    """Render a scoring prompt; refuses any prompt containing the gold text."""
    if aspect not in ASPECTS:
        raise ValueError(f"unknown aspect: {aspect}")
    if not rubric_part:
        raise ValueError("empty rubric part")
    n = len(rubric_part)
    per_item = 5.0 / n
    rubric_block = "\n".join(f"{i + 1}. {item}" for i, item in enumerate(rubric_part))
    prompt = _SCORING_TEMPLATES[aspect].format(
        n=n, per_item=f"{per_item:g}", answer=answer_normalized, rubric=rubric_block
    )
    if gold_text and gold_text.strip() and gold_text.strip() in prompt:
        raise IsolationError(
            f"aspect prompt for {aspect} contains the gold answer text"
        )
    return prompt


_FLOAT = re.compile(r"^[-+]?\d+(?:\.\d+)?$")


def score_aspect(
    answer_normalized: str,
    rubric_part: list[str],
    aspect: str,
    llm: LlmClient,
    gold_text: str | None = None,
    model: str = "gpt-4",
) -> float:
    """One scoring call; the reply must be a bare decimal in [0, 5].

    Out-of-range or non-numeric replies get one re-prompt, then error.
    The accepted value is returned verbatim, never re-scaled.
    """
    prompt = build_aspect_prompt(answer_normalized, rubric_part, aspect, gold_text)

    def parse(raw: str) -> float:
        s = raw.strip()
        if not _FLOAT.match(s):
            raise ResponseFormatError(f"non-numeric score reply: {s!r}")
        value = float(s)
        if not 0.0 <= value <= 5.0:
            raise ResponseFormatError(f"score out of [0,5]: {value}")
        return value

    value, _ = request_with_retry(llm, model, [Message("user", prompt)], parse)
    return value


def overall(key_points: float, inference: float, evidence: float) -> float:
    """Arithmetic mean of the three aspect scores (full precision)."""
    for value in (key_points, inference, evidence):
        if not 0.0 <= value <= 5.0:
            raise ValueError(f"aspect score out of [0,5]: {value}")
    return (key_points + inference + evidence) / 3.0


@dataclass
class ItemResult:
    id: str
    scores: AspectScores | None
    error: str | None = None
    original_answer_hash: str | None = None
    normalized_answer_hash: str | None = None

    def to_dict(self) -> dict:
        out: dict = {"id": self.id}
        if self.scores is not None:
            out.update(self.scores.to_dict())
        if self.error is not None:
            out["error"] = self.error
        return out


@dataclass
class JudgeReport:
    items: list[ItemResult] = field(default_factory=list)
    aggregate: dict[str, float] = field(default_factory=dict)
    excluded: int = 0

    def to_records(self) -> list[dict]:
        records = [item.to_dict() for item in self.items]
        agg = {"aggregate": True, "excluded": self.excluded,
               "n": len(self.items) - self.excluded}
        agg.update({k: self.aggregate[k] for k in ("key_points", "inference",
                                                   "evidence", "overall")})
        records.append(agg)
        return records


def judge_run(
    dataset: list[dict], llm: LlmClient, model: str = "gpt-4"
) -> JudgeReport:
    """Score every {id, question, gold, model_answer} item and aggregate.

    Per-item failures are recorded and excluded from the aggregate means,
    with the exclusion count reported.
    """
    if not dataset:
        raise ValueError("empty dataset")
    report = JudgeReport()
    sums = {aspect: 0.0 for aspect in ASPECTS}
    sums["overall"] = 0.0
    scored = 0
    for i, item in enumerate(dataset):
        item_id = str(item.get("id", i))
        try:
            normalized = normalize_style(item["model_answer"], llm, model=model)
            rubric = extract_rubric(item["question"], item["gold"], llm, model=model)
            values = {
                aspect: score_aspect(
                    normalized, rubric.part(aspect), aspect, llm,
                    gold_text=item["gold"], model=model,
                )
                for aspect in ASPECTS
            }
            scores = AspectScores.from_aspects(
                values["key_points"], values["inference"], values["evidence"]
            )
            report.items.append(ItemResult(
                id=item_id,
                scores=scores,
                original_answer_hash=sha256_hex(item["model_answer"]),
                normalized_answer_hash=sha256_hex(normalized),
            ))
            for aspect in ASPECTS:
                sums[aspect] += values[aspect]
            sums["overall"] += scores.overall
            scored += 1
        except (MedragError, KeyError, ValueError) as exc:
            report.items.append(ItemResult(id=item_id, scores=None, error=str(exc)))
            report.excluded += 1
    if scored:
        report.aggregate = {key: total / scored for key, total in sums.items()}
    else:
        report.aggregate = {key: 0.0 for key in sums}
    return report
