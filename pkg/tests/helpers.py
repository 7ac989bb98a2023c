"""Shared test utilities: scripted clients and a content-sensitive
synthesizing recorder used to produce keyed mock scripts."""

from __future__ import annotations

import re

from medragkit.llmclient import LlmClient, LlmRequest, MockProvider
from medragkit.textutil import sha256_hex


def ordered_client(script, **kwargs) -> LlmClient:
    return LlmClient(MockProvider(ordered=list(script)), **kwargs)


def keyed_client(script, **kwargs) -> LlmClient:
    return LlmClient(MockProvider(keyed=dict(script)), **kwargs)


_N_QUESTIONS = re.compile(r"Generate exactly (\d+) clinically valuable")
_N_CAPTIONS = re.compile(r"exactly (\d+) numbered items")
_N_FINDINGS = re.compile(r"exactly (\d+) items, one per image")


def synthesize_reply(request: LlmRequest) -> str:
    """Deterministic, format-correct reply derived from the prompt content."""
    prompt = request.messages[-1].text
    tag = sha256_hex(prompt)[:8]

    m = _N_FINDINGS.search(prompt)
    if m and "findings description for each individual image" in prompt:
        n = int(m.group(1))
        items = " ".join(f"{i}. Finding for image {i} of case {tag}." for i in range(1, n + 1))
        return f"Report: {items}"
    if "Consolidate the following per-image findings" in prompt:
        return f"Report: Consolidated findings for case {tag}."
    if "Extend the following overall image findings" in prompt:
        return f"Report: Discussion of the case, derived deterministically ({tag})."
    m = _N_CAPTIONS.search(prompt)
    if m and "detailed caption for each" in prompt:
        n = int(m.group(1))
        return " ".join(
            f"{i}. Detailed caption {i} grounded in the findings ({tag})."
            for i in range(1, n + 1)
        )
    m = _N_QUESTIONS.search(prompt)
    if m:
        n = int(m.group(1))
        blocks = []
        for i in range(1, n + 1):
            blocks.append(f"Question: What is notable finding {i} in case {tag}?")
            blocks.append(f"Answer: Notable finding {i} of case {tag}.")
        return "\n".join(blocks)
    if "Write the clinical report" in prompt:
        return f"Report: Synthetic grounded report for case {tag}."
    if "Translate the following text into Chinese" in prompt:
        return f"中文译文 {tag}"
    if "Revise the following answer" in prompt:
        return prompt.split("Answer:\n", 1)[-1]
    raise AssertionError(f"synthesizer has no rule for prompt: {prompt[:120]!r}")


class SynthesizingRecorder:
    """Provider that synthesizes replies and records a keyed script."""

    name = "mock"

    def __init__(self):
        self.script: dict[str, str] = {}

    def complete(self, request: LlmRequest) -> str:
        text = synthesize_reply(request)
        self.script[request.request_key] = text
        return text
