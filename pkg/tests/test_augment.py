from __future__ import annotations

import random

import pytest

from medragkit.augment import (
    InstructionSample,
    PromptBundle,
    Turn,
    generate_qapairs,
    generate_report,
    generate_subimage_captions,
    parse_report_qa,
    qa_pair_count,
    render_rois,
    translate_subset,
)
from medragkit.corpus import CaseRecord, ImageRef, Roi
from medragkit.errors import DataError, ResponseFormatError

from helpers import ordered_client


# ---------------------------------------------------------------------------
# parse_report_qa
# ---------------------------------------------------------------------------


def test_parse_report_with_two_pairs():
    parsed = parse_report_qa("Report: X Question: Q1 Answer: A1 Question: Q2 Answer: A2")
    assert parsed.report == "X"
    assert parsed.pairs == [("Q1", "A1"), ("Q2", "A2")]
    assert "Report: X" in parsed.raw


def test_parse_pairs_without_report():
    parsed = parse_report_qa("Question: Q Answer: A")
    assert parsed.report is None
    assert parsed.pairs == [("Q", "A")]


def test_parse_dangling_question_errors():
    with pytest.raises(ResponseFormatError, match="dangling question"):
        parse_report_qa("Report: X Question: Q")


def test_parse_answer_without_question_errors():
    with pytest.raises(ResponseFormatError, match="without a preceding"):
        parse_report_qa("Answer: A")


def test_parse_markers_case_insensitive_with_noise():
    parsed = parse_report_qa(
        "Sure, here you go.\nREPORT: body text\nquestion: q?\nANSWER: a.",
        expect_report=True,
    )
    assert parsed.report == "body text"
    assert parsed.pairs == [("q?", "a.")]


def test_parse_missing_report_when_expected():
    with pytest.raises(ResponseFormatError, match="missing 'Report:'"):
        parse_report_qa("Question: Q Answer: A", expect_report=True)


# ---------------------------------------------------------------------------
# qa_pair_count
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "words,expected",
    [(1, 3), (79, 3), (80, 4), (100, 4), (559, 9), (560, 10), (2000, 10)],
)
def test_qa_pair_count_formula(words, expected):
    text = " ".join(["w"] * words)
    assert qa_pair_count(text) == expected


# ---------------------------------------------------------------------------
# generate_qapairs
# ---------------------------------------------------------------------------


def qa_blocks(n: int) -> str:
    return "\n".join(
        f"Question: Q{i}\nAnswer: A{i}" for i in range(1, n + 1)
    )


def test_generate_qapairs_happy_path():
    text = " ".join(["word"] * 100)  # n = 4
    llm = ordered_client([qa_blocks(4)])
    samples = generate_qapairs(text, ["img.png"], llm, source_case="case-1")
    assert len(samples) == 4
    for i, sample in enumerate(samples, start=1):
        assert sample.sample_id == f"case-1-qa{i:02d}"
        assert [t.role for t in sample.turns] == ["user", "assistant"]
        assert sample.turns[0].text == f"Q{i}"
        assert sample.source_case == "case-1"


def test_generate_qapairs_retry_on_count_mismatch():
    text = " ".join(["word"] * 100)  # n = 4
    llm = ordered_client([qa_blocks(2), qa_blocks(5)])
    samples = generate_qapairs(text, [], llm, source_case="c")
    assert len(samples) == 5  # retry output accepted: within [3,10]


def test_generate_qapairs_too_few_after_retry():
    text = " ".join(["word"] * 10)
    llm = ordered_client([qa_blocks(1), qa_blocks(2)])
    with pytest.raises(ResponseFormatError, match="fewer than 3"):
        generate_qapairs(text, [], llm, source_case="c")


def test_generate_qapairs_excess_truncated_to_ten():
    text = " ".join(["word"] * 10)  # n = 3
    llm = ordered_client([qa_blocks(12), qa_blocks(12)])
    samples = generate_qapairs(text, [], llm, source_case="c")
    assert len(samples) == 10


def test_generate_qapairs_empty_text():
    with pytest.raises(ValueError):
        generate_qapairs("  ", [], ordered_client([]), source_case="c")


# ---------------------------------------------------------------------------
# generate_report
# ---------------------------------------------------------------------------


def test_generate_report_unannotated_with_context():
    llm = ordered_client(["Report: Grounded report body."])
    report = generate_report(
        ["img.png"], ["guideline text one", "case text two"],
        [Roi(0.1, 0.2, 0.4, 0.5, "lesion")], llm,
    )
    assert report == "Grounded report body."


def test_generate_report_prompt_carries_context_rois_and_caption():
    captured = {}

    class Spy:
        name = "spy"

        def complete(self, request):
            captured["prompt"] = request.messages[-1].text
            return "Report: ok"

    from medragkit.llmclient import LlmClient

    llm = LlmClient(Spy())
    generate_report(["img.png"], ["the guideline body"],
                    [Roi(0.1, 0.2, 0.4, 0.5, "lesion")], llm,
                    existing_caption="existing expert caption")
    prompt = captured["prompt"]
    assert "the guideline body" in prompt
    assert "region (0.1,0.2)-(0.4,0.5): lesion" in prompt
    assert "existing expert caption" in prompt
    assert "Report:" in prompt and "Question:" in prompt


def test_generate_report_refuses_ungrounded():
    with pytest.raises(ValueError, match="ungrounded augmentation refused"):
        generate_report(["img.png"], [], [], ordered_client([]))


def test_generate_report_annotated_without_context_allowed():
    llm = ordered_client(["Report: augments the caption."])
    report = generate_report(["img.png"], [], [], llm,
                             existing_caption="caption")
    assert report == "augments the caption."


def test_generate_report_unparseable_twice():
    llm = ordered_client(["nothing here", "still nothing"])
    with pytest.raises(ResponseFormatError):
        generate_report(["i.png"], ["ctx"], [], llm)


def test_render_rois_format():
    assert render_rois([Roi(0.25, 0.5, 0.75, 1.0, "mass")]) == [
        "region (0.25,0.5)-(0.75,1): mass"
    ]


# ---------------------------------------------------------------------------
# generate_subimage_captions
# ---------------------------------------------------------------------------


def six_image_case() -> CaseRecord:
    return CaseRecord(
        id="eurorad-1",
        source="eurorad",
        images=[ImageRef(image_id=f"fig-{i}", uri=f"fig{i}.png") for i in range(6)],
        image_findings=(
            "Sagittal T2-weighted imaging shows a large cystic mass with nodular "
            "low-signal components; post-contrast imaging shows wall enhancement."
        ),
        human_annotated=True,
    )


def test_subimage_captions_six_images():
    reply = "\n".join(f"{i}. Caption for figure {i}." for i in range(1, 7))
    llm = ordered_client([reply])
    out = generate_subimage_captions(six_image_case(), llm)
    assert [img.caption for img in out.images] == [
        f"Caption for figure {i}." for i in range(1, 7)
    ]


def test_subimage_captions_identity_when_all_captioned():
    case = six_image_case()
    for img in case.images:
        img.caption = "already captioned"
    llm = ordered_client([])  # a call would exhaust the empty script
    assert generate_subimage_captions(case, llm) is case


def test_subimage_captions_requires_findings():
    case = six_image_case()
    case.image_findings = None
    with pytest.raises(ValueError, match="image_findings"):
        generate_subimage_captions(case, ordered_client([]))


def test_subimage_captions_only_fills_missing():
    case = six_image_case()
    case.images[0].caption = "kept caption"
    reply = "\n".join(f"{i}. New caption {i}." for i in range(1, 6))
    out = generate_subimage_captions(case, ordered_client([reply]))
    assert out.images[0].caption == "kept caption"
    assert out.images[1].caption == "New caption 1."


# ---------------------------------------------------------------------------
# translate_subset
# ---------------------------------------------------------------------------


def sample_store(n: int) -> list[InstructionSample]:
    return [
        InstructionSample(
            sample_id=f"s{i:03d}",
            turns=[Turn("user", f"question {i}"), Turn("assistant", f"answer {i}")],
            source_case=f"case-{i}",
        )
        for i in range(n)
    ]


def test_translate_subset_seeded_selection():
    store = sample_store(100)
    # two turns per selected sample -> 20 scripted replies
    llm = ordered_client([f"译文{i}" for i in range(20)])
    out = translate_subset(store, 0.1, seed=7, llm=llm)
    assert len(out) == 10
    expected = sorted(random.Random(7).sample(range(100), 10))
    assert [s.sample_id for s in out] == [f"s{i:03d}-zh" for i in expected]
    assert all(s.language == "zh" for s in out)
    assert all(store[i].language == "en" for i in range(100))  # originals retained


def test_translate_subset_deterministic():
    store = sample_store(30)
    llm_a = ordered_client([f"t{i}" for i in range(60)])
    llm_b = ordered_client([f"t{i}" for i in range(60)])
    a = translate_subset(store, 0.5, seed=3, llm=llm_a)
    b = translate_subset(store, 0.5, seed=3, llm=llm_b)
    assert [s.to_dict() for s in a] == [s.to_dict() for s in b]


def test_translate_subset_full_fraction():
    store = sample_store(4)
    llm = ordered_client([f"t{i}" for i in range(8)])
    assert len(translate_subset(store, 1.0, seed=0, llm=llm)) == 4


def test_translate_subset_zero_fraction_rejected():
    with pytest.raises(ValueError):
        translate_subset(sample_store(4), 0.0, seed=0, llm=ordered_client([]))


# ---------------------------------------------------------------------------
# sample / bundle validation
# ---------------------------------------------------------------------------


def test_sample_turn_alternation_enforced():
    bad = InstructionSample(
        sample_id="x",
        turns=[Turn("assistant", "a"), Turn("user", "q")],
    )
    with pytest.raises(DataError, match="alternate"):
        bad.validate()


def test_closed_qa_requires_options():
    bad = InstructionSample(
        sample_id="x",
        task_type="closed_qa",
        turns=[Turn("user", "Which?"), Turn("assistant", "A")],
    )
    with pytest.raises(DataError, match="enumerated options"):
        bad.validate()
    good = InstructionSample(
        sample_id="x",
        task_type="closed_qa",
        turns=[Turn("user", "Which? (A) cyst (B) tumour"), Turn("assistant", "A")],
    )
    good.validate()


def test_sample_round_trip():
    sample = InstructionSample(
        sample_id="s1",
        images=["a.png"],
        turns=[Turn("user", "q"), Turn("assistant", "a")],
        task_type="open_qa",
        provenance="human_annotated",
        source_case="c1",
        context_docs=["g0"],
    )
    assert InstructionSample.from_dict(sample.to_dict()).to_dict() == sample.to_dict()


def test_prompt_bundle_validation():
    bundle = PromptBundle(system="sys", format_block="free-form JSON")
    with pytest.raises(DataError, match="layout"):
        bundle.validate()
    ok = PromptBundle(system="sys", guideline_context=["a", "b"])
    ok.validate(max_context=2)
    with pytest.raises(DataError, match="exceeds"):
        ok.validate(max_context=1)
