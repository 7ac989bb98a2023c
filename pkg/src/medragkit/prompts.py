"""Prompt templates for every provider call in the pipeline.

The parsers in `augment`, `judge`, and `corpus` depend on the exact
section markers requested here ("Report:", "Question:", "Answer:",
"{1.2.3....}" numbered lists, bare float replies), so the format blocks
are part of the wire contract and must not drift independently.
"""

from __future__ import annotations

REPORT_SYSTEM = (
    "You are an experienced radiologist. Analyze the provided {modality} and "
    "write a detailed, professional clinical report that describes only the "
    "abnormalities, significant features, or relevant observations directly "
    "visible. Use precise medical terminology and maintain a formal tone. Do "
    "not include introductory phrases or concluding remarks."
)

CONTEXT_HEADER = (
    "Here are relevant medical guidelines and clinical cases to ground your answer:"
)

ROI_HEADER = "Expert-marked regions of interest (normalized coordinates):"

REPORT_INSTRUCTION = (
    "Write the clinical report for the image content described above."
)

QA_INSTRUCTION = (
    "Generate exactly {n} clinically valuable questions and their corresponding "
    "answers about the content. The answers should be explicitly found in, or "
    "directly inferable from, the provided text."
)

FORMAT_REPORT_QA = (
    "Return the results in the following format:\n"
    "Report: {{report content}}\n"
    "Question: {{question content}}\n"
    "Answer: {{answer content}}\n"
    "Don't generate any other information."
)

FORMAT_QA_ONLY = (
    "Return the results in the following format:\n"
    "Question: {{question content}}\n"
    "Answer: {{answer content}}\n"
    "Don't generate any other information."
)

RETRY_SUFFIX = (
    "Your previous reply did not follow the required format. Answer again, "
    "following the format instructions exactly."
)

SUBIMAGE_CAPTIONS = (
    "The following case-level findings describe a group of {total} medical "
    "images. Write a detailed caption for each of the {n} listed images, "
    "grounded strictly in the findings text. Return the response in the "
    "following format: {{1.2.3....}} with exactly {n} numbered items, one per "
    "listed image, in order. Please do not provide any additional information.\n"
    "Images:\n{image_list}\n"
    "Case-level findings:\n{findings}"
)

SEGMENT_PER_IMAGE = (
    "The case annotation below covers {n} medical images. Based on the "
    "annotation, generate a findings description for each individual image.\n"
    "Return the results in the following format:\n"
    "Report: {{a numbered list 1.2.3.... with exactly {n} items, one per image, in order}}\n"
    "Don't generate any other information.\n"
    "Images:\n{image_list}\n"
    "Case annotation:\n{annotation}"
)

SEGMENT_CONSOLIDATE = (
    "Consolidate the following per-image findings into one overall "
    "image-findings section for the case.\n"
    "Return the results in the following format:\n"
    "Report: {{overall findings}}\n"
    "Don't generate any other information.\n"
    "Per-image findings:\n{per_image}\n"
    "Original annotation:\n{annotation}"
)

SEGMENT_DISCUSSION = (
    "Extend the following overall image findings into a discussion section "
    "covering the diagnostic reasoning, supporting evidence, and relevant "
    "background for the case.\n"
    "Return the results in the following format:\n"
    "Report: {{discussion}}\n"
    "Don't generate any other information.\n"
    "Overall findings:\n{findings}\n"
    "Clinical history:\n{history}"
)

NORMALIZE_STYLE = (
    "Revise the following answer so it reads in your own writing style. "
    "Preserve every factual claim, every reasoning step, and all cited "
    "evidence; do not add or remove content. Return only the revised answer.\n"
    "Answer:\n{answer}"
)

EXTRACT_KEY_POINTS = (
    "Based on the question and answer, summarize the ten key points that you "
    "consider to be the most crucial from the standard answer. Return the "
    "response in the following format: {{1.2.3....}}\n"
    "Here is the question: {question}\n"
    "Here is the answer: {answer}\n"
    "Please do not provide any additional information."
)

EXTRACT_REASONING = (
    "Based on the question and answer, provide a detailed summary of the "
    "diagnostic reasoning from the standard answer, step by step. Return the "
    "response in the following format: {{1.2.3....}}\n"
    "Here is the question: {question}\n"
    "Here is the answer: {answer}\n"
    "Please do not provide any additional information."
)

EXTRACT_EVIDENCE = (
    "Based on the question and answer, provide a detailed list of the "
    "evidence put forward by the correct answer. Return the response in the "
    "following format: {{1.2.3....}}\n"
    "Here is the question: {question}\n"
    "Here is the answer: {answer}\n"
    "Please do not provide any additional information."
)

_SCORE_PREAMBLE = (
    "Act as a USMLE evaluator: assess a medical student's answer against the "
    "reference material below. "
)

SCORE_KEY_POINTS = (
    _SCORE_PREAMBLE
    + "Judge whether the student's answer includes these key points (or other "
    "relevant points, but the count must be complete). The reference has {n} "
    "key points; each point covered is worth {per_item} of the 5 available "
    "points (for example, covering half of them earns 2.5).\n"
    "Medical student's answer:\n{answer}\n"
    "Key Points:\n{rubric}\n"
    "Please only return a float number (from 0 to 5). Check each point one by "
    "one; do not judge language style, only whether the answer includes "
    "correct, relevant, and complete key points. Don't generate any other "
    "information."
)

SCORE_INFERENCE = (
    _SCORE_PREAMBLE
    + "Judge whether the student's diagnostic reasoning is correct against "
    "the reference reasoning. The reference has {n} steps; each correct step "
    "is worth {per_item} of the 5 available points (an alternative correct "
    "reasoning path also counts, but the number of steps must be complete).\n"
    "Medical student's answer:\n{answer}\n"
    "Ground-truth reasoning:\n{rubric}\n"
    "Please only return a float number (from 0 to 5). Check each step one by "
    "one; do not judge language style, only whether the reasoning is correct "
    "or relevant. Don't generate any other information."
)

SCORE_EVIDENCE = (
    _SCORE_PREAMBLE
    + "Judge whether the student's answer provides detailed supporting "
    "evidence like the reference evidence list. The reference has {n} "
    "evidence items; each item is worth {per_item} of the 5 available points "
    "(other correct detailed evidence also counts, but the amount must be "
    "complete).\n"
    "Medical student's answer:\n{answer}\n"
    "Detailed evidence:\n{rubric}\n"
    "Please only return a float number (from 0 to 5). Check each item one by "
    "one; do not judge language style, only whether the evidence is correct "
    "and complete. Don't generate any other information."
)

CLASSIFY_MODALITY = (
    "Classify the medical image described below into exactly one of these "
    "categories: X-ray, DSA, CT, MR, PET/SPECT, Ultrasound, Histopathology, "
    "Simulated chart, Non-medical, Other. Reply with the category name only.\n"
    "{payload}"
)

CLASSIFY_QUESTION = (
    "Classify the question below into exactly one of two categories.\n"
    "knowledge: it can be answered with sufficient medical knowledge alone, "
    "requiring minimal inference.\n"
    "inference: reaching the correct answer requires reasoning over the case, "
    "regardless of how complex the medical knowledge involved is.\n"
    "Reply with 'knowledge' or 'inference' only.\n"
    "Question: {question}\n"
    "Answer: {answer}"
)

TRANSLATE_ZH = (
    "Translate the following text into Chinese. Preserve medical terminology "
    "precisely. Return only the translation.\n{text}"
)
