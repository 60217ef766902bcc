"""Shared fixtures: synthetic datasets, scripted mock behaviors, rubric fixtures."""

from __future__ import annotations

import json
import re

import pytest

from citing.providers import ChatRequest
from citing.records import InstructionRecord
from citing.rubrics import CategoryRubric, RubricSet
from citing.templates import CLASSIFICATION_PREAMBLE, REVISION_PREAMBLE

# Five-way rubric used across parse/round-trip tests; the names and criteria
# double as realistic fixture content for the category machinery.
FIVE_CATEGORIES = [
    (
        "Factual Knowledge Instructions",
        "These include questions that require factual responses and can generally be "
        "answered with specific, accepted information. A good answer for these types of "
        "questions will be accurate, concise, and to the point.",
    ),
    (
        "Explanation/Definition Instructions",
        "These include questions that require detailed explanations or definitions. Good "
        "answers to these questions are typically thorough, logically structured, and free "
        "of complex jargon. They make use of clear and understandable language to break "
        "down complex topics.",
    ),
    (
        "Analysis/Evaluation Instructions",
        "These include questions that require some form of analysis or evaluation. A good "
        "response will typically be well-reasoned, provide insight, make comparisons where "
        "necessary, and may also involve critical thinking.",
    ),
    (
        "Creative Generation Instructions",
        "These include questions that require creative thinking, such as generating a "
        "list, writing a story or poem, or coming up with ideas. Good responses will be "
        "original, thoughtful, and fit the given parameters or criteria.",
    ),
    (
        "Practical Application Instructions",
        "These include questions that require a specific action or task to be performed, "
        "such as computation, translation, or conversion. Good responses will accurately "
        "complete the task and provide clear, step-by-step reasoning where appropriate.",
    ),
]

_TOPICS = [
    "the capital of France",
    "how photosynthesis works",
    "the pros and cons of remote work",
    "a poem about the sea",
    "converting miles to kilometers",
    "the tallest mountain on Earth",
    "why the sky is blue",
    "the strengths of two rival proposals",
    "names for a new coffee shop",
    "computing compound interest",
]


def make_records(n: int, *, with_output: bool = True, prefix: str = "r") -> list[InstructionRecord]:
    records = []
    for i in range(n):
        topic = _TOPICS[i % len(_TOPICS)]
        records.append(
            InstructionRecord(
                id=f"{prefix}{i:04d}",
                instruction=f"Task {i}: tell me about {topic}.",
                reference_response=f"Reference answer {i} about {topic}." if with_output else None,
            )
        )
    return records


def canned_rubric_answer(n_members: int) -> str:
    """Well-formed five-block teacher answer covering ordinals 1..n_members."""
    lines = []
    per = max(1, n_members // len(FIVE_CATEGORIES))
    used = 0
    for idx, (name, criteria) in enumerate(FIVE_CATEGORIES, start=1):
        if idx < len(FIVE_CATEGORIES):
            members = list(range(used + 1, min(used + per, n_members) + 1))
        else:
            members = list(range(used + 1, n_members + 1))
        used += len(members)
        lines.append(f"Category {idx}: {name}")
        lines.append(f"Criteria: {criteria}")
        lines.append("Members: " + ", ".join(str(m) for m in members))
    return "\n".join(lines)


def rubric_set_for(records: list[InstructionRecord]) -> RubricSet:
    """Five-category rubric whose exemplars are drawn from the given records."""
    ids = [record.id for record in records]
    assert len(ids) >= len(FIVE_CATEGORIES)
    chunks = [ids[i :: len(FIVE_CATEGORIES)] for i in range(len(FIVE_CATEGORIES))]
    categories = [
        CategoryRubric(category_id=i, name=name, criteria=criteria, exemplar_ids=chunks[i])
        for i, (name, criteria) in enumerate(FIVE_CATEGORIES)
    ]
    return RubricSet(
        categories=categories,
        induction_sample_ids=ids,
        teacher_model="fixture-teacher",
        raw_teacher_output=canned_rubric_answer(len(ids)),
    )


_RESPONSE_FIELD_RE = re.compile(r"\nResponse: (.*)\nCriteria: ", re.DOTALL)


def extract_response_field(prompt: str) -> str | None:
    match = _RESPONSE_FIELD_RE.search(prompt)
    return match.group(1) if match else None


def revising_teacher(request: ChatRequest) -> str | None:
    """Scripted teacher: answers induction with the canned rubric, revisions with a marker."""
    content = request.user_content
    if content.startswith(CLASSIFICATION_PREAMBLE):
        count = len(re.findall(r"^\d+\. ", content, flags=re.MULTILINE))
        return canned_rubric_answer(count)
    prior = extract_response_field(content)
    if prior is not None:
        return prior + " [REV]"
    return None


def marker_student(request: ChatRequest) -> str:
    """Scripted student that behaves as if it learned one revision per training round.

    Bare prompts get the instruction plus as many markers as the serving
    model's round; revision prompts get the embedded response plus one marker.
    """
    content = request.user_content
    if content.startswith(REVISION_PREAMBLE):
        prior = extract_response_field(content)
        assert prior is not None
        return prior + " [REV]"
    match = re.match(r"mock:r(\d+):", request.model_name)
    rounds = int(match.group(1)) if match else 0
    return content + " [REV]" * rounds


@pytest.fixture
def alpaca_file(tmp_path):
    entries = [
        {
            "instruction": f"Task {i}: tell me about {_TOPICS[i % len(_TOPICS)]}.",
            "input": f"context {i}" if i % 3 == 2 else "",
            "output": f"Reference answer {i}.",
        }
        for i in range(30)
    ]
    path = tmp_path / "alpaca.json"
    path.write_text(json.dumps(entries), encoding="utf-8")
    return path
