"""Prompt templates for teacher classification, teacher revision, and student generation.

The preamble wording is load-bearing: downstream parsers, conformance tests,
and the trained revision behavior all key on these exact strings, so treat
any edit here as a breaking change.
"""

from __future__ import annotations

from typing import Sequence

from .errors import CitingError
from .records import InstructionRecord

CLASSIFICATION_PREAMBLE = (
    "Please classify the following instructions and give good or bad criteria for each category:"
)
CLASSIFICATION_HEADER = "Given instructions:"
CLASSIFICATION_FORMAT_SUFFIX = (
    "Answer with one numbered block per category, formatted exactly as:\n"
    "Category <i>: <name of the category>\n"
    "Criteria: <good or bad criteria for the category>\n"
    "Members: <comma-separated ordinals of the instructions in the category>"
)

REVISION_PREAMBLE = (
    "Below is an instruction and its response. In addition, a criteria for the instruction "
    "is given to provide a good or bad judgment standard for completing this instruction. "
    "Please revise the response according to the given instruction and criteria."
)
REVISION_CUE = "The revised response is:"

STUDENT_TEMPLATES = ("bare", "with_context")


def _one_line(text: str) -> str:
    return " ".join(text.splitlines())


def build_classification_prompt(
    subset: Sequence[InstructionRecord],
    max_categories: int | None = None,
) -> str:
    """Prompt asking the teacher to group instructions and write per-group criteria.

    Instructions are listed one per line as ``<ordinal>. <text>`` (internal
    newlines collapsed); ordinals are 1-based and later map parsed member
    lists back to record ids.
    """
    if not subset:
        raise CitingError("classification prompt requires a non-empty subset")
    lines = [CLASSIFICATION_PREAMBLE, CLASSIFICATION_HEADER]
    for ordinal, record in enumerate(subset, start=1):
        lines.append(f"{ordinal}. {_one_line(record.instruction)}")
    lines.append("")
    lines.append(CLASSIFICATION_FORMAT_SUFFIX)
    if max_categories is not None:
        lines.append(f"Use at most {max_categories} categories.")
    return "\n".join(lines)


def build_revision_prompt(instruction: str, criteria: str, response: str) -> str:
    """Teacher/student revision prompt: preamble, labeled fields, trailing cue.

    Field order is Instruction, Response, Criteria.
    """
    if not instruction or not criteria or not response:
        raise CitingError("revision prompt requires non-empty instruction, criteria, and response")
    return (
        f"{REVISION_PREAMBLE}\n"
        f"Instruction: {instruction}\n"
        f"Response: {response}\n"
        f"Criteria: {criteria}\n"
        f"{REVISION_CUE}"
    )


def student_prompt(record: InstructionRecord, template: str = "bare") -> str:
    """Prompt given to the student for first-pass generation.

    ``bare`` sends the instruction alone; ``with_context`` inlines the
    record's context block underneath when present.
    """
    if template not in STUDENT_TEMPLATES:
        raise CitingError(f"unknown student prompt template {template!r}")
    if template == "with_context" and record.context:
        return f"{record.instruction}\n\nInput:\n{record.context}"
    return record.instruction
