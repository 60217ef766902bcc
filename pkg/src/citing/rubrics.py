"""Teacher-driven rubric induction.

A sampled subset of training instructions is sent to the teacher with the
classification prompt; the numbered blocks it answers with are parsed into a
:class:`RubricSet` (category name, criteria text, and exemplar membership).
Parse failures trigger a reprompt that quotes the error, up to a retry limit.
"""

from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import CitingError, PipelineError, RubricParseError
from .jsonio import read_json_file, write_json_file
from .providers import ChatProvider, user_request
from .records import InstructionRecord
from .templates import build_classification_prompt

logger = logging.getLogger(__name__)

_CATEGORY_RE = re.compile(r"^\s*Category\s+(\d+)\s*:\s*(.+?)\s*$", re.IGNORECASE)
_CRITERIA_RE = re.compile(r"^\s*Criteria\s*:\s*(.*)$", re.IGNORECASE)
_MEMBERS_RE = re.compile(r"^\s*Members\s*:\s*(.*)$", re.IGNORECASE)


@dataclass
class CategoryRubric:
    category_id: int
    name: str
    criteria: str
    exemplar_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.name or not self.name.strip():
            raise CitingError(f"category {self.category_id}: name must be non-empty")
        if not self.criteria or not self.criteria.strip():
            raise CitingError(f"category {self.category_id}: criteria must be non-empty")


@dataclass
class RubricSet:
    categories: list[CategoryRubric]
    induction_sample_ids: list[str] = field(default_factory=list)
    teacher_model: str = ""
    raw_teacher_output: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.categories:
            raise CitingError("a rubric set needs at least one category")
        ids = [c.category_id for c in self.categories]
        if ids != list(range(len(ids))):
            raise CitingError(f"category ids must be contiguous from 0, got {ids}")
        seen: set[str] = set()
        for category in self.categories:
            for record_id in category.exemplar_ids:
                if record_id in seen:
                    raise CitingError(f"record {record_id!r} is an exemplar of two categories")
                seen.add(record_id)

    def category(self, category_id: int) -> CategoryRubric:
        return self.categories[category_id]

    def to_dict(self) -> dict:
        return {
            "teacher_model": self.teacher_model,
            "induction_sample_ids": list(self.induction_sample_ids),
            "categories": [
                {
                    "category_id": c.category_id,
                    "name": c.name,
                    "criteria": c.criteria,
                    "exemplar_ids": list(c.exemplar_ids),
                }
                for c in self.categories
            ],
            "raw_teacher_output": self.raw_teacher_output,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "RubricSet":
        return cls(
            categories=[
                CategoryRubric(
                    category_id=c["category_id"],
                    name=c["name"],
                    criteria=c["criteria"],
                    exemplar_ids=list(c.get("exemplar_ids", [])),
                )
                for c in obj["categories"]
            ],
            induction_sample_ids=list(obj.get("induction_sample_ids", [])),
            teacher_model=obj.get("teacher_model", ""),
            raw_teacher_output=obj.get("raw_teacher_output", ""),
        )

    def save(self, path: str | Path) -> None:
        write_json_file(path, self.to_dict())

    @classmethod
    def load(cls, path: str | Path) -> "RubricSet":
        return cls.from_dict(read_json_file(path))


def sample_for_induction(
    train: Sequence[InstructionRecord], k: int, seed: int
) -> list[InstructionRecord]:
    """Pick k distinct records for the classification prompt (seeded)."""
    if k < 1 or k > len(train):
        raise CitingError(f"induction sample size {k} out of range 1..{len(train)}")
    return random.Random(seed).sample(list(train), k)


@dataclass
class _ParsedBlock:
    number: int
    name: str
    criteria_lines: list[str]
    member_ordinals: list[int]
    header_line: str


def _parse_blocks(text: str) -> list[_ParsedBlock]:
    blocks: list[_ParsedBlock] = []
    current: _ParsedBlock | None = None
    in_criteria = False
    for line in text.splitlines():
        header = _CATEGORY_RE.match(line)
        if header:
            current = _ParsedBlock(
                number=int(header.group(1)),
                name=header.group(2).strip(),
                criteria_lines=[],
                member_ordinals=[],
                header_line=line.strip(),
            )
            blocks.append(current)
            in_criteria = False
            continue
        if current is None:
            continue
        criteria = _CRITERIA_RE.match(line)
        if criteria:
            current.criteria_lines.append(criteria.group(1).strip())
            in_criteria = True
            continue
        members = _MEMBERS_RE.match(line)
        if members:
            current.member_ordinals.extend(int(m) for m in re.findall(r"\d+", members.group(1)))
            in_criteria = False
            continue
        if in_criteria and line.strip():
            current.criteria_lines.append(line.strip())
    return blocks


def parse_rubric_response(
    text: str, sample_ids: Sequence[str]
) -> tuple[list[CategoryRubric], list[str]]:
    """Parse numbered teacher blocks into categories.

    Member ordinals are 1-based positions into ``sample_ids``. Returns the
    categories plus the ids the teacher left unassigned.
    """
    blocks = _parse_blocks(text)
    if not blocks:
        raise RubricParseError("zero categories parsed from teacher output", span=text[:120])

    seen_numbers: set[int] = set()
    assigned: dict[int, int] = {}
    categories: list[CategoryRubric] = []
    for position, block in enumerate(blocks):
        if block.number in seen_numbers:
            raise RubricParseError(
                f"duplicate category number {block.number}", span=block.header_line
            )
        seen_numbers.add(block.number)
        criteria = " ".join(part for part in block.criteria_lines if part).strip()
        if not criteria:
            raise RubricParseError(
                f"category {block.number} has no criteria text", span=block.header_line
            )
        if not block.name:
            raise RubricParseError(f"category {block.number} has no name", span=block.header_line)
        exemplar_ids: list[str] = []
        for ordinal in block.member_ordinals:
            if ordinal < 1 or ordinal > len(sample_ids):
                raise RubricParseError(
                    f"member ordinal {ordinal} out of range 1..{len(sample_ids)}",
                    span=block.header_line,
                )
            if ordinal in assigned:
                raise RubricParseError(
                    f"instruction ordinal {ordinal} assigned to more than one category",
                    span=block.header_line,
                )
            assigned[ordinal] = position
            exemplar_ids.append(sample_ids[ordinal - 1])
        categories.append(
            CategoryRubric(
                category_id=position,
                name=block.name,
                criteria=criteria,
                exemplar_ids=exemplar_ids,
            )
        )

    unassigned = [
        sample_ids[i] for i in range(len(sample_ids)) if (i + 1) not in assigned
    ]
    return categories, unassigned


def induce_rubrics(
    teacher: ChatProvider,
    subset: Sequence[InstructionRecord],
    retries: int = 2,
    *,
    temperature: float = 0.0,
    max_new_tokens: int = 1024,
    max_categories: int | None = None,
    out_path: str | Path | None = None,
) -> RubricSet:
    """Prompt the teacher, parse its category blocks, reprompting on parse failure.

    ``retries`` counts reprompts after the first attempt; exhausting them
    raises a PipelineError carrying the last raw output.
    """
    if not subset:
        raise CitingError("rubric induction requires a non-empty subset")
    base_prompt = build_classification_prompt(subset, max_categories=max_categories)
    sample_ids = [record.id for record in subset]

    prompt = base_prompt
    raw = ""
    last_error: RubricParseError | None = None
    for attempt in range(retries + 1):
        raw = teacher.chat(
            user_request(
                teacher.model_name,
                prompt,
                temperature=temperature,
                max_new_tokens=max_new_tokens,
            )
        )
        try:
            categories, unassigned = parse_rubric_response(raw, sample_ids)
        except RubricParseError as exc:
            last_error = exc
            logger.warning("rubric parse failed (attempt %d/%d): %s", attempt + 1, retries + 1, exc)
            prompt = (
                f"{base_prompt}\n\n"
                f"Your previous answer could not be parsed: {exc}\n"
                f"Answer again, following the requested format exactly."
            )
            continue
        if unassigned:
            logger.warning(
                "%d induction instructions left unassigned by the teacher: %s",
                len(unassigned),
                unassigned[:10],
            )
        rubrics = RubricSet(
            categories=categories,
            induction_sample_ids=sample_ids,
            teacher_model=teacher.model_name,
            raw_teacher_output=raw,
        )
        if out_path is not None:
            rubrics.save(out_path)
        return rubrics

    raise PipelineError(
        f"rubric induction failed after {retries + 1} attempts: {last_error}; "
        f"last raw output: {raw[:500]!r}"
    )
