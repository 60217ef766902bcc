"""Instruction datasets: loading, splitting, and JSONL persistence.

Two on-disk shapes are understood:

* ``alpaca-json`` — a JSON array of ``{instruction, input, output}`` objects.
* ``records-jsonl`` — one JSON object per line with keys ``id``,
  ``instruction``, ``context``, ``reference_response``, ``category_id``,
  ``criteria`` (absent keys mean null).

A dataset manifest is a JSON object ``{name, files: [...], format}``; its
constituent files are concatenated and every record id is prefixed with the
source file's stem so ids stay unique across mixtures.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DatasetError
from .jsonio import dump_json_line, read_json_file

ALPACA_JSON = "alpaca-json"
RECORDS_JSONL = "records-jsonl"

_RECORD_KEYS = ("id", "instruction", "context", "reference_response", "category_id", "criteria")


@dataclass
class InstructionRecord:
    """One instruction with its optional reference answer and assigned criteria."""

    id: str
    instruction: str
    context: str | None = None
    reference_response: str | None = None
    category_id: int | None = None
    criteria: str | None = None

    def __post_init__(self):
        if not self.id:
            raise DatasetError("record id must be non-empty")
        if not self.instruction or not self.instruction.strip():
            raise DatasetError(f"record {self.id!r}: instruction must be non-empty")
        if (self.category_id is None) != (self.criteria is None):
            raise DatasetError(
                f"record {self.id!r}: criteria must be present exactly when category_id is present"
            )

    def to_obj(self) -> dict:
        return {
            "id": self.id,
            "instruction": self.instruction,
            "context": self.context,
            "reference_response": self.reference_response,
            "category_id": self.category_id,
            "criteria": self.criteria,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "InstructionRecord":
        unknown = set(obj) - set(_RECORD_KEYS)
        if unknown:
            raise DatasetError(f"unknown record keys: {sorted(unknown)}")
        return cls(
            id=str(obj["id"]),
            instruction=obj["instruction"],
            context=obj.get("context"),
            reference_response=obj.get("reference_response"),
            category_id=obj.get("category_id"),
            criteria=obj.get("criteria"),
        )


@dataclass
class DatasetSplit:
    """Disjoint train/validation/test partition of a record list."""

    train: list[InstructionRecord]
    validation: list[InstructionRecord]
    test: list[InstructionRecord]
    seed: int
    ratios: tuple[float, float, float]

    def sizes(self) -> tuple[int, int, int]:
        return (len(self.train), len(self.validation), len(self.test))


def _check_unique_ids(records: Sequence[InstructionRecord]) -> None:
    seen: set[str] = set()
    for record in records:
        if record.id in seen:
            raise DatasetError(f"duplicate record id {record.id!r}")
        seen.add(record.id)


def _ordinal_id(index: int) -> str:
    return f"{index:06d}"


def load_alpaca_json(path: str | Path) -> list[InstructionRecord]:
    """Load an Alpaca-style array of instruction/input/output objects."""
    path = Path(path)
    try:
        entries = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(entries, list):
        raise DatasetError(f"{path}: expected a JSON array of entries")

    records = []
    for index, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise DatasetError(f"{path}: entry {index} is not an object")
        instruction = entry.get("instruction")
        if not isinstance(instruction, str) or not instruction.strip():
            raise DatasetError(f"{path}: entry {index} is missing a non-empty 'instruction'")
        context = entry.get("input")
        if context is not None and not isinstance(context, str):
            raise DatasetError(f"{path}: entry {index} has a non-text 'input'")
        output = entry.get("output")
        if output is not None and not isinstance(output, str):
            raise DatasetError(f"{path}: entry {index} has a non-text 'output'")
        record_id = str(entry["id"]) if "id" in entry else _ordinal_id(index)
        records.append(
            InstructionRecord(
                id=record_id,
                instruction=instruction,
                context=context if context else None,
                reference_response=output,
            )
        )
    _check_unique_ids(records)
    return records


def load_records_jsonl(path: str | Path) -> list[InstructionRecord]:
    """Load the internal one-record-per-line format."""
    path = Path(path)
    records = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    index = 0
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise DatasetError(f"{path}:{line_no}: expected a JSON object")
        if "id" not in obj:
            obj["id"] = _ordinal_id(index)
        try:
            records.append(InstructionRecord.from_obj(obj))
        except DatasetError as exc:
            raise DatasetError(f"{path}:{line_no}: {exc}") from exc
        index += 1
    _check_unique_ids(records)
    return records


def save_records_jsonl(records: Iterable[InstructionRecord], path: str | Path) -> int:
    """Persist records; emits every key explicitly (null for absent values)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(dump_json_line(record.to_obj()) + "\n")
            count += 1
    return count


def load_instruction_dataset(path: str | Path, format: str) -> list[InstructionRecord]:
    """Load a dataset file in the named format."""
    if format == ALPACA_JSON:
        return load_alpaca_json(path)
    if format == RECORDS_JSONL:
        return load_records_jsonl(path)
    raise DatasetError(f"unknown dataset format {format!r}")


@dataclass
class DatasetManifest:
    name: str
    files: list[str]
    format: str
    base_dir: Path = field(default_factory=Path)

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        obj = read_json_file(path)
        if not isinstance(obj, dict) or "files" not in obj:
            raise DatasetError(f"{path}: not a dataset manifest (missing 'files')")
        files = obj["files"]
        if not isinstance(files, list) or not all(isinstance(f, str) for f in files):
            raise DatasetError(f"{path}: 'files' must be a list of paths")
        return cls(
            name=obj.get("name", path.stem),
            files=files,
            format=obj.get("format", ALPACA_JSON),
            base_dir=path.parent,
        )

    def load_records(self) -> list[InstructionRecord]:
        """Concatenate constituent files, tagging ids with the source file stem."""
        records: list[InstructionRecord] = []
        for rel in self.files:
            file_path = self.base_dir / rel
            source = Path(rel).stem
            for record in load_instruction_dataset(file_path, self.format):
                records.append(replace(record, id=f"{source}:{record.id}"))
        _check_unique_ids(records)
        return records


def load_dataset_any(path: str | Path) -> list[InstructionRecord]:
    """Load a dataset from a manifest, an Alpaca array, or a records JSONL file."""
    path = Path(path)
    if path.suffix == ".jsonl":
        return load_records_jsonl(path)
    try:
        head = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path} is not valid JSON: {exc}") from exc
    if isinstance(head, dict):
        return DatasetManifest.load(path).load_records()
    return load_alpaca_json(path)


def split_dataset(
    records: Sequence[InstructionRecord],
    ratios: Sequence[float],
    seed: int,
) -> DatasetSplit:
    """Seeded shuffle, then partition by ratios.

    Validation and test sizes are floored from their exact shares; every
    leftover record goes to train, so held-out parts never exceed their
    specified share.
    """
    if len(ratios) != 3:
        raise DatasetError("split requires exactly three ratios")
    if any(r < 0 for r in ratios):
        raise DatasetError("split ratios must be non-negative")
    total = float(sum(ratios))
    if total == 0:
        raise DatasetError("split ratios must not all be zero")
    _check_unique_ids(records)

    shuffled = list(records)
    random.Random(seed).shuffle(shuffled)

    n = len(shuffled)
    n_val = math.floor(n * ratios[1] / total)
    n_test = math.floor(n * ratios[2] / total)
    n_train = n - n_val - n_test

    return DatasetSplit(
        train=shuffled[:n_train],
        validation=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val :],
        seed=seed,
        ratios=(float(ratios[0]), float(ratios[1]), float(ratios[2])),
    )
