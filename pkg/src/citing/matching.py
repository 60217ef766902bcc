"""Assign criteria to instructions by embedding similarity.

Each rubric category owns an index of exemplar-instruction embeddings. A new
instruction is embedded, scored against every category as the mean cosine
similarity over that category's vectors, and assigned the criteria of the
highest-scoring category (ties break to the lowest category id).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

from .errors import CitingError
from .providers import EmbeddingProvider, EmbeddingVector, ordered_parallel_map
from .records import InstructionRecord
from .rubrics import RubricSet


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """dot(a, b) / (|a| |b|); rejects dimension mismatches and zero vectors."""
    if a.dimension != b.dimension:
        raise CitingError(f"cosine: dimension mismatch {a.dimension} vs {b.dimension}")
    if a.is_zero() or b.is_zero():
        raise CitingError("cosine is undefined for the zero vector")
    dot = math.fsum(x * y for x, y in zip(a.values, b.values))
    norm_a = math.sqrt(math.fsum(x * x for x in a.values))
    norm_b = math.sqrt(math.fsum(y * y for y in b.values))
    return dot / (norm_a * norm_b)


@dataclass
class CategoryEmbeddingIndex:
    """Exemplar embeddings for one category, aligned with their record ids."""

    category_id: int
    vectors: list[EmbeddingVector]
    source_ids: list[str]
    dimension: int

    def __post_init__(self):
        if not self.vectors:
            raise CitingError(f"category {self.category_id}: index has no vectors")
        if len(self.vectors) != len(self.source_ids):
            raise CitingError(f"category {self.category_id}: vectors and source ids misaligned")
        for vector in self.vectors:
            if vector.dimension != self.dimension:
                raise CitingError(
                    f"category {self.category_id}: vector dimension {vector.dimension} != {self.dimension}"
                )
            if vector.is_zero():
                raise CitingError(f"category {self.category_id}: index contains a zero vector")


@dataclass
class CriteriaAssignment:
    record_id: str
    category_id: int
    score: float
    all_scores: list[tuple[int, float]]


def build_category_indexes(
    rubrics: RubricSet,
    records: Sequence[InstructionRecord],
    embedder: EmbeddingProvider,
    *,
    per_category_cap: int | None = None,
) -> list[CategoryEmbeddingIndex]:
    """Embed each category's exemplar instructions into an index.

    A cap truncates exemplars deterministically: ids are sorted and the first
    ``per_category_cap`` kept.
    """
    by_id = {record.id: record for record in records}
    indexes: list[CategoryEmbeddingIndex] = []
    for category in rubrics.categories:
        if not category.exemplar_ids:
            raise CitingError(
                f"category {category.category_id} ({category.name!r}) has no exemplars to index"
            )
        exemplar_ids = sorted(category.exemplar_ids)
        if per_category_cap is not None:
            exemplar_ids = exemplar_ids[:per_category_cap]
        missing = [rid for rid in exemplar_ids if rid not in by_id]
        if missing:
            raise CitingError(
                f"category {category.category_id}: exemplar ids not found in records: {missing[:5]}"
            )
        texts = [by_id[rid].instruction for rid in exemplar_ids]
        vectors = embedder.embed(texts)
        indexes.append(
            CategoryEmbeddingIndex(
                category_id=category.category_id,
                vectors=vectors,
                source_ids=exemplar_ids,
                dimension=vectors[0].dimension,
            )
        )
    return indexes


def score_category(query: EmbeddingVector, index: CategoryEmbeddingIndex) -> float:
    """Mean cosine similarity between the query and every index vector.

    Summation is compensated (math.fsum) in index order so the result is
    stable to well below the 1e-9 tolerance used by the oracle checks.
    """
    if query.dimension != index.dimension:
        raise CitingError(f"query dimension {query.dimension} != index dimension {index.dimension}")
    return math.fsum(cosine_similarity(query, v) for v in index.vectors) / len(index.vectors)


def score_all_categories(
    query: EmbeddingVector, indexes: Sequence[CategoryEmbeddingIndex]
) -> list[tuple[int, float]]:
    scores = [(index.category_id, score_category(query, index)) for index in indexes]
    return sorted(scores, key=lambda pair: pair[0])


def pick_best(all_scores: Sequence[tuple[int, float]]) -> tuple[int, float]:
    """Argmax over (category_id, score); ties break to the lowest category id."""
    if not all_scores:
        raise CitingError("no category scores to choose from")
    best_id, best_score = all_scores[0]
    for category_id, score in all_scores[1:]:
        if score > best_score:
            best_id, best_score = category_id, score
    return best_id, best_score


def assign_criteria(
    instruction: InstructionRecord,
    rubrics: RubricSet,
    indexes: Sequence[CategoryEmbeddingIndex],
    embedder: EmbeddingProvider,
) -> CriteriaAssignment:
    """Embed one instruction and pick the highest-scoring category."""
    if not indexes:
        raise CitingError("at least one category index is required")
    query = embedder.embed([instruction.instruction])[0]
    return assign_from_vector(instruction.id, query, indexes)


def assign_from_vector(
    record_id: str,
    query: EmbeddingVector,
    indexes: Sequence[CategoryEmbeddingIndex],
) -> CriteriaAssignment:
    all_scores = score_all_categories(query, indexes)
    category_id, score = pick_best(all_scores)
    return CriteriaAssignment(
        record_id=record_id, category_id=category_id, score=score, all_scores=all_scores
    )


def annotate_record(
    record: InstructionRecord, assignment: CriteriaAssignment, rubrics: RubricSet
) -> InstructionRecord:
    """Copy of the record carrying the assigned category id and criteria text."""
    category = rubrics.category(assignment.category_id)
    return replace(record, category_id=category.category_id, criteria=category.criteria)


def assign_dataset(
    records: Sequence[InstructionRecord],
    rubrics: RubricSet,
    indexes: Sequence[CategoryEmbeddingIndex],
    embedder: EmbeddingProvider,
    *,
    parallelism: int = 1,
) -> tuple[list[InstructionRecord], list[CriteriaAssignment]]:
    """Assign criteria to every record; output order equals input order.

    Embedding happens in one batch; scoring may fan out across threads.
    """
    if not records:
        return [], []
    queries = embedder.embed([record.instruction for record in records])

    def score_one(pair: tuple[InstructionRecord, EmbeddingVector]) -> CriteriaAssignment:
        record, query = pair
        return assign_from_vector(record.id, query, indexes)

    assignments = ordered_parallel_map(score_one, list(zip(records, queries)), parallelism)
    annotated = [
        annotate_record(record, assignment, rubrics)
        for record, assignment in zip(records, assignments)
    ]
    return annotated, assignments
