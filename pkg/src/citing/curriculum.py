"""Curriculum engine: revision rounds, training files, and self-revision inference.

Training proceeds as: supervised fine-tune on ground-truth responses, then N
rounds of (student generates, teacher revises, fine-tune on the revision
pairs). Each round's file holds ``{prompt, completion, meta}`` lines where the
prompt embeds the student's prior response inside the revision template and
the completion is the teacher's revision.

Round bookkeeping: ``round`` on an example (and in a file name) is the index
of the *revised* response, so ``round_1.jsonl`` trains the round-1 model from
the round-0 model's outputs, and the supervised stage is round 0.

At inference the fine-tuned student answers, then revises its own answer
through the same template for a fixed number of rounds; the last element of
the chain is the system answer.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .config import PipelineConfig
from .errors import CitingError, PipelineError, ProviderError
from .jsonio import (
    append_jsonl,
    derive_seed,
    read_json_file,
    read_jsonl,
    sha256_file,
    write_json_file,
    write_jsonl,
)
from .ledger import RunLedger
from .matching import assign_dataset, build_category_indexes
from .providers import ChatProvider, EmbeddingProvider, ordered_parallel_map, user_request
from .records import InstructionRecord, load_records_jsonl, save_records_jsonl, split_dataset
from .rubrics import RubricSet, induce_rubrics, sample_for_induction
from .rundir import RunLock, RunManifest
from .templates import build_revision_prompt, student_prompt
from .trainer import ModelRef, TrainJob, TrainerBackend, run_training

logger = logging.getLogger(__name__)


@dataclass
class CurriculumExample:
    """One revision pair: the unit of curriculum training data."""

    record_id: str
    instruction: str
    criteria: str
    prior_response: str
    revised_response: str
    round: int
    prompt: str

    def __post_init__(self):
        if self.round < 0:
            raise CitingError("curriculum round must be >= 0")
        if not self.revised_response:
            raise CitingError(f"record {self.record_id}: revised response must be non-empty")
        expected = build_revision_prompt(self.instruction, self.criteria, self.prior_response)
        if self.prompt != expected:
            raise CitingError(
                f"record {self.record_id}: prompt is not the rendered revision template"
            )

    @classmethod
    def build(
        cls,
        record_id: str,
        instruction: str,
        criteria: str,
        prior_response: str,
        revised_response: str,
        round: int,
    ) -> "CurriculumExample":
        return cls(
            record_id=record_id,
            instruction=instruction,
            criteria=criteria,
            prior_response=prior_response,
            revised_response=revised_response,
            round=round,
            prompt=build_revision_prompt(instruction, criteria, prior_response),
        )


@dataclass
class RevisionChain:
    """Responses r(0)..r(m) from self-revision inference; last one is the answer."""

    record_id: str
    responses: list[str]
    criteria: str
    truncated: bool = False
    error: str | None = None

    @property
    def final(self) -> str:
        return self.responses[-1]


@dataclass
class ProviderSet:
    teacher: ChatProvider
    student: ChatProvider
    embedder: EmbeddingProvider
    judge: ChatProvider | None = None


def generate_responses(
    student: ChatProvider,
    model_ref: ModelRef,
    records: Sequence[InstructionRecord],
    *,
    temperature: float = 0.0,
    max_new_tokens: int = 512,
    template: str = "bare",
    parallelism: int = 1,
    out_path: str | Path | None = None,
    resume: bool = False,
) -> list[tuple[str, str]]:
    """Student answers each instruction with a bare prompt; order-aligned output.

    When ``out_path`` is given, responses append there as they complete so an
    aborted run resumes without repeating calls.
    """
    done: dict[str, str] = {}
    if out_path is not None and resume and Path(out_path).exists():
        for row in read_jsonl(out_path):
            done[row["record_id"]] = row["response"]

    def one(record: InstructionRecord) -> tuple[str, str]:
        if record.id in done:
            return record.id, done[record.id]
        request = user_request(
            model_ref.locator,
            student_prompt(record, template),
            temperature=temperature,
            max_new_tokens=max_new_tokens,
        )
        response = student.chat(request)
        if out_path is not None:
            append_jsonl(out_path, {"record_id": record.id, "response": response})
        return record.id, response

    return ordered_parallel_map(one, list(records), parallelism)


def revise_responses(
    teacher: ChatProvider,
    items: Sequence[tuple[str, str, str, str]],
    *,
    temperature: float = 0.7,
    max_new_tokens: int = 512,
    failure_threshold: float = 0.02,
    parallelism: int = 1,
    out_path: str | Path | None = None,
    resume: bool = False,
) -> tuple[list[str | None], dict]:
    """Teacher revises (record_id, instruction, criteria, prior_response) items.

    Per-item failures (empty reply, provider error) are collected; the run
    fails only if the failed fraction exceeds ``failure_threshold``, otherwise
    failed items come back as None and are reported.
    """
    if not items:
        raise CitingError("revise_responses requires at least one item")

    done: dict[str, str | None] = {}
    if out_path is not None and resume and Path(out_path).exists():
        for row in read_jsonl(out_path):
            done[row["record_id"]] = row["revised"]

    failures: list[tuple[str, str]] = []

    def one(item: tuple[str, str, str, str]) -> str | None:
        record_id, instruction, criteria, prior = item
        if record_id in done:
            return done[record_id]
        prompt = build_revision_prompt(instruction, criteria, prior)
        try:
            revised = teacher.chat(
                user_request(
                    teacher.model_name,
                    prompt,
                    temperature=temperature,
                    max_new_tokens=max_new_tokens,
                )
            ).strip()
        except ProviderError as exc:
            failures.append((record_id, str(exc)))
            revised = None
        else:
            if not revised:
                failures.append((record_id, "teacher returned an empty revision"))
                revised = None
        if out_path is not None:
            append_jsonl(out_path, {"record_id": record_id, "revised": revised})
        return revised

    revisions = ordered_parallel_map(one, list(items), parallelism)
    report = {
        "total": len(items),
        "dropped": len(failures),
        "failures": [{"record_id": rid, "reason": reason} for rid, reason in failures],
    }
    if len(failures) / len(items) > failure_threshold:
        raise PipelineError(
            f"teacher revision failed for {len(failures)}/{len(items)} items "
            f"(threshold {failure_threshold:.0%}); first: {failures[0]}"
        )
    if failures:
        logger.warning("dropped %d/%d items after teacher revision failures", len(failures), len(items))
    return revisions, report


def _emit_lines(path: Path, rows: list[dict], round_value: int) -> dict:
    count = write_jsonl(path, rows)
    manifest = {
        "path": path.name,
        "count": count,
        "round": round_value,
        "digest": sha256_file(path),
    }
    write_json_file(path.with_name(path.name + ".manifest.json"), manifest)
    return manifest


def emit_training_file(examples: Sequence[CurriculumExample], path: str | Path) -> dict:
    """Write one round's revision pairs as prompt/completion lines plus a manifest."""
    if not examples:
        raise PipelineError("a training round needs at least one example")
    rounds = {example.round for example in examples}
    if len(rounds) > 1:
        raise PipelineError(f"training file would mix rounds {sorted(rounds)}")
    rows = [
        {
            "prompt": example.prompt,
            "completion": example.revised_response,
            "meta": {"record_id": example.record_id, "round": example.round},
        }
        for example in examples
    ]
    return _emit_lines(Path(path), rows, examples[0].round)


def emit_sft_file(
    records: Sequence[InstructionRecord], path: str | Path, *, template: str = "bare"
) -> dict:
    """Write the supervised stage file: instruction prompt -> ground-truth response."""
    if not records:
        raise PipelineError("the supervised stage needs at least one record")
    rows = []
    for record in records:
        if not record.reference_response:
            raise PipelineError(f"record {record.id} has no reference response")
        rows.append(
            {
                "prompt": student_prompt(record, template),
                "completion": record.reference_response,
                "meta": {"record_id": record.id, "round": 0},
            }
        )
    return _emit_lines(Path(path), rows, 0)


@dataclass
class CurriculumRun:
    run_dir: Path
    model_refs: list[ModelRef]
    sample_ids: list[str]
    manifest: RunManifest
    ledger: RunLedger


def _write_model_file(run_dir: Path, model: ModelRef, metrics: dict) -> Path:
    path = run_dir / "models" / f"{model.round}.json"
    write_json_file(path, {**model.to_dict(), "metrics": metrics})
    return path


def load_model_ref(path: str | Path) -> ModelRef:
    return ModelRef.from_dict(read_json_file(path))


def run_curriculum(
    config: PipelineConfig,
    records: Sequence[InstructionRecord],
    providers: ProviderSet,
    trainer_backend: TrainerBackend,
    run_dir: str | Path,
    *,
    rubrics: RubricSet | None = None,
    resume: bool = False,
    ledger: RunLedger | None = None,
) -> CurriculumRun:
    """Drive the full training pipeline inside a resumable run directory.

    Stages: split, rubrics (induced unless supplied), criteria assignment for
    the fixed curriculum sample, the supervised round, then N curriculum
    rounds. Each stage persists its artifacts and is skipped on resume.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    config.validate()

    with RunLock(run_dir):
        manifest = RunManifest.load(run_dir)
        if manifest.exists() and not resume:
            raise PipelineError(
                f"run directory {run_dir} is already initialized; pass resume=True to continue"
            )
        digest = config.digest()
        manifest.check_config_digest(digest)
        write_json_file(run_dir / "config.json", config.to_dict())
        if manifest.data.get("config_digest") is None:
            manifest.set_config_digest(digest)

        if ledger is None:
            ledger = RunLedger(run_dir / "ledger.jsonl")
        for provider in (providers.teacher, providers.student, providers.embedder):
            if provider.ledger is None:
                provider.ledger = ledger

        # --- split ---------------------------------------------------------
        split = split_dataset(records, config.split_ratios, config.split_seed)
        if not manifest.is_complete("split"):
            manifest.mark_complete(
                "split",
                {
                    "train": len(split.train),
                    "validation": len(split.validation),
                    "test": len(split.test),
                },
            )
        if not split.train:
            raise PipelineError("training split is empty")

        # --- rubrics ---------------------------------------------------------
        rubrics_path = run_dir / "rubrics.json"
        if manifest.is_complete("rubrics"):
            rubrics = RubricSet.load(rubrics_path)
        else:
            if rubrics is None and config.rubrics_file:
                rubrics = RubricSet.load(config.rubrics_file)
            if rubrics is None:
                k = min(config.induction_sample_size, len(split.train))
                subset = sample_for_induction(
                    split.train, k, derive_seed(config.split_seed, "induction")
                )
                rubrics = induce_rubrics(
                    providers.teacher,
                    subset,
                    retries=config.induction_retries,
                    temperature=config.induction_temperature,
                    max_new_tokens=config.trainer_hyperparams.max_new_tokens,
                    max_categories=config.max_categories_hint,
                )
            rubrics.save(rubrics_path)
            manifest.mark_complete("rubrics", {"file": "rubrics.json"})

        # --- criteria assignment for the fixed curriculum sample -------------
        assigned_path = run_dir / "assigned.jsonl"
        scores_path = run_dir / "assigned_scores.jsonl"
        sample_path = run_dir / "sample_ids.json"
        if manifest.is_complete("assign"):
            sample = load_records_jsonl(assigned_path)
        else:
            size = min(config.curriculum_sample_size, len(split.train))
            rng = random.Random(derive_seed(config.split_seed, "curriculum-sample"))
            raw_sample = rng.sample(split.train, size)
            # Records that already carry criteria (precomputed assignment) keep them.
            missing = [record for record in raw_sample if record.criteria is None]
            assignments = []
            annotated_by_id = {}
            if missing:
                indexes = build_category_indexes(rubrics, split.train, providers.embedder)
                annotated, assignments = assign_dataset(
                    missing, rubrics, indexes, providers.embedder, parallelism=config.parallelism
                )
                annotated_by_id = {record.id: record for record in annotated}
            sample = [annotated_by_id.get(record.id, record) for record in raw_sample]
            save_records_jsonl(sample, assigned_path)
            write_jsonl(
                scores_path,
                [
                    {
                        "record_id": a.record_id,
                        "category_id": a.category_id,
                        "score": a.score,
                        "all_scores": [[cid, s] for cid, s in a.all_scores],
                    }
                    for a in assignments
                ],
            )
            write_json_file(sample_path, [record.id for record in sample])
            manifest.mark_complete(
                "assign",
                {
                    "file": "assigned.jsonl",
                    "scores": "assigned_scores.jsonl",
                    "sample_ids": "sample_ids.json",
                },
            )

        # --- supervised round -------------------------------------------------
        base_ref = ModelRef(
            round=-1,
            backend_id=trainer_backend.name,
            locator=config.trainer.base_model,
            parent=None,
        )
        sft_path = run_dir / "sft.jsonl"
        if not manifest.is_complete("sft_file"):
            file_manifest = emit_sft_file(
                split.train, sft_path, template=config.student_prompt_template
            )
            manifest.mark_complete("sft_file", {"file": "sft.jsonl", "manifest": file_manifest})

        model_refs: list[ModelRef] = []
        if manifest.is_complete("train_0"):
            model_refs.append(load_model_ref(run_dir / "models" / "0.json"))
        else:
            result = run_training(
                trainer_backend,
                TrainJob(
                    base=base_ref,
                    train_file=sft_path,
                    hyperparams=config.trainer_hyperparams.job_dict(),
                    out_dir=run_dir / "models" / "train_0",
                    job_id=f"{run_dir.name}:train_0",
                    seed=config.trainer.seed,
                ),
                ledger=ledger,
            )
            _write_model_file(run_dir, result.model, result.metrics)
            manifest.mark_complete(
                "train_0", {"model_file": "models/0.json", "locator": result.model.locator}
            )
            model_refs.append(result.model)

        # --- curriculum rounds ------------------------------------------------
        by_id = {record.id: record for record in sample}
        for round_index in range(1, config.n_rounds + 1):
            prior_ref = model_refs[round_index - 1]

            gen_stage = f"round_{round_index}_generate"
            gen_path = run_dir / f"gen_{round_index}.jsonl"
            if manifest.is_complete(gen_stage):
                by_row = {row["record_id"]: row["response"] for row in read_jsonl(gen_path)}
                generated = [(record.id, by_row[record.id]) for record in sample]
            else:
                generated = generate_responses(
                    providers.student,
                    prior_ref,
                    sample,
                    temperature=config.student_temperature,
                    max_new_tokens=config.trainer_hyperparams.max_new_tokens,
                    template=config.student_prompt_template,
                    parallelism=config.parallelism,
                    out_path=gen_path,
                    resume=resume,
                )
                manifest.mark_complete(gen_stage, {"file": gen_path.name})

            rev_stage = f"round_{round_index}_revise"
            rev_path = run_dir / f"rev_{round_index}.jsonl"
            if manifest.is_complete(rev_stage):
                revised_by_id = {row["record_id"]: row["revised"] for row in read_jsonl(rev_path)}
                revisions = [revised_by_id.get(rid) for rid, _ in generated]
            else:
                items = [
                    (rid, by_id[rid].instruction, by_id[rid].criteria or "", response)
                    for rid, response in generated
                ]
                revisions, report = revise_responses(
                    providers.teacher,
                    items,
                    temperature=config.revision_temperature,
                    max_new_tokens=config.trainer_hyperparams.max_new_tokens,
                    failure_threshold=config.revision_failure_threshold,
                    parallelism=config.parallelism,
                    out_path=rev_path,
                    resume=resume,
                )
                manifest.mark_complete(rev_stage, {"file": rev_path.name, "dropped": report["dropped"]})

            file_stage = f"round_{round_index}_file"
            round_path = run_dir / f"round_{round_index}.jsonl"
            if not manifest.is_complete(file_stage):
                examples = [
                    CurriculumExample.build(
                        record_id=rid,
                        instruction=by_id[rid].instruction,
                        criteria=by_id[rid].criteria or "",
                        prior_response=response,
                        revised_response=revised,
                        round=round_index,
                    )
                    for (rid, response), revised in zip(generated, revisions)
                    if revised is not None
                ]
                file_manifest = emit_training_file(examples, round_path)
                manifest.mark_complete(file_stage, {"file": round_path.name, "manifest": file_manifest})

            train_stage = f"train_{round_index}"
            if manifest.is_complete(train_stage):
                model_refs.append(load_model_ref(run_dir / "models" / f"{round_index}.json"))
            else:
                result = run_training(
                    trainer_backend,
                    TrainJob(
                        base=prior_ref,
                        train_file=round_path,
                        hyperparams=config.trainer_hyperparams.job_dict(),
                        out_dir=run_dir / "models" / f"train_{round_index}",
                        job_id=f"{run_dir.name}:train_{round_index}",
                        seed=config.trainer.seed,
                    ),
                    ledger=ledger,
                )
                _write_model_file(run_dir, result.model, result.metrics)
                manifest.mark_complete(
                    train_stage,
                    {"model_file": f"models/{round_index}.json", "locator": result.model.locator},
                )
                model_refs.append(result.model)

        return CurriculumRun(
            run_dir=run_dir,
            model_refs=model_refs,
            sample_ids=[record.id for record in sample],
            manifest=manifest,
            ledger=ledger,
        )


def infer_with_self_revision(
    student: ChatProvider,
    model_ref: ModelRef,
    record: InstructionRecord,
    criteria: str,
    m: int,
    *,
    temperature: float = 0.0,
    max_new_tokens: int = 512,
    template: str = "bare",
) -> RevisionChain:
    """Answer, then self-revise m times with the same fine-tuned student.

    A provider failure truncates the chain and flags it rather than erroring,
    so batch inference can report partial results.
    """
    if m < 0:
        raise CitingError("number of inference revision rounds must be >= 0")
    if not criteria:
        raise CitingError(f"record {record.id}: criteria required for self-revision")

    responses: list[str] = []
    try:
        first = student.chat(
            user_request(
                model_ref.locator,
                student_prompt(record, template),
                temperature=temperature,
                max_new_tokens=max_new_tokens,
            )
        )
        responses.append(first)
        for _ in range(m):
            prompt = build_revision_prompt(record.instruction, criteria, responses[-1])
            revised = student.chat(
                user_request(
                    model_ref.locator,
                    prompt,
                    temperature=temperature,
                    max_new_tokens=max_new_tokens,
                )
            )
            responses.append(revised)
    except ProviderError as exc:
        if not responses:
            raise
        logger.warning("self-revision chain for %s truncated: %s", record.id, exc)
        return RevisionChain(
            record_id=record.id,
            responses=responses,
            criteria=criteria,
            truncated=True,
            error=str(exc),
        )
    return RevisionChain(record_id=record.id, responses=responses, criteria=criteria)


def infer_dataset(
    config: PipelineConfig,
    model_ref: ModelRef,
    rubrics: RubricSet,
    train_records: Sequence[InstructionRecord],
    test_records: Sequence[InstructionRecord],
    providers: ProviderSet,
    out_path: str | Path,
    *,
    m: int | None = None,
) -> list[RevisionChain]:
    """Assign criteria to unseen instructions, then run self-revision chains."""
    rounds = config.m_inference_rounds if m is None else m
    indexes = build_category_indexes(rubrics, train_records, providers.embedder)
    annotated, _ = assign_dataset(
        test_records, rubrics, indexes, providers.embedder, parallelism=config.parallelism
    )

    def one(record: InstructionRecord) -> RevisionChain:
        return infer_with_self_revision(
            providers.student,
            model_ref,
            record,
            record.criteria or "",
            rounds,
            temperature=config.student_temperature,
            max_new_tokens=config.trainer_hyperparams.max_new_tokens,
            template=config.student_prompt_template,
        )

    chains = ordered_parallel_map(one, annotated, config.parallelism)
    write_jsonl(
        out_path,
        [
            {
                "record_id": chain.record_id,
                "instruction": record.instruction,
                "criteria": chain.criteria,
                "responses": chain.responses,
                "response": chain.final,
                "truncated": chain.truncated,
                "error": chain.error,
            }
            for record, chain in zip(annotated, chains)
        ],
    )
    return chains
