"""Command-line entry point.

Subcommands: ``dataset split``, ``rubrics induce``, ``criteria assign``,
``curriculum run``, ``infer``, ``judge compare``, ``report render``.
Exit codes: 0 success, 1 usage error, 2 pipeline error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import (
    PipelineConfig,
    build_chat_provider,
    build_embedding_provider,
    build_trainer_backend,
)
from .curriculum import ProviderSet, infer_dataset, load_model_ref, run_curriculum
from .errors import CitingError, DatasetError
from .jsonio import read_jsonl, write_json_file, write_jsonl
from .judge import METRICS, load_report, render_report, run_comparison, save_report
from .ledger import RunLedger
from .matching import assign_dataset, build_category_indexes
from .records import load_dataset_any, save_records_jsonl, split_dataset
from .rubrics import RubricSet, induce_rubrics, sample_for_induction
from .rundir import RunLock, RunManifest

logger = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse variant that reports usage problems via exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _parse_ratios(text: str) -> tuple[float, float, float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f"ratios must look like 8:1:1, got {text!r}")
    try:
        return tuple(float(p) for p in parts)  # type: ignore[return-value]
    except ValueError as exc:
        raise UsageError(f"ratios must be numbers: {text!r}") from exc


def _load_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        return PipelineConfig.load(args.config)
    return PipelineConfig()


def _read_responses(path: str | Path) -> tuple[dict[str, str], dict[str, str]]:
    """Read a responses JSONL file; returns (id -> response, id -> instruction)."""
    responses: dict[str, str] = {}
    instructions: dict[str, str] = {}
    for row in read_jsonl(path):
        record_id = row.get("record_id", row.get("id"))
        if record_id is None or "response" not in row:
            raise DatasetError(f"{path}: every line needs record_id and response fields")
        responses[str(record_id)] = row["response"]
        if row.get("instruction"):
            instructions[str(record_id)] = row["instruction"]
    if not responses:
        raise DatasetError(f"{path}: no responses found")
    return responses, instructions


def cmd_dataset_split(args) -> int:
    records = load_dataset_any(args.dataset)
    split = split_dataset(records, _parse_ratios(args.ratios), args.seed)
    out_dir = Path(args.out_dir)
    save_records_jsonl(split.train, out_dir / "train.jsonl")
    save_records_jsonl(split.validation, out_dir / "validation.jsonl")
    save_records_jsonl(split.test, out_dir / "test.jsonl")
    write_json_file(
        out_dir / "split.json",
        {
            "seed": split.seed,
            "ratios": list(split.ratios),
            "sizes": {"train": len(split.train), "validation": len(split.validation), "test": len(split.test)},
        },
    )
    logger.info("split %d records into %s", len(records), split.sizes())
    return 0


def cmd_rubrics_induce(args) -> int:
    config = _load_config(args)
    records = load_dataset_any(args.dataset)
    if not records:
        raise DatasetError("cannot induce rubrics from an empty dataset")
    k = min(args.sample, len(records))
    subset = sample_for_induction(records, k, args.seed)
    teacher = build_chat_provider(config, config.teacher, base_dir=_config_dir(args))
    rubrics = induce_rubrics(
        teacher,
        subset,
        retries=config.induction_retries,
        temperature=config.induction_temperature,
        max_new_tokens=config.trainer_hyperparams.max_new_tokens,
        max_categories=config.max_categories_hint,
        out_path=args.out,
    )
    logger.info("induced %d categories -> %s", len(rubrics.categories), args.out)
    return 0


def cmd_criteria_assign(args) -> int:
    config = _load_config(args)
    rubrics = RubricSet.load(args.rubrics)
    records = load_dataset_any(args.dataset)
    exemplar_records = load_dataset_any(args.exemplars) if args.exemplars else records
    embedder = build_embedding_provider(config, config.embedder)
    indexes = build_category_indexes(rubrics, exemplar_records, embedder)
    annotated, assignments = assign_dataset(
        records, rubrics, indexes, embedder, parallelism=config.parallelism
    )
    save_records_jsonl(annotated, args.out)
    scores_path = args.scores or str(Path(args.out).with_name(Path(args.out).stem + "_scores.jsonl"))
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
    logger.info("assigned criteria for %d records -> %s", len(annotated), args.out)
    return 0


def _config_dir(args) -> Path | None:
    if getattr(args, "config", None):
        return Path(args.config).parent
    return None


def _apply_overrides(config: PipelineConfig, args) -> PipelineConfig:
    if getattr(args, "dataset", None):
        config.dataset = args.dataset
    if getattr(args, "rounds", None) is not None:
        config.n_rounds = args.rounds
    if getattr(args, "sample_size", None) is not None:
        config.curriculum_sample_size = args.sample_size
    config.validate()
    return config


def _build_provider_set(config: PipelineConfig, ledger: RunLedger | None, base_dir: Path | None) -> ProviderSet:
    return ProviderSet(
        teacher=build_chat_provider(config, config.teacher, ledger=ledger, base_dir=base_dir),
        student=build_chat_provider(config, config.student, ledger=ledger, base_dir=base_dir),
        embedder=build_embedding_provider(config, config.embedder, ledger=ledger),
        judge=build_chat_provider(config, config.judge, ledger=ledger, base_dir=base_dir),
    )


def cmd_curriculum_run(args) -> int:
    config = _apply_overrides(_load_config(args), args)
    if not config.dataset:
        raise UsageError("a dataset is required (config.dataset or --dataset)")
    run_dir = Path(args.run_dir) if args.run_dir else Path("runs") / Path(args.config).stem
    records = load_dataset_any(config.dataset)
    ledger = RunLedger(run_dir / "ledger.jsonl")
    providers = _build_provider_set(config, ledger, _config_dir(args))
    trainer = build_trainer_backend(config)
    run = run_curriculum(
        config,
        records,
        providers,
        trainer,
        run_dir,
        resume=args.resume,
        ledger=ledger,
    )
    logger.info(
        "curriculum complete: %d models, final locator %s",
        len(run.model_refs),
        run.model_refs[-1].locator,
    )
    return 0


def _latest_model(run_dir: Path) -> Path:
    candidates = sorted(
        (run_dir / "models").glob("*.json"),
        key=lambda p: int(p.stem) if p.stem.isdigit() else -1,
    )
    if not candidates:
        raise CitingError(f"no model files under {run_dir / 'models'}")
    return candidates[-1]


def cmd_infer(args) -> int:
    run_dir = Path(args.run_dir) if args.run_dir else None
    config_path = args.config or (run_dir / "config.json" if run_dir else None)
    if config_path is None:
        raise UsageError("infer needs --config or --run-dir")
    config = PipelineConfig.load(config_path)
    if args.model is None and run_dir is None:
        raise UsageError("infer needs --model or --run-dir")
    model_path = Path(args.model) if args.model else _latest_model(run_dir)
    model_ref = load_model_ref(model_path)
    rubrics_path = args.rubrics or (run_dir / "rubrics.json" if run_dir else None)
    if rubrics_path is None:
        raise UsageError("infer needs --rubrics or --run-dir")
    rubrics = RubricSet.load(rubrics_path)
    if not config.dataset:
        raise CitingError("config carries no training dataset path (needed for category indexes)")
    train_records = load_dataset_any(config.dataset)
    test_records = load_dataset_any(args.dataset)
    ledger = RunLedger(run_dir / "ledger.jsonl") if run_dir else None
    providers = _build_provider_set(config, ledger, _config_dir(args))
    out_path = Path(args.out)
    chains = infer_dataset(
        config,
        model_ref,
        rubrics,
        train_records,
        test_records,
        providers,
        out_path,
        m=args.rounds,
    )
    truncated = sum(1 for chain in chains if chain.truncated)
    if run_dir is not None:
        with RunLock(run_dir):
            manifest = RunManifest.load(run_dir)
            if not manifest.is_complete("infer"):
                manifest.mark_complete("infer", {"file": out_path.name, "chains": len(chains)})
    logger.info("wrote %d chains (%d truncated) -> %s", len(chains), truncated, args.out)
    return 0


def cmd_judge_compare(args) -> int:
    config = _load_config(args)
    responses_a, instructions_a = _read_responses(args.a)
    responses_b, instructions_b = _read_responses(args.b)
    instructions = {**instructions_b, **instructions_a}
    if args.instructions:
        for record in load_dataset_any(args.instructions):
            instructions.setdefault(record.id, record.instruction)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    run_dir = Path(args.run_dir) if args.run_dir else None
    out_dir = Path(args.out_dir) if args.out_dir else (run_dir or Path("."))
    ledger = RunLedger(run_dir / "ledger.jsonl") if run_dir else None
    judge = build_chat_provider(config, config.judge, ledger=ledger, base_dir=_config_dir(args))
    report, verdicts = run_comparison(
        responses_a,
        responses_b,
        instructions,
        metrics,
        judge,
        args.seed,
        system_a=args.label_a,
        system_b=args.label_b,
        temperature=config.judge_temperature,
        skip_threshold=config.judge_skip_threshold,
        both_orders=args.both_orders,
        parallelism=config.parallelism,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    write_jsonl(out_dir / "verdicts.jsonl", [v.to_obj() for v in verdicts])
    save_report(report, out_dir / "report.json")
    (out_dir / "report.md").write_text(render_report(report, "markdown") + "\n", encoding="utf-8")
    if run_dir is not None:
        with RunLock(run_dir):
            manifest = RunManifest.load(run_dir)
            if not manifest.is_complete("judge"):
                manifest.mark_complete(
                    "judge", {"report": "report.json", "verdicts": "verdicts.jsonl"}
                )
    print(render_report(report, "markdown"))
    return 0


def cmd_report_render(args) -> int:
    report = load_report(args.report)
    print(render_report(report, args.layout))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="citing", description="Curriculum instruction-tuning pipeline")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_dataset = sub.add_parser("dataset", help="dataset utilities")
    dataset_sub = p_dataset.add_subparsers(dest="subcommand", required=True)
    p_split = dataset_sub.add_parser("split", help="split a dataset into train/validation/test")
    p_split.add_argument("--dataset", required=True)
    p_split.add_argument("--ratios", default="8:1:1")
    p_split.add_argument("--seed", type=int, default=0)
    p_split.add_argument("--out-dir", required=True)
    p_split.set_defaults(handler=cmd_dataset_split)

    p_rubrics = sub.add_parser("rubrics", help="rubric induction")
    rubrics_sub = p_rubrics.add_subparsers(dest="subcommand", required=True)
    p_induce = rubrics_sub.add_parser("induce", help="have the teacher categorize instructions")
    p_induce.add_argument("--dataset", required=True)
    p_induce.add_argument("--sample", type=int, default=100)
    p_induce.add_argument("--seed", type=int, default=0)
    p_induce.add_argument("--out", required=True)
    p_induce.add_argument("--config")
    p_induce.set_defaults(handler=cmd_rubrics_induce)

    p_criteria = sub.add_parser("criteria", help="criteria assignment")
    criteria_sub = p_criteria.add_subparsers(dest="subcommand", required=True)
    p_assign = criteria_sub.add_parser("assign", help="assign criteria by embedding similarity")
    p_assign.add_argument("--rubrics", required=True)
    p_assign.add_argument("--dataset", required=True)
    p_assign.add_argument("--exemplars", help="dataset holding exemplar instructions (default: --dataset)")
    p_assign.add_argument("--out", required=True)
    p_assign.add_argument("--scores")
    p_assign.add_argument("--config")
    p_assign.set_defaults(handler=cmd_criteria_assign)

    p_curriculum = sub.add_parser("curriculum", help="training pipeline")
    curriculum_sub = p_curriculum.add_subparsers(dest="subcommand", required=True)
    p_run = curriculum_sub.add_parser("run", help="run the full training pipeline")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--run-dir", help="default: runs/<config name>")
    p_run.add_argument("--dataset")
    p_run.add_argument("--rounds", type=int)
    p_run.add_argument("--sample-size", type=int)
    p_run.add_argument("--resume", action="store_true")
    p_run.set_defaults(handler=cmd_curriculum_run)

    p_infer = sub.add_parser("infer", help="self-revision inference")
    p_infer.add_argument("--model", help="model ref JSON (default: latest in --run-dir)")
    p_infer.add_argument("--dataset", required=True)
    p_infer.add_argument("--rounds", type=int, default=None)
    p_infer.add_argument("--out", required=True)
    p_infer.add_argument("--config")
    p_infer.add_argument("--rubrics")
    p_infer.add_argument("--run-dir")
    p_infer.set_defaults(handler=cmd_infer)

    p_judge = sub.add_parser("judge", help="pairwise LLM judging")
    judge_sub = p_judge.add_subparsers(dest="subcommand", required=True)
    p_compare = judge_sub.add_parser("compare", help="compare two response files")
    p_compare.add_argument("--a", required=True)
    p_compare.add_argument("--b", required=True)
    p_compare.add_argument("--metrics", default=",".join(METRICS))
    p_compare.add_argument("--seed", type=int, default=0)
    p_compare.add_argument("--label-a", default="A")
    p_compare.add_argument("--label-b", default="B")
    p_compare.add_argument("--instructions", help="dataset supplying instruction text")
    p_compare.add_argument("--out-dir")
    p_compare.add_argument("--run-dir")
    p_compare.add_argument("--both-orders", action="store_true")
    p_compare.add_argument("--config")
    p_compare.set_defaults(handler=cmd_judge_compare)

    p_report = sub.add_parser("report", help="report rendering")
    report_sub = p_report.add_subparsers(dest="subcommand", required=True)
    p_render = report_sub.add_parser("render", help="render a stored comparison report")
    p_render.add_argument("--report", required=True)
    p_render.add_argument("--layout", choices=("markdown", "json"), default="markdown")
    p_render.set_defaults(handler=cmd_report_render)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help and argparse-internal exits
        return 0 if exc.code in (0, None) else 1

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CitingError as exc:
        logger.error("%s", exc)
        return 2
    except Exception:  # pragma: no cover - defensive
        logger.exception("unexpected failure")
        return 2


if __name__ == "__main__":
    sys.exit(main())
