"""Training backend gateway.

A backend turns (base model ref, training file, hyperparameters) into a new
model ref. The gateway validates the training file, invokes the backend, and
checks the backend's output files against the contract, identically for the
offline mock and for real subprocess backends.

Subprocess contract::

    <cmd> --train-file <path> --base-model <locator> --out-dir <dir> \
          --seq-len <n> --epochs <n> --lr <x> --seed <n>

and the backend must write ``<dir>/model_ref.json`` =
``{locator, parent, round}`` and ``<dir>/metrics.json`` =
``{train_loss_initial, train_loss_final, examples_seen, wall_seconds,
masked_prompt_tokens, target_tokens}``, exiting 0 on success. Backends must
compute loss over completion tokens only; the masked/target token counts in
metrics make that auditable.
"""

from __future__ import annotations

import json
import logging
import os
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import TrainerError
from .jsonio import read_json_file, sha256_file, sha256_text, write_json_file
from .ledger import RunLedger

logger = logging.getLogger(__name__)

_METRIC_KEYS = (
    "train_loss_initial",
    "train_loss_final",
    "examples_seen",
    "wall_seconds",
    "masked_prompt_tokens",
    "target_tokens",
)


@dataclass(frozen=True)
class ModelRef:
    """Opaque handle to a trained model round.

    round -1 is the untrained base, round 0 the supervised fine-tune, and
    round k >= 1 the model produced by the k-th curriculum round.
    """

    round: int
    backend_id: str
    locator: str
    parent: str | None = None

    def __post_init__(self):
        if self.round < -1:
            raise TrainerError(f"model round must be >= -1, got {self.round}")
        if self.round >= 0 and not self.parent:
            raise TrainerError(f"model at round {self.round} must name its parent")
        if not self.locator:
            raise TrainerError("model locator must be non-empty")

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "backend_id": self.backend_id,
            "locator": self.locator,
            "parent": self.parent,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelRef":
        return cls(
            round=obj["round"],
            backend_id=obj.get("backend_id", ""),
            locator=obj["locator"],
            parent=obj.get("parent"),
        )


@dataclass
class TrainJob:
    base: ModelRef
    train_file: Path
    hyperparams: dict
    out_dir: Path
    job_id: str
    seed: int = 0

    def __post_init__(self):
        self.train_file = Path(self.train_file)
        self.out_dir = Path(self.out_dir)
        for key in ("sequence_length", "epochs", "learning_rate"):
            value = self.hyperparams.get(key)
            if value is None or value <= 0:
                raise TrainerError(f"hyperparameter {key} must be positive, got {value!r}")


@dataclass
class TrainResult:
    model: ModelRef
    metrics: dict


@dataclass
class TrainingFileReport:
    ok: bool
    count: int
    round_value: int | None
    violations: list[tuple[int, str]] = field(default_factory=list)


def validate_training_file(path: str | Path) -> TrainingFileReport:
    """Check every line parses with non-empty prompt/completion and one round."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise TrainerError(f"cannot read training file {path}: {exc}") from exc

    violations: list[tuple[int, str]] = []
    count = 0
    round_value: int | None = None
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        count += 1
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            violations.append((line_no, f"invalid JSON: {exc}"))
            continue
        prompt = obj.get("prompt")
        completion = obj.get("completion")
        if not isinstance(prompt, str) or not prompt:
            violations.append((line_no, "missing or empty prompt"))
        if not isinstance(completion, str) or not completion:
            violations.append((line_no, "missing or empty completion"))
        meta = obj.get("meta")
        if not isinstance(meta, dict) or "record_id" not in meta or "round" not in meta:
            violations.append((line_no, "meta must carry record_id and round"))
            continue
        if round_value is None:
            round_value = meta["round"]
        elif meta["round"] != round_value:
            violations.append((line_no, f"mixed rounds: {meta['round']} vs {round_value}"))
    if count == 0:
        violations.append((0, "training file has no examples"))
    return TrainingFileReport(
        ok=not violations, count=count, round_value=round_value, violations=violations
    )


class TrainerBackend:
    name = "abstract-trainer"

    def execute(self, job: TrainJob) -> None:
        """Run the job, writing model_ref.json and metrics.json into job.out_dir."""
        raise NotImplementedError


class MockTrainerBackend(TrainerBackend):
    """Deterministic no-learning backend for offline pipeline runs.

    The produced locator encodes the base locator and the training-file
    digest, and carries the round number so scripted students can condition
    on how far training has progressed.
    """

    name = "mock-trainer"

    def execute(self, job: TrainJob) -> None:
        file_digest = sha256_file(job.train_file)
        new_round = job.base.round + 1
        locator = f"mock:r{new_round}:{sha256_text(job.base.locator + chr(10) + file_digest)[:12]}"

        count = 0
        prompt_tokens = 0
        completion_tokens = 0
        for line in job.train_file.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            count += 1
            prompt_tokens += len(obj["prompt"].split())
            completion_tokens += len(obj["completion"].split())

        epochs = int(job.hyperparams["epochs"])
        write_json_file(
            job.out_dir / "model_ref.json",
            {"locator": locator, "parent": job.base.locator, "round": new_round},
        )
        write_json_file(
            job.out_dir / "metrics.json",
            {
                "train_loss_initial": 4.0,
                "train_loss_final": 1.0,
                "examples_seen": epochs * count,
                "wall_seconds": 0.0,
                "masked_prompt_tokens": prompt_tokens,
                "target_tokens": completion_tokens,
            },
        )


class SubprocessTrainerBackend(TrainerBackend):
    """Invokes an external trainer process through the fixed flag contract."""

    name = "subprocess-trainer"

    def __init__(
        self,
        command: Sequence[str],
        *,
        timeout_seconds: float = 3600.0,
        env_passthrough: Sequence[str] = (),
    ):
        if not command:
            raise TrainerError("subprocess trainer needs a command")
        self.command = list(command)
        self.timeout_seconds = timeout_seconds
        self.env_passthrough = list(env_passthrough)

    def _env(self) -> dict:
        env = {}
        for key in ("PATH", "HOME", "LANG", "TMPDIR"):
            if key in os.environ:
                env[key] = os.environ[key]
        for key in self.env_passthrough:
            if key in os.environ:
                env[key] = os.environ[key]
        return env

    def execute(self, job: TrainJob) -> None:
        argv = self.command + [
            "--train-file", str(job.train_file),
            "--base-model", job.base.locator,
            "--out-dir", str(job.out_dir),
            "--seq-len", str(int(job.hyperparams["sequence_length"])),
            "--epochs", str(int(job.hyperparams["epochs"])),
            "--lr", repr(float(job.hyperparams["learning_rate"])),
            "--seed", str(job.seed),
        ]
        logger.info("launching trainer: %s", " ".join(argv))
        try:
            proc = subprocess.run(
                argv,
                capture_output=True,
                text=True,
                timeout=self.timeout_seconds,
                env=self._env(),
            )
        except subprocess.TimeoutExpired as exc:
            raise TrainerError(f"trainer timed out after {self.timeout_seconds}s") from exc
        except OSError as exc:
            raise TrainerError(f"cannot launch trainer {self.command!r}: {exc}") from exc
        if proc.returncode != 0:
            raise TrainerError(
                f"trainer exited with code {proc.returncode}; stderr tail: {proc.stderr[-800:]}"
            )


def run_training(
    backend: TrainerBackend,
    job: TrainJob,
    *,
    ledger: RunLedger | None = None,
) -> TrainResult:
    """Validate the job, run the backend, and check its outputs against the contract."""
    report = validate_training_file(job.train_file)
    if not report.ok:
        head = "; ".join(f"line {ln}: {reason}" for ln, reason in report.violations[:5])
        raise TrainerError(f"training file {job.train_file} rejected: {head}")

    job.out_dir.mkdir(parents=True, exist_ok=True)
    backend.execute(job)

    ref_path = job.out_dir / "model_ref.json"
    metrics_path = job.out_dir / "metrics.json"
    if not ref_path.exists() or not metrics_path.exists():
        raise TrainerError(f"backend did not write model_ref.json/metrics.json in {job.out_dir}")

    ref_obj = read_json_file(ref_path)
    for key in ("locator", "parent", "round"):
        if key not in ref_obj:
            raise TrainerError(f"model_ref.json missing key {key!r}")
    metrics = read_json_file(metrics_path)
    for key in _METRIC_KEYS:
        if key not in metrics:
            raise TrainerError(f"metrics.json missing key {key!r}")

    if ref_obj["parent"] != job.base.locator:
        raise TrainerError(
            f"lineage violation: produced parent {ref_obj['parent']!r} != base {job.base.locator!r}"
        )
    expected_round = job.base.round + 1
    if ref_obj["round"] != expected_round:
        raise TrainerError(f"round violation: produced {ref_obj['round']} != {expected_round}")
    expected_seen = int(job.hyperparams["epochs"]) * report.count
    if metrics["examples_seen"] != expected_seen:
        raise TrainerError(
            f"examples_seen {metrics['examples_seen']} != epochs x examples = {expected_seen}"
        )

    model = ModelRef(
        round=ref_obj["round"],
        backend_id=backend.name,
        locator=ref_obj["locator"],
        parent=ref_obj["parent"],
    )
    if ledger is not None:
        ledger.append(
            "train",
            backend=backend.name,
            job_id=job.job_id,
            train_file=job.train_file.name,
            train_file_digest=sha256_file(job.train_file),
            examples=report.count,
            base=job.base.locator,
            model=model.locator,
            round=model.round,
            metrics=metrics,
        )
    return TrainResult(model=model, metrics=metrics)
