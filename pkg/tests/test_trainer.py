"""Trainer gateway: file validation, mock backend contract, subprocess transport."""

import json
import sys
import textwrap

import pytest

from citing.errors import TrainerError
from citing.jsonio import read_json_file
from citing.ledger import RunLedger
from citing.trainer import (
    MockTrainerBackend,
    ModelRef,
    SubprocessTrainerBackend,
    TrainJob,
    run_training,
    validate_training_file,
)

HP = {"sequence_length": 512, "epochs": 4, "learning_rate": 1e-5}


def write_training_file(path, count=10, round_value=1):
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        json.dumps(
            {
                "prompt": f"prompt {i}",
                "completion": f"completion number {i}",
                "meta": {"record_id": f"r{i}", "round": round_value},
            }
        )
        for i in range(count)
    ]
    path.write_text("\n".join(lines) + "\n")
    return path


def base_ref() -> ModelRef:
    return ModelRef(round=-1, backend_id="mock-trainer", locator="base:toy", parent=None)


def make_job(tmp_path, count=10, round_value=1, **overrides) -> TrainJob:
    train_file = write_training_file(tmp_path / "train.jsonl", count, round_value)
    defaults = dict(
        base=base_ref(),
        train_file=train_file,
        hyperparams=dict(HP),
        out_dir=tmp_path / "out",
        job_id="test:train",
        seed=0,
    )
    defaults.update(overrides)
    return TrainJob(**defaults)


class TestValidateTrainingFile:
    def test_wellformed_file_ok(self, tmp_path):
        path = write_training_file(tmp_path / "t.jsonl", count=1000)
        report = validate_training_file(path)
        assert report.ok and report.count == 1000 and report.round_value == 1

    def test_missing_completion_names_line(self, tmp_path):
        rows = [
            {"prompt": f"p{i}", "completion": f"c{i}", "meta": {"record_id": str(i), "round": 1}}
            for i in range(10)
        ]
        del rows[6]["completion"]  # line 7
        path = tmp_path / "t.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        report = validate_training_file(path)
        assert not report.ok
        assert (7, "missing or empty completion") in report.violations

    def test_mixed_rounds_flagged(self, tmp_path):
        rows = [
            {"prompt": "p", "completion": "c", "meta": {"record_id": "a", "round": 1}},
            {"prompt": "p", "completion": "c", "meta": {"record_id": "b", "round": 2}},
        ]
        path = tmp_path / "t.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        report = validate_training_file(path)
        assert any("mixed rounds" in reason for _, reason in report.violations)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "t.jsonl"
        path.write_text("")
        assert not validate_training_file(path).ok


class TestMockBackend:
    def test_locator_encodes_base_and_digest_and_round(self, tmp_path):
        job = make_job(tmp_path)
        result = run_training(MockTrainerBackend(), job)
        assert result.model.locator.startswith("mock:r0:")
        assert result.model.parent == "base:toy"
        assert result.model.round == 0
        assert result.metrics["examples_seen"] == 4 * 10

    def test_identical_jobs_identical_locators(self, tmp_path):
        job1 = make_job(tmp_path / "a")
        job2 = make_job(tmp_path / "b")
        loc1 = run_training(MockTrainerBackend(), job1).model.locator
        loc2 = run_training(MockTrainerBackend(), job2).model.locator
        assert loc1 == loc2

    def test_different_file_different_locator(self, tmp_path):
        job1 = make_job(tmp_path / "a", count=10)
        job2 = make_job(tmp_path / "b", count=11)
        assert (
            run_training(MockTrainerBackend(), job1).model.locator
            != run_training(MockTrainerBackend(), job2).model.locator
        )

    def test_empty_train_file_rejected_before_backend(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        job = TrainJob(
            base=base_ref(),
            train_file=path,
            hyperparams=dict(HP),
            out_dir=tmp_path / "out",
            job_id="j",
        )
        with pytest.raises(TrainerError, match="rejected"):
            run_training(MockTrainerBackend(), job)

    def test_nonpositive_hyperparams_rejected(self, tmp_path):
        with pytest.raises(TrainerError, match="epochs"):
            make_job(tmp_path, hyperparams={**HP, "epochs": 0})

    def test_mask_counts_and_output_files(self, tmp_path):
        job = make_job(tmp_path, count=5)
        result = run_training(MockTrainerBackend(), job)
        assert result.metrics["masked_prompt_tokens"] > 0
        assert result.metrics["target_tokens"] > 0
        assert read_json_file(job.out_dir / "model_ref.json")["locator"] == result.model.locator
        assert read_json_file(job.out_dir / "metrics.json") == result.metrics

    def test_ledger_event(self, tmp_path):
        ledger = RunLedger(tmp_path / "ledger.jsonl")
        run_training(MockTrainerBackend(), make_job(tmp_path), ledger=ledger)
        [event] = ledger.events("train")
        assert event["examples"] == 10
        assert event["round"] == 0


STUB_OK = """
import argparse, json, pathlib
p = argparse.ArgumentParser()
for flag in ("--train-file", "--base-model", "--out-dir", "--seq-len", "--epochs", "--lr", "--seed"):
    p.add_argument(flag)
a = p.parse_args()
out = pathlib.Path(a.out_dir)
out.mkdir(parents=True, exist_ok=True)
lines = [l for l in pathlib.Path(a.train_file).read_text().splitlines() if l.strip()]
(out / "model_ref.json").write_text(json.dumps({
    "locator": f"stub:{a.seed}", "parent": a.base_model, "round": 0}))
(out / "metrics.json").write_text(json.dumps({
    "train_loss_initial": 2.0, "train_loss_final": 0.5,
    "examples_seen": int(a.epochs) * len(lines), "wall_seconds": 0.1,
    "masked_prompt_tokens": 100, "target_tokens": 50}))
"""

STUB_BAD_PARENT = STUB_OK.replace('"parent": a.base_model', '"parent": "wrong"')
STUB_CRASH = "import sys; sys.stderr.write('kaboom'); sys.exit(3)"
STUB_NO_FILES = """
import argparse
p = argparse.ArgumentParser()
for flag in ("--train-file", "--base-model", "--out-dir", "--seq-len", "--epochs", "--lr", "--seed"):
    p.add_argument(flag)
p.parse_args()
"""


def stub_backend(tmp_path, code, timeout=30.0):
    script = tmp_path / "stub_trainer.py"
    script.write_text(textwrap.dedent(code))
    return SubprocessTrainerBackend([sys.executable, str(script)], timeout_seconds=timeout)


class TestSubprocessBackend:
    def test_conforming_stub_passes_gateway_checks(self, tmp_path):
        backend = stub_backend(tmp_path, STUB_OK)
        result = run_training(backend, make_job(tmp_path, seed=7))
        assert result.model.locator == "stub:7"
        assert result.model.parent == "base:toy"
        assert result.metrics["examples_seen"] == 40

    def test_lineage_violation_caught(self, tmp_path):
        backend = stub_backend(tmp_path, STUB_BAD_PARENT)
        with pytest.raises(TrainerError, match="lineage"):
            run_training(backend, make_job(tmp_path))

    def test_nonzero_exit_reports_stderr(self, tmp_path):
        backend = stub_backend(tmp_path, STUB_CRASH)
        with pytest.raises(TrainerError, match="kaboom"):
            run_training(backend, make_job(tmp_path))

    def test_missing_output_files_rejected(self, tmp_path):
        backend = stub_backend(tmp_path, STUB_NO_FILES)
        with pytest.raises(TrainerError, match="did not write"):
            run_training(backend, make_job(tmp_path))
