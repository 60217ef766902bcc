"""Run directory state: stage manifest and single-writer lock.

The manifest intentionally stores no wall-clock fields and only run-relative
paths, so two runs with identical inputs produce byte-identical directories.
"""

from __future__ import annotations

import os
from pathlib import Path

from .errors import PipelineError
from .jsonio import read_json_file, write_json_file

# Coarse dependency order; fine-grained stage names map onto these phases.
PHASES = ("split", "rubrics", "assign", "sft", "rounds", "infer", "judge")


def phase_of(stage: str) -> str:
    if stage in PHASES:
        return stage
    if stage in ("sft_file", "train_0"):
        return "sft"
    if stage.startswith(("round_", "train_")):
        return "rounds"
    raise PipelineError(f"stage {stage!r} does not map to a known phase")


class RunManifest:
    """Ordered record of completed stages and their artifacts."""

    def __init__(self, run_dir: str | Path):
        self.run_dir = Path(run_dir)
        self.path = self.run_dir / "manifest.json"
        self.data: dict = {"run_name": self.run_dir.name, "config_digest": None, "stages": {}}

    @classmethod
    def load(cls, run_dir: str | Path) -> "RunManifest":
        manifest = cls(run_dir)
        if manifest.path.exists():
            manifest.data = read_json_file(manifest.path)
        return manifest

    def exists(self) -> bool:
        return self.path.exists()

    def save(self) -> None:
        write_json_file(self.path, self.data)

    def set_config_digest(self, digest: str) -> None:
        self.data["config_digest"] = digest
        self.save()

    def check_config_digest(self, digest: str) -> None:
        recorded = self.data.get("config_digest")
        if recorded is not None and recorded != digest:
            raise PipelineError(
                "config digest mismatch: run directory was created with a different "
                f"configuration ({recorded[:12]} != {digest[:12]})"
            )

    def is_complete(self, stage: str) -> bool:
        entry = self.data["stages"].get(stage)
        return bool(entry) and entry.get("status") == "complete"

    def mark_complete(self, stage: str, artifacts: dict | None = None) -> None:
        rank = PHASES.index(phase_of(stage))
        for done in self.data["stages"]:
            if PHASES.index(phase_of(done)) > rank:
                raise PipelineError(
                    f"stage {stage!r} cannot complete after later stage {done!r}"
                )
        self.data["stages"][stage] = {"status": "complete", "artifacts": artifacts or {}}
        self.save()

    def artifacts(self, stage: str) -> dict:
        entry = self.data["stages"].get(stage)
        if not entry:
            raise PipelineError(f"stage {stage!r} has not completed")
        return entry.get("artifacts", {})


class RunLock:
    """Exclusive lock file guarding a run directory against concurrent writers."""

    def __init__(self, run_dir: str | Path):
        self.path = Path(run_dir) / ".lock"

    def __enter__(self) -> "RunLock":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise PipelineError(
                f"run directory is locked by another process ({self.path}); "
                "remove the lock file if that process is gone"
            ) from None
        with os.fdopen(fd, "w") as handle:
            handle.write(str(os.getpid()))
        return self

    def __exit__(self, *exc_info) -> None:
        try:
            self.path.unlink()
        except FileNotFoundError:
            pass
