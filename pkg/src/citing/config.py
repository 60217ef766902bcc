"""Pipeline configuration: hyperparameters, provider blocks, and factories.

A run is fully described by one JSON document mirroring
:class:`PipelineConfig`. CLI flags may override individual values; the
effective config is what gets persisted (and digested) in the run directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any

from .errors import PipelineError
from .jsonio import canonical_json, read_json_file, sha256_text
from .ledger import RunLedger
from .providers import (
    ChatProvider,
    EmbeddingProvider,
    HttpChatProvider,
    HttpEmbeddingProvider,
    MockChatProvider,
    MockEmbeddingProvider,
    ResponseCache,
)
from .templates import STUDENT_TEMPLATES
from .trainer import MockTrainerBackend, SubprocessTrainerBackend, TrainerBackend

CACHE_DIR_ENV = "CITING_CACHE_DIR"


@dataclass
class TrainerHyperparams:
    sequence_length: int = 512
    epochs: int = 4
    learning_rate: float = 1e-5
    max_new_tokens: int = 512

    def validate(self) -> None:
        if self.sequence_length < 1:
            raise PipelineError("sequence_length must be >= 1")
        if self.epochs < 1:
            raise PipelineError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise PipelineError("learning_rate must be > 0")
        if self.max_new_tokens < 1:
            raise PipelineError("max_new_tokens must be >= 1")

    def job_dict(self) -> dict:
        return {
            "sequence_length": self.sequence_length,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
        }


@dataclass
class ProviderConfig:
    backend: str = "mock"  # mock | http
    model: str = "mock-model"
    mode: str = "generative"  # mock backends: scripted | generative
    script: dict[str, str] | None = None
    script_file: str | None = None
    base_url: str | None = None
    api_key_env: str | None = None
    max_attempts: int = 3
    backoff_seconds: float = 0.5
    timeout_seconds: float = 60.0
    cache: bool | None = None  # None = on for http, off for mock
    dimension: int = 32  # mock embeddings only

    def validate(self) -> None:
        if self.backend not in ("mock", "http"):
            raise PipelineError(f"unknown provider backend {self.backend!r}")
        if self.mode not in ("scripted", "generative"):
            raise PipelineError(f"unknown mock mode {self.mode!r}")
        if self.max_attempts < 1:
            raise PipelineError("max_attempts must be >= 1")

    def cache_enabled(self) -> bool:
        if self.cache is None:
            return self.backend == "http"
        return self.cache


@dataclass
class TrainerBackendConfig:
    backend: str = "mock"  # mock | subprocess
    command: list[str] = field(default_factory=list)
    base_model: str = "base:toy"
    timeout_seconds: float = 3600.0
    env_passthrough: list[str] = field(default_factory=list)
    seed: int = 0

    def validate(self) -> None:
        if self.backend not in ("mock", "subprocess"):
            raise PipelineError(f"unknown trainer backend {self.backend!r}")
        if self.backend == "subprocess" and not self.command:
            raise PipelineError("subprocess trainer requires a command")


@dataclass
class PipelineConfig:
    n_rounds: int = 3
    m_inference_rounds: int = 2
    curriculum_sample_size: int = 1000
    split_ratios: tuple[float, float, float] = (8.0, 1.0, 1.0)
    split_seed: int = 0
    induction_sample_size: int = 100
    induction_retries: int = 2
    max_categories_hint: int | None = None
    trainer_hyperparams: TrainerHyperparams = field(default_factory=TrainerHyperparams)
    student_prompt_template: str = "bare"
    revision_failure_threshold: float = 0.02
    judge_skip_threshold: float = 0.02
    student_temperature: float = 0.0
    revision_temperature: float = 0.7
    induction_temperature: float = 0.0
    judge_temperature: float = 0.0
    parallelism: int = 1
    dataset: str | None = None
    rubrics_file: str | None = None
    cache_dir: str | None = None
    teacher: ProviderConfig = field(default_factory=lambda: ProviderConfig(model="mock-teacher"))
    student: ProviderConfig = field(default_factory=lambda: ProviderConfig(model="mock-student"))
    embedder: ProviderConfig = field(default_factory=lambda: ProviderConfig(model="mock-embedder"))
    judge: ProviderConfig = field(default_factory=lambda: ProviderConfig(model="mock-judge"))
    trainer: TrainerBackendConfig = field(default_factory=TrainerBackendConfig)

    def validate(self) -> None:
        for name in ("n_rounds", "m_inference_rounds", "curriculum_sample_size",
                     "induction_sample_size", "induction_retries"):
            if getattr(self, name) < 0:
                raise PipelineError(f"{name} must be non-negative")
        if len(self.split_ratios) != 3 or any(r < 0 for r in self.split_ratios):
            raise PipelineError("split_ratios must be three non-negative numbers")
        if sum(self.split_ratios) == 0:
            raise PipelineError("split_ratios must not all be zero")
        if self.student_prompt_template not in STUDENT_TEMPLATES:
            raise PipelineError(f"unknown student prompt template {self.student_prompt_template!r}")
        for name in ("revision_failure_threshold", "judge_skip_threshold"):
            value = getattr(self, name)
            if not (0 <= value <= 1):
                raise PipelineError(f"{name} must be in [0, 1]")
        for name in ("student_temperature", "revision_temperature",
                     "induction_temperature", "judge_temperature"):
            if getattr(self, name) < 0:
                raise PipelineError(f"{name} must be >= 0")
        if self.parallelism < 1:
            raise PipelineError("parallelism must be >= 1")
        self.trainer_hyperparams.validate()
        for block in (self.teacher, self.student, self.embedder, self.judge):
            block.validate()
        self.trainer.validate()

    def to_dict(self) -> dict:
        obj = asdict(self)
        obj["split_ratios"] = list(self.split_ratios)
        return obj

    def digest(self) -> str:
        return sha256_text(canonical_json(self.to_dict()))

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        obj = dict(obj)
        kwargs: dict[str, Any] = {}
        known = {f for f in cls.__dataclass_fields__}  # noqa: C416
        unknown = set(obj) - known
        if unknown:
            raise PipelineError(f"unknown config keys: {sorted(unknown)}")
        for key, value in obj.items():
            if key == "trainer_hyperparams":
                kwargs[key] = TrainerHyperparams(**value)
            elif key in ("teacher", "student", "embedder", "judge"):
                kwargs[key] = ProviderConfig(**value)
            elif key == "trainer":
                kwargs[key] = TrainerBackendConfig(**value)
            elif key == "split_ratios":
                kwargs[key] = tuple(value)
            else:
                kwargs[key] = value
        config = cls(**kwargs)
        config.validate()
        return config

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_dict(read_json_file(path))


def resolve_cache(config: PipelineConfig, block: ProviderConfig) -> ResponseCache | None:
    if not block.cache_enabled():
        return None
    root = config.cache_dir or os.environ.get(CACHE_DIR_ENV)
    if not root:
        return None
    return ResponseCache(root)


def _load_script(block: ProviderConfig, base_dir: Path | None) -> dict[str, str] | None:
    script = dict(block.script) if block.script else {}
    if block.script_file:
        path = Path(block.script_file)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        script.update(read_json_file(path))
    return script or None


def build_chat_provider(
    config: PipelineConfig,
    block: ProviderConfig,
    *,
    ledger: RunLedger | None = None,
    base_dir: Path | None = None,
) -> ChatProvider:
    cache = resolve_cache(config, block)
    common = dict(
        ledger=ledger,
        cache=cache,
        max_attempts=block.max_attempts,
        backoff_seconds=block.backoff_seconds,
    )
    if block.backend == "http":
        api_key = os.environ.get(block.api_key_env) if block.api_key_env else None
        return HttpChatProvider(
            block.model,
            base_url=block.base_url,
            api_key=api_key,
            timeout_seconds=block.timeout_seconds,
            **common,
        )
    fallback = "error" if block.mode == "scripted" else "hash"
    return MockChatProvider(
        block.model, script=_load_script(block, base_dir), fallback=fallback, **common
    )


def build_embedding_provider(
    config: PipelineConfig,
    block: ProviderConfig,
    *,
    ledger: RunLedger | None = None,
) -> EmbeddingProvider:
    cache = resolve_cache(config, block)
    common = dict(
        ledger=ledger,
        cache=cache,
        max_attempts=block.max_attempts,
        backoff_seconds=block.backoff_seconds,
    )
    if block.backend == "http":
        api_key = os.environ.get(block.api_key_env) if block.api_key_env else None
        return HttpEmbeddingProvider(
            block.model,
            base_url=block.base_url,
            api_key=api_key,
            timeout_seconds=block.timeout_seconds,
            **common,
        )
    return MockEmbeddingProvider(block.model, dimension=block.dimension, **common)


def build_trainer_backend(config: PipelineConfig) -> TrainerBackend:
    if config.trainer.backend == "subprocess":
        return SubprocessTrainerBackend(
            config.trainer.command,
            timeout_seconds=config.trainer.timeout_seconds,
            env_passthrough=config.trainer.env_passthrough,
        )
    return MockTrainerBackend()
