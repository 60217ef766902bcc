"""Curriculum instruction tuning pipeline.

A teacher model induces per-category answer rubrics, new instructions are
matched to categories by embedding similarity, and the student model is
fine-tuned over successive rounds on teacher revisions of its own responses.
Inference runs the fine-tuned student through the same revision template
against itself; evaluation compares systems pairwise with an LLM judge.
"""

from .config import PipelineConfig, ProviderConfig, TrainerBackendConfig, TrainerHyperparams
from .curriculum import (
    CurriculumExample,
    ProviderSet,
    RevisionChain,
    emit_sft_file,
    emit_training_file,
    generate_responses,
    infer_with_self_revision,
    revise_responses,
    run_curriculum,
)
from .errors import (
    CitingError,
    DatasetError,
    PipelineError,
    ProviderError,
    RubricParseError,
    TrainerError,
    TransientProviderError,
    VerdictParseError,
)
from .judge import (
    ComparisonReport,
    JudgeVerdict,
    build_judge_prompt,
    parse_verdict,
    render_report,
    run_comparison,
)
from .matching import (
    CategoryEmbeddingIndex,
    CriteriaAssignment,
    assign_criteria,
    build_category_indexes,
    cosine_similarity,
    score_category,
)
from .providers import (
    ChatMessage,
    ChatRequest,
    EmbeddingVector,
    HttpChatProvider,
    HttpEmbeddingProvider,
    MockChatProvider,
    MockEmbeddingProvider,
    ResponseCache,
)
from .records import (
    DatasetSplit,
    InstructionRecord,
    load_instruction_dataset,
    split_dataset,
)
from .rubrics import CategoryRubric, RubricSet, induce_rubrics, parse_rubric_response
from .templates import build_classification_prompt, build_revision_prompt
from .trainer import (
    ModelRef,
    MockTrainerBackend,
    SubprocessTrainerBackend,
    TrainJob,
    TrainResult,
    run_training,
    validate_training_file,
)

__version__ = "0.1.0"
