"""Round-based multi-fidelity annotation: a cheap noisy labeler and an
expensive reliable one share a budget, an acquisition strategy splits each
round's samples between them, and the target model is fine-tuned as labels
arrive."""

from .budget import BudgetConfig, BudgetLedger, Termination, cumulative, flat_schedule, human_schedule, llm_schedule
from .core import (
    AnnotatedSet,
    Annotation,
    DataPool,
    Fidelity,
    GoldAccess,
    LabelSet,
    LoopError,
    Sample,
    commit_annotations,
    load_pool,
)
from .embed import EmbeddingStore, HashingEncoder, cosine_similarity, knn, retrieve_prompt_examples
from .learner import LearnerHyper, ReferenceLearner
from .metrics import Metric, score
from .orchestrator import Engine, RunConfig, load_config, plan_summary
from .query import StrategyKind, UncertaintyBasis, eeq_select, kmeans_select, plan_queries
from .synth import synth_task

__all__ = [
    "AnnotatedSet",
    "Annotation",
    "BudgetConfig",
    "BudgetLedger",
    "DataPool",
    "EmbeddingStore",
    "Engine",
    "Fidelity",
    "GoldAccess",
    "HashingEncoder",
    "LabelSet",
    "LearnerHyper",
    "LoopError",
    "Metric",
    "ReferenceLearner",
    "RunConfig",
    "Sample",
    "StrategyKind",
    "Termination",
    "UncertaintyBasis",
    "commit_annotations",
    "cosine_similarity",
    "cumulative",
    "eeq_select",
    "flat_schedule",
    "human_schedule",
    "kmeans_select",
    "knn",
    "llm_schedule",
    "load_config",
    "load_pool",
    "plan_queries",
    "plan_summary",
    "retrieve_prompt_examples",
    "score",
    "synth_task",
]
