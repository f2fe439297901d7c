"""Composable per-character low-rank adapters on a miniature diffusion testbed."""

__version__ = "0.1.0"

from .lowrank import LowRankUpdate, fuse, fused_apply, make_lowrank, materialize
from .backbone import (
    BackboneParams,
    CharacterDistribution,
    FeatureFrame,
    NoiseSchedule,
    denoise,
    forward_noise,
    sample,
    sample_reference_set,
)
from .trainer import AdapterWeights, TrainConfig, grad_check, train_adapter, train_backbone
from .prompts import (
    CharacterCard,
    ScenePrompt,
    SceneSpec,
    compile_prompt,
    compress_attributes,
    flat_prompt,
    scramble_order,
)
from .fusion import (
    EmbedderPair,
    FusionCoefficients,
    FusionPlan,
    RefEmbedder,
    TextEmbedder,
    build_plan,
    plan_to_updates,
    relevance_weight,
)
from .metrics import (
    IdentityEmbedder,
    JudgeScores,
    MetricReport,
    ics,
    proxy_is,
    proxy_pfs,
    t_ics,
    t_ics_emb,
    temporal_loss,
    total_objective,
)

__all__ = [
    "AdapterWeights",
    "BackboneParams",
    "CharacterCard",
    "CharacterDistribution",
    "EmbedderPair",
    "FeatureFrame",
    "FusionCoefficients",
    "FusionPlan",
    "IdentityEmbedder",
    "JudgeScores",
    "LowRankUpdate",
    "MetricReport",
    "NoiseSchedule",
    "RefEmbedder",
    "ScenePrompt",
    "SceneSpec",
    "TextEmbedder",
    "TrainConfig",
    "build_plan",
    "compile_prompt",
    "compress_attributes",
    "denoise",
    "flat_prompt",
    "forward_noise",
    "fuse",
    "fused_apply",
    "grad_check",
    "ics",
    "make_lowrank",
    "materialize",
    "plan_to_updates",
    "proxy_is",
    "proxy_pfs",
    "relevance_weight",
    "sample",
    "sample_reference_set",
    "scramble_order",
    "t_ics",
    "t_ics_emb",
    "temporal_loss",
    "total_objective",
    "train_adapter",
    "train_backbone",
]
