"""Hierarchical contrastive pretraining on state changes and counterfactuals.

A desk-scale numpy implementation: frame-level before/after state losses with
counterfactual hard negatives, clip-to-narration alignment, and video-to-summary
alignment against missing-step and misordered counterfactual summaries, plus
the prompt pipeline that manufactures those texts.
"""

from .corpus import (
    ClipRecord,
    Corpus,
    SynthSpec,
    VideoRecord,
    load_corpus,
    save_corpus,
    synthesize_corpus,
    validate_corpus,
)
from .embed import EmbeddingTable, HashEmbedderConfig, embed_corpus, embed_text
from .losses import (
    LossConfig,
    assemble_frame_sets,
    child_loss,
    clip_alignment_loss,
    counterfactual_margin,
    frame_state_loss,
    parent_loss,
)
from .model import (
    ModelParams,
    aggregate,
    clip_embedding,
    encode_frames,
    grad_check,
    init_params,
)
from .trainer import TrainConfig, adamw_step, load_checkpoint, make_schedule, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "ClipRecord",
    "Corpus",
    "EmbeddingTable",
    "HashEmbedderConfig",
    "LossConfig",
    "ModelParams",
    "SynthSpec",
    "TrainConfig",
    "VideoRecord",
    "adamw_step",
    "aggregate",
    "assemble_frame_sets",
    "child_loss",
    "clip_alignment_loss",
    "clip_embedding",
    "counterfactual_margin",
    "embed_corpus",
    "embed_text",
    "encode_frames",
    "frame_state_loss",
    "grad_check",
    "init_params",
    "load_checkpoint",
    "load_corpus",
    "make_schedule",
    "parent_loss",
    "save_checkpoint",
    "save_corpus",
    "synthesize_corpus",
    "train",
    "validate_corpus",
]
