"""Parsing-guided, dual-discriminator face frontalization and its multi-pose evaluation protocol."""

from .dataset import (
    ImageRecord,
    PoseBin,
    ProtocolSplit,
    align_face,
    build_protocol,
    load_manifest,
    load_protocol,
    pose_bin,
    save_protocol,
    write_manifest,
)
from .evaluator import EmbeddingSet, RankedResult, fused_distance, pose_binned_report, rank1
from .losses import LossBreakdown, LossWeights, adversarial_loss, identity_loss, pixel_loss, tv_loss
from .networks import ConvIdentityExtractor, Generator, GlobalDiscriminator, LocalDiscriminator
from .parsing import MaskTriple, apply_attention, landmark_stand_in_parser, parse_masks
from .toy import ToySpec, generate_toy_dataset, synthetic_manifest
from .trainer import TrainConfig, build_models, build_pair_dataset, fit, train_step

__version__ = "0.1.0"

__all__ = [
    "ImageRecord", "PoseBin", "ProtocolSplit", "align_face", "build_protocol", "load_manifest",
    "load_protocol", "pose_bin", "save_protocol", "write_manifest",
    "EmbeddingSet", "RankedResult", "fused_distance", "pose_binned_report", "rank1",
    "LossBreakdown", "LossWeights", "adversarial_loss", "identity_loss", "pixel_loss", "tv_loss",
    "ConvIdentityExtractor", "Generator", "GlobalDiscriminator", "LocalDiscriminator",
    "MaskTriple", "apply_attention", "landmark_stand_in_parser", "parse_masks",
    "ToySpec", "generate_toy_dataset", "synthetic_manifest",
    "TrainConfig", "build_models", "build_pair_dataset", "fit", "train_step",
]
