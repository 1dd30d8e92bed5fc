"""Discrete-diffusion sequence design on protein backbone graphs."""

from .backbone import (
    AA_LETTERS,
    BackboneParseError,
    ProteinBackbone,
    Residue,
    dihedrals,
    load_backbone,
    parse_backbone,
    sasa,
    secondary_structure,
    serialize_backbone,
)
from .denoiser import DenoiserParams, LayerTrace, ModelConfig, denoiser_forward
from .diffusion import (
    TransitionSchedule,
    forward_marginal,
    forward_sample,
    make_schedule,
    posterior,
    reverse_step,
)
from .features import ResidueGraph, build_graph, knn_graph
from .sampling import EvalReport, SampleTrace, perplexity, recovery, sample_sequence
from .training import AdamW, TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "AA_LETTERS",
    "AdamW",
    "BackboneParseError",
    "DenoiserParams",
    "EvalReport",
    "LayerTrace",
    "ModelConfig",
    "ProteinBackbone",
    "Residue",
    "ResidueGraph",
    "SampleTrace",
    "TrainConfig",
    "TransitionSchedule",
    "build_graph",
    "denoiser_forward",
    "dihedrals",
    "forward_marginal",
    "forward_sample",
    "knn_graph",
    "load_backbone",
    "load_checkpoint",
    "make_schedule",
    "parse_backbone",
    "perplexity",
    "posterior",
    "recovery",
    "reverse_step",
    "sample_sequence",
    "sasa",
    "save_checkpoint",
    "secondary_structure",
    "serialize_backbone",
    "train",
]
