"""Spatial capture-recapture for bilateral (left/right flank) photo data."""

__version__ = "0.1.0"

from .model import AugmentedDataset, DetectionParams, EncounterMatrix, StateSpace, TrapArray, total_loglik
from .identity import IdAssignment, canonicalize
from .sampler import ChainOutput, SamplerConfig, run_chain, run_heuristic
from .simulator import SimTruth, perfect_dataset, scramble, simulate, square_grid
from .analysis import id_match_table, run_study, score_id_recovery, summarize

__all__ = [
    "AugmentedDataset",
    "ChainOutput",
    "DetectionParams",
    "EncounterMatrix",
    "IdAssignment",
    "SamplerConfig",
    "SimTruth",
    "StateSpace",
    "TrapArray",
    "canonicalize",
    "id_match_table",
    "perfect_dataset",
    "run_chain",
    "run_heuristic",
    "run_study",
    "score_id_recovery",
    "scramble",
    "simulate",
    "square_grid",
    "summarize",
    "total_loglik",
]
