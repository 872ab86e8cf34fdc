"""Evolutionary search for compact, accurate fusions of per-residue feature matrices."""

from .feature_store import (
    CandidateFeaturePool,
    FeatureMatrix,
    LabelSet,
    load_labels,
    load_pool,
    one_hot_targets,
    save_labels,
    save_pool,
    validate_pool,
)
from .fusion_tree import FusionOp, Genome, LinearHead, canonical_key, decode_fuse, fit_head, predict, random_genome
from .moea import (
    Evaluator,
    FitnessPair,
    ParetoFront,
    SearchConfig,
    evaluate,
    run_search,
    select_best,
)
from .synthetic import PlantConfig, brute_force_search, generate_planted_pool

__version__ = "0.1.0"

__all__ = [
    "CandidateFeaturePool",
    "Evaluator",
    "FeatureMatrix",
    "FitnessPair",
    "FusionOp",
    "Genome",
    "LabelSet",
    "LinearHead",
    "ParetoFront",
    "PlantConfig",
    "SearchConfig",
    "brute_force_search",
    "canonical_key",
    "decode_fuse",
    "evaluate",
    "fit_head",
    "generate_planted_pool",
    "load_labels",
    "load_pool",
    "one_hot_targets",
    "predict",
    "random_genome",
    "run_search",
    "save_labels",
    "save_pool",
    "select_best",
    "validate_pool",
]
