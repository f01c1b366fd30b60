"""Variational Bayes training and adaptation for the SPLDA linear-Gaussian model."""

from .data import CenteredStats, Dataset, SpeakerPartition, SuffStats, accumulate, center, merge
from .elbo import ElboBreakdown, elbo_total
from .engine import (
    FitConfig,
    FitReport,
    VariationalState,
    apply_annealing,
    fit,
    fit_stats,
    heldout_bound,
    minimum_divergence,
)
from .model import (
    VARIANTS,
    AugmentedLoading,
    ModelParams,
    PriorConfig,
    conditional_loglik,
    conditional_loglik_augmented,
)
from .posterior import QY, QAlpha, QVtilde, QWGammaDiag, QWGammaIso, QWWishart
from .synth import CounterRng, GenSpec, sample

__version__ = "0.1.0"

__all__ = [
    "AugmentedLoading",
    "CenteredStats",
    "CounterRng",
    "Dataset",
    "ElboBreakdown",
    "FitConfig",
    "FitReport",
    "GenSpec",
    "ModelParams",
    "PriorConfig",
    "QAlpha",
    "QVtilde",
    "QWGammaDiag",
    "QWGammaIso",
    "QWWishart",
    "QY",
    "SpeakerPartition",
    "SuffStats",
    "VARIANTS",
    "VariationalState",
    "accumulate",
    "apply_annealing",
    "center",
    "conditional_loglik",
    "conditional_loglik_augmented",
    "elbo_total",
    "fit",
    "fit_stats",
    "heldout_bound",
    "merge",
    "minimum_divergence",
    "sample",
    "__version__",
]
