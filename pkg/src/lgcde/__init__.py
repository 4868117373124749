"""Conditional density estimation with pairwise local Gaussian correlation."""

__version__ = "0.1.0"

from .bandwidth import BandwidthPlan, cv_objective, select_bandwidths
from .conditioner import (ConditionalDensity, ConditionalEstimator, assemble_R, condition,
                          conditional_quantile, estimate_conditional)
from .data import Dataset, Partition, load_csv, make_partition
from .errors import (LgcdeError, NoLocalMassError, NumericalError, ParseError, UnsupportedError,
                     ValidationError)
from .locallik import PairFit, fit_rho, penalty_integral, psi2, score_u
from .marginals import KdeMarginal, PseudoSample, pseudo_normalize, rank_gaussianize

__all__ = [
    "BandwidthPlan", "ConditionalDensity", "ConditionalEstimator", "Dataset", "KdeMarginal",
    "LgcdeError", "NoLocalMassError", "NumericalError", "PairFit", "ParseError", "Partition",
    "PseudoSample", "UnsupportedError", "ValidationError", "assemble_R", "condition",
    "conditional_quantile", "cv_objective", "estimate_conditional", "fit_rho", "load_csv",
    "make_partition", "penalty_integral", "psi2", "pseudo_normalize", "rank_gaussianize",
    "score_u", "select_bandwidths",
]
