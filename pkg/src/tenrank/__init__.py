"""Rank determination for tensor factor models.

Auto-cross-moment statistics (TOPUP, TIPUP), their iterative refinements and
the IC / ER rank criteria, together with a simulator and an experiment
harness for Monte-Carlo studies.
"""

from .harness import EstimatorSpec, ExperimentConfig, ResultTable, demean, run_cell, run_experiment
from .io import InputError, ingest_csv, read_series, read_tfms, write_tfms
from .iterative import IterOptions, IterResult, iterate, one_step
from .moment_stats import EigenSpectrum, MomentMatrix, leading_subspace, spectrum, tau_diagnostic, tipup, topup
from .rank_criteria import PenaltySpec, er_select, ic_select, penalty_g, penalty_h, tune_c
from .simgen import ModelSpec, generate
from .tensor_core import TensorSeries, mode_product, mode_refold, mode_unfold

__version__ = "0.1.0"

__all__ = [
    "EigenSpectrum",
    "EstimatorSpec",
    "ExperimentConfig",
    "InputError",
    "IterOptions",
    "IterResult",
    "ModelSpec",
    "MomentMatrix",
    "PenaltySpec",
    "ResultTable",
    "TensorSeries",
    "demean",
    "er_select",
    "generate",
    "ic_select",
    "ingest_csv",
    "iterate",
    "leading_subspace",
    "mode_product",
    "mode_refold",
    "mode_unfold",
    "one_step",
    "penalty_g",
    "penalty_h",
    "read_series",
    "read_tfms",
    "run_cell",
    "run_experiment",
    "spectrum",
    "tau_diagnostic",
    "tipup",
    "topup",
    "tune_c",
    "write_tfms",
]
