"""Implicit ALS and its exposure-regularized ADMM variant, with evaluation tooling."""

from .admm import (BoundViolationWarning, ExAdmmHyperParams, ExAdmmModel, ExAdmmState, calibrate,
                   exadmm_epoch, proximal_map, train_exadmm)
from .data import (DataError, DatasetBundle, FeedbackMatrix, InteractionTriple, SplitSpec, build_matrix,
                   filter_min_interactions, load_bundle, load_interactions, save_bundle,
                   strong_generalization_split)
from .diagnostics import EpochDiagnostics, convergence_report, gradient_norms
from .evaluate import EvalResult, evaluate_holdout
from .ials import IalsHyperParams, IalsModel, fold_in, ials_objective, train_ials
from .metrics import exposure_accumulate, gini_at_k, lorenz_curve, ndcg_at_k, top_k
from .sweep import FrontierRow, SweepConfig, expand_grid, pareto_filter, run_sweep, select_best

__version__ = "0.1.0"

__all__ = [
    "BoundViolationWarning", "DataError", "DatasetBundle", "EpochDiagnostics", "EvalResult",
    "ExAdmmHyperParams", "ExAdmmModel", "ExAdmmState", "FeedbackMatrix", "FrontierRow",
    "IalsHyperParams", "IalsModel", "InteractionTriple", "SplitSpec", "SweepConfig",
    "build_matrix", "calibrate", "convergence_report", "evaluate_holdout", "exadmm_epoch",
    "expand_grid", "exposure_accumulate", "filter_min_interactions", "fold_in", "gini_at_k",
    "gradient_norms", "ials_objective", "load_bundle", "load_interactions", "lorenz_curve",
    "ndcg_at_k", "pareto_filter", "proximal_map", "run_sweep", "save_bundle", "select_best",
    "strong_generalization_split", "top_k", "train_exadmm", "train_ials",
]
