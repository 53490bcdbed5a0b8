"""Learning-curve analysis of transfer effects in multi-task classifiers.

The library measures how extra samples for one task change every other
task's performance: it trains a shared-trunk multi-task model over a
grid of per-task sample sizes, fits saturating learning curves with a
staged parameter-freezing protocol, and compares the resulting
sample-based transfer coefficients with gradient-lookahead task
affinities.
"""

from .curves import CurveArgs, CurveFamily, ParamSet, eval_curve, grad_params, marginal_gain
from .errors import MtlcError
from .fitter import FitPoint, FitResult, StagedFit, fit_curve, fit_staged, init_heuristic
from .metrics import CorrResult, ScoredLabels, aupr, auroc, spearman, task_metrics

__version__ = "0.1.0"

__all__ = [
    "CurveArgs",
    "CurveFamily",
    "ParamSet",
    "eval_curve",
    "grad_params",
    "marginal_gain",
    "MtlcError",
    "FitPoint",
    "FitResult",
    "StagedFit",
    "fit_curve",
    "fit_staged",
    "init_heuristic",
    "CorrResult",
    "ScoredLabels",
    "aupr",
    "auroc",
    "spearman",
    "task_metrics",
    "__version__",
]
