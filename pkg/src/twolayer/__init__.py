"""Two-layer Gaussian graphical models: a systemic network shared across
categories plus one category-specific network per category."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    BlockCovariance,
    FitReport,
    NotPositiveDefiniteError,
    PanelDataset,
    PenaltyPair,
    PrecisionStack,
    aggregate_precision,
    block_covariance,
    center_and_wrap,
    joint_log_likelihood,
    penalized_log_likelihood,
)
from .em import EMError, EmSettings, alpha_em_fit, em_fit, estep  # noqa: E402
from .evaluate import MetricReport, auc, evaluate, roc_curve  # noqa: E402
from .glasso import GlassoSettings, glasso_solve  # noqa: E402
from .onestep import onestep_fit  # noqa: E402
from .select import LambdaGrid, SelectionReport, default_grid, select_lambda  # noqa: E402
from .simulate import ScenarioSpec, sample_panel  # noqa: E402

__all__ = [
    "BlockCovariance", "EMError", "EmSettings", "FitReport", "GlassoSettings", "LambdaGrid",
    "MetricReport", "NotPositiveDefiniteError", "PanelDataset", "PenaltyPair", "PrecisionStack",
    "ScenarioSpec", "SelectionReport", "aggregate_precision", "alpha_em_fit", "auc",
    "block_covariance", "center_and_wrap", "default_grid", "em_fit", "estep", "evaluate",
    "glasso_solve", "joint_log_likelihood", "onestep_fit", "penalized_log_likelihood",
    "roc_curve", "sample_panel", "select_lambda",
]
