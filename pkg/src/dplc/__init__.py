"""Partial linear Cox regression for interval-censored data.

The log relative risk is ``x @ beta + g(z)`` with ``g`` a ReLU network and
the baseline cumulative hazard a monotone I-spline expansion. Fitting is
sieve maximum likelihood by Adam; inference on ``beta`` uses an
information matrix estimated by projecting the score onto nuisance
directions learned by two auxiliary networks.
"""

__version__ = "0.1.0"

from .likelihood import ModelState, Observation, SurvData, loglik, loglik_grad, score_eta, score_lambda
from .network import Architecture, CenteredNet, NetParams, backward, forward, init_params
from .spline import SplineConfig, cum_hazard, ispline_eval, mspline_eval
from .trainer import FitResult, TrainConfig, fit_once, fit_with_restarts, select_and_refit
from .inference import estimate_lfd, information_matrix, wald_report
from .simulation import SimDesign, simulate

__all__ = [
    "__version__",
    "Architecture",
    "CenteredNet",
    "FitResult",
    "ModelState",
    "NetParams",
    "Observation",
    "SimDesign",
    "SplineConfig",
    "SurvData",
    "TrainConfig",
    "backward",
    "cum_hazard",
    "estimate_lfd",
    "fit_once",
    "fit_with_restarts",
    "forward",
    "information_matrix",
    "init_params",
    "ispline_eval",
    "loglik",
    "loglik_grad",
    "mspline_eval",
    "score_eta",
    "score_lambda",
    "select_and_refit",
    "simulate",
    "wald_report",
]
