"""Tubular Laplace posterior approximation for small MLPs, with dense Laplace baselines."""

__version__ = "0.1.0"

from .baselines import GaussianPosterior, ela_predict, fit_laplace, fit_laplace_with_fallback, lla_predict
from .curvature import CurvatureKind, CurvatureOracle, EigenPairs, dense_operator, lanczos_topk, smallest_eigvec
from .datasets import gen_sine, gen_two_moons, quadratic_valley, sine_test_grid
from .metrics import MetricsReport, classification_scores, regression_scores
from .nn_core import (BernoulliLogit, Dataset, FlatParams, GaussianRegression, MlpModel, PriorSpec, forward,
                      ggn_vp, gradient, hvp, make_mlp, neg_log_posterior, polish_map, train_map)
from .sampling import PredictiveSummary, predict, z_to_index
from .tube import Tube, TubeConfig, TubeElement, build_tube, transport_frame
