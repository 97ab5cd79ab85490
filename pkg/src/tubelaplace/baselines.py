"""Full-network Laplace baselines with a dense curvature matrix.

ELA samples weights from ``N(theta_MAP, P^{-1})`` and runs the network;
LLA pushes the same Gaussian through the network Jacobian at the MAP.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .curvature import CurvatureKind, CurvatureOracle, dense_operator
from .errors import IndefiniteCurvatureError
from .nn_core import Dataset, MlpModel, PriorSpec, forward, jacobian
from .sampling import PredictiveSummary, _aleatoric, _sigmoid, entropy, predict_from_weights

POINT_CHUNK = 1024


@dataclass(frozen=True)
class GaussianPosterior:
    mean: np.ndarray
    precision: np.ndarray
    chol_cov: np.ndarray  # lower triangular, chol_cov @ chol_cov.T == precision^{-1}
    kind: str = "ggn"

    @property
    def covariance(self) -> np.ndarray:
        return self.chol_cov @ self.chol_cov.T


def posterior_from_precision(mean: np.ndarray, precision: np.ndarray, kind: str = "matrix") -> GaussianPosterior:
    """Lower covariance factor from a single Cholesky of the precision.

    With ``J`` the exchange matrix, ``J P J = R R^T`` gives
    ``P^{-1} = (J R^{-T} J)(J R^{-T} J)^T`` and ``J R^{-T} J`` is lower
    triangular.
    """
    P = 0.5 * (precision + precision.T)
    flipped = P[::-1, ::-1]
    try:
        R = cholesky(flipped, lower=True)
    except np.linalg.LinAlgError as exc:
        raise IndefiniteCurvatureError(
            f"{kind} precision is not positive definite; use the rectified or GGN curvature",
            where="fit_laplace") from exc
    R_inv_T = solve_triangular(R, np.eye(P.shape[0]), lower=True).T
    L = np.ascontiguousarray(R_inv_T[::-1, ::-1])
    return GaussianPosterior(np.asarray(mean, dtype=float).copy(), P, L, kind)


def fit_laplace(map_model: MlpModel, data: Dataset, prior: PriorSpec, kind="ggn",
                threshold: float | None = None) -> GaussianPosterior:
    kind = CurvatureKind(kind)
    oracle = CurvatureOracle(kind, map_model, data, prior, threshold=threshold)
    return posterior_from_precision(map_model.theta, dense_operator(oracle), kind.value)


def fit_laplace_with_fallback(map_model: MlpModel, data: Dataset, prior: PriorSpec,
                              threshold: float | None = None) -> GaussianPosterior:
    """Exact Hessian when it is positive definite, rectified Hessian otherwise."""
    oracle = CurvatureOracle(CurvatureKind.EXACT, map_model, data, prior)
    P = dense_operator(oracle)
    try:
        return posterior_from_precision(map_model.theta, P, "exact")
    except IndefiniteCurvatureError:
        vals, vecs = np.linalg.eigh(P)
        floor = threshold if threshold is not None else 1e-6 * vals[-1]
        P_rect = (vecs * np.maximum(vals, floor)) @ vecs.T
        return posterior_from_precision(map_model.theta, P_rect, "rectified")


def sample_gaussian_weights(posterior: GaussianPosterior, S: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    xi = rng.standard_normal((S, posterior.mean.shape[0]))
    return posterior.mean[None, :] + xi @ posterior.chol_cov.T


def ela_predict(map_model: MlpModel, posterior: GaussianPosterior, x_star: np.ndarray, S: int = 100,
                seed: int = 0) -> PredictiveSummary:
    if S < 2:
        raise ValueError("need at least two samples")
    return predict_from_weights(map_model, x_star, sample_gaussian_weights(posterior, S, seed))


def linearised_moments(map_model: MlpModel, posterior: GaussianPosterior, x_star: np.ndarray):
    """MAP outputs and the diagonal of ``J Sigma J^T`` per output, both ``(N, C)``."""
    x_star = np.asarray(x_star, dtype=float)
    means, variances = [], []
    for start in range(0, x_star.shape[0], POINT_CHUNK):
        xs = x_star[start : start + POINT_CHUNK]
        J = jacobian(map_model, xs, posterior.mean)
        JL = J @ posterior.chol_cov
        means.append(forward(map_model, xs, posterior.mean))
        variances.append(np.sum(JL**2, axis=-1))
    return np.concatenate(means), np.concatenate(variances)


def lla_predict(map_model: MlpModel, posterior: GaussianPosterior, x_star: np.ndarray, mode: str = "probit",
                S: int = 100, seed: int = 0) -> PredictiveSummary:
    """Linearised Laplace predictive.

    Regression returns the Gaussian predictive (epistemic variance in
    ``variance``, observation noise in ``aleatoric``).  Classification uses
    either Monte Carlo over logits (``mode="mc"``) or the probit-matched
    approximation ``sigmoid(mu / sqrt(1 + pi v / 8))``.
    """
    mu, var = linearised_moments(map_model, posterior, x_star)
    if map_model.task == "regression":
        return PredictiveSummary("regression", mu, var, None, 0, _aleatoric(map_model),
                                 {"mode": "analytic"})
    if mode == "probit":
        p1 = _sigmoid(mu[:, 0] / np.sqrt(1.0 + np.pi * var[:, 0] / 8.0))
        count = 0
    elif mode == "mc":
        if S < 2:
            raise ValueError("need at least two samples")
        rng = np.random.Generator(np.random.PCG64(seed))
        eps = rng.standard_normal((S, mu.shape[0]))
        logits = mu[None, :, 0] + eps * np.sqrt(var[None, :, 0])
        p1 = _sigmoid(logits).mean(axis=0)
        count = S
    else:
        raise ValueError(f"unknown LLA mode {mode!r}")
    probs = np.column_stack([1.0 - p1, p1])
    return PredictiveSummary("classification", probs, None, entropy(probs), count, 0.0, {"mode": mode})


def save_posterior(posterior: GaussianPosterior, path) -> None:
    Path(path).write_text(json.dumps({
        "kind": posterior.kind,
        "mean": posterior.mean.tolist(),
        "chol_cov": posterior.chol_cov.tolist(),
    }))


def load_posterior(path) -> GaussianPosterior:
    d = json.loads(Path(path).read_text())
    L = np.array(d["chol_cov"], dtype=float)
    cov = L @ L.T
    return GaussianPosterior(np.array(d["mean"], dtype=float), np.linalg.inv(cov), L, d["kind"])
