"""Reference-value suites computed by independent routes.

Each suite returns a JSON-ready dict with a ``passed`` flag and the numbers
it compared.  None of them reuse the code path they check: Hessians come
from finite differences of the gradient, spectra from dense ``eigh``,
posteriors from closed-form conjugate formulas.
"""

from __future__ import annotations

import platform

import numpy as np
import scipy

from . import __version__
from .baselines import fit_laplace, lla_predict
from .curvature import CurvatureKind, CurvatureOracle, dense_operator, lanczos_topk
from .datasets import GENERATOR_ID, quadratic_valley
from .nn_core import Dataset, GaussianRegression, PriorSpec, _loss_and_grad, ggn_vp, hvp, jacobian, make_mlp
from .sampling import sample_weight_matrix
from .tube import TubeConfig, build_tube_on, prior_matched_step


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def small_regression_problem(seed: int = 0, n: int = 20, widths=(2, 5, 1), lam: float = 0.5):
    """A 2-5-1 tanh net with random weights over random data."""
    rng = _rng(seed)
    X = rng.standard_normal((n, widths[0]))
    y = np.sin(X.sum(axis=1, keepdims=True)) + 0.1 * rng.standard_normal((n, 1))
    model = make_mlp(widths, GaussianRegression(0.1), seed=seed)
    # move away from the init so the Hessian has a real residual term
    model = model.with_theta(model.theta + 0.3 * rng.standard_normal(model.num_params))
    return model, Dataset(X, y, "regression"), PriorSpec(lam)


def fd_hessian(model, data, prior, h: float = 1e-5) -> np.ndarray:
    """Central differences of the exact gradient, column by column."""
    K = model.num_params
    theta = model.theta
    H = np.empty((K, K))
    for i in range(K):
        e = np.zeros(K)
        e[i] = h
        gp = _loss_and_grad(model, data, prior, theta + e)[1]
        gm = _loss_and_grad(model, data, prior, theta - e)[1]
        H[:, i] = (gp - gm) / (2 * h)
    return H


def suite_fd_hessian(seed: int = 0) -> dict:
    model, data, prior = small_regression_problem(seed)
    H_fd = fd_hessian(model, data, prior)
    K = model.num_params
    H_hvp = np.column_stack([hvp(model, data, prior, np.eye(K)[:, i]) for i in range(K)])
    scale = np.maximum(np.abs(H_fd), 1e-3 * np.abs(H_fd).max())
    rel = float(np.max(np.abs(H_hvp - H_fd) / scale))
    return {"K": K, "n_points": len(data), "lam": prior.lam, "fd_step": 1e-5,
            "fd_hessian": H_fd.tolist(), "symmetry_defect_fd": float(np.max(np.abs(H_fd - H_fd.T))),
            "symmetry_defect_hvp": float(np.max(np.abs(H_hvp - H_hvp.T))),
            "max_relative_error": rel, "passed": rel <= 1e-3}


def suite_ggn_jacobian(seed: int = 0) -> dict:
    model, data, prior = small_regression_problem(seed)
    K = model.num_params
    J = jacobian(model, data.inputs)[:, 0, :]
    G_explicit = J.T @ J / model.head.noise_sigma**2 + prior.lam * np.eye(K)
    G_op = np.column_stack([ggn_vp(model, data, prior, np.eye(K)[:, i]) for i in range(K)])
    err = float(np.max(np.abs(G_op - G_explicit)))
    return {"K": K, "max_abs_diff": err, "passed": err <= 1e-8}


def suite_dense_eig(seed: int = 0) -> dict:
    model, data, prior = small_regression_problem(seed)
    oracle = CurvatureOracle(CurvatureKind.EXACT, model, data, prior)
    M = dense_operator(oracle)
    dense_vals = np.linalg.eigvalsh(M)[::-1]
    K = model.num_params
    pairs = lanczos_topk(oracle, K, iters=K, seed=seed, tol=1e-8)
    rel = float(np.max(np.abs(pairs.values - dense_vals) / np.maximum(np.abs(dense_vals), 1e-12)))
    return {"K": K, "dense_eigenvalues": dense_vals.tolist(), "lanczos_eigenvalues": pairs.values.tolist(),
            "max_relative_error": rel, "passed": rel <= 1e-8}


def linear_problem(seed: int = 0, n: int = 30, d: int = 3, sigma: float = 0.3, lam: float = 2.0):
    rng = _rng(seed)
    X = rng.standard_normal((n, d))
    w = rng.standard_normal(d)
    y = (X @ w + 0.5 + sigma * rng.standard_normal(n))[:, None]
    return X, y, sigma, lam


def conjugate_posterior(X, y, sigma, lam):
    """Bayesian linear regression with a bias column: (mean, covariance)."""
    Phi = np.column_stack([X, np.ones(X.shape[0])])
    P = Phi.T @ Phi / sigma**2 + lam * np.eye(Phi.shape[1])
    cov = np.linalg.inv(P)
    mean = cov @ Phi.T @ y[:, 0] / sigma**2
    return mean, cov


def suite_linear_conjugate(seed: int = 0) -> dict:
    X, y, sigma, lam = linear_problem(seed)
    mean, cov = conjugate_posterior(X, y, sigma, lam)
    d = X.shape[1]
    model = make_mlp((d, 1), GaussianRegression(sigma), seed=seed).with_theta(mean)
    data = Dataset(X, y, "regression")
    post = fit_laplace(model, data, PriorSpec(lam), "exact")
    x_star = _rng(seed + 1).standard_normal((10, d))
    Phi_s = np.column_stack([x_star, np.ones(10)])
    pred_var = np.einsum("ni,ij,nj->n", Phi_s, cov, Phi_s)
    lla = lla_predict(model, post, x_star)
    cov_err = float(np.max(np.abs(post.covariance - cov)))
    var_err = float(np.max(np.abs(lla.variance[:, 0] - pred_var)))
    mean_err = float(np.max(np.abs(lla.mean[:, 0] - Phi_s @ mean)))
    return {"posterior_mean": mean.tolist(), "posterior_cov": cov.tolist(), "x_star": x_star.tolist(),
            "predictive_mean": (Phi_s @ mean).tolist(), "predictive_var_epistemic": pred_var.tolist(),
            "noise_sigma": sigma, "lam": lam, "cov_max_abs_err": cov_err, "lla_var_max_abs_err": var_err,
            "lla_mean_max_abs_err": mean_err, "passed": max(cov_err, var_err, mean_err) <= 1e-8}


def quadratic_tube_moments(S: int = 100_000, seed: int = 0, T: int = 20):
    """Sample moments of a prior-matched tube on the two-parameter valley."""
    problem = quadratic_valley([10.0, 0.0], lam=0.1)
    # the loss at the mode is 0, so budget the drift by the prior cost of the
    # full spine, lam / 2 * (T * delta_s)^2
    length = T * prior_matched_step(T, problem.lam)
    cfg = TubeConfig(T=T, k_perp=1, beta_perp=1.0, alpha_mode="prior", jitter=0.0,
                     drift_abs=0.5 * problem.lam * length**2 + 1e-3)
    tube = build_tube_on(problem, problem.theta0, cfg, PriorSpec(problem.lam), seed=seed)
    thetas = sample_weight_matrix(tube, S, seed)
    return problem, tube, thetas


def suite_quadratic(seed: int = 0) -> dict:
    problem = quadratic_valley([10.0, 0.0], lam=0.1)
    cov = problem.posterior_cov()
    _, tube, thetas = quadratic_tube_moments(seed=seed)
    var = thetas.var(axis=0)
    rel = np.abs(var - np.diag(cov)) / np.diag(cov)
    off_axis = float(np.max(np.abs(tube.spine()[:, 0])))
    return {"a_diag": list(problem.a_diag), "lam": problem.lam, "posterior_mean": [0.0, 0.0],
            "posterior_cov": cov.tolist(), "valley_tangent": problem.valley_tangent().tolist(),
            "tube_T": tube.T, "tube_sample_variance": var.tolist(), "relative_error": rel.tolist(),
            "spine_max_offaxis": off_axis, "passed": bool(np.all(rel <= 0.1) and off_axis <= 1e-6)}


SUITES = {
    "fd-hessian": suite_fd_hessian,
    "ggn-jacobian": suite_ggn_jacobian,
    "dense-eig": suite_dense_eig,
    "linear-conjugate": suite_linear_conjugate,
    "quadratic": suite_quadratic,
}


def provenance(suite: str, seed: int) -> dict:
    return {"suite": suite, "seed": seed, "generator": GENERATOR_ID, "package_version": __version__,
            "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def run_suite(name: str, seed: int = 0) -> dict:
    if name not in SUITES:
        raise KeyError(name)
    result = SUITES[name](seed)
    result["passed"] = bool(result["passed"])
    return {"provenance": provenance(name, seed), **result}
