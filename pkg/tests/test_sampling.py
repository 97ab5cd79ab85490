import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import ndtr
from scipy.stats import chisquare

from tubelaplace import PriorSpec, TubeConfig, build_tube, forward, polish_map, predict
from tubelaplace.experiment import resolve_config, run_experiment
from tubelaplace.nn_core import forward_batch
from tubelaplace.sampling import (LatentSample, PredictiveSummary, draw_latents, predict_from_weights,
                                  sample_weight_matrix, sample_weights, write_latent_manifest, write_predictions_csv,
                                  z_to_index)
from tubelaplace.tube import Tube, TubeElement

from conftest import rng


def toy_tube(K=6, k=2, T=4, beta=1.0, seed=0, same=False):
    r = rng(seed)
    elements = []
    base = r.standard_normal(K)
    for t in range(T + 1):
        Q, _ = np.linalg.qr(r.standard_normal((K, k + 1)))
        L = np.tril(r.standard_normal((k, k)))
        L[np.diag_indices(k)] = np.abs(L[np.diag_indices(k)]) + 0.5
        gamma = base if same else base + 0.1 * t
        elements.append(TubeElement(gamma.copy(), Q[:, :k], L, Q[:, k], t))
    if same:
        elements = [TubeElement(elements[0].gamma, elements[0].basis, elements[0].chol, elements[0].tangent, t)
                    for t in range(T + 1)]
    return Tube(elements, TubeConfig(T=T, k_perp=k, beta_perp=beta), PriorSpec(1.0))


# z_to_index

def test_index_median_and_limits():
    assert z_to_index(0.0, 10) == 5
    assert z_to_index(0.0, 4) == 2
    assert z_to_index(-np.inf, 7) == 0 and z_to_index(np.inf, 7) == 7
    assert z_to_index(-40.0, 7) == 0 and z_to_index(40.0, 7) == 7
    assert z_to_index(1.3, 0) == 0


@given(st.floats(-8, 8), st.floats(-8, 8), st.integers(0, 60))
def test_index_monotone_and_in_range(a, b, T):
    lo, hi = sorted([a, b])
    i, j = z_to_index(lo, T), z_to_index(hi, T)
    assert 0 <= i <= j <= T


@pytest.mark.parametrize("T", [1, 10, 30])
def test_index_histogram_uniform(T):
    z = rng(T).standard_normal(100_000)
    counts = np.bincount(z_to_index(z, T), minlength=T + 1)
    assert chisquare(counts).pvalue >= 0.01


def test_rounding_map_is_not_uniform():
    # the clamp(round(Phi(z) T)) map gives the end indices half the mass of
    # interior ones, which a chi-squared test at 1e5 draws rejects outright
    T = 10
    z = rng(0).standard_normal(100_000)
    rounded = np.clip(np.round(ndtr(z) * T), 0, T).astype(int)
    assert chisquare(np.bincount(rounded, minlength=T + 1)).pvalue < 1e-10


# sample_weights

def test_zero_latent_returns_spine_midpoint():
    tube = toy_tube(T=4)
    w = sample_weights(tube, LatentSample(0.0, np.zeros(2)))
    assert np.array_equal(w, tube.elements[2].gamma)


def test_sample_weights_formula():
    tube = toy_tube(T=4, beta=0.3)
    z = np.array([0.7, -1.1])
    t = z_to_index(0.9, 4)
    e = tube.elements[t]
    expected = e.gamma + e.basis @ (0.3 * (e.chol @ z))
    np.testing.assert_allclose(sample_weights(tube, LatentSample(0.9, z)), expected, atol=1e-14)


def test_sample_weights_rejects_wrong_length():
    with pytest.raises(ValueError):
        sample_weights(toy_tube(), LatentSample(0.0, np.zeros(3)))


def test_beta_zero_gives_spine_points():
    tube = toy_tube(T=5, beta=0.0)
    W = sample_weight_matrix(tube, 200, seed=1)
    spine = tube.spine()
    assert all(np.any(np.all(w == spine, axis=1)) for w in W)


def test_weight_matrix_matches_single_sample_path():
    tube = toy_tube(T=6, beta=0.7)
    W = sample_weight_matrix(tube, 50, seed=2)
    zp, zq = draw_latents(tube, 50, 2)
    for s in range(50):
        np.testing.assert_allclose(W[s], sample_weights(tube, LatentSample(zp[s], zq[s])), atol=1e-13)


def test_samples_reproducible():
    tube = toy_tube()
    assert np.array_equal(sample_weight_matrix(tube, 30, 5), sample_weight_matrix(tube, 30, 5))
    assert not np.array_equal(sample_weight_matrix(tube, 30, 5), sample_weight_matrix(tube, 30, 6))


def test_degenerate_tube_moments(small_reg):
    model, data, prior = small_reg
    model = polish_map(model, data, prior)
    beta = 0.5
    tube = build_tube(model, data, prior, TubeConfig(T=1, delta_s=0.0, k_perp=8, beta_perp=beta))
    W = sample_weight_matrix(tube, 100_000, seed=0)
    e = tube.elements[0]
    cov_ref = beta**2 * e.basis @ e.chol @ e.chol.T @ e.basis.T
    stderr = np.sqrt(np.diag(cov_ref) / 100_000)
    assert np.all(np.abs(W.mean(axis=0) - model.theta) <= 5 * stderr + 1e-12)
    emp = np.cov(W.T)
    assert np.linalg.norm(emp - cov_ref) / np.linalg.norm(cov_ref) <= 0.05


# predict

def test_point_mass_tube_predicts_map(small_reg):
    model, data, _ = small_reg
    tube = toy_tube(K=model.num_params, k=2, T=3, beta=0.0, same=True)
    tube.elements[:] = [TubeElement(model.theta, e.basis, e.chol, e.tangent, e.step_index) for e in tube.elements]
    summ = predict(model, tube, data.inputs, S=20, seed=0)
    np.testing.assert_allclose(summ.mean, forward(model, data.inputs), atol=1e-12)
    assert np.all(summ.variance <= 1e-25)


def test_predict_needs_two_samples(small_reg):
    model, data, _ = small_reg
    with pytest.raises(ValueError):
        predict(model, toy_tube(K=model.num_params), data.inputs, S=1)


def test_regression_summary_moments(small_reg):
    model, data, _ = small_reg
    thetas = model.theta[None, :] + 0.05 * rng(3).standard_normal((40, model.num_params))
    outs = forward_batch(model, data.inputs, thetas)
    summ = predict_from_weights(model, data.inputs, thetas)
    np.testing.assert_allclose(summ.mean, outs.mean(axis=0))
    np.testing.assert_allclose(summ.variance, outs.var(axis=0))
    assert summ.aleatoric == pytest.approx(model.head.noise_sigma**2)
    assert summ.sample_count == 40


def test_classification_summary_on_simplex(small_clf):
    model, data, _ = small_clf
    thetas = model.theta[None, :] + rng(4).standard_normal((25, model.num_params))
    summ = predict_from_weights(model, data.inputs, thetas)
    assert np.all((summ.mean >= 0) & (summ.mean <= 1))
    np.testing.assert_allclose(summ.mean.sum(axis=1), 1.0, atol=1e-12)
    p = summ.mean
    np.testing.assert_allclose(summ.entropy, -np.sum(p * np.log(p), axis=1), atol=1e-12)


def test_mc_mean_converges(sine_map):
    model, data, prior = sine_map
    tube = build_tube(model, data, prior, TubeConfig(T=10, delta_s=0.02, k_perp=10, beta_perp=0.5), seed=0)
    x = np.linspace(-6, 6, 25)[:, None]
    a = predict(model, tube, x, S=10_000, seed=1)
    b = predict(model, tube, x, S=100_000, seed=2)
    stderr = np.sqrt(b.variance / 10_000 + b.variance / 100_000)
    assert np.all(np.abs(a.mean - b.mean) <= 3 * stderr + 1e-12)


def test_transverse_spread_adds_variance(sine_map):
    model, data, prior = sine_map
    tube = build_tube(model, data, prior, TubeConfig(T=10, delta_s=0.02, k_perp=10, beta_perp=1.0), seed=0)
    x = np.linspace(-6, 6, 50)[:, None]
    spread = predict(model, tube, x, S=2000, seed=3)
    spine_only = predict(model, tube, x, S=2000, seed=3, beta_perp=0.0)
    assert spread.variance.mean() >= spine_only.variance.mean()


def test_two_moons_interior_confident_boundary_uncertain():
    cfg = resolve_config({"task": "two_moons", "methods": ["TRL"]})
    res = run_experiment(cfg)
    model, tube = res["model"], res["tube"]
    interior = np.array([[-0.8, 0.4], [0.0, 0.95], [1.8, -0.4], [1.0, -0.45]])
    summ = predict(model, tube, interior, S=200, seed=0)
    truth = np.array([0, 0, 1, 1])
    assert np.all(summ.mean[np.arange(4), truth] >= 0.95)
    # points on the decision boundary of the MAP
    grid = np.column_stack([np.linspace(-1.5, 2.5, 400), np.full(400, 0.25)])
    f = forward(model, grid)[:, 0]
    crossing = grid[np.flatnonzero(np.diff(np.sign(f)))]
    assert crossing.shape[0] >= 1
    edge = predict(model, tube, crossing, S=200, seed=0)
    assert np.all(edge.entropy >= 0.5)


# output files

def test_prediction_csv_and_manifest(tmp_path):
    summ = PredictiveSummary("regression", np.array([[1.0], [2.0]]), np.array([[0.1], [0.2]]), None, 5, 0.01)
    write_predictions_csv(tmp_path / "p.csv", np.array([[0.0], [1.0]]), summ)
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "x0,mean0,var0,total_var0"
    assert lines[1].split(",")[3] == repr(0.1 + 0.01)
    tube = toy_tube()
    write_latent_manifest(tmp_path / "z.json", tube, 10, 3)
    d = json.loads((tmp_path / "z.json").read_text())
    assert d["index"] == z_to_index(np.array(d["z_par"]), tube.T).tolist()
    assert d["index_map"].startswith("floor")
