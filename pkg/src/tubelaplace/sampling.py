"""Monte Carlo prediction through a discrete tube."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .nn_core import GaussianRegression, MlpModel, forward_batch
from .tube import Tube

POINT_CHUNK = 2048


@dataclass(frozen=True)
class LatentSample:
    z_par: float
    z_perp: np.ndarray


@dataclass(frozen=True)
class PredictiveSummary:
    """Per-test-point predictive moments.

    Regression: ``mean`` and epistemic ``variance`` are ``(N, C)``;
    ``aleatoric`` is the observation-noise variance to add on top.
    Classification: ``mean`` holds class probabilities ``(N, n_classes)`` and
    ``entropy`` the entropy of the mean prediction in nats.
    """

    task: str
    mean: np.ndarray
    variance: np.ndarray | None
    entropy: np.ndarray | None
    sample_count: int
    aleatoric: float = 0.0
    meta: dict | None = None

    @property
    def total_variance(self) -> np.ndarray:
        return self.variance + self.aleatoric


def z_to_index(z_par, T: int):
    """Spine index for a valley coordinate: ``floor(Phi(z) * (T + 1))`` clipped to ``[0, T]``.

    ``Phi(z)`` is uniform for standard normal ``z``, so every index in
    ``0..T`` is hit with probability ``1 / (T + 1)``; ``z = 0`` maps to
    ``T / 2`` rounded half up.
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    u = ndtr(np.asarray(z_par, dtype=float))
    idx = np.clip(np.floor(u * (T + 1)), 0, T).astype(int)
    return int(idx) if idx.ndim == 0 else idx


def sample_weights(tube: Tube, latent: LatentSample, beta_perp: float | None = None) -> np.ndarray:
    """``gamma_t + N_t (beta * L_t z_perp)`` with ``t`` from ``z_par``."""
    beta = tube.config.beta_perp if beta_perp is None else beta_perp
    z_perp = np.asarray(latent.z_perp, dtype=float)
    if z_perp.shape != (tube.k_perp,):
        raise ValueError(f"z_perp must have length {tube.k_perp}")
    t = z_to_index(latent.z_par, tube.T)
    if not 0 <= t <= tube.T:
        raise IndexError(f"spine index {t} outside tube of length {tube.T}")
    e = tube.elements[t]
    return e.gamma + e.basis @ (beta * (e.chol @ z_perp))


def draw_latents(tube: Tube, S: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.Generator(np.random.PCG64(seed))
    z_par = rng.standard_normal(S)
    z_perp = rng.standard_normal((S, tube.k_perp))
    return z_par, z_perp


def sample_weight_matrix(tube: Tube, S: int, seed: int, beta_perp: float | None = None) -> np.ndarray:
    """``(S, K)`` weight samples, grouped by spine element for speed."""
    beta = tube.config.beta_perp if beta_perp is None else beta_perp
    z_par, z_perp = draw_latents(tube, S, seed)
    idx = z_to_index(z_par, tube.T)
    out = np.empty((S, tube.num_params))
    for t in np.unique(idx):
        rows = np.flatnonzero(idx == t)
        e = tube.elements[t]
        out[rows] = e.gamma[None, :] + (beta * z_perp[rows] @ e.chol.T) @ e.basis.T
    return out


def summarize_outputs(model: MlpModel, outputs: np.ndarray) -> PredictiveSummary:
    """Reduce per-sample network outputs ``(S, N, C)`` to a summary."""
    S = outputs.shape[0]
    if model.task == "regression":
        mean = outputs.mean(axis=0)
        var = np.mean((outputs - mean) ** 2, axis=0)
        return PredictiveSummary("regression", mean, var, None, S, _aleatoric(model))
    p1 = _sigmoid(outputs[..., 0]).mean(axis=0)
    probs = np.column_stack([1.0 - p1, p1])
    return PredictiveSummary("classification", probs, None, entropy(probs), S)


def predict_from_weights(model: MlpModel, x_star: np.ndarray, thetas: np.ndarray) -> PredictiveSummary:
    x_star = np.asarray(x_star, dtype=float)
    parts = []
    for start in range(0, x_star.shape[0], POINT_CHUNK):
        parts.append(summarize_outputs(model, forward_batch(model, x_star[start : start + POINT_CHUNK], thetas)))
    return _concat(parts)


def predict(model_template: MlpModel, tube: Tube, x_star: np.ndarray, S: int = 100, seed: int = 0,
            beta_perp: float | None = None) -> PredictiveSummary:
    if S < 2:
        raise ValueError("need at least two samples")
    thetas = sample_weight_matrix(tube, S, seed, beta_perp)
    return predict_from_weights(model_template, x_star, thetas)


def entropy(probs: np.ndarray) -> np.ndarray:
    p = np.clip(probs, 1e-300, 1.0)
    return -np.sum(np.where(probs > 0, probs * np.log(p), 0.0), axis=1)


def _sigmoid(f):
    return 0.5 * (1.0 + np.tanh(0.5 * f))


def _aleatoric(model: MlpModel) -> float:
    return model.head.noise_sigma**2 if isinstance(model.head, GaussianRegression) else 0.0


def _concat(parts: list[PredictiveSummary]) -> PredictiveSummary:
    if len(parts) == 1:
        return parts[0]
    first = parts[0]
    cat = lambda name: None if getattr(first, name) is None else np.concatenate([getattr(p, name) for p in parts])
    return PredictiveSummary(first.task, cat("mean"), cat("variance"), cat("entropy"), first.sample_count,
                             first.aleatoric)


def write_predictions_csv(path, x: np.ndarray, summary: PredictiveSummary) -> None:
    x = np.asarray(x)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        xcols = [f"x{j}" for j in range(x.shape[1])]
        if summary.task == "regression":
            C = summary.mean.shape[1]
            w.writerow(xcols + [f"mean{c}" for c in range(C)] + [f"var{c}" for c in range(C)] +
                       [f"total_var{c}" for c in range(C)])
            tot = summary.total_variance
            for i in range(x.shape[0]):
                w.writerow([repr(float(v)) for v in x[i]] + [repr(float(v)) for v in summary.mean[i]] +
                           [repr(float(v)) for v in summary.variance[i]] + [repr(float(v)) for v in tot[i]])
        else:
            n_cls = summary.mean.shape[1]
            w.writerow(xcols + [f"p{c}" for c in range(n_cls)] + ["entropy"])
            for i in range(x.shape[0]):
                w.writerow([repr(float(v)) for v in x[i]] + [repr(float(v)) for v in summary.mean[i]] +
                           [repr(float(summary.entropy[i]))])


def write_latent_manifest(path, tube: Tube, S: int, seed: int) -> None:
    z_par, z_perp = draw_latents(tube, S, seed)
    idx = z_to_index(z_par, tube.T)
    Path(path).write_text(json.dumps({
        "seed": seed, "S": S, "T": tube.T, "index_map": "floor(Phi(z)*(T+1))",
        "z_par": z_par.tolist(), "z_perp": z_perp.tolist(), "index": idx.tolist()}))
