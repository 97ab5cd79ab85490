"""Discrete tubular posterior: corrective spine, frame transport, transverse factors.

The spine starts at the MAP and walks ``T`` steps along the locally flattest
direction of the curvature operator.  Each step is a tangential predictor of
length ``delta_s`` plus a centring correction restricted to the orthogonal
complement of the tangent.  A ``k_perp``-column orthonormal frame is carried
along the spine by projecting out the new direction of motion and
re-orthonormalising with QR; the transverse covariance at each element is the
inverse of the curvature projected onto that frame.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky

from .curvature import CurvatureKind, CurvatureOracle, lanczos_topk, smallest_eigvec
from .errors import (ConfigError, IndefiniteCurvatureError, LossDriftError, MapNotConvergedError, NumericError,
                     TransportError)
from .nn_core import Dataset, MlpModel, PriorSpec, _loss_and_grad

_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class TubeConfig:
    T: int = 30
    delta_s: float = 0.02
    eta_corr: float = 0.1
    k_perp: int = 30
    beta_perp: float = 0.005
    jitter: float = 1e-10
    rms_eps: float = 1e-12
    # "rms": projected gradient clipped by its RMS to norm at most delta_s,
    # then scaled by eta_corr; "raw": plain projected gradient scaled by eta_corr
    correction: str = "rms"
    # "fixed" uses delta_s as given; "prior" picks delta_s so the spine
    # position variance under z_par ~ N(0, 1) equals 1 / lam
    alpha_mode: str = "fixed"
    curvature: str = "ggn"
    lanczos_iters: int | None = None
    lanczos_tol: float = 1e-6
    drift_rel: float = 0.1
    drift_abs: float = 1e-3
    # gradient-norm bound that the starting point must satisfy; None disables
    map_grad_tol: float | None = 1.0

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError("must be >= 1", "T")
        if self.delta_s < 0:
            raise ConfigError("must be >= 0", "delta_s")
        if self.eta_corr < 0:
            raise ConfigError("must be >= 0", "eta_corr")
        if self.k_perp < 1:
            raise ConfigError("must be >= 1", "k_perp")
        if not self.beta_perp >= 0:
            raise ConfigError("must be >= 0", "beta_perp")
        if self.correction not in ("rms", "raw"):
            raise ConfigError("must be 'rms' or 'raw'", "correction")
        if self.alpha_mode not in ("fixed", "prior"):
            raise ConfigError("must be 'fixed' or 'prior'", "alpha_mode")
        CurvatureKind(self.curvature)


def prior_matched_step(T: int, lam: float) -> float:
    """Step length for which a uniform index over ``0..T`` has variance ``1/lam``.

    The variance of a discrete uniform on ``{0..T}`` is ``T (T + 2) / 12``.
    """
    return math.sqrt(12.0 / (lam * T * (T + 2)))


@dataclass(frozen=True)
class TubeElement:
    gamma: np.ndarray
    basis: np.ndarray  # (K, k_perp)
    chol: np.ndarray  # (k_perp, k_perp) lower
    tangent: np.ndarray
    step_index: int

    def check(self, tol: float = _ORTHO_TOL) -> None:
        k = self.basis.shape[1]
        if np.max(np.abs(self.basis.T @ self.basis - np.eye(k))) > tol:
            raise NumericError("transverse frame is not orthonormal", where=f"step {self.step_index}")
        if np.max(np.abs(self.basis.T @ self.tangent)) > tol:
            raise NumericError("transverse frame is not orthogonal to the tangent", where=f"step {self.step_index}")
        if np.any(np.triu(self.chol, 1) != 0) or np.any(np.diag(self.chol) <= 0):
            raise NumericError("transverse factor is not lower triangular with positive diagonal",
                               where=f"step {self.step_index}")


@dataclass
class Tube:
    elements: list[TubeElement]
    config: TubeConfig
    prior: PriorSpec
    meta: dict = field(default_factory=dict)
    diagnostics: list[dict] = field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.elements) - 1

    @property
    def k_perp(self) -> int:
        return self.elements[0].basis.shape[1]

    @property
    def num_params(self) -> int:
        return self.elements[0].gamma.shape[0]

    def spine(self) -> np.ndarray:
        return np.stack([e.gamma for e in self.elements])


# --------------------------------------------------------------------------
# surfaces: loss + gradient + curvature at arbitrary parameters


class MlpSurface:
    """Negative log posterior of an MLP seen as a function of flat parameters."""

    def __init__(self, model: MlpModel, data: Dataset, prior: PriorSpec, kind="ggn",
                 threshold=None, batches=None):
        self.model = model
        self.data = data
        self.prior = prior
        self._oracle = CurvatureOracle(kind, model, data, prior, threshold=threshold, batches=batches)

    @property
    def num_params(self) -> int:
        return self.model.num_params

    def loss(self, theta):
        return _loss_and_grad(self.model, self.data, self.prior, theta)[0]

    def gradient(self, theta):
        return _loss_and_grad(self.model, self.data, self.prior, theta)[1]

    def oracle(self, theta):
        return self._oracle.at(theta)


# --------------------------------------------------------------------------
# single-step operations


def spine_step(gamma: np.ndarray, v_par: np.ndarray, grad: np.ndarray, config: TubeConfig,
               step: int | None = None) -> np.ndarray:
    """One predictor-corrector move along the valley.

    The gradient is projected onto the complement of ``v_par`` before any
    normalisation, so the move along ``v_par`` is exactly ``delta_s``.
    """
    norm = float(np.linalg.norm(v_par))
    if abs(norm - 1.0) > 1e-8:
        raise ValueError(f"tangent must have unit norm, got {norm}")
    g_perp = grad - v_par * float(v_par @ grad)
    if config.correction == "rms":
        # RMS normalisation used as clipping: a projected gradient whose norm
        # is below delta_s passes through unchanged, a larger one is rescaled
        # to norm delta_s, so the correction never exceeds eta * delta_s
        K = g_perp.shape[0]
        rms = math.sqrt(float(np.mean(g_perp**2)) + config.rms_eps)
        corr = config.eta_corr * g_perp * min(1.0, config.delta_s / (math.sqrt(K) * rms))
    else:
        corr = config.eta_corr * g_perp
    corr -= v_par * float(v_par @ corr)
    out = gamma + config.delta_s * v_par - corr
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite spine update", where=f"step {step}")
    return out


def _qr_positive(A: np.ndarray) -> np.ndarray:
    Q, R = np.linalg.qr(A)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs[None, :]


def transport_frame(N_t: np.ndarray, v_new: np.ndarray) -> np.ndarray:
    """Project ``v_new`` out of the frame, then re-orthonormalize with QR.

    The QR sign convention (positive diagonal of R) makes the map the
    identity on a frame that is already orthonormal and orthogonal to
    ``v_new``.
    """
    C = v_new @ N_t
    N_prime = N_t - np.outer(v_new, C)
    col_norms = np.linalg.norm(N_prime, axis=0)
    bad = np.flatnonzero(col_norms < 1e-8)
    if bad.size:
        raise TransportError("frame column collapsed onto the new tangent", int(bad[0]))
    N_next = _qr_positive(N_prime)
    # one more projection pass removes round-off along v_new
    N_next -= np.outer(v_new, v_new @ N_next)
    return _qr_positive(N_next)


def transverse_factor(N_t: np.ndarray, oracle, jitter: float = 0.0) -> np.ndarray:
    """Lower Cholesky factor of ``(N^T A N + jitter I)^{-1}``."""
    AN = oracle.apply(N_t)
    H = N_t.T @ AN
    H = 0.5 * (H + H.T) + jitter * np.eye(H.shape[0])
    try:
        c = cho_factor(H, lower=True)
    except np.linalg.LinAlgError as exc:
        raise IndefiniteCurvatureError(
            "projected precision is not positive definite; raise the jitter or use the GGN curvature",
            where="transverse_factor") from exc
    cov = cho_solve(c, np.eye(H.shape[0]))
    cov = 0.5 * (cov + cov.T)
    try:
        return cholesky(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise IndefiniteCurvatureError("transverse covariance lost definiteness; raise the jitter",
                                       where="transverse_factor") from exc


def initial_frame(top_vectors: np.ndarray, v_par: np.ndarray, k_perp: int) -> np.ndarray:
    """Keep ``k_perp`` of the leading eigenvectors, made orthogonal to ``v_par``.

    The column most aligned with ``v_par`` is dropped (the last one when none
    is noticeably aligned), the rest are deflated and re-orthonormalized.
    """
    overlap = np.abs(v_par @ top_vectors)
    if top_vectors.shape[1] > k_perp:
        drop = int(np.argmax(overlap)) if overlap.max() > 1e-6 else top_vectors.shape[1] - 1
        top_vectors = np.delete(top_vectors, drop, axis=1)
    return transport_frame(top_vectors[:, :k_perp], v_par)


# --------------------------------------------------------------------------
# tube construction


def build_tube_on(surface, theta0: np.ndarray, config: TubeConfig, prior: PriorSpec,
                  seed: int = 0) -> Tube:
    """Algorithm-level tube construction on any loss surface.

    ``surface`` provides ``num_params``, ``loss``, ``gradient`` and
    ``oracle(theta)``; the oracle must already include the prior term.
    """
    K = surface.num_params
    if config.k_perp > K - 1:
        raise ConfigError(f"k_perp={config.k_perp} exceeds K-1={K - 1}", "k_perp")
    delta_s = config.delta_s
    if config.alpha_mode == "prior":
        delta_s = prior_matched_step(config.T, prior.lam)
    cfg = _replace_cfg(config, delta_s=delta_s)

    theta0 = np.asarray(theta0, dtype=float).copy()
    loss0, g0 = surface.loss(theta0), surface.gradient(theta0)
    if cfg.map_grad_tol is not None and np.linalg.norm(g0) > cfg.map_grad_tol:
        gn = float(np.linalg.norm(g0))
        raise MapNotConvergedError(f"starting point is not a MAP: gradient norm {gn:.3g} > {cfg.map_grad_tol}; "
                                   "polish the MAP or raise map_grad_tol", gn)
    drift_tol = cfg.drift_rel * abs(loss0) + cfg.drift_abs
    iters = cfg.lanczos_iters

    oracle = surface.oracle(theta0)
    min_eig, v = smallest_eigvec(oracle, iters=iters, seed=seed, tol=cfg.lanczos_tol)
    n_top = min(cfg.k_perp + 1, K)
    top = lanczos_topk(oracle, n_top, iters=min(K, max(iters or 0, 4 * n_top)), seed=seed + 1,
                       tol=cfg.lanczos_tol)
    N = initial_frame(top.vectors, v, cfg.k_perp)
    L = transverse_factor(N, oracle, cfg.jitter)
    elements = [TubeElement(theta0, N, L, v, 0)]
    meta = {"alpha_mode": cfg.alpha_mode, "delta_s": delta_s, "seed": seed,
            "curvature": cfg.curvature, "drift_tol": drift_tol, "loss0": loss0,
            "top_eigenvalues": top.values.tolist()}
    tube = Tube(elements, cfg, prior, meta)
    h0 = 1.0 / float(np.linalg.svd(L, compute_uv=False)[-1] ** 2)
    tube.diagnostics.append(_diag_row(0, loss0, 0.0, min_eig, h0, 1.0))

    gamma, g = theta0, g0
    for t in range(cfg.T):
        new_gamma = spine_step(gamma, v, g, cfg, step=t)
        secant = new_gamma - gamma
        s_norm = float(np.linalg.norm(secant))
        v_move = secant / s_norm if s_norm > 1e-14 * max(1.0, float(np.linalg.norm(gamma))) else v
        N = transport_frame(N, v_move)

        oracle = surface.oracle(new_gamma)
        min_eig, v_next = smallest_eigvec(oracle, iters=iters, seed=seed, tol=cfg.lanczos_tol)
        cosine = float(v_next @ v)
        if cosine < 0:
            v_next, cosine = -v_next, -cosine
        if float(np.max(np.abs(v_next @ N))) > 1e-12:
            N = transport_frame(N, v_next)
        L = transverse_factor(N, oracle, cfg.jitter)
        gamma, v = new_gamma, v_next
        elements.append(TubeElement(gamma, N, L, v, t + 1))

        loss, g = surface.loss(gamma), surface.gradient(gamma)
        drift = loss - loss0
        # largest eigenvalue of the projected precision, since L L^T is its inverse
        h_perp_max = 1.0 / float(np.linalg.svd(L, compute_uv=False)[-1] ** 2)
        tube.diagnostics.append(_diag_row(t + 1, loss, drift, min_eig, h_perp_max, cosine))
        if drift > drift_tol:
            raise LossDriftError(f"loss drift {drift:.4g} exceeds tolerance {drift_tol:.4g}", tube, t + 1)
    return tube


def build_tube(map_model: MlpModel, data: Dataset, prior: PriorSpec, config: TubeConfig,
               seed: int = 0, batches=None) -> Tube:
    surface = MlpSurface(map_model, data, prior, kind=config.curvature, batches=batches)
    return build_tube_on(surface, map_model.theta, config, prior, seed)


def _replace_cfg(cfg: TubeConfig, **kw) -> TubeConfig:
    d = asdict(cfg)
    d.update(kw)
    return TubeConfig(**d)


def _diag_row(t, loss, drift, min_eig, max_eig, cosine):
    return {"t": t, "loss": loss, "drift": drift, "min_eig": min_eig, "max_eig": max_eig,
            "step_cosine": cosine}


# --------------------------------------------------------------------------
# serialization


def tube_to_dict(tube: Tube) -> dict:
    return {
        "config": asdict(tube.config),
        "prior_lam": tube.prior.lam,
        "meta": tube.meta,
        "elements": [
            {"step_index": e.step_index, "gamma": e.gamma.tolist(), "basis": e.basis.tolist(),
             "chol": e.chol.tolist(), "tangent": e.tangent.tolist()}
            for e in tube.elements
        ],
    }


def tube_from_dict(d: dict) -> Tube:
    elements = [
        TubeElement(np.array(e["gamma"], dtype=float), np.array(e["basis"], dtype=float),
                    np.array(e["chol"], dtype=float), np.array(e["tangent"], dtype=float),
                    int(e["step_index"]))
        for e in d["elements"]
    ]
    return Tube(elements, TubeConfig(**d["config"]), PriorSpec(d["prior_lam"]), dict(d.get("meta", {})))


def save_tube(tube: Tube, path) -> None:
    Path(path).write_text(json.dumps(tube_to_dict(tube)))


def load_tube(path) -> Tube:
    return tube_from_dict(json.loads(Path(path).read_text()))


def write_diagnostics_csv(tube: Tube, path) -> None:
    cols = ["t", "loss", "drift", "min_eig", "max_eig", "step_cosine"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in tube.diagnostics:
            w.writerow([row["t"]] + [repr(float(row[c])) for c in cols[1:]])
