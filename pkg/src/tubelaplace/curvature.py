"""Matrix-free spectral tools over curvature operators.

A curvature oracle is anything with ``num_params`` and ``apply(V)`` that
returns ``A @ V`` for a symmetric ``A`` (vector or column stack).  The MLP
oracle represents ``C + lam I`` where ``C`` is the exact data Hessian, the
GGN, or a PSD-rectified Hessian.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import DenseGuardError, LanczosError, NumericError, PartialConvergenceError, ShiftEstimateError
from .nn_core import Dataset, MlpModel, PriorSpec, curvature_matvec

DENSE_GUARD = 20_000


class CurvatureKind(str, Enum):
    EXACT = "exact"
    GGN = "ggn"
    RECTIFIED = "rectified"


@dataclass(frozen=True)
class MatrixOracle:
    """Dense symmetric matrix behind the oracle interface."""

    matrix: np.ndarray
    kind: str = "matrix"

    @property
    def num_params(self) -> int:
        return self.matrix.shape[0]

    def apply(self, V: np.ndarray) -> np.ndarray:
        return self.matrix @ V


@dataclass(frozen=True, eq=False)
class CurvatureOracle:
    """``v -> (C + lam I) v`` for an MLP posterior at ``theta``.

    ``batches`` (index arrays into ``data``) switches on buffered
    application: each batch product is rescaled to the full data size and the
    batch products are averaged.
    """

    kind: CurvatureKind
    model: MlpModel
    data: Dataset
    prior: PriorSpec
    theta: np.ndarray | None = None
    threshold: float | None = None
    batches: tuple[np.ndarray, ...] | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", CurvatureKind(self.kind))
        if self.theta is None:
            object.__setattr__(self, "theta", self.model.theta)
        if self.batches is not None and len(self.batches) == 0:
            raise ValueError("empty batch buffer")

    @property
    def num_params(self) -> int:
        return self.theta.shape[0]

    def at(self, theta: np.ndarray) -> "CurvatureOracle":
        return replace(self, theta=np.asarray(theta, dtype=float), _cache={})

    def with_batches(self, batches: Sequence[np.ndarray] | None) -> "CurvatureOracle":
        return replace(self, batches=None if batches is None else tuple(np.asarray(b) for b in batches),
                       _cache={})

    def _raw(self, V, data, scale=1.0):
        return curvature_matvec(self.model, data, self.prior, V, theta=self.theta,
                                ggn=self.kind is CurvatureKind.GGN, scale=scale)

    def apply(self, V: np.ndarray) -> np.ndarray:
        if self.kind is CurvatureKind.RECTIFIED:
            vals, vecs = self._rectified_eig()
            coeff = vecs.T @ V
            return vecs @ (coeff * (vals if V.ndim == 1 else vals[:, None]))
        if self.batches is None:
            return self._raw(V, self.data)
        return buffered_apply(self, V, self.batches)

    def _rectified_eig(self):
        if "eig" not in self._cache:
            exact = replace(self, kind=CurvatureKind.EXACT, _cache={})
            vals, vecs = np.linalg.eigh(dense_operator(exact))
            floor = self.threshold if self.threshold is not None else 1e-6 * max(vals[-1], 0.0)
            if not floor > 0:
                raise NumericError("rectification threshold must be positive", where="rectified")
            self._cache["eig"] = (np.maximum(vals, floor), vecs)
        return self._cache["eig"]


def buffered_apply(oracle: CurvatureOracle, v: np.ndarray, batch_ids: Sequence[np.ndarray]) -> np.ndarray:
    """Mean of per-batch curvature products, each scaled to the full data size."""
    if len(batch_ids) == 0:
        raise ValueError("empty batch buffer")
    n_total = len(oracle.data)
    acc = None
    for ids in batch_ids:
        ids = np.asarray(ids)
        if ids.size == 0:
            raise ValueError("empty batch in buffer")
        part = oracle._raw(v, oracle.data.subset(ids), scale=n_total / ids.size)
        acc = part if acc is None else acc + part
    return acc / len(batch_ids)


@dataclass(frozen=True)
class EigenPairs:
    values: np.ndarray  # descending
    vectors: np.ndarray  # (K, k), orthonormal columns
    residuals: np.ndarray

    def __len__(self) -> int:
        return self.values.shape[0]


def dense_operator(oracle, guard: int = DENSE_GUARD, chunk: int = 256,
                   return_defect: bool = False):
    """Materialize the oracle column by column and symmetrize."""
    K = oracle.num_params
    if K > guard:
        raise DenseGuardError(f"refusing to materialize a {K}x{K} operator (guard {guard})")
    M = np.empty((K, K))
    eye = np.eye(K)
    for start in range(0, K, chunk):
        M[:, start : start + chunk] = oracle.apply(eye[:, start : start + chunk])
    defect = float(np.max(np.abs(M - M.T)))
    M = 0.5 * (M + M.T)
    return (M, defect) if return_defect else M


# --------------------------------------------------------------------------
# Lanczos


def _start_vector(K: int, seed: int) -> np.ndarray:
    v = np.random.Generator(np.random.PCG64(seed)).standard_normal(K)
    return v / np.linalg.norm(v)


def _lanczos_run(matvec, v0, max_iters, want, which, tol, check_every=5, locked=None):
    """Lanczos with full reorthogonalization.

    Stops early once the ``want`` extreme Ritz pairs at the ``which`` end have
    residual estimates below tolerance, or on an invariant subspace.
    ``locked`` is an orthonormal basis of an invariant subspace already
    explored; the Krylov basis is kept orthogonal to it.
    Returns (ritz values ascending, ritz vectors, residual estimates, broke_down).
    """
    K = v0.shape[0]
    if locked is not None and locked.shape[1]:
        v0 = v0 - locked @ (locked.T @ v0)
        v0 = v0 - locked @ (locked.T @ v0)
        v0 = v0 / np.linalg.norm(v0)
    else:
        locked = None
    Q = np.empty((K, max_iters))
    alphas, betas = [], []
    q = v0
    scale = 0.0
    broke_down = False
    for j in range(max_iters):
        Q[:, j] = q
        w = matvec(q)
        alpha = float(q @ w)
        alphas.append(alpha)
        for _ in range(2):
            w = w - Q[:, : j + 1] @ (Q[:, : j + 1].T @ w)
            if locked is not None:
                w = w - locked @ (locked.T @ w)
        beta = float(np.linalg.norm(w))
        scale = max(scale, abs(alpha), beta)
        m = j + 1
        if beta <= 1e-12 * max(scale, 1e-300):
            broke_down = True
            break
        done = m == max_iters
        if not done and m >= want and (m - want) % check_every == 0:
            theta, S = _tridiag_eig(alphas, betas)
            idx = _extreme(theta, want, which)
            est = beta * np.abs(S[-1, idx])
            if np.all(est <= tol * np.maximum(1.0, np.abs(theta[idx]))):
                betas.append(beta)
                break
        if done:
            betas.append(beta)
            break
        betas.append(beta)
        q = w / beta
    m = len(alphas)
    theta, S = _tridiag_eig(alphas, betas[: m - 1])
    last_beta = 0.0 if broke_down else betas[m - 1] if len(betas) >= m else 0.0
    est = last_beta * np.abs(S[-1, :])
    return theta, Q[:, :m] @ S, est, broke_down, Q[:, :m]


def _tridiag_eig(alphas, betas):
    a = np.asarray(alphas, dtype=float)
    b = np.asarray(betas[: len(a) - 1], dtype=float)
    if len(a) == 1:
        return a.copy(), np.ones((1, 1))
    return eigh_tridiagonal(a, b)


def _extreme(theta, k, which):
    k = min(k, theta.shape[0])
    return np.arange(theta.shape[0] - k, theta.shape[0])[::-1] if which == "top" else np.arange(k)


def _true_residuals(matvec_block, vals, vecs):
    AV = matvec_block(vecs)
    return np.linalg.norm(AV - vecs * vals[None, :], axis=0)


def _apply_block(oracle):
    return lambda V: oracle.apply(V)


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    """First component with magnitude above noise made positive."""
    out = vecs.copy()
    for i in range(out.shape[1]):
        col = out[:, i]
        nz = np.flatnonzero(np.abs(col) > 1e-12 * max(np.abs(col).max(), 1e-300))
        if nz.size and col[nz[0]] < 0:
            out[:, i] = -col
    return out


def lanczos_topk(oracle, k: int, iters: int | None = None, seed: int = 0, tol: float = 1e-6) -> EigenPairs:
    """Top-``k`` eigenpairs of a symmetric oracle by Lanczos with full reorthogonalization."""
    K = oracle.num_params
    iters = min(4 * k, K) if iters is None else iters
    if not 1 <= k <= iters <= K:
        raise ValueError(f"need 1 <= k <= iters <= K, got k={k}, iters={iters}, K={K}")
    theta, U, _, broke, basis = _lanczos_run(oracle.apply, _start_vector(K, seed), iters, k, "top", tol)
    restart = 1
    # a breakdown means the start vector only saw part of the spectrum (repeated
    # eigenvalues appear once); restart in the orthogonal complement
    while broke and theta.shape[0] < k and basis.shape[1] < K:
        v0 = _start_vector(K, seed + 7 * restart)
        budget = min(iters, K - basis.shape[1])
        th2, U2, _, broke, b2 = _lanczos_run(oracle.apply, v0, budget, k, "top", tol, locked=basis)
        theta = np.concatenate([theta, th2])
        U = np.hstack([U, U2])
        order = np.argsort(theta, kind="stable")
        theta, U = theta[order], U[:, order]
        basis = np.hstack([basis, b2])
        restart += 1
    idx = _extreme(theta, k, "top")
    vals, vecs = theta[idx], _fix_signs(U[:, idx])
    res = _true_residuals(_apply_block(oracle), vals, vecs)
    ok = res <= tol * np.maximum(1.0, np.abs(vals))
    if len(idx) < k or not np.all(ok):
        good = np.flatnonzero(ok)
        # converged pairs form a prefix only if the leading ones converged
        n_good = int(np.argmin(ok)) if not np.all(ok) else len(ok)
        pairs = EigenPairs(vals[:n_good], vecs[:, :n_good], res[:n_good])
        reason = "Krylov breakdown" if broke else f"{iters} iterations"
        raise PartialConvergenceError(
            f"only {len(good)} of {k} eigenpairs converged after {reason}", pairs)
    return EigenPairs(vals, vecs, res)


def estimate_max_eig(oracle, seed: int = 0, iters: int = 30) -> float:
    """Upper estimate of the largest eigenvalue: top Ritz value plus its residual bound."""
    K = oracle.num_params
    iters = min(iters, K)
    theta, _, est, _, _ = _lanczos_run(oracle.apply, _start_vector(K, seed + 7919), iters, 1, "top", 1e-3)
    bound = theta[-1] + est[-1]
    if not np.isfinite(bound):
        raise ShiftEstimateError("largest-eigenvalue estimate is not finite; increase iters")
    return float(bound)


def smallest_eigvec(oracle, iters: int | None = None, seed: int = 0, tol: float = 1e-6,
                    start: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Minimal eigenpair via Lanczos on the shifted, negated operator ``c I - A``.

    The returned vector has unit norm and its first non-negligible component
    positive.
    """
    K = oracle.num_params
    iters = K if iters is None else min(iters, K)
    c = estimate_max_eig(oracle, seed)
    c = 1.01 * abs(c) + 1e-12
    if not np.isfinite(c) or c <= 0:
        raise ShiftEstimateError("spectral shift estimate failed; increase iters")

    def shifted(v):
        return c * v - oracle.apply(v)

    v0 = _start_vector(K, seed) if start is None else start / np.linalg.norm(start)
    theta, U, _, _, _ = _lanczos_run(shifted, v0, iters, 1, "top", tol / max(1.0, c))
    vec = _fix_signs(U[:, [-1]])[:, 0]
    vec /= np.linalg.norm(vec)
    Av = oracle.apply(vec)
    value = float(vec @ Av)
    res = float(np.linalg.norm(Av - value * vec))
    if res > tol * max(1.0, abs(value)) * 10 and iters < K:
        raise LanczosError(f"smallest eigenpair did not converge (residual {res:.2e}); increase iters")
    return value, vec


def write_spectrum_csv(path, values: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "eigenvalue"])
        for i, v in enumerate(values):
            w.writerow([i, repr(float(v))])
