"""Seeded toy datasets and an analytic quadratic-valley problem.

All randomness goes through ``numpy.random.Generator(PCG64(seed))``; the
generator id is stored in dataset metadata so datasets can be regenerated
bit-for-bit.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .curvature import MatrixOracle
from .nn_core import Dataset

GENERATOR_ID = "numpy.random.PCG64"


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def gen_sine(n: int = 50, sigma: float = 0.1, x_range=(-6.0, 6.0), seed: int = 0) -> Dataset:
    """``y = sin(x) + sigma * eps`` with ``x`` uniform on ``x_range``."""
    if n < 1 or sigma < 0:
        raise ValueError("need n >= 1 and sigma >= 0")
    rng = _rng(seed)
    lo, hi = x_range
    x = rng.uniform(lo, hi, size=(n, 1))
    eps = rng.standard_normal((n, 1))
    y = np.sin(x) + sigma * eps
    meta = {"kind": "sine", "n": n, "noise_sigma": sigma, "x_range": [lo, hi], "seed": seed,
            "generator": GENERATOR_ID}
    # flag, never clip, targets outside the 6-sigma envelope
    meta["outliers"] = int(np.sum(np.abs(y) > 1 + 6 * sigma)) if sigma > 0 else 0
    return Dataset(x, y, "regression", meta)


def sine_test_grid(n: int = 400, x_range=(-6.0, 6.0)) -> Dataset:
    """Evenly spaced grid with noiseless ``sin(x)`` targets."""
    x = np.linspace(x_range[0], x_range[1], n)[:, None]
    return Dataset(x, np.sin(x), "regression", {"kind": "sine-grid", "n": n, "x_range": list(x_range)})


def gen_two_moons(n: int = 300, noise: float = 0.1, seed: int = 0) -> Dataset:
    """Two interleaved half circles.

    Class 0 lies on the upper unit arc ``(cos t, sin t)``, class 1 on the
    lower arc ``(1 - cos t, 0.5 - sin t)``, ``t`` evenly spaced on
    ``[0, pi]``; ``n // 2`` points go to class 0 and the rest to class 1.
    Isotropic Gaussian noise of scale ``noise`` is added, then rows are
    shuffled.
    """
    if n < 2 or noise < 0:
        raise ValueError("need n >= 2 and noise >= 0")
    rng = _rng(seed)
    n0 = n // 2
    n1 = n - n0
    t0 = np.linspace(0.0, np.pi, n0)
    t1 = np.linspace(0.0, np.pi, n1)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    X = np.vstack([upper, lower])
    y = np.concatenate([np.zeros(n0, dtype=int), np.ones(n1, dtype=int)])
    perm = rng.permutation(n)
    X, y = X[perm], y[perm]
    X = X + noise * rng.standard_normal(X.shape)
    meta = {"kind": "two_moons", "n": n, "noise": noise, "seed": seed, "generator": GENERATOR_ID}
    return Dataset(X, y, "classification", meta)


def train_val_split(data: Dataset, val_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    n = len(data)
    n_val = int(round(val_fraction * n))
    if not 0 < n_val < n:
        raise ValueError(f"validation fraction {val_fraction} leaves an empty split")
    perm = _rng(seed + 104729).permutation(n)
    return data.subset(np.sort(perm[n_val:])), data.subset(np.sort(perm[:n_val]))


@dataclass(frozen=True)
class QuadraticValley:
    """``L(theta) = 1/2 theta^T diag(a) theta + lam/2 ||theta||^2``.

    Zero entries of ``a`` are exactly flat directions; with the prior the
    posterior is ``N(0, diag(1 / (a + lam)))``.
    """

    a_diag: tuple[float, ...]
    lam: float = 0.1
    start: tuple[float, ...] | None = None

    @property
    def a(self) -> np.ndarray:
        return np.asarray(self.a_diag, dtype=float)

    @property
    def num_params(self) -> int:
        return len(self.a_diag)

    @property
    def theta0(self) -> np.ndarray:
        return np.zeros(self.num_params) if self.start is None else np.asarray(self.start, dtype=float)

    def loss(self, theta: np.ndarray) -> float:
        return float(0.5 * theta @ ((self.a + self.lam) * theta))

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        return (self.a + self.lam) * theta

    def hessian(self) -> np.ndarray:
        return np.diag(self.a + self.lam)

    def oracle(self, theta: np.ndarray | None = None) -> MatrixOracle:
        return MatrixOracle(self.hessian())

    def posterior_mean(self) -> np.ndarray:
        return np.zeros(self.num_params)

    def posterior_cov(self) -> np.ndarray:
        return np.diag(1.0 / (self.a + self.lam))

    def valley_tangent(self) -> np.ndarray:
        e = np.zeros(self.num_params)
        e[int(np.argmin(self.a))] = 1.0
        return e


def quadratic_valley(a_diag, start=None, lam: float = 0.1) -> QuadraticValley:
    return QuadraticValley(tuple(float(v) for v in a_diag), lam,
                           None if start is None else tuple(float(v) for v in start))


# --------------------------------------------------------------------------
# CSV + JSON export


def save_dataset(data: Dataset, csv_path) -> None:
    csv_path = Path(csv_path)
    D = data.inputs.shape[1]
    if data.task == "regression":
        ycols = [f"y{j}" for j in range(data.targets.shape[1])]
        rows = np.column_stack([data.inputs, data.targets])
    else:
        ycols = ["label"]
        rows = np.column_stack([data.inputs, data.targets])
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(D)] + ycols)
        for row in rows:
            w.writerow([repr(float(v)) for v in row[:D]] +
                       ([repr(float(v)) for v in row[D:]] if data.task == "regression" else [str(int(row[D]))]))
    meta = dict(data.meta, task=data.task, n_inputs=D)
    csv_path.with_suffix(".json").write_text(json.dumps(meta, indent=1))


def load_dataset(csv_path) -> Dataset:
    csv_path = Path(csv_path)
    meta = json.loads(csv_path.with_suffix(".json").read_text())
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader]
    D = meta["n_inputs"]
    X = np.array([[float(v) for v in r[:D]] for r in rows])
    if meta["task"] == "regression":
        y = np.array([[float(v) for v in r[D:]] for r in rows])
    else:
        y = np.array([int(r[D]) for r in rows])
    assert len(header) == len(rows[0])
    return Dataset(X, y, meta["task"], meta)
