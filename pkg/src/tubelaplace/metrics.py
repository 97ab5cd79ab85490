"""Predictive scores and calibration diagnostics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .sampling import PredictiveSummary

PROB_FLOOR = 1e-12


@dataclass
class MetricsReport:
    method: str = ""
    task: str = ""
    split: str = "test"
    config_hash: str = ""
    seed: int | None = None
    rmse: float | None = None
    nll: float | None = None
    brier: float | None = None
    ece: float | None = None
    accuracy: float | None = None
    z_var: float | None = None
    coverage_1s: float | None = None
    coverage_2s: float | None = None
    coverage_3s: float | None = None
    details: dict = field(default_factory=dict)

    ROW_FIELDS = ("method", "task", "split", "seed", "config_hash", "rmse", "nll", "brier", "ece", "accuracy",
                  "z_var", "coverage_1s", "coverage_2s", "coverage_3s")

    def row(self) -> dict:
        return {k: getattr(self, k) for k in self.ROW_FIELDS}

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, default=float)


def regression_scores(y: np.ndarray, summary: PredictiveSummary, sigma_aleatoric: float | None = None,
                      **tags) -> MetricsReport:
    """RMSE, Gaussian NLL and z-statistics under the total predictive variance.

    ``sigma_aleatoric`` overrides the observation noise carried on the
    summary; the total variance is epistemic plus ``sigma_aleatoric**2``.
    """
    y = np.asarray(y, dtype=float).reshape(summary.mean.shape)
    noise_var = summary.aleatoric if sigma_aleatoric is None else sigma_aleatoric**2
    var = summary.variance + noise_var
    resid = y - summary.mean
    rmse = math.sqrt(float(np.mean(resid**2)))
    details = {"aleatoric_variance": float(noise_var), "n": int(y.shape[0])}
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(var > 0, resid / np.sqrt(var), np.where(resid == 0, 0.0, np.inf))
        nll_pts = np.where(var > 0, 0.5 * np.log(2 * np.pi * var) + 0.5 * resid**2 / var,
                           np.where(resid == 0, -np.inf, np.inf))
    if np.any(np.isinf(nll_pts)):
        details["infinite_nll"] = True
    finite_z = z[np.isfinite(z)]
    absz = np.abs(z)
    return MetricsReport(
        task="regression", rmse=rmse, nll=float(np.mean(nll_pts)),
        z_var=float(np.var(finite_z)) if finite_z.size else float("nan"),
        coverage_1s=float(np.mean(absz <= 1)), coverage_2s=float(np.mean(absz <= 2)),
        coverage_3s=float(np.mean(absz <= 3)), details=details, **tags)


def reliability_bins(probs: np.ndarray, labels: np.ndarray, n_bins: int = 15):
    """Equal-width confidence bins: rows of (bin, confidence, accuracy, mass)."""
    conf = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == labels).astype(float)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    # bins are (lo, hi]; confidence 0 joins the first bin
    which = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, n_bins - 1)
    rows = []
    for b in range(n_bins):
        mask = which == b
        mass = float(mask.mean())
        rows.append((b, float(conf[mask].mean()) if mask.any() else float("nan"),
                     float(correct[mask].mean()) if mask.any() else float("nan"), mass))
    return rows


def expected_calibration_error(probs: np.ndarray, labels: np.ndarray, n_bins: int = 15) -> float:
    return float(sum(mass * abs(acc - conf) for _, conf, acc, mass in reliability_bins(probs, labels, n_bins)
                     if mass > 0))


def classification_scores(labels: np.ndarray, summary: PredictiveSummary, n_bins: int = 15,
                          **tags) -> MetricsReport:
    """NLL, Brier, ECE and accuracy from predicted class probabilities.

    Binary Brier is the usual ``mean((p1 - y)^2)``; with more classes it is
    the squared distance to the one-hot vector summed over classes.
    """
    probs = np.asarray(summary.mean, dtype=float)
    labels = np.asarray(labels).astype(int)
    n = labels.shape[0]
    p_true = probs[np.arange(n), labels]
    details = {"ece_bins": n_bins, "n": n}
    if np.any(p_true < PROB_FLOOR):
        details["clamped_probabilities"] = int(np.sum(p_true < PROB_FLOOR))
    nll = float(np.mean(-np.log(np.maximum(p_true, PROB_FLOOR))))
    onehot = np.eye(probs.shape[1])[labels]
    if probs.shape[1] == 2:
        brier = float(np.mean((probs[:, 1] - labels) ** 2))
    else:
        brier = float(np.mean(np.sum((probs - onehot) ** 2, axis=1)))
    acc = float(np.mean(probs.argmax(axis=1) == labels))
    return MetricsReport(task="classification", nll=nll, brier=brier,
                         ece=expected_calibration_error(probs, labels, n_bins), accuracy=acc,
                         details=details, **tags)


def write_metrics_csv(path, reports: list[MetricsReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MetricsReport.ROW_FIELDS)
        for r in reports:
            w.writerow(format_row(r).values())


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_reliability_csv(path, probs: np.ndarray, labels: np.ndarray, n_bins: int = 15) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin", "confidence", "accuracy", "mass"])
        for row in reliability_bins(probs, labels, n_bins):
            w.writerow([row[0]] + [_fmt(v) for v in row[1:]])


def _fmt(v) -> str:
    """Shared number formatting for the CSV and the summary table."""
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".6g")
    return str(v)


def format_row(report: MetricsReport) -> dict:
    return {k: _fmt(v) for k, v in report.row().items()}

