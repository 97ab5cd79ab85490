"""Config-driven experiment pipeline behind the command line.

A config is a JSON object.  Missing keys are filled from per-task defaults
(the best toy configurations) and the resolved config, with every value
explicit, is what gets hashed and echoed to the output directory.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import (GaussianPosterior, ela_predict, fit_laplace, fit_laplace_with_fallback, lla_predict,
                        save_posterior)
from .curvature import write_spectrum_csv
from .datasets import gen_sine, gen_two_moons, save_dataset, sine_test_grid, train_val_split
from .errors import ConfigError
from .metrics import (MetricsReport, classification_scores, format_row, regression_scores, write_metrics_csv,
                      write_reliability_csv)
from .nn_core import (BernoulliLogit, Dataset, GaussianRegression, MlpModel, PriorSpec, forward, grad_norm,
                      load_checkpoint, make_mlp, polish_map, save_checkpoint, train_map)
from .sampling import PredictiveSummary, predict, predict_from_weights, write_latent_manifest, write_predictions_csv
from .tube import Tube, TubeConfig, build_tube, save_tube, write_diagnostics_csv

TASKS = ("sine", "two_moons")
METHODS = ("MAP", "ELA", "LLA", "LLA-MC", "LLA-Probit", "TRL")
# regression LLA is analytic; classification has a Monte Carlo and a probit path
TASK_METHODS = {"sine": ("MAP", "ELA", "LLA", "TRL"), "two_moons": ("MAP", "ELA", "LLA-MC", "LLA-Probit", "TRL")}
ELA_KINDS = ("exact-fallback", "exact", "ggn", "rectified")

_TUBE_FIELDS = [f.name for f in fields(TubeConfig)]


def _tube_defaults(**kw) -> dict:
    return asdict(TubeConfig(**kw))


DEFAULTS = {
    "sine": {
        "task": "sine",
        "seed": 0,
        "data": {"n": 50, "noise": 0.1, "x_range": [-6.0, 6.0], "test_grid": 400},
        "model": {"hidden": [50, 50], "activation": "tanh", "noise_sigma": 0.1},
        "prior": {"lam": 1.0},
        "train": {"epochs": 200, "lr": 0.01, "polish_iters": 20000, "polish_gtol": 1e-8},
        "tube": _tube_defaults(T=30, delta_s=0.02, k_perp=30, beta_perp=0.005),
        "baselines": {"ela_kind": "exact-fallback", "rectify_threshold": None},
        "methods": list(TASK_METHODS["sine"]),
        "samples": 100,
        "eval": {"test": "grid", "val_fraction": 0.0, "ece_bins": 15, "field_resolution": 200},
    },
    "two_moons": {
        "task": "two_moons",
        "seed": 0,
        "data": {"n": 300, "noise": 0.1},
        "model": {"hidden": [50, 50], "activation": "tanh"},
        "prior": {"lam": 0.3},
        "train": {"epochs": 500, "lr": 0.01, "polish_iters": 20000, "polish_gtol": 1e-8},
        "tube": _tube_defaults(T=50, delta_s=0.08, k_perp=30, beta_perp=0.05, drift_rel=0.5),
        "baselines": {"ela_kind": "exact-fallback", "rectify_threshold": None},
        "methods": list(TASK_METHODS["two_moons"]),
        "samples": 100,
        "eval": {"test": "train", "val_fraction": 0.0, "ece_bins": 15, "field_resolution": 200},
    },
}

# single-seed thresholds used by ``run --check``
CHECKS = {
    "sine": {"TRL": {"rmse_max": 0.35, "nll_max": 0.3, "coverage_1s": (0.8, 1.0), "z_var": (0.1, 0.7)},
             "order": ("TRL", "LLA", "ELA")},
    "two_moons": {"TRL": {"nll_max": 0.15, "brier_max": 0.05, "accuracy_min": 1.0},
                  "LLA-MC": {"accuracy_min": 1.0},
                  "order": ("TRL", "LLA-MC", "ELA")},
}


# --------------------------------------------------------------------------
# config handling


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown key (allowed: {', '.join(sorted(base))})", where)
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError("expected an object", where)
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def resolve_config(raw: dict) -> dict:
    """Fill defaults for the task named in ``raw`` and validate every field."""
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object")
    task = raw.get("task", "sine")
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; choose from {', '.join(TASKS)}", "task")
    cfg = _merge(DEFAULTS[task], raw)
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    def need(cond, msg, where):
        if not cond:
            raise ConfigError(msg, where)

    need(isinstance(cfg["seed"], int) and cfg["seed"] >= 0, "must be a non-negative integer", "seed")
    d = cfg["data"]
    need(isinstance(d["n"], int) and d["n"] >= 2, "must be an integer >= 2", "data.n")
    need(d["noise"] >= 0, "must be >= 0", "data.noise")
    m = cfg["model"]
    need(all(isinstance(h, int) and h > 0 for h in m["hidden"]), "must be positive integers", "model.hidden")
    need(m["activation"] == "tanh", "only 'tanh' is supported", "model.activation")
    if cfg["task"] == "sine":
        need(m["noise_sigma"] > 0, "must be > 0", "model.noise_sigma")
        need(isinstance(d["test_grid"], int) and d["test_grid"] >= 2, "must be an integer >= 2", "data.test_grid")
    need(cfg["prior"]["lam"] > 0, "must be > 0", "prior.lam")
    t = cfg["train"]
    need(isinstance(t["epochs"], int) and t["epochs"] >= 0, "must be a non-negative integer", "train.epochs")
    need(t["lr"] > 0, "must be > 0", "train.lr")
    try:
        TubeConfig(**cfg["tube"])
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], f"tube.{exc.field}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "tube") from None
    need(cfg["baselines"]["ela_kind"] in ELA_KINDS, f"choose from {', '.join(ELA_KINDS)}", "baselines.ela_kind")
    allowed = TASK_METHODS[cfg["task"]]
    bad = [mth for mth in cfg["methods"] if mth not in allowed]
    need(not bad, f"unknown methods {bad}; choose from {', '.join(allowed)}", "methods")
    need(isinstance(cfg["samples"], int) and cfg["samples"] >= 2, "must be an integer >= 2", "samples")
    e = cfg["eval"]
    need(e["test"] in ("grid", "train"), "must be 'grid' or 'train'", "eval.test")
    need(0.0 <= e["val_fraction"] < 1.0, "must be in [0, 1)", "eval.val_fraction")
    need(isinstance(e["ece_bins"], int) and e["ece_bins"] >= 1, "must be a positive integer", "eval.ece_bins")


def load_config(path) -> dict:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return resolve_config(raw)


def canonical_json(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:16]


def with_overrides(cfg: dict, **tube) -> dict:
    out = copy.deepcopy(cfg)
    out["tube"].update(tube)
    return out


# --------------------------------------------------------------------------
# pipeline pieces


def build_data(cfg: dict) -> tuple[Dataset, Dataset | None, Dataset]:
    """(train, validation or None, test) for the configured task."""
    d, seed = cfg["data"], cfg["seed"]
    if cfg["task"] == "sine":
        full = gen_sine(d["n"], d["noise"], tuple(d["x_range"]), seed)
    else:
        full = gen_two_moons(d["n"], d["noise"], seed)
    train, val = full, None
    if cfg["eval"]["val_fraction"] > 0:
        train, val = train_val_split(full, cfg["eval"]["val_fraction"], seed)
    if cfg["eval"]["test"] == "grid":
        if cfg["task"] != "sine":
            raise ConfigError("a test grid only exists for the sine task", "eval.test")
        test = sine_test_grid(d["test_grid"], tuple(d["x_range"]))
    else:
        test = train
    return train, val, test


def make_model(cfg: dict, n_inputs: int) -> MlpModel:
    widths = [n_inputs, *cfg["model"]["hidden"], 1]
    head = GaussianRegression(cfg["model"]["noise_sigma"]) if cfg["task"] == "sine" else BernoulliLogit()
    return make_mlp(widths, head, seed=cfg["seed"])


def train_model(cfg: dict, train: Dataset) -> MlpModel:
    prior = PriorSpec(cfg["prior"]["lam"])
    t = cfg["train"]
    model = train_map(make_model(cfg, train.inputs.shape[1]), train, prior, t["epochs"], t["lr"])
    return polish_map(model, train, prior, t["polish_iters"], t["polish_gtol"])


def fit_baseline(cfg: dict, model: MlpModel, train: Dataset) -> GaussianPosterior:
    prior = PriorSpec(cfg["prior"]["lam"])
    kind = cfg["baselines"]["ela_kind"]
    thr = cfg["baselines"]["rectify_threshold"]
    if kind == "exact-fallback":
        return fit_laplace_with_fallback(model, train, prior, thr)
    return fit_laplace(model, train, prior, kind, thr)


def tube_config(cfg: dict) -> TubeConfig:
    return TubeConfig(**cfg["tube"])


def map_summary(model: MlpModel, x: np.ndarray) -> PredictiveSummary:
    return predict_from_weights(model, x, model.theta[None, :])


def method_predictions(cfg, model, posterior, tube, x) -> dict[str, PredictiveSummary]:
    S, seed = cfg["samples"], cfg["seed"]
    out = {}
    for method in cfg["methods"]:
        if method == "MAP":
            out[method] = map_summary(model, x)
        elif method == "ELA":
            out[method] = ela_predict(model, posterior, x, S, seed)
        elif method == "LLA":
            out[method] = lla_predict(model, posterior, x)
        elif method == "LLA-MC":
            out[method] = lla_predict(model, posterior, x, "mc", S, seed)
        elif method == "LLA-Probit":
            out[method] = lla_predict(model, posterior, x, "probit", S, seed)
        elif method == "TRL":
            out[method] = predict(model, tube, x, S, seed)
    return out


def score(cfg: dict, data: Dataset, summary: PredictiveSummary, **tags) -> MetricsReport:
    if cfg["task"] == "sine":
        return regression_scores(data.targets, summary, **tags)
    return classification_scores(data.targets, summary, cfg["eval"]["ece_bins"], **tags)


def _needs_posterior(cfg) -> bool:
    return any(m in cfg["methods"] for m in ("ELA", "LLA", "LLA-MC", "LLA-Probit"))


# --------------------------------------------------------------------------
# run


def run_experiment(cfg: dict, out_dir=None, model: MlpModel | None = None) -> dict:
    """Train, fit baselines, build the tube, predict and score every method.

    Returns a dict with ``reports`` (list of MetricsReport), ``model``,
    ``posterior``, ``tube`` and ``timings``.  With ``out_dir`` all artifacts
    are written there.
    """
    h = config_hash(cfg)
    prior = PriorSpec(cfg["prior"]["lam"])
    train, val, test = build_data(cfg)
    timings = {}
    t0 = time.perf_counter()
    if model is None:
        model = train_model(cfg, train)
    timings["train"] = time.perf_counter() - t0

    posterior = None
    if _needs_posterior(cfg):
        t0 = time.perf_counter()
        posterior = fit_baseline(cfg, model, train)
        timings["baseline_fit"] = time.perf_counter() - t0
    tube = None
    if "TRL" in cfg["methods"]:
        t0 = time.perf_counter()
        tube = build_tube(model, train, prior, tube_config(cfg), seed=cfg["seed"])
        timings["tube"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    splits = [("test", test)] + ([("val", val)] if val is not None else [])
    reports, preds = [], {}
    for split, data in splits:
        preds[split] = method_predictions(cfg, model, posterior, tube, data.inputs)
        for method, summ in preds[split].items():
            rep = score(cfg, data, summ, method=method, split=split, seed=cfg["seed"], config_hash=h)
            if method in ("ELA", "LLA", "LLA-MC", "LLA-Probit"):
                rep.details["curvature"] = posterior.kind
            if method == "TRL":
                rep.details["curvature"] = tube.config.curvature
                rep.details["index_map"] = "floor(Phi(z)*(T+1))"
                rep.details["alpha_mode"] = tube.config.alpha_mode
            rep.details["lam"] = prior.lam
            reports.append(rep)
    timings["predict"] = time.perf_counter() - t0

    result = {"reports": reports, "model": model, "posterior": posterior, "tube": tube, "timings": timings,
              "config_hash": h, "grad_norm": grad_norm(model, train, prior)}
    if out_dir is not None:
        _write_run(cfg, Path(out_dir), result, train, test, preds)
    return result


def _write_run(cfg, out: Path, result, train, test, preds) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.json").write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n")
    reports = result["reports"]
    write_metrics_csv(out / "metrics.csv", reports)
    (out / "metrics.json").write_text(json.dumps(
        {"config_hash": result["config_hash"], "package_version": __version__,
         "map_grad_norm": result["grad_norm"], "reports": [json.loads(r.to_json()) for r in reports]},
        indent=1, sort_keys=True) + "\n")
    save_dataset(train, out / "train.csv")
    save_checkpoint(result["model"], out / "map_checkpoint.json", cfg["seed"])
    for method, summ in preds["test"].items():
        write_predictions_csv(out / f"predictions_{method}.csv", test.inputs, summ)
        if cfg["task"] == "two_moons":
            write_reliability_csv(out / f"reliability_{method}.csv", summ.mean, test.targets,
                                  cfg["eval"]["ece_bins"])
    tube = result["tube"]
    if tube is not None:
        save_tube(tube, out / "tube.json")
        write_diagnostics_csv(tube, out / "tube_diagnostics.csv")
        write_spectrum_csv(out / "spectrum.csv", np.asarray(tube.meta["top_eigenvalues"]))
        write_latent_manifest(out / "latents.json", tube, cfg["samples"], cfg["seed"])
    if result["posterior"] is not None:
        save_posterior(result["posterior"], out / "posterior.json")
    if cfg["task"] == "two_moons":
        write_probability_fields(cfg, out, result, train)
    (out / "summary.txt").write_text(summary_table(cfg, reports))


def field_grid(train: Dataset, resolution: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lo = train.inputs.min(axis=0) - 0.5
    hi = train.inputs.max(axis=0) + 0.5
    g0 = np.linspace(lo[0], hi[0], resolution)
    g1 = np.linspace(lo[1], hi[1], resolution)
    X0, X1 = np.meshgrid(g0, g1, indexing="xy")
    return X0, X1, np.column_stack([X0.ravel(), X1.ravel()])


def write_probability_fields(cfg, out: Path, result, train) -> None:
    """Class-1 probability and entropy over a square grid around the data."""
    _, _, pts = field_grid(train, cfg["eval"]["field_resolution"])
    fields_ = method_predictions(cfg, result["model"], result["posterior"], result["tube"], pts)
    for method, summ in fields_.items():
        with open(out / f"field_{method}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x0", "x1", "p1", "entropy"])
            for (a, b), p, e in zip(pts, summ.mean[:, 1], summ.entropy):
                w.writerow([format(a, ".6g"), format(b, ".6g"), format(p, ".6g"), format(e, ".6g")])


SUMMARY_COLUMNS = {
    "sine": ("rmse", "nll", "z_var", "coverage_1s", "coverage_2s", "coverage_3s"),
    "two_moons": ("nll", "brier", "ece", "accuracy"),
}


def summary_table(cfg: dict, reports: list[MetricsReport]) -> str:
    """Plain-text table whose numbers are the metrics CSV strings verbatim."""
    cols = SUMMARY_COLUMNS[cfg["task"]]
    rows = [format_row(r) for r in reports]
    head = ["method", "split"] + list(cols)
    table = [head] + [[r["method"], r["split"]] + [r[c] for c in cols] for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(head))]
    lines = [f"task {cfg['task']}  seed {cfg['seed']}  lambda {cfg['prior']['lam']}  config {config_hash(cfg)}"]
    for i, row in enumerate(table):
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def check_reports(cfg: dict, reports: list[MetricsReport]) -> list[str]:
    """Failures of the single-seed acceptance thresholds for this task."""
    spec = CHECKS[cfg["task"]]
    by = {r.method: r for r in reports if r.split == "test"}
    failures = []
    for method, rules in spec.items():
        if method == "order":
            continue
        r = by.get(method)
        if r is None:
            failures.append(f"{method}: not run")
            continue
        for rule, bound in rules.items():
            if rule.endswith("_max") and not getattr(r, rule[:-4]) <= bound:
                failures.append(f"{method} {rule[:-4]} {getattr(r, rule[:-4]):.4g} > {bound}")
            elif rule.endswith("_min") and not getattr(r, rule[:-4]) >= bound:
                failures.append(f"{method} {rule[:-4]} {getattr(r, rule[:-4]):.4g} < {bound}")
            elif isinstance(bound, tuple) and not bound[0] <= getattr(r, rule) <= bound[1]:
                failures.append(f"{method} {rule} {getattr(r, rule):.4g} outside {list(bound)}")
    order = spec["order"]
    if all(m in by for m in order):
        nlls = [by[m].nll for m in order]
        if not all(a < b for a, b in zip(nlls, nlls[1:])):
            failures.append("NLL ordering " + " < ".join(order) + " violated: " +
                            ", ".join(f"{m}={v:.4g}" for m, v in zip(order, nlls)))
    else:
        failures.append("NLL ordering needs methods " + ", ".join(order))
    return failures


# --------------------------------------------------------------------------
# grid search


def load_grid(path) -> dict:
    try:
        grid = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid grid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("grid must be a non-empty object of tube axes")
    for key, vals in grid.items():
        if key not in _TUBE_FIELDS:
            raise ConfigError(f"not a tube parameter (allowed: {', '.join(_TUBE_FIELDS)})", f"grid.{key}")
        if not isinstance(vals, list) or not vals:
            raise ConfigError("must be a non-empty list", f"grid.{key}")
    return grid


def grid_cells(grid: dict) -> list[dict]:
    keys = sorted(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def cell_name(cell: dict) -> str:
    return "_".join(f"{k}={cell[k]}" for k in sorted(cell))


def _group_key(cell: dict) -> tuple:
    # sampling-only parameters share one tube
    return tuple((k, v) for k, v in sorted(cell.items()) if k != "beta_perp")


def _run_group(args) -> list[dict]:
    cfg, cells, out_dir, model_path = args
    out = Path(out_dir)
    model = load_checkpoint(model_path)
    train, val, test = build_data(cfg)
    prior = PriorSpec(cfg["prior"]["lam"])
    base = with_overrides(cfg, **{k: v for k, v in cells[0].items() if k != "beta_perp"})
    tube, error = None, None
    try:
        tube = build_tube(model, train, prior, tube_config(base), seed=cfg["seed"])
    except Exception as exc:  # a failed cell is recorded, the grid goes on
        error = f"{type(exc).__name__}: {exc}"
    rows = []
    for cell in cells:
        cell_cfg = with_overrides(cfg, **cell)
        cdir = out / cell_name(cell)
        cdir.mkdir(parents=True, exist_ok=True)
        reports = []
        if tube is not None:
            t = Tube(tube.elements, tube_config(cell_cfg), tube.prior, tube.meta, tube.diagnostics)
            h = config_hash(cell_cfg)
            for split, data in [("test", test)] + ([("val", val)] if val is not None else []):
                summ = predict(model, t, data.inputs, cfg["samples"], cfg["seed"])
                reports.append(score(cfg, data, summ, method="TRL", split=split, seed=cfg["seed"], config_hash=h))
            write_metrics_csv(cdir / "metrics.csv", reports)
        record = {"cell": cell, "error": error,
                  "reports": [json.loads(r.to_json()) for r in reports]}
        (cdir / "cell.json").write_text(json.dumps(record, sort_keys=True, indent=1) + "\n")
        (cdir / "DONE").write_text("ok\n")
        rows.append(record)
    return rows


def run_grid(cfg: dict, grid: dict, out_dir, jobs: int = 1, log=None) -> dict:
    """Evaluate TRL on every grid cell; cells with a DONE marker are skipped.

    The MAP and data split are shared by all cells.  The best cell is the one
    with the lowest validation NLL (test NLL when there is no validation set).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.json").write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n")
    (out / "grid.json").write_text(json.dumps(grid, indent=1, sort_keys=True) + "\n")
    model_path = out / "map_checkpoint.json"
    if not model_path.exists():
        train, _, _ = build_data(cfg)
        save_checkpoint(train_model(cfg, train), model_path, cfg["seed"])

    cells = grid_cells(grid)
    todo: dict[tuple, list[dict]] = {}
    for cell in cells:
        if not (out / cell_name(cell) / "DONE").exists():
            todo.setdefault(_group_key(cell), []).append(cell)
    tasks = [(cfg, group, str(out), str(model_path)) for group in todo.values()]
    if log:
        log(f"{len(cells)} cells, {len(cells) - sum(map(len, todo.values()))} already done, "
            f"{len(tasks)} tubes to build")
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(_run_group, tasks))
    else:
        for task in tasks:
            _run_group(task)

    records = [json.loads((out / cell_name(c) / "cell.json").read_text()) for c in cells]
    return summarize_grid(cfg, records, out)


def summarize_grid(cfg: dict, records: list[dict], out: Path) -> dict:
    select_split = "val" if cfg["eval"]["val_fraction"] > 0 else "test"
    rows, scored = [], []
    for rec in records:
        for rep in rec["reports"]:
            rows.append((rec["cell"], rep))
            if rep["split"] == select_split and np.isfinite(rep["nll"]):
                scored.append((rep["nll"], rec["cell"]))
    axes = sorted(records[0]["cell"]) if records else []
    with open(out / "grid_metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(axes + list(MetricsReport.ROW_FIELDS))
        for cell, rep in rows:
            r = MetricsReport(**{k: v for k, v in rep.items() if k != "details"})
            w.writerow([cell[a] for a in axes] + list(format_row(r).values()))
    if not scored:
        best = None
        ties = []
    else:
        scored.sort(key=lambda x: x[0])
        best = {"cell": scored[0][1], "nll": scored[0][0], "split": select_split}
        ties = [{"cell": c, "nll": v} for v, c in scored if v <= scored[0][0] + 0.05]
    failed = [rec["cell"] for rec in records if rec["error"]]
    summary = {"best": best, "ties_within_0.05": ties, "failed_cells": failed, "n_cells": len(records)}
    (out / "grid_best.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return summary


REGRESSION_GRID = {
    "T": [10, 30, 50],
    "delta_s": [0.01, 0.02, 0.05, 0.08],
    "beta_perp": [0.005, 0.01, 0.05, 0.1, 1.0],
    "k_perp": [2, 3, 5, 8, 10, 30],
}
