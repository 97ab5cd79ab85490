"""Command line: ``tubelaplace run | grid | oracle | inspect-tube``.

Exit codes: 0 ok, 2 config or usage error, 3 numeric failure, 4 a
``--check`` threshold failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericError, TubeLaplaceError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load(args):
    from .experiment import config_hash, load_config, resolve_config

    cfg = load_config(args.config) if args.config else resolve_config({"task": args.task or "sine"})
    if args.task and args.config and cfg["task"] != args.task:
        raise ConfigError(f"config says {cfg['task']!r}, --task says {args.task!r}", "task")
    if args.seed is not None:
        cfg["seed"] = args.seed
        cfg = resolve_config(cfg)
    return cfg, config_hash(cfg)


def cmd_run(args) -> int:
    from .experiment import check_reports, run_experiment, summary_table

    cfg, h = _load(args)
    if args.dry_run:
        print(json.dumps(cfg, indent=1, sort_keys=True))
        print(f"config hash {h}")
        return EXIT_OK
    out = Path(args.out)
    result = run_experiment(cfg, out)
    sys.stdout.write(summary_table(cfg, result["reports"]))
    if args.check:
        failures = check_reports(cfg, result["reports"])
        for f in failures:
            print(f"CHECK FAIL {f}")
        if failures:
            return EXIT_CHECK
        print("CHECK PASS")
    return EXIT_OK


def cmd_grid(args) -> int:
    from .experiment import REGRESSION_GRID, grid_cells, load_grid, run_grid

    cfg, h = _load(args)
    grid = load_grid(args.grid) if args.grid else REGRESSION_GRID
    if cfg["eval"]["val_fraction"] == 0 and not args.no_validation:
        cfg["eval"]["val_fraction"] = 0.2
    if args.dry_run:
        print(json.dumps({"config": cfg, "grid": grid, "cells": len(grid_cells(grid))}, indent=1, sort_keys=True))
        return EXIT_OK
    summary = run_grid(cfg, grid, args.out, jobs=args.jobs, log=_log)
    print(json.dumps(summary, indent=1, sort_keys=True))
    if summary["best"] is None:
        _log("no grid cell produced a finite score")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .oracles import SUITES, run_suite

    names = list(SUITES) if args.suite == "all" else [args.suite]
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        _log(f"unknown suite {unknown[0]!r}; available: {', '.join(SUITES)}, all")
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ok = True
    for name in names:
        result = run_suite(name, args.seed or 0)
        (out / f"{name}.json").write_text(json.dumps(result, indent=1, sort_keys=True) + "\n")
        print(f"{name}: {'pass' if result['passed'] else 'FAIL'}")
        ok &= result["passed"]
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_inspect_tube(args) -> int:
    from .tube import load_tube

    tube = load_tube(args.tube)
    worst_orth, worst_tan = 0.0, 0.0
    for e in tube.elements:
        k = e.basis.shape[1]
        worst_orth = max(worst_orth, float(np.max(np.abs(e.basis.T @ e.basis - np.eye(k)))))
        worst_tan = max(worst_tan, float(np.max(np.abs(e.basis.T @ e.tangent))))
    spine = tube.spine()
    steps = np.linalg.norm(np.diff(spine, axis=0), axis=1) if tube.T else np.zeros(0)
    info = {
        "T": tube.T, "k_perp": tube.k_perp, "num_params": tube.num_params,
        "delta_s": tube.config.delta_s, "beta_perp": tube.config.beta_perp, "lam": tube.prior.lam,
        "curvature": tube.config.curvature, "frame_orthonormality_defect": worst_orth,
        "tangent_orthogonality_defect": worst_tan,
        "max_step_length": float(steps.max()) if steps.size else 0.0,
        "spine_length": float(steps.sum()),
        "max_transverse_std": float(max(np.abs(np.diag(e.chol)).max() for e in tube.elements)),
    }
    print(json.dumps(info, indent=1, sort_keys=True))
    return EXIT_OK if max(worst_orth, worst_tan) <= 1e-6 else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tubelaplace", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", help="JSON experiment config; defaults are filled per task")
        sp.add_argument("--task", choices=["sine", "two_moons"], help="task when no config is given")
        sp.add_argument("--out", default=out_default, help="output directory (created if missing)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--dry-run", action="store_true", help="validate and print the resolved config only")

    r = sub.add_parser("run", help="train, fit baselines, build the tube, score everything")
    common(r, "runs/latest")
    r.add_argument("--check", action="store_true", help="exit 4 if single-seed acceptance thresholds fail")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("grid", help="grid search over tube parameters, resumable")
    common(g, "runs/grid")
    g.add_argument("--grid", help="JSON object mapping tube parameters to value lists "
                                  "(default: the four-axis regression grid)")
    g.add_argument("--jobs", type=int, default=1, help="worker processes")
    g.add_argument("--no-validation", action="store_true",
                   help="select on the test split instead of holding out 20%% for validation")
    g.set_defaults(func=cmd_grid)

    o = sub.add_parser("oracle", help="compute reference values by independent routes")
    o.add_argument("suite", help="suite name or 'all'")
    o.add_argument("--out", default="runs/oracles")
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=cmd_oracle)

    t = sub.add_parser("inspect-tube", help="print invariants of a saved tube")
    t.add_argument("tube", help="path to tube.json")
    t.set_defaults(func=cmd_inspect_tube)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return EXIT_CONFIG
    except (NumericError, ArithmeticError) as exc:
        _log(f"numeric failure: {exc}")
        return EXIT_NUMERIC
    except TubeLaplaceError as exc:
        _log(f"error: {exc}")
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        _log(f"file not found: {exc.filename}")
        return EXIT_CONFIG
    except PermissionError as exc:
        _log(f"filesystem error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
