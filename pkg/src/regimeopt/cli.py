"""Command-line entry point.

Subcommands: `synth` (labeled synthetic panels), `cluster` (one clustering
run), `backtest` (full resampled experiment or train-length sweep) and
`report` (re-aggregate saved per-window results).

Exit codes: 0 success, 1 validation/config error, 2 data error, 3 numerical
failure.  A config file (TOML) may set any backtest option; flags override it.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import numpy as np

from . import backtest as bt
from .clustering import GainParams, assign_clusters, average_persistence, calibrate_gamma
from .data import compute_log_returns, load_prices
from .errors import (
    CalibrationError,
    DataError,
    EstimationError,
    FeasibilityError,
    RegimeOptError,
    ValidationError,
)
from .synth import RegimeSpec, generate

EXIT_VALIDATION = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


def _default_out_dir() -> str:
    return os.environ.get("REGIMEOPT_OUT", "out")


def _write_prices_csv(panel, path) -> None:
    import pandas as pd

    prices = 100.0 * np.exp(np.vstack([np.zeros(panel.n_assets), np.cumsum(panel.returns, axis=0)]))
    dates = np.concatenate([[panel.dates[0] - np.timedelta64(1, "D")], panel.dates])
    frame = pd.DataFrame(prices, columns=list(panel.assets))
    frame.insert(0, "date", dates.astype("datetime64[D]").astype(str))
    frame.to_csv(path, index=False, float_format="%.12g")


def _synth_spec_from_args(args) -> RegimeSpec:
    n, k = args.assets, args.k
    means = np.zeros((k, n))
    half = n // 2
    for j in range(k):
        pattern = np.where(np.arange(n) < half, args.mean_sep, -args.mean_sep)
        means[j] = pattern if j % 2 == 0 else -pattern
    cov = (args.vol**2) * ((1 - args.corr) * np.eye(n) + args.corr * np.ones((n, n)))
    covs = np.stack([cov * (1.0 + j * args.vol_step) for j in range(k)])
    return RegimeSpec(
        means=means,
        covariances=covs,
        persistence=args.persistence,
        n_days=args.days,
        distribution=args.distribution,
        nu=args.nu,
        seed=args.seed,
    )


def cmd_synth(args) -> int:
    spec = _synth_spec_from_args(args)
    panel, labels = generate(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_prices_csv(panel, out / "prices.csv")
    import pandas as pd

    pd.DataFrame(
        {"date": panel.dates.astype("datetime64[D]").astype(str), "label": labels}
    ).to_csv(out / "labels.csv", index=False)
    print(f"wrote {out / 'prices.csv'} and {out / 'labels.csv'}")
    return 0


def _load_returns(args):
    panel = load_prices(args.data, date_column=args.date_column)
    return compute_log_returns(panel)


def cmd_cluster(args) -> int:
    returns = _load_returns(args)
    x = returns.returns
    if args.train_days is not None:
        start = args.train_start or 0
        x = x[start : start + args.train_days]
    params = GainParams(nu=args.nu, c1=args.c1, c2=args.c2)
    if args.gamma == "auto":
        gamma, table = calibrate_gamma(
            x, args.k, args.gain, params,
            target_persistence=args.target_persistence,
            seed=args.seed, full_output=True,
        )
    else:
        gamma, table = float(args.gamma), None
    assignment, _states = assign_clusters(
        x, args.k, args.gain, params, gamma=gamma, seed=args.seed
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    import pandas as pd

    dates = returns.dates[: len(assignment.labels)] if args.train_days is None else (
        returns.dates[args.train_start or 0 :][: len(assignment.labels)]
    )
    pd.DataFrame(
        {"date": dates.astype("datetime64[D]").astype(str), "label": assignment.labels}
    ).to_csv(out / "labels.csv", index=False)
    diagnostics = {
        "gamma": assignment.gamma,
        "gain": assignment.gain_kind,
        "converged": assignment.converged,
        "sweeps": assignment.iterations_run,
        "average_persistence": average_persistence(assignment),
        "diagnostics": assignment.diagnostics,
    }
    if table is not None:
        diagnostics["gamma_grid"] = table
    (out / "diagnostics.json").write_text(json.dumps(diagnostics, indent=2, sort_keys=True))
    print(f"wrote {out / 'labels.csv'} and {out / 'diagnostics.json'}")
    return 0


def _config_from_args(args) -> bt.ExperimentConfig:
    values = {}
    if args.config:
        with open(args.config, "rb") as fh:
            values.update(tomllib.load(fh))
    field_names = {f.name for f in dataclasses.fields(bt.ExperimentConfig)}
    unknown = set(values) - field_names
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    overrides = {
        "data_path": args.data,
        "n_windows": args.windows,
        "test_days": args.test_days,
        "gain": args.gain,
        "seed": args.seed,
        "criterion": args.criterion,
        "output_dir": args.out_dir,
        "verbose": args.verbose or None,
    }
    if args.train_days:
        overrides["train_days"] = args.train_days[0]
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "solvers" in values:
        values["solvers"] = tuple(values["solvers"])
    return bt.ExperimentConfig(**values)


def _report_tables(report: bt.BacktestReport, out: Path) -> None:
    import pandas as pd

    solvers = sorted({name.split("|", 1)[0] for name in report.cells})
    for solver in solvers:
        if solver == "naive":
            continue
        rows = []
        order = [("naive", "Naive")] + [(solver, s) for s in bt.STATES]
        for sol, state in order:
            metrics = report.cells.get(f"{sol}|{state}")
            if metrics is None:
                continue
            rows.append(
                {
                    "Solver": sol,
                    "State": state,
                    "Return": metrics["ann_return"].get("mean"),
                    "Return (5,95) pct": (
                        metrics["ann_return"].get("p5"),
                        metrics["ann_return"].get("p95"),
                    ),
                    "Volatility": metrics["ann_volatility"].get("mean"),
                    "Volatility (5,95) pct": (
                        metrics["ann_volatility"].get("p5"),
                        metrics["ann_volatility"].get("p95"),
                    ),
                    "Sharpe": metrics["sharpe"].get("mean"),
                    "Sharpe (5,95) pct": (
                        metrics["sharpe"].get("p5"),
                        metrics["sharpe"].get("p95"),
                    ),
                }
            )
        pd.DataFrame(rows).to_csv(out / f"table_{solver}.csv", index=False)

    gains = report.likelihood_gains
    if gains["sparse0"]:
        pd.DataFrame(
            {
                "day": np.arange(1, len(gains["sparse0"]) + 1),
                "sparse0_gain": gains["sparse0"],
                "sparse1_gain": gains["sparse1"],
            }
        ).to_csv(out / "likelihood_gains.csv", index=False)


def _emit_report(report: bt.BacktestReport, results, out: Path, verbose: bool) -> int:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(report.to_json_dict(), indent=2, sort_keys=True)
    )
    _report_tables(report, out)
    if verbose and results is not None:
        windows = [bt.window_result_to_dict(r) for r in results]
        (out / "windows.json").write_text(json.dumps(windows, indent=2, sort_keys=True))
    print(f"wrote report to {out}")
    if report.unreliable:
        print(f"unreliable cells: {report.unreliable}", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


def cmd_backtest(args) -> int:
    config = _config_from_args(args)
    out = Path(config.output_dir)
    if args.sweep:
        lengths = args.train_days or [config.train_days]
        table = bt.train_length_sweep(config, lengths)
        out.mkdir(parents=True, exist_ok=True)
        (out / "train_length_sweep.json").write_text(
            json.dumps(table, indent=2, sort_keys=True)
        )
        print(f"wrote {out / 'train_length_sweep.json'}")
        return 0
    report, results = bt.run_experiment(config)
    return _emit_report(report, results, out, config.verbose)


def cmd_report(args) -> int:
    windows = json.loads(Path(args.windows_file).read_text())
    results = [bt.window_result_from_dict(d) for d in windows]
    report = bt.aggregate_metrics(results)
    return _emit_report(report, None, Path(args.out_dir), verbose=False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regimeopt",
        description="Market-state clustering and state-aware portfolio backtesting",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic price panel")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--assets", type=int, default=20)
    p.add_argument("--days", type=int, default=2520)
    p.add_argument("--persistence", type=float, default=30.0)
    p.add_argument("--distribution", choices=["normal", "student_t"], default="normal")
    p.add_argument("--nu", type=float, default=5.0)
    p.add_argument("--mean-sep", type=float, default=0.002)
    p.add_argument("--vol", type=float, default=0.01)
    p.add_argument("--corr", type=float, default=0.2)
    p.add_argument("--vol-step", type=float, default=0.0,
                   help="relative volatility increase per regime index")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=_default_out_dir())
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cluster", help="run one clustering fit on a data window")
    p.add_argument("--data", required=True)
    p.add_argument("--date-column", default="date")
    p.add_argument("--train-start", type=int, default=None)
    p.add_argument("--train-days", type=int, default=None)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--gain", choices=["euclidean", "normal", "student_t", "hybrid"],
                   default="student_t")
    p.add_argument("--nu", type=float, default=5.0)
    p.add_argument("--c1", type=float, default=0.5)
    p.add_argument("--c2", type=float, default=0.5)
    p.add_argument("--gamma", default="auto", help="switching penalty, or 'auto'")
    p.add_argument("--target-persistence", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=_default_out_dir())
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("backtest", help="run the resampled experiment")
    p.add_argument("--config", help="TOML config file; flags override its values")
    p.add_argument("--data", default=None)
    p.add_argument("--train-days", type=int, nargs="*", default=None)
    p.add_argument("--test-days", type=int, default=None)
    p.add_argument("--windows", type=int, default=None)
    p.add_argument("--gain", choices=["euclidean", "normal", "student_t", "hybrid"],
                   default=None)
    p.add_argument("--criterion", choices=["max_sharpe", "target_return"], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sweep", action="store_true",
                   help="train-length sweep over the --train-days values")
    p.add_argument("--verbose", action="store_true",
                   help="also write per-window results (windows.json)")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("report", help="re-aggregate saved per-window results")
    p.add_argument("--windows-file", required=True)
    p.add_argument("--out-dir", default=_default_out_dir())
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, tomllib.TOMLDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (EstimationError, FeasibilityError, CalibrationError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except RegimeOptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
