"""Resampled train/test backtest across solvers and market-state inputs.

For every sampled window: calibrate the switching penalty, cluster the train
period into two states, label them by end-of-train prevalence, build portfolio
inputs for the whole train set (dense and sparse covariance) and for each
state (sparse), optimize with every configured solver plus the equal-weight
benchmark, then score the fixed weights on the test horizon and record the
per-day likelihood gains of the state models over the whole-train model.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .clustering import (
    GainParams,
    assign_clusters,
    calibrate_gamma,
    fit_state,
    state_gains,
)
from .data import ReturnsPanel, WindowSplit, compute_log_returns, load_prices, sample_windows, select_assets
from .errors import RegimeOptError, ValidationError
from .forecast import label_states
from .network import logo_precision
from .optimize import PortfolioInputs, PortfolioWeights, naive_weights, select_portfolio

TRADING_DAYS = 252
STATES = ("Full", "Sparse", "Sparse0", "Sparse1")
METRICS = ("ann_return", "ann_volatility", "sharpe")


@dataclass
class ExperimentConfig:
    data_path: str | None = None
    date_column: str = "date"
    caps_path: str | None = None
    select_mode: str | None = None  # top_cap | random
    select_count: int | None = None
    train_days: int = 252
    test_days: int = 30
    n_windows: int = 100
    n_states: int = 2
    gain: str = "student_t"
    nu: float = 5.0
    c1: float = 0.5
    c2: float = 0.5
    prevalence_window: int = 20
    target_persistence: float = 30.0
    gamma_grid: list | None = None
    solvers: tuple = ("SLS", "CLA")
    criterion: str = "max_sharpe"
    target_return: float | None = None
    seed: int = 0
    max_iter: int = 30
    restarts: int = 3
    min_cluster_size: int | None = None
    penalize_stay: bool = False
    literal_annualization: bool = False  # sqrt(252) on mean return, as well
    output_dir: str = "out"
    verbose: bool = False

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        d["solvers"] = list(self.solvers)
        return d


@dataclass
class EvalResult:
    daily: np.ndarray
    ann_return: float
    ann_volatility: float
    sharpe: float | None  # None when the daily series has zero variance


@dataclass
class WindowResult:
    window: WindowSplit
    gamma_used: float
    sparse0: int
    cells: dict = field(default_factory=dict)  # (solver, state) -> EvalResult
    failures: dict = field(default_factory=dict)  # (solver, state) -> reason
    gain_sparse0: np.ndarray | None = None  # per-test-day gain vs whole-train model
    gain_sparse1: np.ndarray | None = None
    error: str | None = None


@dataclass
class BacktestReport:
    cells: dict  # "solver|state" -> metric -> {mean, p5, p95, std, n, n_undefined}
    likelihood_gains: dict  # {"sparse0": [...], "sparse1": [...]} day-aligned means
    failure_counts: dict
    unreliable: list
    n_windows: int
    n_failed_windows: int
    config: dict

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)


def evaluate_portfolio(
    weights, test: np.ndarray, literal_annualization: bool = False
) -> EvalResult:
    """Score fixed weights on a test slice of daily returns."""
    w = weights.weights if isinstance(weights, PortfolioWeights) else np.asarray(weights, float)
    test = np.asarray(test, float)
    if test.ndim != 2 or test.shape[0] < 1:
        raise ValidationError("test slice must be a non-empty 2-D array")
    if test.shape[1] != w.size:
        raise ValidationError("weights dimension does not match test assets")
    daily = test @ w
    mean = float(daily.mean())
    std = float(daily.std(ddof=1)) if daily.size > 1 else 0.0
    # a constant series can pick up O(eps) noise from the weighted sum
    if std <= 1e-14 * max(abs(mean), 1.0):
        std = 0.0
    factor = np.sqrt(TRADING_DAYS) if literal_annualization else TRADING_DAYS
    ann_return = factor * mean
    ann_vol = float(np.sqrt(TRADING_DAYS) * std)
    sharpe = None if std == 0.0 else float(np.sqrt(TRADING_DAYS) * mean / std)
    return EvalResult(daily=daily, ann_return=float(ann_return), ann_volatility=ann_vol, sharpe=sharpe)


def likelihood_gain_series(
    sparse0_state, sparse1_state, full_state, test: np.ndarray,
    gain_kind: str, params: GainParams,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-test-day gain of each state model relative to the whole-train model."""
    g_full = state_gains(test, full_state, gain_kind, params)
    g0 = state_gains(test, sparse0_state, gain_kind, params)
    g1 = state_gains(test, sparse1_state, gain_kind, params)
    return g0 - g_full, g1 - g_full


def _portfolio_inputs(train: np.ndarray, states, labeling, params):
    """Inputs per state tag.  Sparse tags expose the LoGo precision and its
    dense inverse where the solvers need the covariance itself."""
    inputs = {}
    mean = train.mean(axis=0)
    centered = train - mean
    cov = centered.T @ centered / train.shape[0]
    inputs["Full"] = PortfolioInputs(mu=mean, sigma=cov, source_tag="Full")

    whole = fit_state(train, np.arange(train.shape[0]), "normal", params)
    j_whole = logo_precision(whole.covariance, whole.network)
    inputs["Sparse"] = PortfolioInputs(
        mu=mean, sigma=np.linalg.inv(j_whole.matrix), source_tag="Sparse",
        precision=j_whole.matrix,
    )
    for tag, idx in (("Sparse0", labeling.sparse0), ("Sparse1", labeling.sparse1)):
        st = states[idx]
        j = logo_precision(st.covariance, st.network)
        inputs[tag] = PortfolioInputs(
            mu=st.mean, sigma=np.linalg.inv(j.matrix), source_tag=tag,
            precision=j.matrix,
        )
    return inputs


def run_window(panel_returns: np.ndarray, window: WindowSplit, config: ExperimentConfig, seed: int) -> WindowResult:
    """Cluster, label, optimize and evaluate one train/test window."""
    params = GainParams(nu=config.nu, c1=config.c1, c2=config.c2)
    train = panel_returns[window.train_start : window.train_end + 1]
    test = panel_returns[window.test_start : window.test_end + 1]
    assign_kwargs = dict(
        max_iter=config.max_iter,
        restarts=config.restarts,
        min_cluster_size=config.min_cluster_size,
        penalize_stay=config.penalize_stay,
    )
    try:
        gamma = calibrate_gamma(
            train, config.n_states, config.gain, params,
            target_persistence=config.target_persistence,
            grid=config.gamma_grid, seed=seed, **assign_kwargs,
        )
        assignment, states = assign_clusters(
            train, config.n_states, config.gain, params, gamma=gamma, seed=seed,
            **assign_kwargs,
        )
        labeling = label_states(assignment, config.prevalence_window)
        full_state = fit_state(train, np.arange(train.shape[0]), config.gain, params)
        inputs = _portfolio_inputs(train, states, labeling, params)
    except (RegimeOptError, np.linalg.LinAlgError) as exc:
        return WindowResult(
            window=window, gamma_used=float("nan"), sparse0=-1,
            error=f"{type(exc).__name__}: {exc}",
        )

    result = WindowResult(window=window, gamma_used=float(gamma), sparse0=labeling.sparse0)
    for solver in config.solvers:
        for tag in STATES:
            try:
                chosen = select_portfolio(
                    inputs[tag], solver, config.criterion, config.target_return
                )
                result.cells[(solver, tag)] = evaluate_portfolio(
                    chosen, test, config.literal_annualization
                )
            except (RegimeOptError, np.linalg.LinAlgError) as exc:
                result.failures[(solver, tag)] = f"{type(exc).__name__}: {exc}"
    result.cells[("naive", "Naive")] = evaluate_portfolio(
        naive_weights(train.shape[1]), test, config.literal_annualization
    )

    g0, g1 = likelihood_gain_series(
        states[labeling.sparse0], states[labeling.sparse1], full_state,
        test, config.gain, params,
    )
    result.gain_sparse0 = g0
    result.gain_sparse1 = g1
    return result


def aggregate_metrics(results: list[WindowResult], config: ExperimentConfig | None = None) -> BacktestReport:
    """Mean plus empirical 5th/95th percentiles per (solver, state) cell."""
    ok = [r for r in results if r.error is None]
    cell_keys = sorted({k for r in ok for k in r.cells}) if ok else []
    cells, failure_counts, unreliable = {}, {}, []
    for key in cell_keys:
        solver, tag = key
        name = f"{solver}|{tag}"
        values = [r.cells[key] for r in ok if key in r.cells]
        n_fail = sum(1 for r in ok if key in r.failures) + sum(
            1 for r in results if r.error is not None
        )
        failure_counts[name] = n_fail
        if not values:
            unreliable.append(name)
            continue
        if n_fail > len(results) / 2:
            unreliable.append(name)
        metrics = {}
        for metric, getter in (
            ("ann_return", lambda e: e.ann_return),
            ("ann_volatility", lambda e: e.ann_volatility),
            ("sharpe", lambda e: e.sharpe),
        ):
            raw = [getter(e) for e in values]
            defined = np.array([v for v in raw if v is not None], float)
            entry = {"n": len(defined), "n_undefined": len(raw) - len(defined)}
            if len(defined):
                entry.update(
                    mean=float(defined.mean()),
                    p5=float(np.percentile(defined, 5)),
                    p95=float(np.percentile(defined, 95)),
                    std=float(defined.std(ddof=1)) if len(defined) > 1 else 0.0,
                )
            metrics[metric] = entry
        cells[name] = metrics

    gains = {"sparse0": [], "sparse1": []}
    with_gains = [r for r in ok if r.gain_sparse0 is not None]
    if with_gains:
        g0 = np.mean([r.gain_sparse0 for r in with_gains], axis=0)
        g1 = np.mean([r.gain_sparse1 for r in with_gains], axis=0)
        gains = {"sparse0": [float(v) for v in g0], "sparse1": [float(v) for v in g1]}

    return BacktestReport(
        cells=cells,
        likelihood_gains=gains,
        failure_counts=failure_counts,
        unreliable=sorted(unreliable),
        n_windows=len(results),
        n_failed_windows=sum(1 for r in results if r.error is not None),
        config=config.echo() if config is not None else {},
    )


def window_result_to_dict(result: WindowResult) -> dict:
    """JSON-friendly form of a WindowResult (used by verbose dumps)."""
    return {
        "window": dataclasses.asdict(result.window),
        "gamma_used": result.gamma_used,
        "sparse0": result.sparse0,
        "error": result.error,
        "cells": {
            f"{solver}|{tag}": {
                "daily": [float(v) for v in ev.daily],
                "ann_return": ev.ann_return,
                "ann_volatility": ev.ann_volatility,
                "sharpe": ev.sharpe,
            }
            for (solver, tag), ev in result.cells.items()
        },
        "failures": {f"{solver}|{tag}": msg for (solver, tag), msg in result.failures.items()},
        "gain_sparse0": None if result.gain_sparse0 is None else [float(v) for v in result.gain_sparse0],
        "gain_sparse1": None if result.gain_sparse1 is None else [float(v) for v in result.gain_sparse1],
    }


def window_result_from_dict(d: dict) -> WindowResult:
    cells = {}
    for key, ev in d["cells"].items():
        solver, tag = key.split("|", 1)
        cells[(solver, tag)] = EvalResult(
            daily=np.array(ev["daily"], float),
            ann_return=ev["ann_return"],
            ann_volatility=ev["ann_volatility"],
            sharpe=ev["sharpe"],
        )
    failures = {tuple(k.split("|", 1)): v for k, v in d["failures"].items()}
    return WindowResult(
        window=WindowSplit(**d["window"]),
        gamma_used=d["gamma_used"],
        sparse0=d["sparse0"],
        cells=cells,
        failures=failures,
        gain_sparse0=None if d["gain_sparse0"] is None else np.array(d["gain_sparse0"], float),
        gain_sparse1=None if d["gain_sparse1"] is None else np.array(d["gain_sparse1"], float),
        error=d["error"],
    )


def _load_panel(config: ExperimentConfig) -> ReturnsPanel:
    if config.data_path is None:
        raise ValidationError("experiment config names no data source")
    panel = load_prices(config.data_path, date_column=config.date_column, caps_path=config.caps_path)
    if config.select_mode is not None:
        panel = select_assets(panel, config.select_mode, config.select_count, seed=config.seed)
    return compute_log_returns(panel)


def run_experiment(config: ExperimentConfig, panel: ReturnsPanel | None = None):
    """Full resampled experiment; returns (report, window results)."""
    if panel is None:
        panel = _load_panel(config)
    windows = sample_windows(
        panel, config.train_days, config.test_days, config.n_windows, seed=config.seed
    )
    seeds = np.random.default_rng(np.random.SeedSequence(config.seed)).integers(
        0, 2**31 - 1, size=len(windows)
    )
    results = [
        run_window(panel.returns, w, config, int(s)) for w, s in zip(windows, seeds)
    ]
    return aggregate_metrics(results, config), results


def train_length_sweep(config: ExperimentConfig, lengths, panel: ReturnsPanel | None = None) -> dict:
    """run_experiment per train length; absolute and Sparse0/Full-relative Sharpe."""
    if panel is None:
        panel = _load_panel(config)
    table = {}
    for length in lengths:
        cfg = dataclasses.replace(config, train_days=int(length))
        report, _ = run_experiment(cfg, panel=panel)
        row = {}
        for name, metrics in report.cells.items():
            sharpe = metrics.get("sharpe", {})
            row[name] = {"mean": sharpe.get("mean"), "std": sharpe.get("std")}
        for solver in config.solvers:
            full = row.get(f"{solver}|Full", {}).get("mean")
            s0 = row.get(f"{solver}|Sparse0", {}).get("mean")
            if full and s0 is not None:
                row[f"{solver}|relative_sparse0_full"] = s0 / full
        table[int(length)] = row
    return table
