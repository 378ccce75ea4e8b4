"""Evaluation arithmetic, aggregation and the windowed experiment driver."""

import dataclasses
import json

import numpy as np
import pytest

from regimeopt.backtest import (
    EvalResult,
    ExperimentConfig,
    WindowResult,
    aggregate_metrics,
    evaluate_portfolio,
    likelihood_gain_series,
    run_experiment,
    run_window,
    train_length_sweep,
    window_result_from_dict,
    window_result_to_dict,
)
from regimeopt.clustering import GainParams, fit_state, state_gains
from regimeopt.data import WindowSplit, sample_windows
from regimeopt.errors import ValidationError


@pytest.fixture(scope="module")
def small_config():
    return ExperimentConfig(
        train_days=150,
        test_days=15,
        n_windows=4,
        target_persistence=40.0,
        gamma_grid=[0.5, 2.0],
        solvers=("CLA",),
        seed=7,
    )


# --- evaluation arithmetic -----------------------------------------------


def test_constant_series_hand_computed():
    # constant daily 0.001 over 30 days
    test = np.full((30, 2), 0.001)
    ev = evaluate_portfolio(np.array([0.5, 0.5]), test)
    assert ev.ann_return == pytest.approx(0.252, abs=1e-12)
    assert ev.ann_volatility == 0.0
    assert ev.sharpe is None


def test_alternating_series_hand_computed():
    # +-0.01 alternating over 30 days: mean 0, sample std sqrt(30/29)*0.01
    daily = np.array([0.01 if t % 2 == 0 else -0.01 for t in range(30)])
    ev = evaluate_portfolio(np.ones(1), daily[:, None])
    expected_std = np.sqrt(30.0 / 29.0) * 0.01
    assert expected_std == pytest.approx(0.01017, abs=1e-5)
    assert ev.ann_return == pytest.approx(0.0, abs=1e-12)
    assert ev.ann_volatility == pytest.approx(np.sqrt(252) * expected_std, abs=1e-12)
    assert ev.sharpe == pytest.approx(0.0, abs=1e-12)


def test_general_series_matches_numpy(rng):
    test = rng.normal(0.0005, 0.01, size=(30, 4))
    w = np.array([0.1, 0.2, 0.3, 0.4])
    ev = evaluate_portfolio(w, test)
    daily = test @ w
    assert np.allclose(ev.daily, daily)
    assert ev.ann_return == pytest.approx(252 * daily.mean(), abs=1e-15)
    assert ev.ann_volatility == pytest.approx(
        np.sqrt(252) * daily.std(ddof=1), abs=1e-15
    )
    assert ev.sharpe == pytest.approx(
        np.sqrt(252) * daily.mean() / daily.std(ddof=1), abs=1e-12
    )


def test_literal_annualization_flag(rng):
    test = rng.normal(0.001, 0.01, size=(20, 3))
    w = np.full(3, 1 / 3)
    literal = evaluate_portfolio(w, test, literal_annualization=True)
    standard = evaluate_portfolio(w, test)
    daily = test @ w
    assert literal.ann_return == pytest.approx(np.sqrt(252) * daily.mean(), abs=1e-15)
    assert literal.ann_volatility == standard.ann_volatility
    assert literal.sharpe == standard.sharpe


def test_evaluate_portfolio_validation(rng):
    with pytest.raises(ValidationError):
        evaluate_portfolio(np.ones(3), np.ones((10, 2)))
    with pytest.raises(ValidationError):
        evaluate_portfolio(np.ones(2), np.ones(10))


# --- likelihood gains ----------------------------------------------------


def test_likelihood_gain_series_is_difference_of_state_gains(rng):
    x = rng.normal(0.0, 0.01, size=(200, 5))
    params = GainParams(nu=5.0)
    s0 = fit_state(x, np.arange(0, 90), "student_t", params)
    s1 = fit_state(x, np.arange(90, 200), "student_t", params)
    full = fit_state(x, np.arange(200), "student_t", params)
    test = rng.normal(0.0, 0.01, size=(30, 5))
    g0, g1 = likelihood_gain_series(s0, s1, full, test, "student_t", params)
    base = state_gains(test, full, "student_t", params)
    assert np.allclose(g0, state_gains(test, s0, "student_t", params) - base)
    assert np.allclose(g1, state_gains(test, s1, "student_t", params) - base)


# --- aggregation ---------------------------------------------------------


def _window(offset=0):
    return WindowSplit(
        train_start=offset, train_end=offset + 99, test_start=offset + 100,
        test_end=offset + 109, train_days=100, test_days=10,
    )


def _result_with_sharpe(sharpe, offset=0):
    ev = EvalResult(daily=np.zeros(10), ann_return=0.1, ann_volatility=0.2, sharpe=sharpe)
    return WindowResult(
        window=_window(offset), gamma_used=1.0, sparse0=0,
        cells={("CLA", "Full"): ev},
    )


def test_aggregate_percentiles_match_linear_interpolation():
    results = [_result_with_sharpe(float(v), offset=v) for v in range(1, 101)]
    report = aggregate_metrics(results)
    cell = report.cells["CLA|Full"]["sharpe"]
    assert cell["p5"] == pytest.approx(5.95)
    assert cell["p95"] == pytest.approx(95.05)
    assert cell["mean"] == pytest.approx(50.5)
    assert cell["std"] == pytest.approx(np.std(np.arange(1, 101), ddof=1))
    assert cell["n"] == 100


def test_aggregate_counts_undefined_sharpe():
    results = [_result_with_sharpe(1.0), _result_with_sharpe(None, offset=1)]
    report = aggregate_metrics(results)
    cell = report.cells["CLA|Full"]["sharpe"]
    assert cell["n"] == 1
    assert cell["n_undefined"] == 1


def test_aggregate_flags_unreliable_cells():
    good = [_result_with_sharpe(1.0, offset=i) for i in range(2)]
    failed = []
    for i in range(3):
        r = WindowResult(window=_window(10 + i), gamma_used=float("nan"),
                         sparse0=-1, error="EstimationError: boom")
        failed.append(r)
    report = aggregate_metrics(good + failed)
    assert report.n_failed_windows == 3
    assert "CLA|Full" in report.unreliable  # 3 of 5 windows failed


def test_window_result_dict_roundtrip(rng):
    ev = EvalResult(
        daily=rng.standard_normal(10), ann_return=0.3, ann_volatility=0.2, sharpe=1.5
    )
    result = WindowResult(
        window=_window(), gamma_used=2.5, sparse0=1,
        cells={("SLS", "Sparse0"): ev},
        failures={("CLA", "Sparse1"): "FeasibilityError: no"},
        gain_sparse0=rng.standard_normal(10),
        gain_sparse1=rng.standard_normal(10),
    )
    back = window_result_from_dict(window_result_to_dict(result))
    assert back.window == result.window
    assert back.sparse0 == result.sparse0
    assert back.failures == result.failures
    assert np.allclose(back.cells[("SLS", "Sparse0")].daily, ev.daily)
    assert np.allclose(back.gain_sparse0, result.gain_sparse0)


# --- experiment driver ---------------------------------------------------


def test_run_window_produces_all_cells(two_regime_panel, small_config):
    panel, _ = two_regime_panel
    window = sample_windows(panel, 150, 15, 1, seed=3)[0]
    result = run_window(panel.returns, window, small_config, seed=5)
    assert result.error is None
    tags = {tag for (_, tag) in result.cells}
    assert tags == {"Full", "Sparse", "Sparse0", "Sparse1", "Naive"}
    assert result.gamma_used in small_config.gamma_grid
    assert result.sparse0 in (0, 1)
    assert result.gain_sparse0.shape == (15,)
    naive = result.cells[("naive", "Naive")]
    assert np.allclose(
        naive.daily,
        panel.returns[window.test_start : window.test_end + 1].mean(axis=1),
    )


def test_run_window_isolates_failures(two_regime_panel, small_config):
    panel, _ = two_regime_panel
    window = sample_windows(panel, 150, 15, 1, seed=3)[0]
    config = dataclasses.replace(
        small_config, criterion="target_return", target_return=10.0
    )  # unattainable daily return: every solver cell fails, window survives
    result = run_window(panel.returns, window, config, seed=5)
    assert result.error is None
    assert len(result.failures) == 4
    assert ("naive", "Naive") in result.cells


def test_run_experiment_deterministic(two_regime_panel, small_config):
    panel, _ = two_regime_panel
    a, _ = run_experiment(small_config, panel=panel)
    b, _ = run_experiment(small_config, panel=panel)
    assert json.dumps(a.to_json_dict(), sort_keys=True) == json.dumps(
        b.to_json_dict(), sort_keys=True
    )


def test_run_experiment_report_shape(two_regime_panel, small_config):
    panel, _ = two_regime_panel
    report, results = run_experiment(small_config, panel=panel)
    assert report.n_windows == 4
    assert len(results) == 4
    assert len(report.likelihood_gains["sparse0"]) == 15
    assert report.config["train_days"] == 150
    for name in ("CLA|Full", "CLA|Sparse", "CLA|Sparse0", "CLA|Sparse1", "naive|Naive"):
        assert name in report.cells


def test_train_length_sweep(two_regime_panel, small_config):
    panel, _ = two_regime_panel
    config = dataclasses.replace(small_config, n_windows=2)
    table = train_length_sweep(config, [120, 150], panel=panel)
    assert set(table) == {120, 150}
    for row in table.values():
        assert "CLA|Full" in row
        assert "CLA|relative_sparse0_full" in row


def test_config_echo_is_json_safe(small_config):
    json.dumps(small_config.echo())
