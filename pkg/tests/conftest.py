"""Shared fixtures for the test suite."""

import numpy as np
import pytest

from regimeopt import RegimeSpec, generate


def make_spd(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random well-conditioned symmetric positive-definite matrix."""
    a = rng.standard_normal((n + 5, n))
    return a.T @ a / (n + 5) + 0.05 * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def two_regime_panel():
    """Well-separated two-regime panel with ground-truth labels (8 assets)."""
    n = 8
    m0 = np.where(np.arange(n) < n // 2, 0.012, -0.012)
    cov = (np.full((n, n), 0.3) + 0.7 * np.eye(n)) * 0.008**2
    spec = RegimeSpec(
        means=np.array([m0, -m0]),
        covariances=np.array([cov, cov * 2.0]),
        persistence=40.0,
        n_days=600,
        distribution="student_t",
        nu=5.0,
        seed=77,
    )
    panel, labels = generate(spec)
    return panel, labels


@pytest.fixture
def prices_csv(tmp_path, rng):
    """Small wide-format price CSV on disk."""
    t, n = 60, 5
    returns = rng.normal(0.0005, 0.01, size=(t, n))
    prices = 100.0 * np.exp(np.vstack([np.zeros(n), np.cumsum(returns, axis=0)]))
    dates = np.datetime64("2015-01-01") + np.arange(t + 1)
    path = tmp_path / "prices.csv"
    header = "date," + ",".join(f"S{i}" for i in range(n))
    rows = [header]
    for d, row in zip(dates, prices):
        rows.append(str(d) + "," + ",".join(f"{p:.10f}" for p in row))
    path.write_text("\n".join(rows) + "\n")
    return path
