"""Synthetic regime-switching generator."""

import numpy as np
import pytest

from regimeopt.errors import ValidationError
from regimeopt.synth import RegimeSpec, generate


def _basic_spec(**overrides):
    defaults = dict(
        means=np.array([[0.001, -0.001], [-0.002, 0.002]]),
        covariances=np.array([np.eye(2) * 1e-4, np.eye(2) * 2e-4]),
        persistence=20.0,
        n_days=400,
        seed=3,
    )
    defaults.update(overrides)
    return RegimeSpec(**defaults)


def test_generate_is_deterministic():
    a, la = generate(_basic_spec())
    b, lb = generate(_basic_spec())
    assert np.array_equal(a.returns, b.returns)
    assert np.array_equal(la, lb)


def test_generate_seed_changes_output():
    a, _ = generate(_basic_spec())
    b, _ = generate(_basic_spec(seed=4))
    assert not np.array_equal(a.returns, b.returns)


def test_labels_follow_requested_persistence():
    spec = _basic_spec(n_days=60000, persistence=25.0)
    _, labels = generate(spec)
    switches = int((labels[1:] != labels[:-1]).sum())
    observed = len(labels) / (switches + 1)
    assert observed == pytest.approx(25.0, rel=0.1)


def test_normal_moments_match_spec():
    n = 4
    mean = np.array([0.002, -0.001, 0.0005, 0.0])
    cov = np.array(
        [[2.0, 0.3, 0.1, 0.0],
         [0.3, 1.5, 0.2, 0.1],
         [0.1, 0.2, 1.0, 0.05],
         [0.0, 0.1, 0.05, 0.8]]
    ) * 1e-4
    spec = RegimeSpec(
        means=mean[None, :], covariances=cov[None, :, :],
        persistence=10.0, n_days=120000, seed=5,
    )
    panel, labels = generate(spec)
    assert set(np.unique(labels)) == {0}
    emp_mean = panel.returns.mean(axis=0)
    emp_cov = np.cov(panel.returns, rowvar=False)
    assert np.allclose(emp_mean, mean, atol=4e-5)
    assert np.allclose(emp_cov, cov, rtol=0.05, atol=2e-6)


def test_student_t_covariance_is_scaled_scale_matrix():
    # sampled covariance converges to nu/(nu-2) times the scale matrix
    nu = 6.0
    scale = np.eye(3) * 1e-4
    spec = RegimeSpec(
        means=np.zeros((1, 3)), covariances=scale[None], persistence=10.0,
        n_days=200000, distribution="student_t", nu=nu, seed=8,
    )
    panel, _ = generate(spec)
    emp_cov = np.cov(panel.returns, rowvar=False)
    assert np.allclose(emp_cov, scale * nu / (nu - 2.0), rtol=0.08, atol=2e-6)


def test_student_t_has_heavier_tails_than_normal():
    normal, _ = generate(_basic_spec(n_days=20000))
    heavy, _ = generate(_basic_spec(n_days=20000, distribution="student_t", nu=3.0))
    assert np.abs(heavy.returns).max() > np.abs(normal.returns).max()


def test_generate_panel_metadata():
    panel, labels = generate(_basic_spec(n_days=50))
    assert panel.n_days == 50
    assert panel.n_assets == 2
    assert len(labels) == 50
    assert panel.assets == ("A000", "A001")
    assert np.all(np.diff(panel.dates.astype(np.int64)) > 0)


def test_all_regimes_are_visited():
    _, labels = generate(_basic_spec(n_days=5000, persistence=5.0))
    assert set(np.unique(labels)) == {0, 1}


@pytest.mark.parametrize(
    "overrides",
    [
        dict(persistence=0.5),
        dict(n_days=0),
        dict(distribution="cauchy"),
        dict(distribution="student_t", nu=2.0),
        dict(covariances=np.array([np.eye(3) * 1e-4, np.eye(3) * 1e-4])),
        dict(covariances=np.array([[[1.0, 2.0], [0.5, 1.0]]] * 2) * 1e-4),
        dict(covariances=np.array([-np.eye(2), np.eye(2)]) * 1e-4),
    ],
)
def test_invalid_specs_are_rejected(overrides):
    with pytest.raises(ValidationError):
        _basic_spec(**overrides)
