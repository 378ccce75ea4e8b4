"""Scikit-learn style estimator wrapping the penalized state clustering."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .clustering import (
    GainParams,
    assign_clusters,
    calibrate_gamma,
    gain_matrix,
)


class InverseCovarianceClustering(ClusterMixin, BaseEstimator):
    """Temporal market-state clustering with a switching penalty.

    Parameters mirror the functional API: `gamma=None` triggers a grid-search
    calibration targeting `target_persistence` days of average run length.

    Attributes set by fit: `labels_`, `states_`, `assignment_`, `gamma_`.
    """

    def __init__(
        self,
        n_states=2,
        gain="student_t",
        nu=5.0,
        c1=0.5,
        c2=0.5,
        gamma=None,
        target_persistence=30.0,
        gamma_grid=None,
        max_iter=30,
        n_restarts=3,
        penalize_stay=False,
        random_state=0,
    ):
        self.n_states = n_states
        self.gain = gain
        self.nu = nu
        self.c1 = c1
        self.c2 = c2
        self.gamma = gamma
        self.target_persistence = target_persistence
        self.gamma_grid = gamma_grid
        self.max_iter = max_iter
        self.n_restarts = n_restarts
        self.penalize_stay = penalize_stay
        self.random_state = random_state

    def _params(self) -> GainParams:
        return GainParams(nu=self.nu, c1=self.c1, c2=self.c2)

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=2)
        params = self._params()
        common = dict(
            max_iter=self.max_iter,
            restarts=self.n_restarts,
            penalize_stay=self.penalize_stay,
        )
        gamma = self.gamma
        if gamma is None:
            gamma = calibrate_gamma(
                X,
                self.n_states,
                self.gain,
                params,
                target_persistence=self.target_persistence,
                grid=self.gamma_grid,
                seed=self.random_state,
                **common,
            )
        assignment, states = assign_clusters(
            X, self.n_states, self.gain, params, gamma=gamma,
            seed=self.random_state, **common,
        )
        self.gamma_ = float(gamma)
        self.assignment_ = assignment
        self.states_ = states
        self.labels_ = assignment.labels
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        """Unpenalized per-observation argmax against the fitted states."""
        check_is_fitted(self, "states_")
        X = check_array(X, dtype=np.float64)
        gains = gain_matrix(X, self.states_, self.gain, self._params())
        return np.argmax(gains, axis=1)
