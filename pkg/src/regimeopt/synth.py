"""Regime-switching synthetic return generator with known ground-truth labels.

Labels follow a first-order Markov chain with stay probability 1 - 1/persistence,
so segment lengths are geometric with the requested mean.  Within a regime,
returns are multivariate normal or multivariate Student-t (normal scaled by
sqrt(nu / chi2_nu)).  For the Student-t the per-regime matrix is the scale
(dispersion) matrix; the sampled covariance converges to nu/(nu-2) times it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ReturnsPanel
from .errors import ValidationError


@dataclass(frozen=True)
class RegimeSpec:
    means: np.ndarray  # (K, n) daily mean returns per regime
    covariances: np.ndarray  # (K, n, n); scale matrices under student_t
    persistence: float  # expected segment length in days
    n_days: int
    distribution: str = "normal"  # "normal" | "student_t"
    nu: float = 5.0
    seed: int = 0
    start_date: str = "2000-01-03"

    k: int = field(init=False, default=0)

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, float))
        covs = np.asarray(self.covariances, float)
        if covs.ndim == 2:
            covs = covs[None, :, :]
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)
        object.__setattr__(self, "k", means.shape[0])
        if covs.shape[0] != self.k or covs.shape[1] != covs.shape[2]:
            raise ValidationError("covariance stack must be (K, n, n)")
        if means.shape[1] != covs.shape[1]:
            raise ValidationError("mean/covariance dimension mismatch")
        if self.persistence < 1:
            raise ValidationError("persistence must be >= 1")
        if self.n_days < 1:
            raise ValidationError("n_days must be >= 1")
        if self.distribution not in ("normal", "student_t"):
            raise ValidationError(f"unknown distribution {self.distribution!r}")
        if self.distribution == "student_t" and self.nu <= 2:
            raise ValidationError("student_t requires nu > 2")
        for j, cov in enumerate(covs):
            if not np.allclose(cov, cov.T, atol=1e-12):
                raise ValidationError(f"regime {j} covariance is not symmetric")
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise ValidationError(f"regime {j} covariance is not positive definite")


def generate(spec: RegimeSpec) -> tuple[ReturnsPanel, np.ndarray]:
    """Draw a labeled regime-switching return panel, reproducible under seed."""
    rng = np.random.default_rng(spec.seed)
    k, t, n = spec.k, spec.n_days, spec.means.shape[1]

    labels = np.empty(t, dtype=np.int64)
    labels[0] = rng.integers(0, k)
    stay = 1.0 - 1.0 / spec.persistence
    u = rng.random(t)
    jumps = rng.integers(0, max(k - 1, 1), size=t)
    for i in range(1, t):
        if k > 1 and u[i] >= stay:
            # jump to a uniformly chosen *other* regime
            j = jumps[i]
            labels[i] = j if j < labels[i - 1] else j + 1
        else:
            labels[i] = labels[i - 1]

    z = rng.standard_normal((t, n))
    chols = np.linalg.cholesky(spec.covariances)
    returns = np.einsum("kij,tj->tik", chols, z)[np.arange(t), :, labels]
    returns += spec.means[labels]
    if spec.distribution == "student_t":
        chi = rng.chisquare(spec.nu, size=t)
        returns = spec.means[labels] + (returns - spec.means[labels]) * np.sqrt(
            spec.nu / chi
        )[:, None]

    dates = np.datetime64(spec.start_date, "D") + np.arange(t)
    assets = tuple(f"A{i:03d}" for i in range(n))
    return ReturnsPanel(dates=dates, assets=assets, returns=returns), labels
