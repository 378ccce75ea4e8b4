"""Temporal clustering of return observations into market states.

Each day is assigned to the state with the largest gain (a likelihood-style
score against the state's fitted mean and sparse precision) minus a penalty
gamma paid when the label differs from the previous day's.  Assignment is an
iterative coordinate scheme: sweep forward in time, reassign each observation,
update state means incrementally, and refit covariances / TMFG / LoGo
precisions once per sweep until no label changes.

Note on the penalty sign: with the default `penalize_stay=False` the penalty
is charged on *switching* states, which is what makes average persistence grow
with gamma.  `penalize_stay=True` charges the Kronecker-delta term on staying
instead and is kept only as a configuration switch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .data import ReturnsPanel
from .errors import CalibrationError, EstimationError, ValidationError
from .network import FilteringNetwork, build_tmfg, logo_log_det, logo_precision

GAIN_KINDS = ("euclidean", "normal", "student_t", "hybrid")
_KIND_CODE = {k: i for i, k in enumerate(GAIN_KINDS)}


@dataclass(frozen=True)
class GainParams:
    nu: float = 5.0  # Student-t degrees of freedom
    c1: float = 0.5  # hybrid: weight of the log-det (entropy) term
    c2: float = 0.5  # hybrid: weight of the squared-distance term

    def __post_init__(self):
        if self.nu <= 2:
            raise ValidationError("nu must be > 2")
        if self.c1 < 0 or self.c2 < 0:
            raise ValidationError("hybrid coefficients must be >= 0")


@dataclass
class StateModel:
    """Sample statistics of one state's member days plus its sparse precision.

    Under a Student-t gain (`scale_adjusted=True`) `precision` and
    `log_det_precision` refer to the inverse of the scale matrix
    (1 - 2/nu) * covariance rather than of the covariance itself.
    """

    mean: np.ndarray
    covariance: np.ndarray
    precision: np.ndarray
    log_det_precision: float
    members: np.ndarray
    scale_adjusted: bool = False
    network: FilteringNetwork | None = None
    ridge_events: tuple = ()

    @property
    def n_assets(self) -> int:
        return len(self.mean)


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    n_states: int
    gamma: float
    gain_kind: str
    params: GainParams
    iterations_run: int
    converged: bool
    seed: int
    diagnostics: dict = field(default_factory=dict)


def _sample_cov(x: np.ndarray) -> np.ndarray:
    centered = x - x.mean(axis=0)
    return centered.T @ centered / x.shape[0]


def _squared_correlation(x: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.corrcoef(x, rowvar=False)
    corr = np.nan_to_num(corr, nan=0.0)
    return corr * corr


def fit_state(
    x: np.ndarray,
    members: np.ndarray,
    gain_kind: str = "student_t",
    params: GainParams | None = None,
) -> StateModel:
    """Fit mean, ML covariance and TMFG-LoGo precision on the member rows."""
    params = params or GainParams()
    members = np.asarray(members, dtype=np.int64)
    if members.size < 2:
        raise EstimationError("need at least 2 member observations to fit a state")
    rows = x[members]
    mean = rows.mean(axis=0)
    cov = _sample_cov(rows)
    scale_adjusted = gain_kind == "student_t"
    base = (1.0 - 2.0 / params.nu) * cov if scale_adjusted else cov
    net = build_tmfg(_squared_correlation(rows))
    sparse = logo_precision(base, net)
    log_det = logo_log_det(base, net)
    return StateModel(
        mean=mean,
        covariance=cov,
        precision=sparse.matrix,
        log_det_precision=log_det,
        members=members,
        scale_adjusted=scale_adjusted,
        network=net,
        ridge_events=sparse.ridge_events,
    )


# ---------------------------------------------------------------------------
# gain functions


def _check_dims(r: np.ndarray, state: StateModel) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != state.mean.shape:
        raise ValidationError(
            f"observation dimension {r.shape} does not match state {state.mean.shape}"
        )
    return r


def gain_euclidean(r: np.ndarray, state: StateModel) -> float:
    """Minus the squared euclidean distance to the state centroid."""
    diff = _check_dims(r, state) - state.mean
    return float(-diff @ diff)


def mahalanobis_sq(r: np.ndarray, state: StateModel) -> float:
    diff = _check_dims(r, state) - state.mean
    return float(diff @ state.precision @ diff)


def gain_normal(r: np.ndarray, state: StateModel) -> float:
    n = state.n_assets
    return float(0.5 * state.log_det_precision - 0.5 * n * mahalanobis_sq(r, state))


def gain_student_t(r: np.ndarray, state: StateModel, params: GainParams) -> float:
    nu, n = params.nu, state.n_assets
    d2 = mahalanobis_sq(r, state)
    return float(0.5 * state.log_det_precision - 0.5 * (nu + n) * np.log1p(d2 / nu))


def gain_hybrid(r: np.ndarray, state: StateModel, params: GainParams) -> float:
    return float(
        params.c1 * state.log_det_precision - params.c2 * mahalanobis_sq(r, state)
    )


def state_gains(
    x: np.ndarray, state: StateModel, gain_kind: str, params: GainParams | None = None
) -> np.ndarray:
    """Vectorized gain of every row of `x` against one state."""
    params = params or GainParams()
    diff = np.atleast_2d(x) - state.mean
    if gain_kind == "euclidean":
        return -(diff * diff).sum(axis=1)
    d2 = ((diff @ state.precision) * diff).sum(axis=1)
    n = state.n_assets
    if gain_kind == "normal":
        return 0.5 * state.log_det_precision - 0.5 * n * d2
    if gain_kind == "student_t":
        return 0.5 * state.log_det_precision - 0.5 * (params.nu + n) * np.log1p(
            d2 / params.nu
        )
    if gain_kind == "hybrid":
        return params.c1 * state.log_det_precision - params.c2 * d2
    raise ValidationError(f"unknown gain kind {gain_kind!r}")


def gain_matrix(
    x: np.ndarray, states: list[StateModel], gain_kind: str, params: GainParams | None = None
) -> np.ndarray:
    return np.column_stack([state_gains(x, s, gain_kind, params) for s in states])


# ---------------------------------------------------------------------------
# penalized sweep (numba kernel: sequential by construction)


@njit(cache=True)
def _sweep(x, labels, mu, sums, counts, prec, logdet, gamma, kind, nu, c1, c2, penalize_stay):
    t_total, n = x.shape
    k_total = mu.shape[0]
    changes = 0
    for t in range(t_total):
        prev = labels[t - 1] if t > 0 else -1
        best_k = 0
        best_g = -1.0e300
        for k in range(k_total):
            if counts[k] == 0:
                continue
            if kind == 0:
                d2 = 0.0
                for i in range(n):
                    diff = x[t, i] - mu[k, i]
                    d2 += diff * diff
                g = -d2
            else:
                d2 = 0.0
                for i in range(n):
                    acc = 0.0
                    for j in range(n):
                        acc += prec[k, i, j] * (x[t, j] - mu[k, j])
                    d2 += (x[t, i] - mu[k, i]) * acc
                if kind == 1:
                    g = 0.5 * logdet[k] - 0.5 * n * d2
                elif kind == 2:
                    g = 0.5 * logdet[k] - 0.5 * (nu + n) * np.log(1.0 + d2 / nu)
                else:
                    g = c1 * logdet[k] - c2 * d2
            if prev >= 0:
                if penalize_stay:
                    if k == prev:
                        g -= gamma
                elif k != prev:
                    g -= gamma
            if g > best_g:
                best_g = g
                best_k = k
        old = labels[t]
        if best_k != old:
            labels[t] = best_k
            changes += 1
            counts[old] -= 1
            counts[best_k] += 1
            for i in range(n):
                sums[old, i] -= x[t, i]
                sums[best_k, i] += x[t, i]
                if counts[old] > 0:
                    mu[old, i] = sums[old, i] / counts[old]
                mu[best_k, i] = sums[best_k, i] / counts[best_k]
    return changes


def _as_array(train) -> np.ndarray:
    if isinstance(train, ReturnsPanel):
        return train.returns
    x = np.asarray(train, dtype=float)
    if x.ndim != 2:
        raise ValidationError("training data must be a 2-D array or ReturnsPanel")
    return x


def _fit_states(x, labels, k, gain_kind, params, prev=None) -> list[StateModel]:
    states = []
    for j in range(k):
        members = np.flatnonzero(labels == j)
        if members.size < 2 and prev is not None:
            # cluster died out; keep its last model so the sweep can skip it
            states.append(prev[j])
            continue
        states.append(fit_state(x, members, gain_kind, params))
    return states


def _repair_small_clusters(x, labels, k, min_size, gain_kind, params) -> int:
    """Re-seed clusters below the minimum size from the worst-fitting points
    of the largest cluster.  Returns the number of moved observations."""
    moved = 0
    counts = np.bincount(labels, minlength=k)
    for j in range(k):
        if counts[j] >= min_size:
            continue
        largest = int(np.argmax(counts))
        if largest == j or counts[largest] <= min_size:
            continue
        members = np.flatnonzero(labels == largest)
        state = fit_state(x, members, gain_kind, params)
        gains = state_gains(x[members], state, gain_kind, params)
        need = min(min_size - counts[j], counts[largest] - min_size)
        if need <= 0:
            continue
        worst = members[np.argsort(gains, kind="stable")[:need]]
        labels[worst] = j
        moved += int(need)
        counts = np.bincount(labels, minlength=k)
    return moved


def _total_penalized_gain(x, labels, states, gain_kind, params, gamma, penalize_stay):
    gains = gain_matrix(x, states, gain_kind, params)
    picked = gains[np.arange(len(labels)), labels]
    if penalize_stay:
        penalties = gamma * (labels[1:] == labels[:-1]).sum()
    else:
        penalties = gamma * (labels[1:] != labels[:-1]).sum()
    return float(picked.sum() - penalties)


def _fit_once(x, labels, k, gain_kind, params, gamma, max_iter, min_size, penalize_stay):
    kind = _KIND_CODE[gain_kind]
    n = x.shape[1]
    diag = {"switch_counts": [], "repaired": 0}
    states = _fit_states(x, labels, k, gain_kind, params)
    converged = False
    sweeps = 0
    seen = {labels.tobytes()}
    for _ in range(max_iter):
        mu = np.stack([s.mean for s in states])
        counts = np.bincount(labels, minlength=k).astype(np.int64)
        sums = mu * counts[:, None]
        prec = np.stack([s.precision for s in states])
        logdet = np.array([s.log_det_precision for s in states])
        changes = _sweep(
            x, labels, mu, sums, counts, prec, logdet,
            float(gamma), kind, params.nu, params.c1, params.c2, bool(penalize_stay),
        )
        sweeps += 1
        diag["switch_counts"].append(int(changes))
        moved = _repair_small_clusters(x, labels, k, min_size, gain_kind, params)
        diag["repaired"] += moved
        states = _fit_states(x, labels, k, gain_kind, params, prev=states)
        if changes == 0 and moved == 0:
            converged = True
            break
        key = labels.tobytes()
        if key in seen:
            # sweep/repair cycle: the labeling will only repeat from here
            diag["cycled"] = True
            break
        seen.add(key)
    total = _total_penalized_gain(x, labels, states, gain_kind, params, gamma, penalize_stay)
    diag["state_sizes"] = np.bincount(labels, minlength=k).tolist()
    diag["total_gain"] = total
    return labels, states, sweeps, converged, total, diag


def default_min_cluster_size(n_assets: int) -> int:
    # keeps 3x3/4x4 LoGo sub-covariances well conditioned
    return int(max(n_assets / 10.0, 10))


def assign_clusters(
    train,
    n_states: int,
    gain_kind: str = "student_t",
    params: GainParams | None = None,
    gamma: float = 0.0,
    seed: int = 0,
    max_iter: int = 30,
    restarts: int = 3,
    min_cluster_size: int | None = None,
    penalize_stay: bool = False,
) -> tuple[ClusterAssignment, list[StateModel]]:
    """Penalized iterative assignment from random initializations.

    Runs `restarts` independent initializations (seeds derived from `seed`)
    and keeps the labeling with the highest total in-sample penalized gain.
    """
    if gain_kind not in GAIN_KINDS:
        raise ValidationError(f"unknown gain kind {gain_kind!r}")
    if gamma < 0:
        raise ValidationError("gamma must be >= 0")
    params = params or GainParams()
    x = _as_array(train)
    t_total, n = x.shape
    min_size = min_cluster_size if min_cluster_size is not None else default_min_cluster_size(n)
    if n_states < 1:
        raise ValidationError("need at least one state")
    if t_total < n_states * min_size:
        raise ValidationError(
            f"train length {t_total} below {n_states} x minimum cluster size {min_size}"
        )

    best = None
    for child in np.random.SeedSequence(seed).spawn(max(restarts, 1)):
        rng = np.random.default_rng(child)
        labels = rng.integers(0, n_states, size=t_total).astype(np.int64)
        for j in range(n_states):  # guarantee every state can be fitted
            while np.count_nonzero(labels == j) < min(2, t_total // n_states):
                labels[rng.integers(0, t_total)] = j
        _repair_small_clusters(x, labels, n_states, min_size, gain_kind, params)
        result = _fit_once(
            x, labels, n_states, gain_kind, params, gamma, max_iter, min_size, penalize_stay
        )
        if best is None or result[4] > best[4]:
            best = result

    labels, states, sweeps, converged, total, diag = best
    assignment = ClusterAssignment(
        labels=labels,
        n_states=n_states,
        gamma=float(gamma),
        gain_kind=gain_kind,
        params=params,
        iterations_run=sweeps,
        converged=converged,
        seed=seed,
        diagnostics=diag,
    )
    return assignment, states


def average_persistence(assignment) -> float:
    """Mean maximal-run length: T / (number of label switches + 1)."""
    labels = assignment.labels if isinstance(assignment, ClusterAssignment) else np.asarray(assignment)
    if len(labels) == 0:
        raise ValidationError("labels must be non-empty")
    switches = int((labels[1:] != labels[:-1]).sum())
    return len(labels) / (switches + 1)


def default_gamma_grid(
    train, gain_kind: str = "student_t", params: GainParams | None = None, size: int = 15
) -> np.ndarray:
    """Log-spaced grid spanning [1e-4, 1e4] x median absolute observation gain."""
    params = params or GainParams()
    x = _as_array(train)
    whole = fit_state(x, np.arange(x.shape[0]), gain_kind, params)
    med = float(np.median(np.abs(state_gains(x, whole, gain_kind, params))))
    if med <= 0 or not np.isfinite(med):
        med = 1.0
    return med * np.logspace(-4, 4, size)


def calibrate_gamma(
    train,
    n_states: int,
    gain_kind: str = "student_t",
    params: GainParams | None = None,
    target_persistence: float = 30.0,
    grid=None,
    seed: int = 0,
    full_output: bool = False,
    **assign_kwargs,
):
    """Grid-search gamma so average persistence lands near the target.

    Ties go to the smaller gamma.  Raises CalibrationError if no grid point
    converges.
    """
    params = params or GainParams()
    x = _as_array(train)
    if grid is None:
        grid = default_gamma_grid(x, gain_kind, params)
    grid = np.sort(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValidationError("gamma grid must be non-empty")

    table = []
    for g in grid:
        assignment, _ = assign_clusters(
            x, n_states, gain_kind, params, gamma=float(g), seed=seed, **assign_kwargs
        )
        table.append(
            {
                "gamma": float(g),
                "persistence": average_persistence(assignment),
                "converged": assignment.converged,
            }
        )
    if not any(row["converged"] for row in table):
        raise CalibrationError(f"no gamma grid point converged: {table}")

    best = min(table, key=lambda row: (abs(row["persistence"] - target_persistence), row["gamma"]))
    if full_output:
        return best["gamma"], table
    return best["gamma"]
