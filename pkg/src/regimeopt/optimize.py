"""Mean-variance portfolio solvers.

Three routes to minimum-variance weights at a target expected return:

* closed-form Lagrangian solution (unconstrained beyond the two equalities),
* a sequential quadratic programming iteration for the long-only problem,
  whose direction sub-problem is solved by a primal active-set QP, and
* the critical line algorithm tracing the full long-only efficient frontier
  through its turning points.

`select_portfolio` picks a single portfolio off a solver, by default the
maximum in-sample Sharpe ratio with zero risk-free rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EstimationError, FeasibilityError, ValidationError


@dataclass(frozen=True)
class PortfolioInputs:
    mu: np.ndarray  # expected daily returns
    sigma: np.ndarray  # covariance (dense; may be the inverse of a sparse precision)
    source_tag: str = "Full"  # Full | Sparse | Sparse0 | Sparse1
    precision: np.ndarray | None = None  # sparse inverse covariance, if available

    def __post_init__(self):
        mu = np.asarray(self.mu, float)
        sigma = np.asarray(self.sigma, float)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        if sigma.shape != (mu.size, mu.size):
            raise ValidationError("mu/sigma dimension mismatch")
        if not np.allclose(sigma, sigma.T, atol=1e-8):
            raise ValidationError("sigma must be symmetric")


@dataclass
class PortfolioWeights:
    weights: np.ndarray
    constraint_set: str  # unconstrained | long_only
    solver_tag: str  # closed_form | SLS | CLA | naive
    achieved_return: float | None = None
    achieved_variance: float | None = None
    converged: bool = True
    multipliers: tuple | None = None  # (lambda1, lambda2) with 2*Sigma*w = l1*mu + l2*1


@dataclass(frozen=True)
class TurningPoint:
    weights: np.ndarray
    lam: float  # return-constraint multiplier
    free: tuple
    at_upper: tuple
    at_lower: tuple


def _inverse(sigma: np.ndarray) -> np.ndarray:
    """Invert, retrying once with a small ridge when singular."""
    try:
        return np.linalg.inv(sigma)
    except np.linalg.LinAlgError:
        pass
    n = sigma.shape[0]
    ridged = sigma + (1e-10 * np.trace(sigma) / n) * np.eye(n)
    try:
        return np.linalg.inv(ridged)
    except np.linalg.LinAlgError as exc:
        raise EstimationError("covariance is singular even after ridging") from exc


def naive_weights(n: int) -> PortfolioWeights:
    """Equal-weight benchmark portfolio."""
    if n < 1:
        raise ValidationError("need at least one asset")
    return PortfolioWeights(
        weights=np.full(n, 1.0 / n), constraint_set="long_only", solver_tag="naive"
    )


def markowitz_unconstrained(inputs: PortfolioInputs, target_return: float) -> PortfolioWeights:
    """Closed-form minimum-variance weights at the target expected return."""
    mu, sigma = inputs.mu, inputs.sigma
    n = mu.size
    if np.ptp(mu) < 1e-14 * (np.abs(mu).max() + 1.0):
        raise ValidationError("expected returns proportional to ones: target constraint degenerate")
    inv = inputs.precision if inputs.precision is not None else _inverse(sigma)
    a = inv @ mu
    b = inv @ np.ones(n)
    big_b = float(mu @ a)
    big_a = float(mu @ b)
    big_c = float(np.ones(n) @ b)
    det = big_b * big_c - big_a * big_a
    if abs(det) < 1e-14 * max(big_b * big_c, 1.0):
        raise ValidationError("degenerate multiplier system (mu nearly proportional to ones)")
    x = (big_c * target_return - big_a) / det
    y = (big_b - big_a * target_return) / det
    w = x * a + y * b
    return PortfolioWeights(
        weights=w,
        constraint_set="unconstrained",
        solver_tag="closed_form",
        achieved_return=float(mu @ w),
        achieved_variance=float(w @ sigma @ w),
        multipliers=(2.0 * x, 2.0 * y),
    )


# ---------------------------------------------------------------------------
# active-set QP: min 0.5 x'Hx + g'x  s.t.  A x = b, lb <= x <= ub


def _kkt_solve(h, c_rows, rhs_top, rhs_bottom):
    m = c_rows.shape[0]
    n = h.shape[0]
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = h
    kkt[:n, n:] = -c_rows.T
    kkt[n:, :n] = c_rows
    rhs = np.concatenate([rhs_top, rhs_bottom])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def _active_set_qp(h, g, a_eq, b_eq, lb, ub, x0, max_iter=None):
    """Primal active-set method; x0 must be feasible.  Returns the minimizer,
    the equality multipliers and the bound multipliers."""
    n = h.shape[0]
    x = x0.astype(float).copy()
    tol = 1e-11
    active: dict[int, str] = {}
    for i in range(n):
        if x[i] - lb[i] <= tol:
            active[i] = "lb"
        elif ub[i] - x[i] <= tol:
            active[i] = "ub"
    if max_iter is None:
        max_iter = 50 * (n + 2)

    eq_mult = np.zeros(a_eq.shape[0])
    for _ in range(max_iter):
        act = sorted(active)
        rows = np.vstack([a_eq, np.eye(n)[act]]) if act else a_eq
        grad = h @ x + g
        p, mult = _kkt_solve(h, rows, -grad, np.zeros(rows.shape[0]))
        eq_mult = mult[: a_eq.shape[0]]
        if np.max(np.abs(p)) < 1e-12:
            bound_mult = dict(zip(act, mult[a_eq.shape[0]:]))
            worst_i, worst_v = None, -1e-9
            for i in act:
                lam = bound_mult[i]
                violation = -lam if active[i] == "lb" else lam
                if violation > worst_v:
                    worst_i, worst_v = i, violation
            if worst_i is None or worst_v <= 1e-9:
                return x, eq_mult, {i: float(bound_mult[i]) for i in act}
            del active[worst_i]
            continue
        alpha, blocking, side = 1.0, None, None
        for i in range(n):
            if i in active:
                continue
            if p[i] < -tol:
                step = (lb[i] - x[i]) / p[i]
                if step < alpha:
                    alpha, blocking, side = step, i, "lb"
            elif p[i] > tol:
                step = (ub[i] - x[i]) / p[i]
                if step < alpha:
                    alpha, blocking, side = step, i, "ub"
        x = x + max(alpha, 0.0) * p
        if blocking is not None:
            x[blocking] = lb[blocking] if side == "lb" else ub[blocking]
            active[blocking] = side
    raise EstimationError("active-set QP failed to converge")


def _kkt_residual(w, mu, sigma, target, eq_mult, lb, ub):
    n = len(w)
    stat = 2.0 * (sigma @ w) - eq_mult[0] * np.ones(n) - eq_mult[1] * mu
    res = max(abs(float(np.sum(w) - 1.0)), abs(float(mu @ w - target)))
    for i in range(n):
        if w[i] - lb[i] <= 1e-9:
            res = max(res, max(0.0, -stat[i]))
        elif ub[i] - w[i] <= 1e-9:
            res = max(res, max(0.0, stat[i]))
        else:
            res = max(res, abs(stat[i]))
    return res


def sls_long_only(
    inputs: PortfolioInputs,
    target_return: float,
    max_iter: int = 500,
    tol: float = 1e-8,
) -> PortfolioWeights:
    """Long-only minimum variance at a target return via SQP iteration.

    Each step solves the quadratic direction sub-problem under the linearized
    constraints, then backtracks on an l1 exact-penalty merit function.
    """
    mu, sigma = inputs.mu, inputs.sigma
    n = mu.size
    lb, ub = np.zeros(n), np.ones(n)
    lo, hi = float(mu.min()), float(mu.max())
    if not (lo - 1e-12 <= target_return <= hi + 1e-12):
        raise FeasibilityError(
            f"target return {target_return} outside feasible range [{lo}, {hi}]"
        )
    target_return = min(max(target_return, lo), hi)

    # boundary targets pin the portfolio to the extreme-return face; the
    # active-set iteration degenerates there, so solve that face directly
    span = hi - lo
    edge_tol = 1e-12 * max(span, 1.0)
    if span < 1e-15 or target_return <= lo + edge_tol or target_return >= hi - edge_tol:
        extreme = lo if (span < 1e-15 or target_return <= lo + edge_tol) else hi
        tied = np.flatnonzero(np.abs(mu - extreme) <= 1e-12 * (abs(extreme) + 1.0))
        w = np.zeros(n)
        if tied.size == 1:
            w[tied[0]] = 1.0
        else:
            sub = sigma[np.ix_(tied, tied)]
            w_sub, _, _ = _active_set_qp(
                2.0 * sub,
                np.zeros(tied.size),
                np.ones((1, tied.size)),
                np.array([1.0]),
                np.zeros(tied.size),
                np.ones(tied.size),
                np.full(tied.size, 1.0 / tied.size),
            )
            w[tied] = w_sub
        return PortfolioWeights(
            weights=w,
            constraint_set="long_only",
            solver_tag="SLS",
            achieved_return=float(mu @ w),
            achieved_variance=float(w @ sigma @ w),
            converged=True,
        )

    # feasible start: mix of the lowest- and highest-return corner portfolios
    i_lo, i_hi = int(np.argmin(mu)), int(np.argmax(mu))
    theta = 0.0 if hi == lo else (target_return - lo) / (hi - lo)
    w = np.zeros(n)
    w[i_lo] += 1.0 - theta
    w[i_hi] += theta

    a_eq = np.vstack([np.ones(n), mu])
    b_eq = np.array([1.0, target_return])
    h = 2.0 * sigma

    def objective(v):
        return float(v @ sigma @ v)

    def merit(v, rho):
        viol = abs(np.sum(v) - 1.0) + abs(float(mu @ v) - target_return)
        viol += float(np.maximum(0.0, lb - v).sum() + np.maximum(0.0, v - ub).sum())
        return objective(v) + rho * viol

    eq_mult = np.zeros(2)
    converged = False
    for _ in range(max_iter):
        grad = h @ w
        d, eq_mult, bound_mult = _active_set_qp(
            h, grad, a_eq, b_eq - a_eq @ w, lb - w, ub - w, np.zeros(n)
        )
        if _kkt_residual(w, mu, sigma, target_return, eq_mult, lb, ub) < tol:
            converged = True
            break
        if np.max(np.abs(d)) < 1e-14:
            converged = _kkt_residual(w, mu, sigma, target_return, eq_mult, lb, ub) < tol
            break
        rho = 10.0 * max(
            np.max(np.abs(eq_mult)),
            max((abs(v) for v in bound_mult.values()), default=0.0),
            1.0,
        )
        base = merit(w, rho)
        descent = float(grad @ d)
        alpha = 1.0
        while alpha > 1e-12 and merit(w + alpha * d, rho) > base + 1e-4 * alpha * descent:
            alpha *= 0.5
        w = w + alpha * d

    return PortfolioWeights(
        weights=w,
        constraint_set="long_only",
        solver_tag="SLS",
        achieved_return=float(mu @ w),
        achieved_variance=objective(w),
        converged=converged,
        multipliers=(float(eq_mult[1]), float(eq_mult[0])),
    )


# ---------------------------------------------------------------------------
# critical line algorithm


def _cla_lambda(inv_f, cov_fb, mean_f, w_b, i_local, bound):
    ones_f = np.ones(len(mean_f))
    c1 = float(ones_f @ inv_f @ ones_f)
    c2 = inv_f @ mean_f
    c3 = float(ones_f @ inv_f @ mean_f)
    c4 = inv_f @ ones_f
    c = -c1 * c2[i_local] + c3 * c4[i_local]
    if c == 0.0:
        return None, None
    if isinstance(bound, tuple):
        bound = bound[1] if c > 0 else bound[0]
    if w_b is None or len(w_b) == 0:
        lam = (c4[i_local] - c1 * bound) / c
    else:
        l1 = float(np.sum(w_b))
        l3 = inv_f @ (cov_fb @ w_b)
        l2 = float(ones_f @ l3)
        lam = ((1.0 - l1 + l2) * c4[i_local] - c1 * (bound + l3[i_local])) / c
    return float(lam), float(bound)


def _cla_weights(inv_f, cov_fb, mean_f, w_b, lam):
    ones_f = np.ones(len(mean_f))
    g1 = float(ones_f @ inv_f @ mean_f)
    g2 = float(ones_f @ inv_f @ ones_f)
    if w_b is None or len(w_b) == 0:
        g = -lam * g1 / g2 + 1.0 / g2
        w1 = np.zeros(len(mean_f))
    else:
        w1 = inv_f @ (cov_fb @ w_b)
        g3 = float(np.sum(w_b))
        g4 = float(ones_f @ w1)
        g = -lam * g1 / g2 + (1.0 - g3 + g4) / g2
    return -w1 + g * (inv_f @ ones_f) + lam * (inv_f @ mean_f)


def _cla_run(mu, sigma, lb, ub):
    n = mu.size
    # ranked fill for the maximum-return corner portfolio
    order = np.argsort(-mu, kind="stable")
    w = lb.copy()
    remaining = 1.0 - lb.sum()
    free = []
    for i in order:
        add = min(ub[i] - lb[i], remaining)
        w[i] += add
        remaining -= add
        if remaining <= 1e-14:
            free = [int(i)]
            break
    if not free:
        raise FeasibilityError("bounds cannot accommodate full investment")

    def partition():
        bounded = [i for i in range(n) if i not in free]
        return bounded

    points = [_make_tp(w, np.inf, free, lb, ub)]
    lam_prev = np.inf
    for _ in range(10 * n + 10):
        bounded = partition()
        # case a: a free asset hits one of its bounds
        l_out, i_out, b_out = None, None, None
        if len(free) > 1:
            inv_f = _inverse(sigma[np.ix_(free, free)])
            cov_fb = sigma[np.ix_(free, bounded)]
            w_b = w[bounded] if bounded else None
            for loc, i in enumerate(free):
                lam, bnd = _cla_lambda(inv_f, cov_fb, mu[free], w_b, loc, (lb[i], ub[i]))
                if lam is not None and (l_out is None or lam > l_out):
                    l_out, i_out, b_out = lam, i, bnd
        # case b: a bounded asset becomes free
        l_in, i_in = None, None
        for i in bounded:
            f2 = free + [i]
            b2 = [j for j in bounded if j != i]
            inv_f = _inverse(sigma[np.ix_(f2, f2)])
            cov_fb = sigma[np.ix_(f2, b2)]
            w_b = w[b2] if b2 else None
            lam, _ = _cla_lambda(inv_f, cov_fb, mu[f2], w_b, len(f2) - 1, float(w[i]))
            if lam is not None and lam < lam_prev and (l_in is None or lam > l_in):
                l_in, i_in = lam, i

        if (l_out is None or l_out < 0) and (l_in is None or l_in < 0):
            lam = 0.0  # global minimum-variance end of the frontier
        elif (l_out if l_out is not None else -np.inf) >= (
            l_in if l_in is not None else -np.inf
        ):
            lam = l_out
            free.remove(i_out)
            w[i_out] = b_out
        else:
            lam = l_in
            free.append(i_in)

        bounded = partition()
        inv_f = _inverse(sigma[np.ix_(free, free)])
        cov_fb = sigma[np.ix_(free, bounded)]
        w_b = w[bounded] if bounded else None
        w = w.copy()
        w[free] = _cla_weights(inv_f, cov_fb, mu[free], w_b, lam)
        points.append(_make_tp(w, lam, free, lb, ub))
        lam_prev = lam
        if lam == 0.0:
            break
    else:
        raise EstimationError("critical line iteration did not terminate")
    return points


def _make_tp(w, lam, free, lb, ub):
    at_lower = tuple(i for i in range(len(w)) if i not in free and w[i] <= lb[i] + 1e-12)
    at_upper = tuple(
        i for i in range(len(w)) if i not in free and i not in at_lower
    )
    return TurningPoint(
        weights=w.copy(), lam=float(lam), free=tuple(sorted(free)),
        at_upper=at_upper, at_lower=at_lower,
    )


def cla_frontier(
    inputs: PortfolioInputs, lower_bounds=None, upper_bounds=None
) -> list[TurningPoint]:
    """Ordered turning points from the maximum-return corner portfolio down to
    the global minimum-variance portfolio."""
    mu = inputs.mu.copy()
    sigma = inputs.sigma
    n = mu.size
    lb = np.zeros(n) if lower_bounds is None else np.asarray(lower_bounds, float)
    ub = np.ones(n) if upper_bounds is None else np.asarray(upper_bounds, float)
    if lb.sum() > 1.0 + 1e-12 or ub.sum() < 1.0 - 1e-12:
        raise FeasibilityError("bounds are inconsistent with full investment")
    mu = mu + np.arange(n) * 1e-12  # break expected-return ties deterministically

    try:
        points = _cla_run(mu, sigma, lb, ub)
    except (EstimationError, np.linalg.LinAlgError):
        # perturb-and-retry for degenerate threshold ties
        points = _cla_run(mu + (1 + np.arange(n)) * 1e-9, sigma, lb, ub)

    # drop numerically duplicated points, keep returns strictly decreasing
    cleaned = [points[0]]
    for tp in points[1:]:
        if inputs.mu @ tp.weights < inputs.mu @ cleaned[-1].weights - 1e-14:
            cleaned.append(tp)
    return cleaned


# ---------------------------------------------------------------------------
# portfolio selection


def _sharpe(w, mu, sigma):
    var = float(w @ sigma @ w)
    if var <= 0:
        return -np.inf
    return float(mu @ w) / np.sqrt(var)


def _golden_max(fun, lo, hi, iters=60):
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fun(d)
    x = (a + b) / 2.0
    return x, fun(x)


def _package(w, inputs, solver_tag, converged=True):
    return PortfolioWeights(
        weights=w,
        constraint_set="long_only",
        solver_tag=solver_tag,
        achieved_return=float(inputs.mu @ w),
        achieved_variance=float(w @ inputs.sigma @ w),
        converged=converged,
    )


def cla_target_return(inputs: PortfolioInputs, target: float) -> PortfolioWeights:
    """Frontier portfolio at a target return, interpolated between turning points."""
    points = cla_frontier(inputs)
    rets = [float(inputs.mu @ tp.weights) for tp in points]
    hi, lo = rets[0], rets[-1]
    if not (lo - 1e-10 <= target <= hi + 1e-10):
        raise FeasibilityError(f"target {target} outside efficient range [{lo}, {hi}]")
    target = min(max(target, lo), hi)
    for a in range(len(points) - 1):
        if rets[a + 1] <= target <= rets[a]:
            span = rets[a] - rets[a + 1]
            frac = 0.0 if span == 0 else (rets[a] - target) / span
            w = (1 - frac) * points[a].weights + frac * points[a + 1].weights
            return _package(w, inputs, "CLA")
    return _package(points[-1].weights, inputs, "CLA")


def select_portfolio(
    inputs: PortfolioInputs,
    solver: str,
    criterion: str = "max_sharpe",
    target_return: float | None = None,
) -> PortfolioWeights:
    """Pick one long-only portfolio: maximum Sharpe or a fixed target return."""
    if solver not in ("SLS", "CLA"):
        raise ValidationError(f"unknown solver {solver!r}")
    if criterion == "target_return":
        if target_return is None:
            raise ValidationError("target_return criterion needs a target")
        if solver == "SLS":
            return sls_long_only(inputs, target_return)
        return cla_target_return(inputs, target_return)
    if criterion != "max_sharpe":
        raise ValidationError(f"unknown criterion {criterion!r}")

    mu, sigma = inputs.mu, inputs.sigma
    if solver == "CLA":
        points = cla_frontier(inputs)
        best_w, best_s = points[0].weights, _sharpe(points[0].weights, mu, sigma)
        for a in range(len(points) - 1):
            wa, wb = points[a].weights, points[a + 1].weights

            def seg(alpha):
                return _sharpe((1 - alpha) * wa + alpha * wb, mu, sigma)

            alpha, s = _golden_max(seg, 0.0, 1.0)
            for cand_alpha, cand_s in ((0.0, seg(0.0)), (1.0, seg(1.0)), (alpha, s)):
                if cand_s > best_s:
                    best_s = cand_s
                    best_w = (1 - cand_alpha) * wa + cand_alpha * wb
        return _package(best_w, inputs, "CLA")

    # SLS: sweep targets across the feasible return range, then refine
    lo, hi = float(mu.min()), float(mu.max())
    if hi - lo < 1e-15:
        return sls_long_only(inputs, lo)
    targets = np.linspace(lo, hi, 21)
    solutions = {}

    def sharpe_at(r):
        r = min(max(r, lo), hi)
        sol = sls_long_only(inputs, r)
        solutions[r] = sol
        return _sharpe(sol.weights, mu, sigma)

    scores = [sharpe_at(r) for r in targets]
    j = int(np.argmax(scores))
    a = targets[max(j - 1, 0)]
    b = targets[min(j + 1, len(targets) - 1)]
    r_star, s_star = _golden_max(sharpe_at, a, b, iters=40)
    best_r = max(solutions, key=lambda r: _sharpe(solutions[r].weights, mu, sigma))
    return solutions[best_r]
