"""Mean-variance solvers: closed form, SQP long-only and critical line.

Independent oracles: a bordered-KKT linear solve for the unconstrained
problem and exhaustive active-set enumeration for the long-only problem.
"""

import itertools

import numpy as np
import pytest

from conftest import make_spd
from regimeopt.errors import EstimationError, FeasibilityError, ValidationError
from regimeopt.optimize import (
    PortfolioInputs,
    cla_frontier,
    cla_target_return,
    markowitz_unconstrained,
    naive_weights,
    select_portfolio,
    sls_long_only,
)


def random_problem(rng, n=None):
    n = n or int(rng.integers(3, 8))
    sigma = make_spd(n, rng)
    mu = rng.normal(0.001, 0.002, n)
    return PortfolioInputs(mu=mu, sigma=sigma, source_tag="Full")


def bordered_kkt_oracle(mu, sigma, target):
    """Solve min w'Sw s.t. mu'w = target, 1'w = 1 as one dense linear system."""
    n = mu.size
    kkt = np.zeros((n + 2, n + 2))
    kkt[:n, :n] = 2.0 * sigma
    kkt[:n, n] = -mu
    kkt[:n, n + 1] = -1.0
    kkt[n, :n] = mu
    kkt[n + 1, :n] = 1.0
    rhs = np.zeros(n + 2)
    rhs[n] = target
    rhs[n + 1] = 1.0
    return np.linalg.solve(kkt, rhs)[:n]


def long_only_oracle(mu, sigma, target):
    """Exact long-only minimum variance by enumerating zero sets."""
    n = mu.size
    best_w, best_obj = None, np.inf
    for r in range(n - 1):
        for zeros in itertools.combinations(range(n), r):
            free = [i for i in range(n) if i not in zeros]
            m = len(free)
            kkt = np.zeros((m + 2, m + 2))
            kkt[:m, :m] = 2.0 * sigma[np.ix_(free, free)]
            kkt[:m, m] = -mu[free]
            kkt[:m, m + 1] = -1.0
            kkt[m, :m] = mu[free]
            kkt[m + 1, :m] = 1.0
            rhs = np.zeros(m + 2)
            rhs[m] = target
            rhs[m + 1] = 1.0
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            w = np.zeros(n)
            w[free] = sol[:m]
            if w.min() < -1e-10 or w.max() > 1.0 + 1e-10:
                continue
            obj = float(w @ sigma @ w)
            if obj < best_obj:
                best_obj, best_w = obj, w
    return best_w, best_obj


# --- closed form ---------------------------------------------------------


def test_markowitz_matches_bordered_kkt_oracle(rng):
    for _ in range(20):
        inp = random_problem(rng)
        target = float(np.median(inp.mu))
        w = markowitz_unconstrained(inp, target_return=target)
        oracle = bordered_kkt_oracle(inp.mu, inp.sigma, target)
        assert np.allclose(w.weights, oracle, atol=1e-10)


def test_markowitz_constraints_and_stationarity(rng):
    for _ in range(20):
        inp = random_problem(rng)
        target = float(np.percentile(inp.mu, 70))
        w = markowitz_unconstrained(inp, target_return=target)
        n = inp.mu.size
        assert abs(w.weights.sum() - 1.0) < 1e-10
        assert abs(w.weights @ inp.mu - target) < 1e-10
        l1, l2 = w.multipliers
        grad = 2.0 * inp.sigma @ w.weights - l1 * inp.mu - l2 * np.ones(n)
        assert np.max(np.abs(grad)) < 1e-8


def test_markowitz_uses_supplied_precision(rng):
    inp = random_problem(rng, n=5)
    with_prec = PortfolioInputs(
        mu=inp.mu, sigma=inp.sigma, precision=np.linalg.inv(inp.sigma)
    )
    target = float(inp.mu.mean())
    a = markowitz_unconstrained(inp, target)
    b = markowitz_unconstrained(with_prec, target)
    assert np.allclose(a.weights, b.weights, atol=1e-10)


def test_markowitz_rejects_flat_expected_returns(rng):
    sigma = make_spd(4, rng)
    inp = PortfolioInputs(mu=np.full(4, 0.001), sigma=sigma)
    with pytest.raises(ValidationError):
        markowitz_unconstrained(inp, target_return=0.001)


# --- long-only SQP -------------------------------------------------------


def test_sls_matches_enumeration_oracle(rng):
    for _ in range(15):
        inp = random_problem(rng, n=int(rng.integers(3, 7)))
        lo, hi = float(inp.mu.min()), float(inp.mu.max())
        target = lo + 0.4 * (hi - lo)
        got = sls_long_only(inp, target_return=target)
        _, oracle_obj = long_only_oracle(inp.mu, inp.sigma, target)
        assert got.converged
        assert got.achieved_variance == pytest.approx(oracle_obj, rel=1e-7, abs=1e-12)
        assert abs(got.weights.sum() - 1.0) < 1e-8
        assert abs(got.weights @ inp.mu - target) < 1e-8
        assert got.weights.min() > -1e-9


def test_sls_boundary_target_is_corner_portfolio(rng):
    inp = random_problem(rng, n=5)
    hi = float(inp.mu.max())
    w = sls_long_only(inp, target_return=hi)
    expected = np.zeros(5)
    expected[int(np.argmax(inp.mu))] = 1.0
    assert np.allclose(w.weights, expected, atol=1e-9)


def test_sls_infeasible_target(rng):
    inp = random_problem(rng, n=4)
    with pytest.raises(FeasibilityError):
        sls_long_only(inp, target_return=float(inp.mu.max()) + 1.0)


# --- critical line -------------------------------------------------------


def test_cla_turning_point_invariants(rng):
    for _ in range(15):
        inp = random_problem(rng)
        points = cla_frontier(inp)
        rets = [float(inp.mu @ tp.weights) for tp in points]
        lams = [tp.lam for tp in points]
        assert all(a > b for a, b in zip(rets, rets[1:]))  # strictly decreasing
        assert all(a >= b for a, b in zip(lams, lams[1:]))
        assert points[-1].lam == 0.0
        for tp in points:
            assert abs(tp.weights.sum() - 1.0) < 1e-9
            assert tp.weights.min() > -1e-9
            assert tp.weights.max() < 1.0 + 1e-9
            for i in tp.at_lower:
                assert tp.weights[i] == pytest.approx(0.0, abs=1e-9)


def test_cla_starts_from_max_return_corner(rng):
    inp = random_problem(rng, n=6)
    points = cla_frontier(inp)
    first = points[0].weights
    expected = np.zeros(6)
    expected[int(np.argmax(inp.mu))] = 1.0
    assert np.allclose(first, expected, atol=1e-9)


def test_cla_final_point_is_global_min_variance(rng):
    inp = random_problem(rng, n=5)
    points = cla_frontier(inp)
    w_min = points[-1].weights
    # compare with the long-only minimum variance via enumeration over targets
    best = min(
        long_only_oracle(inp.mu, inp.sigma, t)[1]
        for t in np.linspace(inp.mu.min(), inp.mu.max(), 200)
    )
    assert float(w_min @ inp.sigma @ w_min) == pytest.approx(best, rel=1e-4)


def test_cla_and_sls_agree_at_matched_targets(rng):
    for _ in range(15):
        inp = random_problem(rng)
        points = cla_frontier(inp)
        rets = [float(inp.mu @ tp.weights) for tp in points]
        for frac in (0.25, 0.5, 0.75):
            target = rets[-1] + frac * (rets[0] - rets[-1])
            v_cla = cla_target_return(inp, target=target).achieved_variance
            v_sls = sls_long_only(inp, target_return=target).achieved_variance
            assert v_sls == pytest.approx(v_cla, rel=1e-5)


def test_cla_handles_tied_expected_returns(rng):
    sigma = make_spd(4, rng)
    mu = np.array([0.002, 0.002, 0.001, 0.001])
    inp = PortfolioInputs(mu=mu, sigma=sigma)
    points = cla_frontier(inp)
    assert len(points) >= 2
    for tp in points:
        assert abs(tp.weights.sum() - 1.0) < 1e-9
        assert tp.weights.min() > -1e-9


def test_cla_target_outside_range(rng):
    inp = random_problem(rng, n=4)
    with pytest.raises(FeasibilityError):
        cla_target_return(inp, target=float(inp.mu.max()) + 1.0)


# --- selection -----------------------------------------------------------


def test_max_sharpe_agrees_across_solvers(rng):
    for _ in range(10):
        inp = random_problem(rng)
        s = {}
        for solver in ("SLS", "CLA"):
            w = select_portfolio(inp, solver, "max_sharpe")
            s[solver] = float(
                (w.weights @ inp.mu) / np.sqrt(w.weights @ inp.sigma @ w.weights)
            )
        assert s["SLS"] == pytest.approx(s["CLA"], rel=1e-5)


def test_max_sharpe_beats_target_grid(rng):
    inp = random_problem(rng, n=5)
    best = select_portfolio(inp, "CLA", "max_sharpe")
    best_sharpe = (best.weights @ inp.mu) / np.sqrt(
        best.weights @ inp.sigma @ best.weights
    )
    for t in np.linspace(inp.mu.min(), inp.mu.max(), 50)[1:-1]:
        w, _ = long_only_oracle(inp.mu, inp.sigma, t)
        sharpe = (w @ inp.mu) / np.sqrt(w @ inp.sigma @ w)
        assert best_sharpe >= sharpe - 1e-7


def test_target_return_criterion(rng):
    inp = random_problem(rng, n=5)
    target = float(np.median(inp.mu))
    for solver in ("SLS", "CLA"):
        w = select_portfolio(inp, solver, "target_return", target_return=target)
        assert w.achieved_return == pytest.approx(target, abs=1e-7)
    with pytest.raises(ValidationError):
        select_portfolio(inp, "SLS", "target_return")
    with pytest.raises(ValidationError):
        select_portfolio(inp, "SLS", "max_drawdown")
    with pytest.raises(ValidationError):
        select_portfolio(inp, "simplex", "max_sharpe")


def test_naive_weights():
    w = naive_weights(4)
    assert np.allclose(w.weights, 0.25)
    assert w.solver_tag == "naive"
    with pytest.raises(ValidationError):
        naive_weights(0)


def test_portfolio_inputs_validation(rng):
    with pytest.raises(ValidationError):
        PortfolioInputs(mu=np.ones(3), sigma=np.eye(4))
    bad = make_spd(3, rng)
    bad[0, 1] += 1.0
    with pytest.raises(ValidationError):
        PortfolioInputs(mu=np.ones(3), sigma=bad)
