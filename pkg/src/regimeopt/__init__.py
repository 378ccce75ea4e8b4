"""Market-state temporal clustering with state-aware portfolio optimization.

Pipeline: load or synthesize a daily return panel, cluster the training
period into persistent market states against sparse TMFG-LoGo precision
matrices, forecast the dominant off-sample state by end-of-train prevalence,
build long-only mean-variance portfolios per state (closed form, SQP, or
critical line algorithm) and evaluate everything over resampled train/test
windows.
"""

from .backtest import (
    BacktestReport,
    ExperimentConfig,
    aggregate_metrics,
    evaluate_portfolio,
    likelihood_gain_series,
    run_experiment,
    train_length_sweep,
)
from .clustering import (
    ClusterAssignment,
    GainParams,
    StateModel,
    assign_clusters,
    average_persistence,
    calibrate_gamma,
    fit_state,
    gain_euclidean,
    gain_hybrid,
    gain_normal,
    gain_student_t,
    mahalanobis_sq,
)
from .data import (
    PricePanel,
    ReturnsPanel,
    WindowSplit,
    compute_log_returns,
    load_prices,
    sample_windows,
    select_assets,
)
from .estimator import InverseCovarianceClustering
from .forecast import StateLabeling, label_states, prevalence_grid_search
from .network import (
    FilteringNetwork,
    SparsePrecision,
    build_tmfg,
    logo_log_det,
    logo_precision,
)
from .optimize import (
    PortfolioInputs,
    PortfolioWeights,
    TurningPoint,
    cla_frontier,
    markowitz_unconstrained,
    naive_weights,
    select_portfolio,
    sls_long_only,
)
from .synth import RegimeSpec, generate

__version__ = "0.1.0"
