"""Price/return panels, asset selection and train/test window sampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import InsufficientDataError, ParseError, ValidationError


@dataclass(frozen=True)
class PricePanel:
    """Cleaned closing-price panel: strictly positive prices, increasing dates."""

    dates: np.ndarray  # datetime64[D], length T
    assets: tuple[str, ...]
    prices: np.ndarray  # (T, n) float64
    market_caps: dict[str, float] | None = None
    drop_report: dict[str, int] = field(default_factory=dict)
    n_dropped: int = 0

    def __post_init__(self):
        if self.prices.ndim != 2 or self.prices.shape[1] != len(self.assets):
            raise ValidationError("prices shape does not match asset list")
        if len(self.dates) != self.prices.shape[0]:
            raise ValidationError("date index length does not match price rows")
        if np.any(np.diff(self.dates.astype("datetime64[D]").astype(np.int64)) <= 0):
            raise ValidationError("dates must be strictly increasing")
        if not np.all(self.prices > 0):
            raise ValidationError("prices must be strictly positive")


@dataclass(frozen=True)
class ReturnsPanel:
    """Daily log-return panel derived from a PricePanel."""

    dates: np.ndarray  # length T (one fewer than the source prices)
    assets: tuple[str, ...]
    returns: np.ndarray  # (T, n) float64

    def __post_init__(self):
        if self.returns.ndim != 2 or self.returns.shape[1] != len(self.assets):
            raise ValidationError("returns shape does not match asset list")
        if len(self.dates) != self.returns.shape[0]:
            raise ValidationError("date index length does not match return rows")
        if not np.all(np.isfinite(self.returns)):
            raise ValidationError("returns must be finite")

    @property
    def n_days(self) -> int:
        return self.returns.shape[0]

    @property
    def n_assets(self) -> int:
        return self.returns.shape[1]


@dataclass(frozen=True)
class WindowSplit:
    """Consecutive train/test index window into a ReturnsPanel (ends inclusive)."""

    train_start: int
    train_end: int
    test_start: int
    test_end: int
    train_days: int
    test_days: int

    def __post_init__(self):
        if self.test_start != self.train_end + 1:
            raise ValidationError("test window must start right after the train window")
        if self.train_end - self.train_start + 1 != self.train_days:
            raise ValidationError("inconsistent train length")
        if self.test_end - self.test_start + 1 != self.test_days:
            raise ValidationError("inconsistent test length")


def load_prices(
    source,
    date_column: str = "date",
    delimiter: str = ",",
    caps_path=None,
) -> PricePanel:
    """Load a wide CSV (date column + one price column per asset) into a PricePanel.

    Rows containing any missing or non-positive price are dropped and counted
    per offending asset.  Rows are sorted by date; duplicate dates are rejected.
    """
    try:
        raw = pd.read_csv(source, delimiter=delimiter)
    except pd.errors.ParserError as exc:
        line = getattr(exc, "lineno", None)
        raise ParseError(str(exc), line=line) from exc
    except (OSError, pd.errors.EmptyDataError) as exc:
        raise InsufficientDataError(f"cannot read price file {source}: {exc}") from exc

    if date_column not in raw.columns:
        raise ParseError(f"missing date column {date_column!r}")
    asset_cols = [c for c in raw.columns if c != date_column]
    if not asset_cols:
        raise ParseError("no asset price columns found")

    try:
        dates = pd.to_datetime(raw[date_column]).to_numpy().astype("datetime64[D]")
    except (ValueError, TypeError) as exc:
        raise ParseError(f"unparseable dates: {exc}") from exc
    if pd.Index(dates).has_duplicates:
        raise ParseError("duplicate dates in price file")

    order = np.argsort(dates, kind="stable")
    dates = dates[order]
    prices = raw[asset_cols].apply(pd.to_numeric, errors="coerce").to_numpy(float)[order]

    bad = ~np.isfinite(prices) | (prices <= 0)
    keep = ~bad.any(axis=1)
    drop_report = {
        a: int(bad[:, j].sum()) for j, a in enumerate(asset_cols) if bad[:, j].any()
    }
    prices = prices[keep]
    dates = dates[keep]
    if prices.shape[0] < 2:
        raise InsufficientDataError(
            f"fewer than 2 usable price rows after cleaning ({prices.shape[0]})"
        )

    caps = None
    if caps_path is not None:
        sidecar = pd.read_csv(caps_path)
        if not {"asset", "market_cap"} <= set(sidecar.columns):
            raise ParseError("capitalization file needs columns asset,market_cap")
        caps = dict(zip(sidecar["asset"].astype(str), sidecar["market_cap"].astype(float)))

    return PricePanel(
        dates=dates,
        assets=tuple(asset_cols),
        prices=prices,
        market_caps=caps,
        drop_report=drop_report,
        n_dropped=int((~keep).sum()),
    )


def compute_log_returns(panel: PricePanel) -> ReturnsPanel:
    """Daily log-returns: r[t] = ln(P[t+1]) - ln(P[t])."""
    if panel.prices.shape[0] < 2:
        raise InsufficientDataError("need at least 2 price rows to form returns")
    returns = np.diff(np.log(panel.prices), axis=0)
    return ReturnsPanel(dates=panel.dates[1:], assets=panel.assets, returns=returns)


def select_assets(panel: PricePanel, mode: str, count: int, seed: int = 0) -> PricePanel:
    """Restrict the panel to `count` assets, by market cap or at random."""
    n = len(panel.assets)
    if count > n or count < 1:
        raise ValidationError(f"count={count} out of range for {n} assets")
    if mode == "top_cap":
        if panel.market_caps is None:
            raise ValidationError("top_cap selection requires market capitalization data")
        missing = [a for a in panel.assets if a not in panel.market_caps]
        if missing:
            raise ValidationError(f"missing market caps for {missing}")
        ranked = sorted(panel.assets, key=lambda a: (-panel.market_caps[a], a))
        chosen = ranked[:count]
    elif mode == "random":
        rng = np.random.default_rng(seed)
        chosen = [panel.assets[i] for i in rng.choice(n, size=count, replace=False)]
    else:
        raise ValidationError(f"unknown selection mode {mode!r}")

    idx = [panel.assets.index(a) for a in chosen]
    caps = None
    if panel.market_caps is not None:
        caps = {a: panel.market_caps[a] for a in chosen if a in panel.market_caps}
    return PricePanel(
        dates=panel.dates,
        assets=tuple(chosen),
        prices=panel.prices[:, idx],
        market_caps=caps,
        drop_report=panel.drop_report,
        n_dropped=panel.n_dropped,
    )


def sample_windows(
    panel: ReturnsPanel, train_days: int, test_days: int, count: int, seed: int = 0
) -> list[WindowSplit]:
    """Sample `count` consecutive train/test windows, uniform over valid offsets.

    Sampling is with replacement so the protocol stays valid on short panels.
    """
    if count < 1:
        raise ValidationError("window count must be >= 1")
    total = train_days + test_days
    if panel.n_days < total:
        raise InsufficientDataError(
            f"panel has {panel.n_days} days, need at least {total}"
        )
    rng = np.random.default_rng(seed)
    offsets = rng.integers(0, panel.n_days - total + 1, size=count)
    return [
        WindowSplit(
            train_start=int(o),
            train_end=int(o) + train_days - 1,
            test_start=int(o) + train_days,
            test_end=int(o) + total - 1,
            train_days=train_days,
            test_days=test_days,
        )
        for o in offsets
    ]
