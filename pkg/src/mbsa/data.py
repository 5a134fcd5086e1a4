"""Daily price / cost data: CSV ingestion, validation and synthetic universes."""

from __future__ import annotations

import csv
import datetime as dt
import io
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from .constants import DEFAULT_WINDOW, PERIODS_PER_YEAR
from .errors import DimensionError, ParseError, ValidationError
from .io import atomic_write_text

logger = logging.getLogger(__name__)

PRICE_COLUMNS = ("date", "ticker", "price")
OPTIONAL_COLUMNS = ("half_spread", "short_rate")
MIN_SYNTH_PRICE = 0.01
MAX_SYNTH_ATTEMPTS = 200


@dataclass(frozen=True)
class CostConfig:
    """Cost proxies used when the price file carries no cost columns.

    ``spread_bps`` is the half bid-ask spread in basis points of price and
    ``short_rate_annual`` the annual shorting rate as a fraction of price.
    """

    spread_bps: float = 10.0
    short_rate_annual: float = 0.005
    periods_per_year: int = PERIODS_PER_YEAR

    def __post_init__(self):
        if self.spread_bps < 0 or self.short_rate_annual < 0:
            raise ValidationError("cost proxies must be nonnegative")
        if self.periods_per_year <= 0:
            raise ValidationError("periods_per_year must be positive")

    def half_spread(self, prices):
        return (self.spread_bps / 1e4) * np.asarray(prices, dtype=float)

    def short_rate(self, prices):
        return (self.short_rate_annual / self.periods_per_year) * np.asarray(prices, dtype=float)

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d)


@dataclass(frozen=True)
class MarketData:
    """Aligned T x n daily adjusted prices and per-share cost rates."""

    dates: tuple
    tickers: tuple
    prices: np.ndarray
    half_spreads: np.ndarray
    short_rates: np.ndarray
    # tickers dropped at load time for missing prices -> first missing date
    dropped: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "tickers", tuple(self.tickers))
        for name in ("prices", "half_spreads", "short_rates"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self.validate()

    @property
    def n_dates(self):
        return len(self.dates)

    @property
    def n_assets(self):
        return len(self.tickers)

    def validate(self):
        T, n = len(self.dates), len(self.tickers)
        if n < 2 or T < 2:
            raise DimensionError(f"need at least 2 assets and 2 dates, got n={n}, T={T}")
        for name in ("prices", "half_spreads", "short_rates"):
            if getattr(self, name).shape != (T, n):
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {(T, n)}")
        if len(set(self.tickers)) != n:
            raise ValidationError("duplicate tickers")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValidationError("dates must be strictly increasing")
        bad = ~(self.prices > 0)
        if bad.any():
            t, j = np.argwhere(bad)[0]
            raise ValidationError(
                f"non-positive price {self.prices[t, j]!r} for {self.tickers[j]} on {self.dates[t]}"
            )
        for name in ("half_spreads", "short_rates"):
            arr = getattr(self, name)
            if not np.all(arr >= 0):
                t, j = np.argwhere(~(arr >= 0))[0]
                raise ValidationError(f"negative {name} for {self.tickers[j]} on {self.dates[t]}")

    def ticker_index(self):
        return {tk: j for j, tk in enumerate(self.tickers)}


@dataclass(frozen=True)
class SyntheticSpec:
    n_assets: int = 20
    n_days: int = 500
    n_baskets: int = 5
    band_vol: float = 1.0
    drift_vol: float = 0.005
    reversion: float = 0.5
    seed: int = 0
    spread_bps: float = 0.0
    short_rate_annual: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.reversion < 1.0:
            raise ValidationError(f"reversion must lie in (0, 1), got {self.reversion}")
        if self.band_vol < 0 or self.drift_vol < 0:
            raise ValidationError("band_vol and drift_vol must be nonnegative")
        if min(self.n_assets, self.n_days, self.n_baskets) < 1:
            raise ValidationError("n_assets, n_days and n_baskets must be at least 1")
        if self.n_days <= 2 * DEFAULT_WINDOW:
            raise ValidationError(f"n_days must exceed {2 * DEFAULT_WINDOW}")
        if self.spread_bps < 0 or self.short_rate_annual < 0:
            raise ValidationError("cost proxies must be nonnegative")
        if self.n_assets < 2 * self.n_baskets:
            raise ValidationError(
                f"{self.n_baskets} disjoint baskets need at least {2 * self.n_baskets} assets"
            )

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d)


def _from_dict(cls, d):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValidationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ValidationError(str(exc)) from exc


def _parse_date(text, row, column="date"):
    try:
        return dt.date.fromisoformat(text.strip())
    except (ValueError, AttributeError):
        raise ParseError(f"row {row}, column {column!r}: not an ISO-8601 date: {text!r}") from None


def _parse_float(text, row, column):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ParseError(f"row {row}, column {column!r}: not a number: {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(f"row {row}, column {column!r}: non-finite value {text!r}")
    return value


def load_market_data(price_file, cost_config=None):
    """Load a long-format price CSV into an aligned :class:`MarketData`.

    The header must be ``date,ticker,price`` optionally followed by
    ``half_spread`` and/or ``short_rate``. Assets that are missing a price
    on any date of the union calendar are dropped entirely. Cost columns,
    when absent or blank, fall back to ``cost_config`` proxies.
    """
    cost_config = cost_config or CostConfig()
    path = Path(price_file)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if tuple(header[:3]) != PRICE_COLUMNS or any(h not in OPTIONAL_COLUMNS for h in header[3:]):
            raise ParseError(f"{path}: row 1: bad header {header}, expected date,ticker,price[,half_spread][,short_rate]")
        cols = {name: i for i, name in enumerate(header)}
        records = {}
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"row {row_no}: expected {len(header)} columns, got {len(row)}")
            date = _parse_date(row[0], row_no)
            ticker = row[1].strip()
            if not ticker:
                raise ParseError(f"row {row_no}, column 'ticker': empty ticker")
            price = _parse_float(row[2], row_no, "price")
            extras = {}
            for name in OPTIONAL_COLUMNS:
                if name in cols and row[cols[name]].strip():
                    extras[name] = _parse_float(row[cols[name]], row_no, name)
            if (date, ticker) in records:
                raise ParseError(f"row {row_no}: duplicate entry for {ticker} on {date}")
            if price <= 0:
                raise ValidationError(f"non-positive price {price!r} for {ticker} on {date} (row {row_no})")
            records[(date, ticker)] = (price, extras)

    dates = sorted({d for d, _ in records})
    tickers = sorted({tk for _, tk in records})
    counts = {}
    for _, tk in records:
        counts[tk] = counts.get(tk, 0) + 1
    kept = [tk for tk in tickers if counts[tk] == len(dates)]
    dropped = sorted(set(tickers) - set(kept))
    if dropped:
        logger.warning("dropping %d asset(s) with missing prices: %s", len(dropped), ", ".join(dropped))
    if len(kept) < 2 or len(dates) < 2:
        raise DimensionError(f"need at least 2 complete assets and 2 dates, got n={len(kept)}, T={len(dates)}")

    T, n = len(dates), len(kept)
    prices = np.empty((T, n))
    half_spreads = np.full((T, n), np.nan)
    short_rates = np.full((T, n), np.nan)
    for t, d in enumerate(dates):
        for j, tk in enumerate(kept):
            price, extras = records[(d, tk)]
            prices[t, j] = price
            half_spreads[t, j] = extras.get("half_spread", np.nan)
            short_rates[t, j] = extras.get("short_rate", np.nan)
    half_spreads = np.where(np.isnan(half_spreads), cost_config.half_spread(prices), half_spreads)
    short_rates = np.where(np.isnan(short_rates), cost_config.short_rate(prices), short_rates)
    first_missing = {tk: next(d for d in dates if (d, tk) not in records) for tk in dropped}
    return MarketData(dates, kept, prices, half_spreads, short_rates, first_missing)


def write_market_csv(data, path):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PRICE_COLUMNS + OPTIONAL_COLUMNS)
    for t, d in enumerate(data.dates):
        for j, tk in enumerate(data.tickers):
            w.writerow([d.isoformat(), tk, repr(float(data.prices[t, j])),
                        repr(float(data.half_spreads[t, j])), repr(float(data.short_rates[t, j]))])
    atomic_write_text(path, buf.getvalue())


def market_returns(data):
    """Simple returns of the equal-weight average price index, first entry 0."""
    index = data.prices.mean(axis=1)
    r = np.zeros(data.n_dates)
    r[1:] = index[1:] / index[:-1] - 1.0
    return pd.Series(r, index=pd.Index(data.dates, name="date"), name="return")


def _ar1(rng, n, reversion, vol):
    # stationary start, stationary stddev ``vol``
    out = np.empty(n)
    innov = np.sqrt(1.0 - reversion**2) * vol
    out[0] = vol * rng.standard_normal()
    for t in range(1, n):
        out[t] = reversion * out[t - 1] + innov * rng.standard_normal()
    return out


def _band_price(band, window):
    """Series whose value minus its own trailing ``window`` mean equals ``band``.

    The first ``window - 1`` values are zero; from then on
    y_t = (window * band_t + sum of the previous window-1 values) / (window - 1).
    """
    y = np.zeros(len(band))
    for t in range(window - 1, len(band)):
        y[t] = (window * band[t] + y[t - window + 1:t].sum()) / (window - 1)
    return y


def _draw_baskets(rng, spec):
    order = rng.permutation(spec.n_assets)
    # Basket sizes are 2 or 3 with disjoint members.
    spare = spec.n_assets - 2 * spec.n_baskets
    sizes = []
    for _ in range(spec.n_baskets):
        extra = 1 if spare > 0 and rng.random() < 0.5 else 0
        spare -= extra
        sizes.append(2 + extra)
    baskets, pos = [], 0
    for size in sizes:
        members = [int(j) for j in order[pos:pos + size]]
        pos += size
        long_shares = rng.integers(1, 4, size=size - 1)
        short_shares = int(rng.integers(1, 4))
        long_base = rng.uniform(40.0, 120.0, size=size - 1)
        holdings = np.zeros(spec.n_assets)
        holdings[members[:-1]] = long_shares
        holdings[members[-1]] = -short_shares
        base = np.zeros(spec.n_assets)
        base[members[:-1]] = long_base
        # short leg priced so the basket is flat in the common factor
        base[members[-1]] = float(long_shares @ long_base) / short_shares
        baskets.append((members, holdings, base))
    return baskets


def generate_synthetic(spec):
    """Build a synthetic universe with planted mean-reverting baskets.

    Every asset price is a per-asset scale times ``exp`` of a common
    Gaussian random walk; assets outside any basket also carry their own
    log random walk. Each planted basket holds integer shares chosen so
    that the common factor cancels, and its first (long) member carries
    an additive spread constructed so that the basket price minus its
    21-day trailing mean is an AR(1) with coefficient ``spec.reversion``
    and stationary stddev ``spec.band_vol``.

    Returns
    -------
    data : MarketData
    arbs : list of Mbsa
        Planted baskets with ``discovered=21``, ``decommission=n_days``
        and ``ramp=21``.
    """
    from .core import Mbsa

    rng = np.random.default_rng(spec.seed)
    T, n, M = spec.n_days, spec.n_assets, DEFAULT_WINDOW
    for attempt in range(MAX_SYNTH_ATTEMPTS):
        common = np.concatenate([[0.0], np.cumsum(spec.drift_vol * rng.standard_normal(T - 1))])
        baskets = _draw_baskets(rng, spec)
        scale = rng.uniform(40.0, 120.0, size=n)
        idio = np.zeros((T, n))
        in_basket = np.zeros(n, dtype=bool)
        for members, _, base in baskets:
            in_basket[members] = True
            scale[members] = base[members]
        free = ~in_basket
        idio[1:, free] = np.cumsum(spec.drift_vol * rng.standard_normal((T - 1, int(free.sum()))), axis=0)
        prices = scale * np.exp(common[:, None] + idio)
        for members, holdings, _ in baskets:
            band = _ar1(rng, T, spec.reversion, spec.band_vol)
            anchor = members[0]
            prices[:, anchor] += _band_price(band, M) / holdings[anchor]
        if prices.min() > MIN_SYNTH_PRICE:
            break
        logger.debug("synthetic attempt %d hit the price floor; regenerating", attempt)
    else:
        raise ValidationError(
            f"could not generate strictly positive prices in {MAX_SYNTH_ATTEMPTS} attempts; "
            "lower drift_vol or band_vol"
        )

    dates = tuple(d.date() for d in pd.bdate_range("2010-01-04", periods=T))
    costs = CostConfig(spec.spread_bps, spec.short_rate_annual)
    data = MarketData(
        dates,
        tuple(f"A{j:03d}" for j in range(n)),
        prices,
        costs.half_spread(prices),
        costs.short_rate(prices),
    )
    arbs = [
        Mbsa(id=f"arb{k:03d}", holdings=holdings, discovered=M, decommission=T, ramp=M)
        for k, (_, holdings, _) in enumerate(baskets)
    ]
    return data, arbs
