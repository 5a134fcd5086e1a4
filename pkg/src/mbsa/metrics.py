"""Performance statistics from return and NAV series.

All annualization uses :data:`PERIODS_PER_YEAR` periods and population
(1/T) standard deviations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from .constants import PERIODS_PER_YEAR
from .covariance import decay
from .errors import DimensionError, ValidationError

logger = logging.getLogger(__name__)

CORRELATION_WARMUP = 5
# dispersion this small relative to the series magnitude is rounding noise
ZERO_DISPERSION = 1e-12


@dataclass
class PerformanceReport:
    ann_return: float
    ann_vol: float
    sharpe: float | None
    max_drawdown: float
    ann_turnover: float | None = None
    active_return: float | None = None
    active_risk: float | None = None
    residual_return: float | None = None
    residual_risk: float | None = None
    beta: float | None = None
    information_ratio: float | None = None
    market_scale: float | None = None

    def to_dict(self):
        return {k: (None if v is None or (isinstance(v, float) and not math.isfinite(v)) else v)
                for k, v in asdict(self).items()}


def _values(r):
    r = np.asarray(r, dtype=float)
    if r.ndim != 1:
        raise DimensionError("return series must be one-dimensional")
    if np.any(r <= -1):
        raise ValidationError("returns of -100% or worse are not valid")
    return r


def _aligned(a, b):
    if isinstance(a, pd.Series) and isinstance(b, pd.Series) and not a.index.equals(b.index):
        raise DimensionError("return series are not aligned on the same dates")
    a, b = _values(a), _values(b)
    if a.shape != b.shape:
        raise DimensionError(f"return series lengths differ: {a.size} vs {b.size}")
    return a, b


def _mean(r):
    # shifted compensated sum: exact for constant series
    shift = r[0]
    return float(shift + math.fsum(r - shift) / r.size)


def annualized_return(r, periods=PERIODS_PER_YEAR):
    r = _values(r)
    if r.size == 0:
        raise ValidationError("empty return series")
    return periods * _mean(r)


def annualized_vol(r, periods=PERIODS_PER_YEAR):
    r = _values(r)
    if r.size < 2:
        raise ValidationError("volatility needs at least two returns")
    return math.sqrt(periods) * math.sqrt(_mean((r - _mean(r)) ** 2))


def _ratio(r, periods):
    # mean / dispersion, or None when the dispersion is numerically zero
    vol = annualized_vol(r, periods)
    floor = ZERO_DISPERSION * math.sqrt(periods) * float(np.abs(r).max())
    return annualized_return(r, periods) / vol if vol > floor else None


def sharpe_ratio(r, periods=PERIODS_PER_YEAR):
    return _ratio(_values(r), periods)


def max_drawdown(nav):
    """Largest fractional drop from a running peak, in one pass."""
    nav = np.asarray(nav, dtype=float)
    if nav.size < 2:
        return 0.0
    if np.any(nav <= 0):
        raise ValidationError("NAV must be positive")
    peak = np.maximum.accumulate(nav)
    return float(np.max(1.0 - nav / peak))


def turnover(h_new, h_old, P, V):
    if not V > 0:
        raise ValidationError("turnover needs a positive portfolio value")
    return 0.5 * float(np.abs(np.asarray(P) * (np.asarray(h_new) - np.asarray(h_old))).sum()) / V


def regress_market(r, r_m, periods=PERIODS_PER_YEAR):
    """No-intercept least squares r = beta * r_m + theta.

    Returns beta, the residual series and a dict with the annualized
    residual return (portfolio alpha), residual risk and information ratio.
    """
    r, r_m = _aligned(r, r_m)
    if r.size < 2:
        raise ValidationError("regression needs at least two observations")
    denom = float(r_m @ r_m)
    if denom <= 0:
        raise ValidationError("market returns have zero variation")
    beta = float(r @ r_m) / denom
    theta = r - beta * r_m
    # residuals at rounding level of r (e.g. r = r_m) leave the IR undefined
    exact_fit = np.abs(theta).max() <= ZERO_DISPERSION * np.abs(r).max()
    stats = {
        "residual_return": annualized_return(theta, periods),
        "residual_risk": annualized_vol(theta, periods),
        "information_ratio": None if exact_fit else _ratio(theta, periods),
    }
    return beta, theta, stats


def active_stats(r, r_m, periods=PERIODS_PER_YEAR):
    r, r_m = _aligned(r, r_m)
    active = r - r_m
    return annualized_return(active, periods), annualized_vol(active, periods)


def ewma_correlation(r, r_m, half_life=250):
    """EWMA correlation with EWMA-demeaned second moments.

    Weights are finite-sample corrected; the first few periods are NaN.
    """
    index = r.index if isinstance(r, pd.Series) else None
    a, b = _aligned(r, r_m)
    lam = decay(half_life)
    out = np.full(a.size, np.nan)
    w = ma = mb = saa = sbb = sab = 0.0
    for t in range(a.size):
        w = lam * w + 1.0
        k = 1.0 / w
        da, db = a[t] - ma, b[t] - mb
        ma += k * da
        mb += k * db
        # West's weighted incremental (co)variance update
        saa = (1 - k) * (saa + k * da * da)
        sbb = (1 - k) * (sbb + k * db * db)
        sab = (1 - k) * (sab + k * da * db)
        if t >= CORRELATION_WARMUP and saa > 0 and sbb > 0:
            out[t] = min(1.0, max(-1.0, sab / math.sqrt(saa * sbb)))
    return pd.Series(out, index=index) if index is not None else out


def blend(r_a, r_b, w):
    if not 0.0 <= w <= 1.0:
        raise ValidationError(f"blend weight must lie in [0, 1], got {w}")
    index = r_a.index if isinstance(r_a, pd.Series) else None
    a, b = _aligned(r_a, r_b)
    out = w * a + (1.0 - w) * b
    return pd.Series(out, index=index) if index is not None else out


def match_vol(r_m, target_vol, periods=PERIODS_PER_YEAR):
    """Scale market returns (mix with zero-return cash) to a target annual vol."""
    vol = annualized_vol(r_m, periods)
    if vol <= 0:
        raise ValidationError("market returns have zero volatility")
    scale = target_vol / vol
    if scale > 1:
        logger.info("matching strategy vol requires leveraging the market by %.3f", scale)
    return scale * np.asarray(r_m, dtype=float), scale


def performance_report(r, nav=None, r_m=None, turnovers=None, periods=PERIODS_PER_YEAR, dilute=True):
    """Full report; market-relative fields are filled only when ``r_m`` is given.

    With ``dilute`` the market is first scaled to the strategy's volatility.
    """
    r = _values(r)
    nav = np.cumprod(1.0 + r) if nav is None else np.asarray(nav, dtype=float)
    vol = annualized_vol(r, periods)
    report = PerformanceReport(
        ann_return=annualized_return(r, periods),
        ann_vol=vol,
        sharpe=sharpe_ratio(r, periods),
        max_drawdown=max_drawdown(nav),
        ann_turnover=None if turnovers is None else periods * float(np.mean(turnovers)),
    )
    if r_m is not None:
        _, r_m = _aligned(r, r_m)
        if dilute and vol > 0:
            r_m, report.market_scale = match_vol(r_m, vol, periods)
        report.active_return, report.active_risk = active_stats(r, r_m, periods)
        report.beta, _, stats = regress_market(r, r_m, periods)
        report.residual_return = stats["residual_return"]
        report.residual_risk = stats["residual_risk"]
        report.information_ratio = stats["information_ratio"]
    return report


def annual_breakdown(r, r_m=None, periods=PERIODS_PER_YEAR):
    """Per-calendar-year return, vol, Sharpe and (with a market) residual stats."""
    if not isinstance(r, pd.Series) or not isinstance(r.index, pd.DatetimeIndex):
        raise ValidationError("annual breakdown needs a date-indexed return series")
    rows = []
    for year, chunk in r.groupby(r.index.year):
        if len(chunk) < 2:
            continue
        row = {
            "year": int(year),
            "return": annualized_return(chunk, periods),
            "vol": annualized_vol(chunk, periods),
            "sharpe": sharpe_ratio(chunk, periods),
        }
        if r_m is not None:
            m = r_m.loc[chunk.index]
            try:
                beta, _, stats = regress_market(chunk.values, m.values, periods)
            except ValidationError:
                beta, stats = None, {"residual_return": None, "residual_risk": None}
            row.update(beta=beta, residual_return=stats["residual_return"],
                       residual_risk=stats["residual_risk"])
        rows.append(row)
    return pd.DataFrame(rows)
