"""MBSA definitions and per-period prices, midpoints, alphas and size limits."""

from __future__ import annotations

import bisect
import datetime as dt
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .io import atomic_write_text
from .errors import DimensionError, InactiveError, InsufficientHistoryError, ParseError, ValidationError


@dataclass(frozen=True)
class Mbsa:
    """A moving-band stat-arb: fixed share holdings plus a lifetime.

    ``discovered`` (d) and ``decommission`` (e) are time indices into the
    trading calendar; ``ramp`` (l) is the number of periods over which the
    size limit decays to zero before e.
    """

    id: str
    holdings: np.ndarray
    discovered: int
    decommission: int
    ramp: int

    def __post_init__(self):
        s = np.array(self.holdings, dtype=float)
        s.setflags(write=False)
        object.__setattr__(self, "holdings", s)
        if s.ndim != 1 or not np.any(s != 0):
            raise ValidationError(f"MBSA {self.id}: holdings must be a vector with a nonzero entry")
        if not self.discovered < self.decommission:
            raise ValidationError(f"MBSA {self.id}: discovered must precede decommission")
        if self.ramp < 1 or self.decommission - self.discovered < self.ramp:
            raise ValidationError(f"MBSA {self.id}: ramp must be >= 1 and fit inside the lifetime")

    def is_tradeable(self, t, window):
        return self.discovered + window - 1 <= t <= self.decommission


@dataclass(frozen=True)
class ArbSnapshot:
    time: int
    active_ids: tuple
    S: np.ndarray
    p: np.ndarray
    mu: np.ndarray
    alpha: np.ndarray
    xi: np.ndarray

    @property
    def n_active(self):
        return len(self.active_ids)


def mbsa_price(s, P):
    s, P = np.asarray(s, dtype=float), np.asarray(P, dtype=float)
    if s.shape != P.shape:
        raise DimensionError(f"holdings shape {s.shape} does not match prices {P.shape}")
    return float(s @ P)


def midpoint(price_history, M):
    """Trailing M-period mean of the MBSA price."""
    hist = np.asarray(price_history, dtype=float)
    if len(hist) < M:
        raise InsufficientHistoryError(f"midpoint needs {M} observations, got {len(hist)}")
    return float(hist[-M:].mean())


def alpha(mu, p):
    return mu - p


def xi_schedule(arb, t, xi_max):
    d, e, l = arb.discovered, arb.decommission, arb.ramp
    if not d <= t <= e:
        raise InactiveError(f"MBSA {arb.id} is inactive at t={t} (lifetime [{d}, {e}])")
    if t <= e - l:
        return float(xi_max)
    return float(xi_max) * (e - t) / l


def snapshot(arbs, t, P_history, M, xi_max):
    """Stack the MBSAs tradeable at ``t`` into an :class:`ArbSnapshot`.

    ``P_history`` is the T' x n matrix of asset prices whose last row is
    P_t. An MBSA is tradeable once a full midpoint window exists inside
    its lifetime, i.e. for d + M - 1 <= t <= e.
    """
    P_history = np.asarray(P_history, dtype=float)
    if P_history.ndim != 2 or len(P_history) < M:
        raise InsufficientHistoryError(f"snapshot needs {M} rows of price history")
    n = P_history.shape[1]
    live = sorted((a for a in arbs if a.is_tradeable(t, M)), key=lambda a: a.id)
    S = np.zeros((n, len(live)))
    for k, arb in enumerate(live):
        if arb.holdings.shape != (n,):
            raise DimensionError(f"MBSA {arb.id} has {arb.holdings.size} holdings for {n} assets")
        S[:, k] = arb.holdings
    window = P_history[-M:] @ S
    p = window[-1].copy()
    mu = window.mean(axis=0)
    xi = np.array([xi_schedule(a, t, xi_max) for a in live])
    return ArbSnapshot(
        time=t,
        active_ids=tuple(a.id for a in live),
        S=S,
        p=p,
        mu=mu,
        alpha=mu - p,
        xi=xi,
    )


def _date_index(dates, value, arb_id, field):
    try:
        day = dt.date.fromisoformat(str(value))
    except ValueError:
        raise ParseError(f"MBSA {arb_id}: {field} is not an ISO-8601 date: {value!r}") from None
    # first trading date on or after ``day``; past the end maps to len(dates)
    return bisect.bisect_left(list(dates), day)


def load_arbs(path, data, lifetime=500, ramp=21):
    """Read an MBSA basket JSON file and resolve tickers against ``data``.

    Each record is ``{id, holdings: {ticker: shares}, discovered: date,
    decommission: date, ramp: int}``. ``decommission`` may be omitted, in
    which case the arb is kept for ``lifetime`` periods after discovery and
    then ramped out over ``ramp`` periods.
    """
    try:
        records = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if not isinstance(records, list):
        raise ParseError(f"{path}: expected a JSON array of MBSA objects")
    index = data.ticker_index()
    arbs, seen = [], set()
    for rec in records:
        try:
            arb_id = str(rec["id"])
            holdings_map = rec["holdings"]
            discovered = rec["discovered"]
        except (KeyError, TypeError):
            raise ParseError(f"{path}: MBSA record missing id/holdings/discovered: {rec!r}") from None
        if arb_id in seen:
            raise ValidationError(f"duplicate MBSA id {arb_id}")
        seen.add(arb_id)
        s = np.zeros(data.n_assets)
        for ticker, shares in holdings_map.items():
            if ticker in data.dropped:
                raise ValidationError(
                    f"MBSA {arb_id}: constituent {ticker} has no price on {data.dropped[ticker]}"
                )
            if ticker not in index:
                raise ValidationError(f"MBSA {arb_id}: unknown ticker {ticker}")
            s[index[ticker]] = float(shares)
        l = int(rec.get("ramp", ramp))
        d = _date_index(data.dates, discovered, arb_id, "discovered")
        if rec.get("decommission") is None:
            e = d + lifetime + l
        else:
            e = _date_index(data.dates, rec["decommission"], arb_id, "decommission")
        arbs.append(Mbsa(arb_id, s, d, e, l))
    return arbs


def _calendar_date(dates, index):
    if index < len(dates):
        return dates[index]
    # extend the calendar with business days past the last date
    day, extra = dates[-1], index - len(dates) + 1
    while extra:
        day += dt.timedelta(days=1)
        if day.weekday() < 5:
            extra -= 1
    return day


def save_arbs(arbs, data, path):
    out = []
    for arb in arbs:
        out.append({
            "id": arb.id,
            "holdings": {data.tickers[j]: float(v) for j, v in enumerate(arb.holdings) if v != 0},
            "discovered": _calendar_date(data.dates, arb.discovered).isoformat(),
            "decommission": _calendar_date(data.dates, arb.decommission).isoformat(),
            "ramp": arb.ramp,
        })
    atomic_write_text(path, json.dumps(out, indent=2) + "\n")
