"""Daily simulation: mark, estimate risk, rebalance, charge costs, account."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .constants import DEFAULT_WINDOW, PERIODS_PER_YEAR
from .core import ArbSnapshot, snapshot
from .covariance import RiskModel, arb_covariance, factorize
from .errors import BankruptcyError, SolverError, ValidationError
from .io import atomic_write_text, dumps, fmt
from .markowitz import MarkowitzInputs, Tolerances, hold_previous, rebalance

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BacktestConfig:
    M: int = DEFAULT_WINDOW
    lifetime: int = 500
    ramp: int = 21
    xi_max: float = 1.0
    eta: float = 1.0
    sigma_annual: float = 0.10
    gamma_trade: float = 1.0
    gamma_short: float = 1.0
    gamma_hold: float | None = None
    half_lives: tuple = (125, 250, 250)
    periods_per_year: int = PERIODS_PER_YEAR
    initial_cash: float = 1.0
    soften: bool = False
    max_fallbacks: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "half_lives", tuple(self.half_lives))
        if self.M < 2 or self.lifetime < 1 or self.ramp < 1:
            raise ValidationError("M must be >= 2 and lifetime, ramp >= 1")
        if len(self.half_lives) != 3 or min(self.half_lives) <= 0:
            raise ValidationError("half_lives must be three positive numbers (vol, corr, smoothing)")
        if self.xi_max <= 0 or self.sigma_annual <= 0 or self.initial_cash <= 0:
            raise ValidationError("xi_max, sigma_annual and initial_cash must be positive")
        if self.eta < 1:
            raise ValidationError(f"eta must be >= 1, got {self.eta}")
        if self.gamma_trade < 0 or self.gamma_short < 0:
            raise ValidationError("gamma weights must be nonnegative")
        if self.soften and not (self.gamma_hold or 0) > 0:
            raise ValidationError("soften requires gamma_hold > 0")
        if self.periods_per_year <= 0:
            raise ValidationError("periods_per_year must be positive")

    @property
    def sigma_per_period(self):
        return self.sigma_annual / np.sqrt(self.periods_per_year)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown BacktestConfig keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ValidationError(str(exc)) from exc

    def to_dict(self):
        d = asdict(self)
        d["half_lives"] = list(self.half_lives)
        return d


@dataclass
class BacktestResult:
    dates: tuple
    tickers: tuple
    nav: np.ndarray
    returns: np.ndarray
    cash: np.ndarray
    q_history: list
    h_history: np.ndarray
    trade_costs: np.ndarray
    short_costs: np.ndarray
    turnover: np.ndarray
    solver_log: list
    trades: list = field(default_factory=list)
    start: int | None = None

    @property
    def n_fallbacks(self):
        return sum(1 for entry in self.solver_log if entry.get("fallback"))

    @property
    def trading_days(self):
        return np.array([bool(entry.get("trading")) for entry in self.solver_log])


def cost_components(h_new, h_old, kappa_trade, kappa_short):
    trade = float(np.asarray(kappa_trade) @ np.abs(np.asarray(h_new) - np.asarray(h_old)))
    short = float(np.asarray(kappa_short) @ np.maximum(-np.asarray(h_new), 0.0))
    return trade, short


def accrue_costs(h_new, h_old, kappa_trade, kappa_short):
    """Trading plus holding cost in USD for moving from ``h_old`` to ``h_new``."""
    return sum(cost_components(h_new, h_old, kappa_trade, kappa_short))


def map_previous_q(prev, current_ids):
    """Carry positions by id onto the current active set.

    Returns the aligned vector and a dict of departing ids that still held
    a nonzero position (to be unwound at market).
    """
    aligned = np.array([prev.get(arb_id, 0.0) for arb_id in current_ids], dtype=float)
    current = set(current_ids)
    departed = {arb_id: q for arb_id, q in prev.items() if arb_id not in current and q != 0}
    return aligned, departed


def _empty_snapshot(t, n):
    empty = np.zeros(0)
    return ArbSnapshot(t, (), np.zeros((n, 0)), empty, empty, empty, empty)


def run(data, arbs, config=None, tol=None, problem_sink=None, cov_sink=None):
    """Simulate daily Markowitz management of ``arbs`` over ``data``.

    Each day t: mark the book at P_t, update the risk model, snapshot the
    tradeable MBSAs, solve the rebalance problem with the portfolio value
    pinned at its marked level, then charge trading cost on the asset-level
    trades and holding cost on the post-trade short positions against cash.

    ``problem_sink(date, payload)`` and ``cov_sink(date, sigma)`` are
    optional hooks called with per-day problem data and the smoothed asset
    covariance.
    """
    config = config or BacktestConfig()
    tol = tol or Tolerances()
    n, T, M = data.n_assets, data.n_dates, config.M
    for arb in arbs:
        if arb.holdings.shape != (n,):
            raise ValidationError(f"MBSA {arb.id} has {arb.holdings.size} holdings for {n} assets")
    if T < M:
        raise ValidationError(f"need at least M={M} dates, got {T}")

    risk = RiskModel(M, config.half_lives)
    cash = float(config.initial_cash)
    h = np.zeros(n)
    q = {}

    nav = np.empty(T)
    cash_hist = np.empty(T)
    h_hist = np.zeros((T, n))
    q_hist = []
    trade_costs = np.zeros(T)
    short_costs = np.zeros(T)
    turnover = np.zeros(T)
    log, trades = [], []
    start = None
    fallbacks = 0

    for t in range(T):
        P_t = data.prices[t]
        date = data.dates[t]
        sigma_P = risk.update(P_t)
        if sigma_P is not None and cov_sink is not None:
            cov_sink(date, sigma_P)
        nav_mark = cash + float(P_t @ h)
        entry = {"date": date.isoformat(), "K": 0, "trading": False, "fallback": False}

        if t + 1 >= M and sigma_P is not None:
            snap = snapshot(arbs, t, data.prices[: t + 1], M, config.xi_max)
        else:
            snap = _empty_snapshot(t, n)
        entry["K"] = snap.n_active
        entry["trading"] = snap.n_active > 0
        if entry["trading"] and start is None:
            start = t

        if snap.n_active == 0 and not q and not h.any():
            nav[t] = cash_hist[t] = cash
            q_hist.append({})
            entry["status"] = "idle"
            log.append(entry)
            continue

        prev_q, departed = map_previous_q(q, snap.active_ids)
        if departed:
            logger.warning("%s: forced unwind of %s", date, ", ".join(sorted(departed)))
            entry["forced_unwind"] = sorted(departed)
        if sigma_P is not None and snap.n_active:
            Sigma = arb_covariance(snap.S, sigma_P)
            root = factorize(Sigma)
        else:
            root = np.zeros((0, 0))
        inputs = MarkowitzInputs(
            snapshot=snap,
            P=P_t,
            Sigma_root=root,
            kappa_trade=data.half_spreads[t],
            kappa_short=data.short_rates[t],
            prev_q=prev_q,
            prev_h=h,
            prev_cash=nav_mark - float(snap.p @ prev_q),
            gamma_trade=config.gamma_trade,
            gamma_short=config.gamma_short,
            gamma_hold=config.gamma_hold,
            eta=config.eta,
            sigma_per_period=config.sigma_per_period,
            soften=config.soften,
        )
        if problem_sink is not None:
            problem_sink(date, _problem_payload(inputs))
        try:
            res = rebalance(inputs, tol)
        except SolverError as exc:
            fallbacks += 1
            logger.warning("%s: solver failure (%s); holding previous positions", date, exc)
            res = hold_previous(inputs)
            entry["fallback"] = True
            entry["error"] = str(exc)

        tc, sc = cost_components(res.h, h, data.half_spreads[t], data.short_rates[t])
        dh = res.h - h
        cash = cash - float(P_t @ dh) - (tc + sc)
        value = cash + float(P_t @ res.h)
        if not value > 0:
            raise BankruptcyError(f"portfolio value {value:.6g} <= 0 on {date}")
        for j in np.flatnonzero(dh):
            trades.append((t, j, float(dh[j]), float(P_t[j]), float(data.half_spreads[t, j] * abs(dh[j]))))

        h = res.h
        q = {arb_id: float(v) for arb_id, v in zip(snap.active_ids, res.q) if v != 0}
        nav[t] = value
        cash_hist[t] = cash
        h_hist[t] = h
        q_hist.append(dict(q))
        trade_costs[t], short_costs[t] = tc, sc
        turnover[t] = 0.5 * float(np.abs(P_t * dh).sum()) / value
        entry.update(
            status=res.diagnostics.get("status"),
            iterations=res.diagnostics.get("iterations"),
            max_violation=res.diagnostics.get("max_violation"),
            objective=res.objective,
            binding=res.binding,
            trade_cost=tc,
            short_cost=sc,
            turnover=turnover[t],
            neutrality_residual=value - cash,
        )
        log.append(entry)

    returns = np.zeros(T)
    returns[1:] = nav[1:] / nav[:-1] - 1.0
    result = BacktestResult(
        dates=data.dates,
        tickers=data.tickers,
        nav=nav,
        returns=returns,
        cash=cash_hist,
        q_history=q_hist,
        h_history=h_hist,
        trade_costs=trade_costs,
        short_costs=short_costs,
        turnover=turnover,
        solver_log=log,
        trades=trades,
        start=start,
    )
    if fallbacks:
        logger.warning("%d solver fallback(s) during the run", fallbacks)
    return result


def _problem_payload(inputs):
    snap = inputs.snapshot
    return {
        "n": inputs.n_assets,
        "K": inputs.n_arbs,
        "ids": list(snap.active_ids),
        "alpha": snap.alpha.tolist(),
        "p": snap.p.tolist(),
        "xi": snap.xi.tolist(),
        "sigma_c": inputs.sigma_per_period * inputs.value,
        "kappa_trade": inputs.kappa_trade.tolist(),
        "kappa_short": inputs.kappa_short.tolist(),
    }


def _csv(rows, header):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_bundle(result, out_dir, config):
    """Write nav/trades/positions CSVs, diagnostics JSONL and the config echo."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "nav.csv", _csv(
        ([d.isoformat(), fmt(v), fmt(c), fmt(r)]
         for d, v, c, r in zip(result.dates, result.nav, result.cash, result.returns)),
        ["date", "nav", "cash", "return"],
    ))
    atomic_write_text(out / "trades.csv", _csv(
        ([result.dates[t].isoformat(), result.tickers[j], fmt(sh), fmt(px), fmt(cost)]
         for t, j, sh, px, cost in result.trades),
        ["date", "ticker", "shares", "price", "cost"],
    ))
    atomic_write_text(out / "positions.csv", _csv(
        ([d.isoformat(), arb_id, fmt(v)]
         for d, qs in zip(result.dates, result.q_history) for arb_id, v in sorted(qs.items())),
        ["date", "arb_id", "q"],
    ))
    atomic_write_text(out / "diagnostics.jsonl", "".join(dumps(e) + "\n" for e in result.solver_log))
    atomic_write_text(out / "config.json", dumps(config.to_dict(), indent=2) + "\n")


def read_bundle(run_dir):
    """Load the nav series and per-day diagnostics written by :func:`write_bundle`."""
    import pandas as pd

    run_dir = Path(run_dir)
    nav = pd.read_csv(run_dir / "nav.csv", parse_dates=["date"], float_precision="round_trip").set_index("date")
    with open(run_dir / "diagnostics.jsonl", encoding="utf-8") as fh:
        diag = [json.loads(line) for line in fh if line.strip()]
    config = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
    return nav, diag, config
