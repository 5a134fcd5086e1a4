"""Markowitz management of a dynamic basket of moving-band statistical arbitrages."""

__version__ = "0.1.0"

from .backtest import BacktestConfig, BacktestResult, accrue_costs, map_previous_q, run
from .core import ArbSnapshot, Mbsa, alpha, mbsa_price, midpoint, snapshot, xi_schedule
from .data import CostConfig, MarketData, SyntheticSpec, generate_synthetic, load_market_data
from .metrics import (
    PerformanceReport, annualized_return, annualized_vol, blend, ewma_correlation, max_drawdown,
    performance_report, regress_market, sharpe_ratio, turnover,
)
from .markowitz import MarkowitzInputs, RebalanceResult, Tolerances, build_problem, rebalance, soften_problem, solve, verify

__all__ = [
    "ArbSnapshot", "BacktestConfig", "BacktestResult", "CostConfig", "MarkowitzInputs", "MarketData",
    "Mbsa", "RebalanceResult", "SyntheticSpec", "Tolerances", "accrue_costs", "alpha", "build_problem",
    "generate_synthetic", "load_market_data", "map_previous_q", "mbsa_price", "midpoint", "rebalance",
    "run", "snapshot",
    "PerformanceReport", "annualized_return", "annualized_vol", "blend", "ewma_correlation", "max_drawdown",
    "performance_report", "regress_market", "sharpe_ratio", "turnover", "soften_problem", "solve", "verify", "xi_schedule",
]
