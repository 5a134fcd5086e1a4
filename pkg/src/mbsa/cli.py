"""``mbsa`` command line: synth, backtest and report."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .backtest import BacktestConfig, read_bundle, run, write_bundle
from .core import load_arbs, save_arbs
from .data import CostConfig, SyntheticSpec, generate_synthetic, load_market_data, market_returns, write_market_csv
from .errors import MbsaError, ParseError, ValidationError
from .io import atomic_write_text, dumps, fmt, sha256
from .metrics import annual_breakdown, blend, ewma_correlation, performance_report, sharpe_ratio

logger = logging.getLogger("mbsa")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_FALLBACKS = 0, 1, 2, 3

REPORT_COLUMNS = {
    "Return": "ann_return",
    "Volatility": "ann_vol",
    "Sharpe ratio": "sharpe",
    "Turnover": "ann_turnover",
    "Drawdown": "max_drawdown",
    "Active return": "active_return",
    "Active risk": "active_risk",
    "Residual return": "residual_return",
    "Residual risk": "residual_risk",
    "Beta": "beta",
    "Information ratio": "information_ratio",
}


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None


def _write_manifest(out, command, config, inputs, seed=None):
    manifest = {
        "command": command,
        "config": config,
        "inputs": {name: {"path": str(p), "sha256": sha256(p)} for name, p in inputs.items()},
        "version": __version__,
        "seed": seed,
        "output_dir": str(out),
    }
    atomic_write_text(Path(out) / "manifest.json", dumps(manifest, indent=2) + "\n")


def _load_market_series(path):
    frame = pd.read_csv(path)
    if list(frame.columns[:2]) != ["date", "return"]:
        raise ParseError(f"{path}: expected header date,return")
    try:
        frame["date"] = pd.to_datetime(frame["date"], format="ISO8601")
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return frame.set_index("date")["return"].astype(float)


def build_report(nav, diag, market=None, blend_weights=(0.9,), half_life=250):
    """Assemble report tables from a run bundle.

    Metrics start on the first trading day of the run.
    """
    trading = [i for i, e in enumerate(diag) if e.get("trading")]
    start = trading[0] if trading else 0
    r = nav["return"].iloc[start:]
    turnovers = [e.get("turnover", 0.0) or 0.0 for e in diag[start:]]
    r_m = None
    if market is not None:
        missing = r.index.difference(market.index)
        if len(missing):
            raise ValidationError(
                f"market series misaligned: {len(missing)} run date(s) missing, first {missing[0].date()}"
            )
        r_m = market.loc[r.index]
    perf = performance_report(r.values, nav["nav"].iloc[start:].values,
                              None if r_m is None else r_m.values, turnovers)
    report = {"summary": perf.to_dict(), "start": r.index[0].date().isoformat(), "periods": len(r)}
    for key in ("sharpe", "information_ratio"):
        if report["summary"][key] is None and (key == "sharpe" or r_m is not None):
            logger.warning("%s is undefined (zero denominator); reported as null", key)
    annual = annual_breakdown(r, r_m)
    report["annual"] = annual.to_dict(orient="records")
    correlation = blends = None
    if r_m is not None:
        scaled = r_m * (perf.market_scale or 1.0)
        correlation = ewma_correlation(r, r_m, half_life)
        blends = []
        for w in blend_weights:
            mixed = blend(r, scaled, w)
            blends.append({"weight": w, "sharpe": sharpe_ratio(mixed.values)})
        report["blend"] = blends
        report["correlation_terminal"] = (
            None if correlation.dropna().empty else float(correlation.dropna().iloc[-1])
        )
    return report, annual, correlation, blends


def _write_report(out, report, annual, correlation):
    out = Path(out)
    atomic_write_text(out / "report.json", dumps(report, indent=2) + "\n")
    summary = report["summary"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    w.writerow(["" if summary[k] is None else fmt(summary[k]) for k in REPORT_COLUMNS.values()])
    atomic_write_text(out / "report.csv", buf.getvalue())
    atomic_write_text(out / "annual.csv", annual.to_csv(index=False, lineterminator="\n"))
    if correlation is not None:
        frame = correlation.rename("correlation").to_frame()
        frame.index = frame.index.strftime("%Y-%m-%d")
        frame.index.name = "date"
        atomic_write_text(out / "correlation.csv", frame.to_csv(lineterminator="\n", float_format="%.17g"))


def cmd_synth(args):
    spec = SyntheticSpec.from_dict(_read_json(args.spec))
    data, arbs = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_market_csv(data, out / "prices.csv")
    save_arbs(arbs, data, out / "arbs.json")
    market = market_returns(data)
    atomic_write_text(out / "market.csv", "date,return\n" + "".join(
        f"{d.isoformat()},{fmt(v)}\n" for d, v in market.items()))
    _write_manifest(out, "synth", spec.__dict__, {"spec": args.spec}, seed=spec.seed)
    return EXIT_OK


def cmd_backtest(args):
    raw = _read_json(args.config) if args.config else {}
    costs = CostConfig.from_dict(raw.pop("costs", {}))
    if args.soften:
        raw["soften"] = True
    config = BacktestConfig.from_dict(raw)
    data = load_market_data(args.prices, costs)
    arbs = load_arbs(args.arbs, data, lifetime=config.lifetime, ramp=config.ramp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    problem_lines, cov_rows = [], []
    problem_sink = (lambda d, payload: problem_lines.append(dumps({"date": d.isoformat(), **payload}) + "\n")
                    if args.dump_problems else None)

    def cov_sink(d, sigma):
        iu = np.triu_indices(len(data.tickers))
        for i, j in zip(*iu):
            cov_rows.append(f"{d.isoformat()},{data.tickers[i]},{data.tickers[j]},{fmt(sigma[i, j])}\n")

    result = run(data, arbs, config, problem_sink=problem_sink,
                 cov_sink=cov_sink if args.dump_cov else None)
    write_bundle(result, out, config)
    if args.dump_problems:
        atomic_write_text(out / "problems.jsonl", "".join(problem_lines))
    if args.dump_cov:
        atomic_write_text(out / "covariance.csv", "date,ticker_i,ticker_j,cov\n" + "".join(cov_rows))
    nav, diag, _ = read_bundle(out)
    _write_report(out, *build_report(nav, diag)[:3])
    resolved = {**config.to_dict(), "costs": costs.__dict__}
    _write_manifest(out, "backtest", resolved, {"prices": args.prices, "arbs": args.arbs,
                                                **({"config": args.config} if args.config else {})})
    if config.max_fallbacks is not None and result.n_fallbacks > config.max_fallbacks:
        logger.error("%d solver fallbacks exceed the limit of %d", result.n_fallbacks, config.max_fallbacks)
        return EXIT_FALLBACKS
    return EXIT_OK


def cmd_report(args):
    nav, diag, _ = read_bundle(args.run)
    market = _load_market_series(args.market) if args.market else None
    weights = tuple(float(w) for w in args.blend_weights.split(",")) if args.blend_weights else (0.9,)
    report, annual, correlation, blends = build_report(nav, diag, market, weights, args.half_life)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_report(out, report, annual, correlation)
    if blends is not None:
        atomic_write_text(out / "blend.csv", "weight,sharpe\n" + "".join(
            f"{fmt(b['weight'])},{'' if b['sharpe'] is None else fmt(b['sharpe'])}\n" for b in blends))
    inputs = {"nav": Path(args.run) / "nav.csv"}
    if args.market:
        inputs["market"] = args.market
    _write_manifest(out, "report", {"blend_weights": list(weights), "half_life": args.half_life}, inputs)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="mbsa", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("backtest", help="run the daily Markowitz backtest")
    p.add_argument("--prices", required=True)
    p.add_argument("--arbs", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--soften", action="store_true", help="use the penalized arb-to-asset variant")
    p.add_argument("--dump-problems", action="store_true")
    p.add_argument("--dump-cov", action="store_true")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("synth", help="generate a synthetic universe with planted baskets")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="performance report for a run bundle")
    p.add_argument("--run", required=True)
    p.add_argument("--market")
    p.add_argument("--out", required=True)
    p.add_argument("--blend-weights", default="0.9")
    p.add_argument("--half-life", type=float, default=250)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    level = os.environ.get("MBSA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except MbsaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
