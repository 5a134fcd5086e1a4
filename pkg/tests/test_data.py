import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mbsa.data import (
    CostConfig, MarketData, SyntheticSpec, generate_synthetic, load_market_data, market_returns,
    write_market_csv,
)
from mbsa.errors import DimensionError, ParseError, ValidationError


def _grid(dates, tickers, price=lambda t, j: 10.0 + t + j):
    return [f"{d},{tk},{price(t, j)}" for t, d in enumerate(dates) for j, tk in enumerate(tickers)]


DATES = ["2024-01-02", "2024-01-03", "2024-01-04", "2024-01-05", "2024-01-08"]


def test_well_formed_file(write_prices):
    data = load_market_data(write_prices(_grid(DATES, ["AAA", "BBB", "CCC"])))
    assert data.prices.shape == (5, 3)
    assert data.tickers == ("AAA", "BBB", "CCC")
    assert data.prices[2, 1] == 13.0
    data.validate()


def test_zero_price_names_cell(write_prices):
    rows = _grid(DATES, ["AAA", "BBB", "CCC"], price=lambda t, j: 0.0 if (t, j) == (3, 1) else 5.0)
    with pytest.raises(ValidationError, match=r"BBB.*2024-01-05"):
        load_market_data(write_prices(rows))


def test_spread_proxy(write_prices):
    data = load_market_data(write_prices(_grid(DATES, ["AAA", "BBB", "CCC"])), CostConfig(spread_bps=5))
    # independent spot check on three cells: half spread = 5bp of price
    for t, j in [(0, 0), (2, 1), (4, 2)]:
        assert data.half_spreads[t, j] == pytest.approx(0.0005 * (10.0 + t + j), rel=1e-15)
    assert data.short_rates[1, 1] == pytest.approx(0.005 / 250 * 12.0)


def test_cost_columns_override_proxies(write_prices):
    rows = [r + ",0.02,0.001" for r in _grid(DATES[:2], ["AAA", "BBB"])]
    data = load_market_data(write_prices(rows, header="date,ticker,price,half_spread,short_rate"))
    assert np.all(data.half_spreads == 0.02)
    assert np.all(data.short_rates == 0.001)


def test_gappy_asset_dropped(write_prices):
    rows = [r for r in _grid(DATES, ["AAA", "BBB", "CCC"]) if not r.startswith("2024-01-04,BBB")]
    data = load_market_data(write_prices(rows))
    assert data.tickers == ("AAA", "CCC")
    # surviving columns keep their own prices
    assert data.prices[0, 1] == 12.0


@pytest.mark.parametrize("rows,match", [
    (["2024-01-02,AAA,abc"], r"row 2, column 'price'"),
    (["2024/01/02,AAA,1"], r"row 2, column 'date'"),
    (["2024-01-02,AAA"], r"row 2"),
])
def test_malformed_rows(write_prices, rows, match):
    with pytest.raises(ParseError, match=match):
        load_market_data(write_prices(rows))


def test_bad_header(write_prices):
    with pytest.raises(ParseError, match="header"):
        load_market_data(write_prices(["x"], header="day,ticker,price"))


def test_too_few_assets(write_prices):
    with pytest.raises(DimensionError):
        load_market_data(write_prices(_grid(DATES, ["AAA"])))


def test_csv_round_trip(tmp_path, small_universe):
    data, _ = small_universe
    write_market_csv(data, tmp_path / "p.csv")
    back = load_market_data(tmp_path / "p.csv")
    assert back.tickers == data.tickers and back.dates == data.dates
    np.testing.assert_array_equal(back.prices, data.prices)
    np.testing.assert_array_equal(back.half_spreads, data.half_spreads)


def test_synthetic_zero_band_has_zero_alpha():
    from mbsa.core import snapshot

    data, arbs = generate_synthetic(SyntheticSpec(n_assets=4, n_days=120, n_baskets=1, band_vol=0.0, seed=3))
    arb = arbs[0]
    for t in range(arb.discovered + 20, data.n_dates):
        snap = snapshot(arbs, t, data.prices[: t + 1], 21, 1.0)
        assert abs(snap.alpha[0]) < 1e-9 * np.abs(arb.holdings) @ data.prices[t]


def test_synthetic_deterministic():
    spec = SyntheticSpec(n_assets=6, n_days=100, n_baskets=2, seed=11)
    (d1, a1), (d2, a2) = generate_synthetic(spec), generate_synthetic(spec)
    np.testing.assert_array_equal(d1.prices, d2.prices)
    assert d1.dates == d2.dates
    assert [a.holdings.tolist() for a in a1] == [a.holdings.tolist() for a in a2]


def test_synthetic_ar1_coefficient():
    data, arbs = generate_synthetic(SyntheticSpec(n_assets=2, n_days=10_000, n_baskets=1, band_vol=1.0,
                                                  drift_vol=0.0005, reversion=0.5, seed=5))
    p = data.prices @ arbs[0].holdings
    M = 21
    mu = np.convolve(p, np.ones(M) / M, mode="valid")
    x = (p[M - 1:] - mu)[M:]
    # least-squares AR(1) fit
    phi = (x[1:] @ x[:-1]) / (x[:-1] @ x[:-1])
    assert phi == pytest.approx(0.5, abs=0.05)
    assert x.std() == pytest.approx(1.0, abs=0.1)


def test_synthetic_arbs_metadata():
    data, arbs = generate_synthetic(SyntheticSpec(n_assets=10, n_days=200, n_baskets=3, seed=2))
    assert len(arbs) == 3
    for arb in arbs:
        assert (arb.discovered, arb.decommission, arb.ramp) == (21, 200, 21)
        assert np.all(arb.holdings == np.round(arb.holdings))
    members = [set(np.flatnonzero(a.holdings)) for a in arbs]
    assert all(not (a & b) for i, a in enumerate(members) for b in members[i + 1:])


@pytest.mark.parametrize("kwargs", [{"reversion": 1.2}, {"reversion": 0.0}, {"band_vol": -1},
                                    {"n_assets": 3, "n_baskets": 2}, {"n_days": 30}])
def test_synthetic_spec_validation(kwargs):
    with pytest.raises(ValidationError):
        SyntheticSpec(**kwargs)


def test_spec_from_dict_rejects_unknown_keys():
    with pytest.raises(ValidationError, match="unknown"):
        SyntheticSpec.from_dict(json.loads('{"n_assets": 4, "bogus": 1}'))


@settings(max_examples=15, deadline=None)
@given(
    n_baskets=st.integers(1, 3),
    extra=st.integers(0, 4),
    seed=st.integers(0, 2**31 - 1),
    reversion=st.floats(0.05, 0.95),
    band_vol=st.floats(0.0, 2.0),
)
def test_synthetic_invariants(n_baskets, extra, seed, reversion, band_vol):
    spec = SyntheticSpec(n_assets=2 * n_baskets + extra, n_days=80, n_baskets=n_baskets, seed=seed,
                         reversion=reversion, band_vol=band_vol, spread_bps=3.0)
    data, arbs = generate_synthetic(spec)
    data.validate()
    assert data.prices.min() > 0.01
    assert len(arbs) == n_baskets


def test_market_data_rejects_unsorted_dates():
    import datetime as dt

    d = [dt.date(2024, 1, 3), dt.date(2024, 1, 2)]
    with pytest.raises(ValidationError, match="increasing"):
        MarketData(d, ["A", "B"], np.ones((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)))


def test_market_returns_first_zero(small_universe):
    data, _ = small_universe
    r = market_returns(data)
    assert r.iloc[0] == 0.0
    idx = data.prices.mean(axis=1)
    assert r.iloc[5] == pytest.approx(idx[5] / idx[4] - 1)
