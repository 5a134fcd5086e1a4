import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mbsa.data import SyntheticSpec, generate_synthetic  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_universe():
    return generate_synthetic(SyntheticSpec(n_assets=8, n_days=160, n_baskets=3, seed=7,
                                            spread_bps=2.0, short_rate_annual=0.005))


@pytest.fixture
def write_prices(tmp_path):
    def _write(rows, header="date,ticker,price", name="prices.csv"):
        path = tmp_path / name
        path.write_text(header + "\n" + "\n".join(rows) + "\n", encoding="utf-8")
        return path
    return _write
