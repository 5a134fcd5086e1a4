import numpy as np
import pytest

from mbsa.covariance import (
    EwmaState, IewmaState, RiskModel, arb_covariance, center_prices, ewma, factorize, iewma_update, smooth,
)
from mbsa.errors import DimensionError, InsufficientHistoryError, ValidationError
from oracles import ewma_weighted


def prices_with_centered(x, M):
    """Prices whose value minus the trailing M-mean (itself included) equals x after warm-up."""
    x = np.atleast_2d(np.asarray(x, dtype=float).T).T
    P = np.full((len(x) + M - 1, x.shape[1]), 100.0)
    for t in range(M - 1, len(P)):
        P[t] = (M * x[t - M + 1] + P[t - M + 1:t].sum(axis=0)) / (M - 1)
    return P


def feed(state, P):
    sigma = None
    for row in P:
        state, sigma = iewma_update(state, row)
    return state, sigma


def test_center_prices_examples():
    assert center_prices(np.full((5, 2), 3.0)).tolist() == [0.0, 0.0]
    assert center_prices([[1.0], [2.0], [3.0]]).tolist() == [1.0]
    assert center_prices([[1.0, 10.0], [3.0, 10.0]]).tolist() == [1.0, 0.0]


def test_prices_with_centered_helper():
    x = np.random.default_rng(1).normal(size=(50, 2))
    P = prices_with_centered(x, 21)
    for t in range(20, len(P)):
        np.testing.assert_allclose(center_prices(P[t - 20:t + 1]), x[t - 20], atol=1e-9)


def test_ewma_state_matches_weighted_sum(rng):
    xs = rng.normal(size=(40, 3))
    np.testing.assert_allclose(ewma(xs, 7)[-1], ewma_weighted(xs, 7), rtol=1e-12)
    np.testing.assert_allclose(ewma(xs[:1], 7)[-1], xs[0])


def test_iewma_single_asset_fixed_point():
    M = 21
    P = 50.0 + (2.0 / (M - 1)) * np.arange(400)[:, None]  # centered value is exactly 1
    state, sigma = feed(IewmaState.create(window=M), P)
    assert sigma.shape == (1, 1)
    assert sigma[0, 0] == pytest.approx(1.0, rel=1e-9)
    assert state.vols[0] == pytest.approx(1.0, rel=1e-9)


def test_iewma_identical_streams_fully_correlated(rng):
    x = rng.normal(size=2600)
    P = prices_with_centered(np.column_stack([x, x]), 21)
    _, sigma = feed(IewmaState.create(), P)
    corr = sigma[0, 1] / np.sqrt(sigma[0, 0] * sigma[1, 1])
    assert corr > 1 - 1e-3


def test_iewma_independent_streams_uncorrelated():
    rng = np.random.default_rng(2024)
    x = rng.choice([-1.0, 1.0], size=(100_000, 2))
    P = prices_with_centered(x, 21)
    # long correlation half-life so the Monte Carlo estimate has converged
    _, sigma = feed(IewmaState.create(corr_half_life=10_000), P)
    corr = sigma[0, 1] / np.sqrt(sigma[0, 0] * sigma[1, 1])
    assert abs(corr) < 0.05


def test_iewma_warmup():
    state = IewmaState.create(window=5)
    for t in range(8):
        state, sigma = iewma_update(state, np.array([1.0 + t, 2.0 + t * t]))
        assert sigma is None
    with pytest.raises(InsufficientHistoryError):
        state.covariance()
    state, sigma = iewma_update(state, np.array([9.0, 70.0]))
    assert sigma is not None


def test_iewma_matches_hand_recursion(rng):
    M, hv, hc = 4, 3.0, 5.0
    P = rng.uniform(10, 20, size=(30, 3))
    state, sigma = feed(IewmaState.create(hv, hc, window=M, min_periods=1), P)
    # direct recomputation: vols from weighted mean squares, then correlation of standardized values
    cen = np.array([P[t] - P[t - M + 1:t + 1].mean(axis=0) for t in range(M - 1, len(P))])
    vol_path = np.sqrt(np.array([ewma_weighted(cen[: k + 1] ** 2, hv) for k in range(len(cen))]))
    z = cen / vol_path
    C = ewma_weighted(np.einsum("ti,tj->tij", z, z), hc)
    d = np.sqrt(np.diag(C))
    R = C / np.outer(d, d)
    np.testing.assert_allclose(sigma, vol_path[-1][:, None] * R * vol_path[-1][None, :], rtol=1e-10)


def test_iewma_replay_deterministic(rng):
    P = rng.uniform(10, 20, size=(60, 4))
    s1, sig1 = feed(IewmaState.create(), P)
    s2, sig2 = feed(IewmaState.create(), P)
    np.testing.assert_array_equal(sig1, sig2)
    np.testing.assert_array_equal(s1.corr_state.value, s2.corr_state.value)


def test_vol_floor_for_constant_asset():
    P = np.column_stack([np.full(60, 10.0), 10 + np.sin(np.arange(60))])
    state, sigma = feed(IewmaState.create(), P)
    assert state.vols[0] == pytest.approx(1e-6 * np.median(P[-1]))
    assert np.all(np.isfinite(sigma))


def test_smooth_first_and_fixed_point(rng):
    A = rng.normal(size=(3, 3))
    A = A @ A.T
    st, out = smooth(EwmaState(250), A)
    np.testing.assert_allclose(out, A, rtol=1e-12)
    for _ in range(20):
        st, out = smooth(st, A)
    np.testing.assert_allclose(out, A, rtol=1e-10)


def test_smooth_alternating_matches_weighted_sum(rng):
    A, B = (lambda X: X @ X.T)(rng.normal(size=(3, 3))), (lambda X: X @ X.T)(rng.normal(size=(3, 3)))
    seq = [A if k % 2 == 0 else B for k in range(301)]
    st = EwmaState(10)
    for S in seq:
        st, out = smooth(st, S)
    np.testing.assert_allclose(out, ewma_weighted(seq, 10), atol=1e-10)
    # last observation was A: the estimate lies between A and B, nearer A
    assert np.linalg.norm(out - A) < np.linalg.norm(out - B)


def test_smooth_rejects_shape_change_and_asymmetry():
    st, _ = smooth(EwmaState(5), np.eye(2))
    with pytest.raises(DimensionError):
        smooth(st, np.eye(3))
    with pytest.raises(ValidationError):
        smooth(EwmaState(5), np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_arb_covariance_examples():
    sigma_P = np.array([[1.0, 0.5], [0.5, 1.0]])
    np.testing.assert_array_equal(arb_covariance(np.eye(2), sigma_P), sigma_P)
    assert arb_covariance(np.array([[1.0], [0.0]]), sigma_P).tolist() == [[1.0]]
    assert arb_covariance(np.array([[1.0], [1.0]]), sigma_P).tolist() == [[3.0]]
    with pytest.raises(DimensionError):
        arb_covariance(np.ones((3, 1)), sigma_P)


@pytest.mark.parametrize("sigma", [np.eye(3), np.diag([4.0, 9.0])])
def test_factorize_simple(sigma):
    R = factorize(sigma)
    np.testing.assert_allclose(R.T @ R, sigma, atol=1e-14)


def test_factorize_random_psd(rng):
    for k in range(10):
        A = rng.normal(size=(6, 4 + k % 3))
        sigma = A.T @ A
        R = factorize(sigma)
        assert np.linalg.norm(R.T @ R - sigma) / np.linalg.norm(sigma) < 1e-8


def test_factorize_singular(rng):
    a = rng.normal(size=(4, 1))
    sigma = a @ a.T
    R = factorize(sigma)
    assert np.linalg.norm(R.T @ R - sigma) / np.linalg.norm(sigma) < 1e-8


def test_risk_model_emits_psd(small_universe):
    data, _ = small_universe
    model = RiskModel()
    emitted = 0
    for row in data.prices:
        sigma = model.update(row)
        if sigma is None:
            continue
        emitted += 1
        np.testing.assert_array_equal(sigma, sigma.T)
        assert np.linalg.eigvalsh(sigma).min() >= -1e-10 * np.trace(sigma)
    assert emitted == data.n_dates - 40
