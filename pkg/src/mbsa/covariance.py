"""Iterated-EWMA covariance of centered asset prices, smoothing and arb-space mapping.

Every EWMA here uses finite-sample-corrected weights: after absorbing
x_1..x_k the estimate is sum(lam**(k-i) x_i) / sum(lam**(k-i)), so the EWMA
of a single observation is that observation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .constants import DEFAULT_WINDOW
from .errors import DimensionError, InsufficientHistoryError, ValidationError

VOL_FLOOR_FRACTION = 1e-6
SYMMETRY_TOL = 1e-8


def decay(half_life):
    if half_life <= 0:
        raise ValidationError(f"half-life must be positive, got {half_life}")
    return 2.0 ** (-1.0 / half_life)


@dataclass(frozen=True)
class EwmaState:
    half_life: float
    value: np.ndarray | float | None = None
    count: int = 0

    @property
    def lam(self):
        return decay(self.half_life)

    def weight(self, count=None):
        """Total unnormalized weight after ``count`` observations."""
        k = self.count if count is None else count
        lam = self.lam
        return (1.0 - lam**k) / (1.0 - lam)

    def update(self, x):
        x = np.asarray(x, dtype=float)
        if self.value is None:
            return replace(self, value=x.copy(), count=1)
        if np.shape(self.value) != x.shape:
            raise DimensionError(f"EWMA input shape changed from {np.shape(self.value)} to {x.shape}")
        w_new = self.weight(self.count + 1)
        value = self.value + (x - self.value) / w_new
        return replace(self, value=value, count=self.count + 1)


def ewma(xs, half_life):
    """Finite-sample-corrected EWMA of a sequence, returning every step."""
    state = EwmaState(half_life)
    out = []
    for x in xs:
        state = state.update(x)
        out.append(state.value)
    return np.array(out)


@dataclass(frozen=True)
class IewmaState:
    vol_state: EwmaState
    corr_state: EwmaState
    mean_window: tuple = ()
    window: int = DEFAULT_WINDOW
    min_periods: int = DEFAULT_WINDOW
    vols: np.ndarray | None = None

    @classmethod
    def create(cls, vol_half_life=125, corr_half_life=250, window=DEFAULT_WINDOW, min_periods=None):
        return cls(
            vol_state=EwmaState(vol_half_life),
            corr_state=EwmaState(corr_half_life),
            window=window,
            min_periods=window if min_periods is None else min_periods,
        )

    @property
    def ready(self):
        return self.corr_state.count >= self.min_periods

    def covariance(self):
        """Sigma^P = D R D from the current vol and correlation states."""
        if not self.ready:
            raise InsufficientHistoryError(
                f"IEWMA needs {self.min_periods} centered observations, has {self.corr_state.count}"
            )
        C = self.corr_state.value
        d = np.sqrt(np.clip(np.diag(C), 0.0, None))
        nz = d > 0
        R = np.zeros_like(C)
        R[np.ix_(nz, nz)] = C[np.ix_(nz, nz)] / np.outer(d[nz], d[nz])
        R = np.clip(0.5 * (R + R.T), -1.0, 1.0)
        np.fill_diagonal(R, 1.0)
        return self.vols[:, None] * R * self.vols[None, :]


def center_prices(P_window):
    """P_t minus the mean of the trailing window (rows of ``P_window``, P_t last)."""
    P_window = np.atleast_2d(np.asarray(P_window, dtype=float))
    if len(P_window) < 1:
        raise InsufficientHistoryError("center_prices needs at least one row")
    return P_window[-1] - P_window.mean(axis=0)


def iewma_update(state, P_t):
    """Absorb one price vector into the iterated-EWMA estimator.

    The price is centered against the trailing ``state.window`` prices
    (itself included). Until that window is full nothing is absorbed. The
    squared centered prices update the volatility EWMA; the centered prices
    standardized by the updated vols update the correlation EWMA.

    Returns
    -------
    state : IewmaState
    sigma : ndarray or None
        The covariance estimate, or ``None`` during warm-up.
    """
    P_t = np.asarray(P_t, dtype=float)
    window = (state.mean_window + (P_t,))[-state.window:]
    state = replace(state, mean_window=window)
    if len(window) < state.window:
        return state, None
    centered = center_prices(np.array(window))
    vol_state = state.vol_state.update(centered**2)
    floor = VOL_FLOOR_FRACTION * float(np.median(P_t))
    vols = np.maximum(np.sqrt(vol_state.value), floor)
    z = centered / vols
    corr_state = state.corr_state.update(np.outer(z, z))
    state = replace(state, vol_state=vol_state, corr_state=corr_state, vols=vols)
    return state, (state.covariance() if state.ready else None)


def clip_psd(A):
    """Symmetrize and clip negative eigenvalues at zero."""
    A = 0.5 * (A + A.T)
    w, V = np.linalg.eigh(A)
    if w.min() >= 0:
        return A
    A = (V * np.clip(w, 0.0, None)) @ V.T
    return 0.5 * (A + A.T)


def smooth(smoother, sigma_raw):
    sigma_raw = np.asarray(sigma_raw, dtype=float)
    _check_symmetric(sigma_raw)
    smoother = smoother.update(sigma_raw)
    return smoother, clip_psd(smoother.value)


def arb_covariance(S, sigma_P):
    S, sigma_P = np.asarray(S, dtype=float), np.asarray(sigma_P, dtype=float)
    if S.ndim != 2 or sigma_P.shape != (S.shape[0], S.shape[0]):
        raise DimensionError(f"S {S.shape} incompatible with Sigma^P {sigma_P.shape}")
    out = S.T @ sigma_P @ S
    return 0.5 * (out + out.T)


def factorize(sigma):
    """Return R with R.T @ R == sigma for a symmetric PSD matrix."""
    sigma = np.asarray(sigma, dtype=float)
    _check_symmetric(sigma)
    if sigma.size == 0:
        return np.zeros_like(sigma)
    w, V = np.linalg.eigh(0.5 * (sigma + sigma.T))
    return np.sqrt(np.clip(w, 0.0, None))[:, None] * V.T


def _check_symmetric(A):
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {A.shape}")
    scale = max(np.abs(A).max(initial=0.0), 1.0)
    if np.abs(A - A.T).max(initial=0.0) > SYMMETRY_TOL * scale:
        raise ValidationError("matrix is not symmetric")


class RiskModel:
    """Streaming Sigma^P: IEWMA on centered prices followed by EWMA smoothing."""

    def __init__(self, window=DEFAULT_WINDOW, half_lives=(125, 250, 250)):
        vol_hl, corr_hl, smooth_hl = half_lives
        self.iewma = IewmaState.create(vol_hl, corr_hl, window)
        self.smoother = EwmaState(smooth_hl)
        self.sigma = None

    def update(self, P_t):
        self.iewma, raw = iewma_update(self.iewma, P_t)
        if raw is not None:
            self.smoother, self.sigma = smooth(self.smoother, raw)
        return self.sigma
