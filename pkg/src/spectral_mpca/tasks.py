"""Model-level tasks: curve imputation, score forecasting, and metrics.

A fitted model bundles the mean curves, the shared filter bank, the
per-subject score spectral densities, and the MAP scores.  Imputation
reconstructs every observed curve; forecasting extends each component's
score series with a VAR chosen by AIC and reconstructs future curves.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DimensionError,
    FrequencyGrid,
    InsufficientDataError,
    TimeGrid,
)
from .filters import FilterBank
from .scores import ScoreArray

__all__ = [
    "FittedModel",
    "VarFit",
    "UndefinedMetricError",
    "impute",
    "fit_var",
    "forecast_scores",
    "forecast",
    "nmse",
    "rolling_nmspe",
]


class UndefinedMetricError(ValueError):
    """Normalizing by an identically zero reference signal."""


@dataclass(frozen=True)
class FittedModel:
    """Everything needed to reconstruct and forecast a fitted panel."""

    time_grid: TimeGrid
    freq_grid: FrequencyGrid
    means: np.ndarray  # (p, Mt)
    bank: FilterBank
    noise_variances: np.ndarray  # (p,)
    eta: np.ndarray  # (p, K, J)
    scores: ScoreArray
    lag_window: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_subjects(self) -> int:
        return self.means.shape[0]

    @property
    def n_curves(self) -> int:
        return self.scores.layout.n_curves

    @property
    def n_components(self) -> int:
        return self.bank.n_components


def impute(model: FittedModel) -> np.ndarray:
    """Reconstruct all curves on the model grid, shape (p, J, Mt)."""
    p, J, Mt = model.n_subjects, model.n_curves, model.time_grid.size
    out = np.broadcast_to(model.means[:, None, :], (p, J, Mt)).copy()
    for k in range(model.n_components):
        L = model.bank.max_lags[k]
        comp = model.scores.component(k)  # (J + 2L, p)
        for lag in range(-L, L + 1):
            sli = comp[lag + L: lag + L + J, :]  # (J, p)
            out += sli.T[:, :, None] * model.bank.filter(k, lag)[None, None, :]
    return out


@dataclass(frozen=True)
class VarFit:
    """VAR(P) fit without intercept: x_t = sum_m coeffs[m-1] x_{t-m} + e."""

    order: int
    coeffs: np.ndarray  # (P, p, p)
    sigma: np.ndarray  # (p, p) residual covariance
    aic: np.ndarray  # AIC per candidate order 1..P_max
    spectral_radius: float
    ridge_used: bool


def _companion_radius(coeffs: np.ndarray) -> float:
    P, p, _ = coeffs.shape
    comp = np.zeros((P * p, P * p))
    comp[:p, :] = np.concatenate(list(coeffs), axis=1)
    if P > 1:
        comp[p:, :-p] = np.eye((P - 1) * p)
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def fit_var(series: np.ndarray, max_order: int = 5) -> VarFit:
    """AIC-selected VAR without intercept on a (T, p) score series.

    All candidate orders are fit on the rows conditioned past the
    largest candidate lag, so their AICs are comparable.  The candidate
    range is capped at floor(T / (3 p)) to keep the regression
    overdetermined; a rank-deficient regressor matrix falls back to a
    1e-8 ridge with a warning.
    """
    series = np.asarray(series, float)
    if series.ndim != 2:
        raise DimensionError("series must be (T, p)")
    T, p = series.shape
    cap = T // (3 * p)
    if cap < 1:
        raise InsufficientDataError(
            f"series of length {T} too short for VAR in dimension {p}"
        )
    P_max = max(1, min(int(max_order), cap))
    rows = np.arange(P_max, T)
    Y = series[rows]
    n_eff = rows.size
    fits = []
    aics = np.full(P_max, np.inf)
    any_ridge = False
    for P in range(1, P_max + 1):
        X = np.concatenate([series[rows - m] for m in range(1, P + 1)], axis=1)
        ridge = False
        if np.linalg.matrix_rank(X) < X.shape[1]:
            warnings.warn(
                f"VAR({P}) regressors rank deficient; using 1e-8 ridge",
                RuntimeWarning,
            )
            ridge = True
            B = np.linalg.solve(X.T @ X + 1e-8 * np.eye(X.shape[1]), X.T @ Y)
        else:
            B, *_ = np.linalg.lstsq(X, Y, rcond=None)
        resid = Y - X @ B
        sigma = resid.T @ resid / n_eff
        sign, logdet = np.linalg.slogdet(sigma)
        aic = np.inf if sign <= 0 else logdet + 2.0 * P * p * p / n_eff
        aics[P - 1] = aic
        coeffs = np.stack([B[(m - 1) * p: m * p, :].T for m in range(1, P + 1)])
        fits.append((coeffs, sigma, ridge))
        any_ridge = any_ridge or ridge
    best = int(np.argmin(aics))
    coeffs, sigma, ridge = fits[best]
    radius = _companion_radius(coeffs)
    if radius > 1.0:
        warnings.warn(
            f"VAR spectral radius {radius:.3f} >= 1; forecasts may diverge",
            RuntimeWarning,
        )
    return VarFit(best + 1, coeffs, sigma, aics, radius, ridge)


def forecast_scores(fit: VarFit, series: np.ndarray, steps: int) -> np.ndarray:
    """Iterate the VAR forward ``steps`` times; returns (steps, p)."""
    series = np.asarray(series, float)
    hist = list(series)
    out = []
    for _ in range(steps):
        x = np.zeros(series.shape[1])
        for m in range(1, fit.order + 1):
            x += fit.coeffs[m - 1] @ hist[-m]
        hist.append(x)
        out.append(x)
    return np.array(out).reshape(steps, series.shape[1])


def forecast(
    model: FittedModel, horizon: int, max_order: int = 5
) -> tuple[np.ndarray, list]:
    """Forecast curves 1..horizon steps past the panel.

    Each component's score series is extended by its own VAR; curve
    J + m combines scores at times J + m + l for |l| <= L_k, which the
    ``horizon`` extension covers exactly.  Returns (p, horizon, Mt)
    curves and the per-component VAR fits.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    p, J, Mt = model.n_subjects, model.n_curves, model.time_grid.size
    out = np.broadcast_to(model.means[:, None, :], (p, horizon, Mt)).copy()
    var_fits = []
    for k in range(model.n_components):
        L = model.bank.max_lags[k]
        comp = model.scores.component(k)
        vfit = fit_var(comp, max_order)
        var_fits.append(vfit)
        ext = np.vstack([comp, forecast_scores(vfit, comp, horizon)])
        for m in range(1, horizon + 1):
            for lag in range(-L, L + 1):
                pos = J + m + lag - 1 + L  # 1-based score time J+m+lag
                out[:, m - 1, :] += np.outer(ext[pos], model.bank.filter(k, lag))
    return out, var_fits


def nmse(truth: np.ndarray, estimate: np.ndarray, grid: TimeGrid) -> float:
    """Normalized mean squared error over a set of curves.

    Both arrays are (..., Mt) stacks sampled on ``grid``; the leading
    axes are summed.  Normalization is the integrated squared truth.
    """
    truth = np.asarray(truth, float)
    estimate = np.asarray(estimate, float)
    if truth.shape != estimate.shape or truth.shape[-1] != grid.size:
        raise DimensionError("truth and estimate must share shape on the grid")
    w = grid.weights
    num = float(np.sum((truth - estimate) ** 2 @ w))
    den = float(np.sum(truth ** 2 @ w))
    if den <= 1e-300:
        raise UndefinedMetricError("reference signal is identically zero")
    return num / den


def rolling_nmspe(
    obs_full,
    truth: np.ndarray,
    fit_and_forecast,
    n_history: int,
    horizon: int,
    grid: TimeGrid,
) -> float:
    """One-step-ahead rolling forecast error over ``horizon`` curves.

    For each m = 1..horizon, ``fit_and_forecast`` is called with the
    panel restricted to curves 1..n_history+m-1 and must return the
    (p, Mt) one-step-ahead prediction; errors against the truth at curve
    n_history+m are pooled into a single normalized ratio.
    """
    p = truth.shape[0]
    if truth.shape[1] < n_history + horizon:
        raise DimensionError("truth panel shorter than history + horizon")
    w = grid.weights
    num = 0.0
    den = 0.0
    for m in range(1, horizon + 1):
        pred = fit_and_forecast(obs_full.restrict_curves(n_history + m - 1))
        pred = np.asarray(pred, float)
        if pred.shape != (p, grid.size):
            raise DimensionError("forecaster must return (p, Mt)")
        target = truth[:, n_history + m - 1, :]
        num += float(np.sum((target - pred) ** 2 @ w))
        den += float(np.sum(target ** 2 @ w))
    if den <= 1e-300:
        raise UndefinedMetricError("reference curves are identically zero")
    return num / den
