"""End-to-end fitting: smoothing, spectra, filters, scores.

``fit`` runs the full estimation chain on a panel and returns a
:class:`~spectral_mpca.tasks.FittedModel`; ``fit_individual`` runs the
same chain per subject (p = 1 panels), the single-subject baseline that
the pooled fit is benchmarked against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import filters, scores, smoothing, spectral
from .core import (
    InsufficientDataError,
    ObservationSet,
    make_frequency_grid,
    make_time_grid,
)
from .tasks import FittedModel

__all__ = ["FitConfig", "fit", "fit_individual", "refit_scores"]


@dataclass(frozen=True)
class FitConfig:
    """Estimation settings; None means data-driven selection."""

    n_time_points: int = 51
    n_frequencies: int = 128
    bandwidth_mean: float | None = None
    bandwidth_cov: float | None = None
    lag_window: int | None = None
    n_components: int | None = None
    max_components: int = 5
    max_abs_lag: int = 5
    lag_epsilon: float = 0.1
    phase_tol: float = 1e-8
    phase_max_iter: int = 500
    cg_rtol: float = 1e-8
    cg_max_iter_factor: int = 10
    var_max_order: int = 5
    extras: dict = field(default_factory=dict)


def fit(obs: ObservationSet, cfg: FitConfig = FitConfig()) -> FittedModel:
    """Fit the pooled frequency-domain component model to a panel.

    Steps: local linear means and autocovariance surfaces per subject;
    Bartlett spectral kernels and their cross-subject average;
    per-frequency eigendecomposition; component count by the integrated
    eigenvalue ratio (unless pinned); phase-optimized real filters with
    per-component lag truncation; score spectral densities; MAP scores
    under the Whittle prior.
    """
    p, J = obs.n_subjects, obs.n_curves
    if J < 2:
        raise InsufficientDataError("need at least two curves per subject")
    tgrid = make_time_grid(cfg.n_time_points)
    fgrid = make_frequency_grid(cfg.n_frequencies, J)

    means, mean_bws = smoothing.estimate_means(obs, tgrid, cfg.bandwidth_mean)
    n_bar = obs.mean_count()
    h_max = cfg.lag_window or spectral.select_lag_window(J, n_bar)
    h_max = min(h_max, J - 1)
    acov, cov_bws = smoothing.autocov_surfaces(
        obs, means, max(h_max - 1, 0), tgrid, cfg.bandwidth_cov
    )
    noise = smoothing.estimate_noise_variance(
        obs, means, acov, tgrid, cov_bandwidths=cov_bws
    )

    fields = spectral.bartlett_spectra(acov, h_max, fgrid)
    marginal = spectral.marginal_spectrum(fields)
    k_cap = min(cfg.max_components, tgrid.size)
    eigsys = spectral.eigendecompose(marginal, k_cap)
    if cfg.n_components is not None:
        K = int(cfg.n_components)
        if not 1 <= K <= k_cap:
            raise ValueError(f"n_components must be in [1, {k_cap}]")
    else:
        K = spectral.select_n_components(eigsys.integrated_eigenvalues())

    bank, phases = filters.build_filter_bank(
        eigsys,
        K,
        max_abs_lag=cfg.max_abs_lag,
        epsilon=cfg.lag_epsilon,
        tol=cfg.phase_tol,
        max_iter=cfg.phase_max_iter,
    )
    eta = spectral.score_spectral_density(eigsys, fields, J, K)

    A, y, w_vec, layout = scores.build_design(obs, bank, means, noise, tgrid)
    Q = scores.build_whittle_precision(eta, layout)
    sol = scores.map_scores(
        A, y, w_vec, Q, rtol=cfg.cg_rtol, max_iter_factor=cfg.cg_max_iter_factor
    )
    score_arr = scores.ScoreArray(layout, sol.scores)

    diagnostics = {
        "mean_bandwidths": mean_bws,
        "cov_bandwidths": cov_bws,
        "mean_count": n_bar,
        "integrated_eigenvalues": eigsys.integrated_eigenvalues(),
        "phase_objectives": [ph.objective for ph in phases],
        "cg_iterations": sol.iterations,
        "cg_residual": sol.residual,
        "ridge_used": sol.ridge_used,
    }
    return FittedModel(
        time_grid=tgrid,
        freq_grid=fgrid,
        means=means,
        bank=bank,
        noise_variances=noise,
        eta=eta,
        scores=score_arr,
        lag_window=h_max,
        diagnostics=diagnostics,
    )


def fit_individual(obs: ObservationSet, cfg: FitConfig = FitConfig()) -> list:
    """Fit each subject separately (p = 1 panels); returns one model per
    subject.  The estimation chain is identical, so differences against
    the pooled fit isolate the effect of sharing the component basis."""
    return [fit(obs.subject(i), cfg) for i in range(obs.n_subjects)]


def refit_scores(
    model: FittedModel, obs: ObservationSet, cfg: FitConfig = FitConfig()
) -> FittedModel:
    """Re-extract scores for a (possibly longer) panel with frozen filters.

    Means, noise variances, the filter bank, and the score spectral
    densities are taken from ``model``; only the design and the MAP
    solve are redone.  The stored score spectral densities are sampled
    at the original panel's Fourier frequencies, so they are re-sampled
    onto the new panel's frequencies by periodic linear interpolation.
    Intended for rolling forecasts where refitting the filters at every
    step is too slow; the full refit remains the reference behavior.
    """
    p, J = obs.n_subjects, obs.n_curves
    if p != model.n_subjects:
        raise InsufficientDataError("panel and model subject counts differ")
    if J < 2:
        raise InsufficientDataError("need at least two curves per subject")
    J_old = model.eta.shape[2]
    if J == J_old:
        eta = model.eta
    else:
        ang_old = 2.0 * np.pi * np.arange(1, J_old + 1) / J_old
        ang_new = 2.0 * np.pi * np.arange(1, J + 1) / J
        eta = np.empty((p, model.n_components, J))
        for i in range(p):
            for k in range(model.n_components):
                eta[i, k] = np.interp(
                    ang_new, ang_old, model.eta[i, k], period=2.0 * np.pi
                )
    A, y, w_vec, layout = scores.build_design(
        obs, model.bank, model.means, model.noise_variances, model.time_grid
    )
    Q = scores.build_whittle_precision(eta, layout)
    sol = scores.map_scores(
        A, y, w_vec, Q, rtol=cfg.cg_rtol, max_iter_factor=cfg.cg_max_iter_factor
    )
    diagnostics = dict(model.diagnostics)
    diagnostics.update(
        {
            "cg_iterations": sol.iterations,
            "cg_residual": sol.residual,
            "ridge_used": sol.ridge_used,
        }
    )
    return FittedModel(
        time_grid=model.time_grid,
        freq_grid=model.freq_grid,
        means=model.means,
        bank=model.bank,
        noise_variances=model.noise_variances,
        eta=eta,
        scores=scores.ScoreArray(layout, sol.scores),
        lag_window=model.lag_window,
        diagnostics=diagnostics,
    )
