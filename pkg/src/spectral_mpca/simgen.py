"""Synthetic panel generator for benchmarking.

Latent curves follow a shared lagged filter expansion: component k has
Fourier-pair base shapes, per-subject multiplicative fluctuation
1 + sin(i t / p), exponentially decaying lag weights, and score series
driven by a cross-subject VAR(1) whose innovation precision is a sparse
random graph.  Observations are drawn at a random subset of candidate
sites per curve with additive noise calibrated to a fixed fraction of
the expected curve energy.

Three data cases: (1) Gaussian noise, (2) scaled Student-t noise with
matching variance, (3) a sin() term added to the score recursion with
Gaussian noise.

Separate RNG streams drive the precision draw, noise calibration, score
paths, site sampling, and noise, so panels with the same seed share
latent curves across observation densities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DimensionError, ObservationSet, TimeGrid

__all__ = [
    "SimConfig",
    "TruthPanel",
    "generate_precision",
    "generate_scores",
    "basis_functions",
    "lag_weights",
    "generate_panel",
]


@dataclass(frozen=True)
class SimConfig:
    """Generator settings; defaults mirror the benchmark design."""

    n_subjects: int = 5
    n_curves: int = 60
    n_components: int = 1
    max_lags: tuple = (1,)
    rho: tuple = (0.5,)
    case: int = 1
    n_range: tuple = (5, 10)
    n_sites: int = 31
    edge_rate: float = 3.0
    edge_bounds: tuple = (0.1, 0.35)
    t_dof: int = 5
    noise_fraction: float = 0.1
    burn_in: int = 200
    calibration_draws: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.case not in (1, 2, 3):
            raise ValueError("case must be 1, 2, or 3")
        if len(self.max_lags) != self.n_components or len(self.rho) != self.n_components:
            raise DimensionError("max_lags and rho need one entry per component")
        lo, hi = self.n_range
        if not 1 <= lo <= hi <= self.n_sites:
            raise ValueError("n_range must satisfy 1 <= lo <= hi <= n_sites")


def generate_precision(
    n_subjects: int,
    component: int,
    edge_rate: float,
    edge_bounds: tuple,
    rng: np.random.Generator,
    max_attempts: int = 100,
) -> np.ndarray:
    """Sparse random innovation precision for one component.

    Diagonal entries are exp(k/10)/5 for 1-based component k; each
    subject pair carries an edge with probability edge_rate/p, with a
    symmetric weight drawn uniformly from +-[r1, r2] times the diagonal
    scale.  Redrawn until positive definite.
    """
    p = n_subjects
    base = math.exp(component / 10.0) / 5.0
    r1, r2 = edge_bounds
    for _ in range(max_attempts):
        theta = np.eye(p) * base
        for a in range(p):
            for b in range(a + 1, p):
                if rng.random() < edge_rate / p:
                    mag = rng.uniform(r1, r2)
                    sign = 1.0 if rng.random() < 0.5 else -1.0
                    theta[a, b] = theta[b, a] = sign * mag * base
        if np.linalg.eigvalsh(theta)[0] > 1e-12 * base:
            return theta
    raise RuntimeError("failed to draw a positive definite precision")


def _innovation_chol(theta: np.ndarray) -> np.ndarray:
    """Cholesky factor of the innovation covariance inv(theta)."""
    cov = np.linalg.inv(theta)
    cov = 0.5 * (cov + cov.T)
    return np.linalg.cholesky(cov)


def generate_scores(
    chol: np.ndarray,
    rho: float,
    length: int,
    case: int,
    burn_in: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Score path of the cross-subject recursion, shape (length, p).

    Cases 1 and 2: x_j = rho x_{j-1} + b_j.  Case 3 adds sin(x_{j-1})
    elementwise.  Starts at zero and discards ``burn_in`` steps.
    """
    p = chol.shape[0]
    innov = rng.standard_normal((burn_in + length, p)) @ chol.T
    x = np.zeros(p)
    out = np.empty((burn_in + length, p))
    for j in range(burn_in + length):
        drive = rho * x + (np.sin(x) if case == 3 else 0.0)
        x = drive + innov[j]
        out[j] = x
    return out[burn_in:]


def lag_weights(max_lag: int) -> np.ndarray:
    """Normalized lag weights sqrt(exp(-|l|/2) / sum), l = -L..L."""
    raw = np.exp(-0.5 * np.abs(np.arange(-max_lag, max_lag + 1)))
    return np.sqrt(raw / raw.sum())


def _fourier_sequence(count: int, t: np.ndarray) -> np.ndarray:
    """First ``count`` unit-norm Fourier functions on [0, 1]:
    sqrt(2) sin(2 pi r t), sqrt(2) cos(2 pi r t) for r = 1, 2, ..."""
    out = np.empty((count, t.size))
    for m in range(count):
        r = m // 2 + 1
        fn = np.sin if m % 2 == 0 else np.cos
        out[m] = math.sqrt(2.0) * fn(2.0 * math.pi * r * t)
    return out


def basis_functions(
    n_subjects: int, max_lags: tuple, t: np.ndarray
) -> tuple[list, np.ndarray]:
    """Subject filter shapes and shared base shapes.

    Returns ``(per_component, fluctuation)`` where ``per_component[k]``
    has shape (2 L_k + 1, Mt) holding the base Fourier shapes in slot
    order l = -L_k..L_k (components consume the Fourier sequence in
    order), and ``fluctuation[i] = 1 + sin((i+1) t / p)`` multiplies
    them per subject.
    """
    slots = sum(2 * L + 1 for L in max_lags)
    seq = _fourier_sequence(slots, t)
    per_component = []
    pos = 0
    for L in max_lags:
        per_component.append(seq[pos: pos + 2 * L + 1])
        pos += 2 * L + 1
    fluct = np.array(
        [1.0 + np.sin((i + 1) * t / n_subjects) for i in range(n_subjects)]
    )
    return per_component, fluct


@dataclass(frozen=True)
class TruthPanel:
    """Latent truth and sampled observations for one replicate."""

    config: SimConfig
    site_grid: TimeGrid
    n_total_curves: int  # cfg.n_curves plus any forecast extension
    curves: np.ndarray  # (p, n_total_curves, n_sites) latent curves
    scores: tuple  # per component: (n_total_curves + 2 L_k, p)
    base_shapes: tuple  # per component: (2 L_k + 1, n_sites)
    fluctuation: np.ndarray  # (p, n_sites)
    weights: tuple  # per component: (2 L_k + 1,)
    precisions: tuple  # per component: (p, p)
    noise_scale: np.ndarray  # (p,) standard deviations (case 2: t scale)
    obs: ObservationSet

    def curves_from_scores(self) -> np.ndarray:
        """Recompute latent curves from stored scores and filters."""
        cfg = self.config
        p, J = cfg.n_subjects, self.n_total_curves
        out = np.zeros((p, J, cfg.n_sites))
        for k, L in enumerate(cfg.max_lags):
            for li, lag in enumerate(range(-L, L + 1)):
                shape = self.weights[k][li] * self.base_shapes[k][li]
                sli = self.scores[k][lag + L: lag + L + J, :]  # (J, p)
                out += sli.T[:, :, None] * (shape[None, :] * self.fluctuation)[:, None, :]
        return out


def _curve_energy(cfg: SimConfig, per_comp, fluct, chols, rng) -> np.ndarray:
    """Expected squared curve norm per subject, by long-run simulation."""
    site_grid = TimeGrid(np.linspace(0.0, 1.0, cfg.n_sites))
    w = site_grid.weights
    draws = cfg.calibration_draws
    p = cfg.n_subjects
    # one long stationary path per component, curves at successive positions
    paths = []
    for k, L in enumerate(cfg.max_lags):
        length = draws + 2 * cfg.max_lags[k]
        paths.append(
            generate_scores(chols[k], cfg.rho[k], length, cfg.case, cfg.burn_in, rng)
        )
    total = np.zeros((p, draws, cfg.n_sites))
    for k, L in enumerate(cfg.max_lags):
        wts = lag_weights(L)
        for li, lag in enumerate(range(-L, L + 1)):
            shape = wts[li] * per_comp[k][li]
            sli = paths[k][lag + L: lag + L + draws, :]
            total += sli.T[:, :, None] * (shape[None, :] * fluct)[:, None, :]
    energy = np.einsum("ijt,t->i", total ** 2, w) / draws
    return energy


def generate_panel(cfg: SimConfig, n_extra_curves: int = 0) -> TruthPanel:
    """Draw one replicate: truth curves plus sparse noisy observations.

    ``n_extra_curves`` appends curves past ``cfg.n_curves`` (for
    forecasting studies); they extend the same score paths.  The five
    RNG streams (precision, calibration, scores, sampling, noise) are
    spawned from ``cfg.seed`` in a fixed order, so the latent process is
    unchanged when only the observation density changes.
    """
    streams = np.random.SeedSequence(cfg.seed).spawn(5)
    rng_prec, rng_cal, rng_scores, rng_samp, rng_noise = (
        np.random.default_rng(s) for s in streams
    )
    p = cfg.n_subjects
    J_total = cfg.n_curves + n_extra_curves
    sites = np.linspace(0.0, 1.0, cfg.n_sites)
    site_grid = TimeGrid(sites)

    precisions = tuple(
        generate_precision(p, k + 1, cfg.edge_rate, cfg.edge_bounds, rng_prec)
        for k in range(cfg.n_components)
    )
    chols = [_innovation_chol(th) for th in precisions]
    per_comp, fluct = basis_functions(p, cfg.max_lags, sites)
    weights = tuple(lag_weights(L) for L in cfg.max_lags)

    energy = _curve_energy(cfg, per_comp, fluct, chols, rng_cal)
    noise_var = cfg.noise_fraction * energy
    if cfg.case == 2:
        nu = cfg.t_dof
        noise_scale = np.sqrt((nu - 2.0) / nu * noise_var)
    else:
        noise_scale = np.sqrt(noise_var)

    score_paths = tuple(
        generate_scores(
            chols[k], cfg.rho[k], J_total + 2 * cfg.max_lags[k], cfg.case,
            cfg.burn_in, rng_scores,
        )
        for k in range(cfg.n_components)
    )

    curves = np.zeros((p, J_total, cfg.n_sites))
    for k, L in enumerate(cfg.max_lags):
        for li, lag in enumerate(range(-L, L + 1)):
            shape = weights[k][li] * per_comp[k][li]
            sli = score_paths[k][lag + L: lag + L + J_total, :]
            curves += sli.T[:, :, None] * (shape[None, :] * fluct)[:, None, :]

    lo, hi = cfg.n_range
    times, values = [], []
    for i in range(p):
        t_i, v_i = [], []
        for j in range(J_total):
            n_ij = int(rng_samp.integers(lo, hi + 1))
            idx = np.sort(rng_samp.choice(cfg.n_sites, n_ij, replace=False))
            t_i.append(sites[idx])
            if cfg.case == 2:
                noise = noise_scale[i] * rng_noise.standard_t(cfg.t_dof, n_ij)
            else:
                noise = noise_scale[i] * rng_noise.standard_normal(n_ij)
            v_i.append(curves[i, j, idx] + noise)
        times.append(t_i)
        values.append(v_i)
    obs = ObservationSet(times, values)

    return TruthPanel(
        config=cfg,
        site_grid=site_grid,
        n_total_curves=J_total,
        curves=curves,
        scores=score_paths,
        base_shapes=tuple(np.asarray(b) for b in per_comp),
        fluctuation=fluct,
        weights=weights,
        precisions=precisions,
        noise_scale=noise_scale,
        obs=obs,
    )
