"""Spectral density estimation and per-frequency eigenanalysis.

Subject-level spectral density kernels come from a Bartlett lag window
over smoothed autocovariance surfaces; the marginal kernel averages them
across subjects.  Per-frequency Hermitian eigendecomposition of the
marginal kernel yields the frequency-indexed component basis, and
projecting each subject's kernel onto that basis gives the score
spectral densities used by the Whittle prior.

Everything is computed on the nonnegative half of the frequency grid and
mirrored by conjugation, so the reflection identity f(.,.|-w) =
conj(f(.,.|w)) and the eigenfunction identity psi(.|-w) = conj(psi(.|w))
hold exactly in storage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    DimensionError,
    FrequencyGrid,
    NumericalError,
    TimeGrid,
    principal_frequency,
)
from .smoothing import AutocovField

__all__ = [
    "SpectralField",
    "EigenSystem",
    "select_lag_window",
    "bartlett_spectra",
    "marginal_spectrum",
    "eigendecompose",
    "select_n_components",
    "score_spectral_density",
]


@dataclass(frozen=True)
class SpectralField:
    """One Hermitian kernel field f(t, s | w) on freq x time x time."""

    freq_grid: FrequencyGrid
    time_grid: TimeGrid
    values: np.ndarray  # (Mw, Mt, Mt) complex
    scope: str = "subject"

    def __post_init__(self):
        v = np.asarray(self.values, complex)
        if v.shape != (self.freq_grid.size, self.time_grid.size, self.time_grid.size):
            raise DimensionError("field values must be (Mw, Mt, Mt)")
        object.__setattr__(self, "values", v)

    def hermitian_defect(self) -> float:
        return float(np.max(np.abs(self.values - self.values.conj().transpose(0, 2, 1))))

    def reflection_defect(self) -> float:
        m = self.freq_grid.negation_indices()
        return float(np.max(np.abs(self.values[m] - self.values.conj())))


def select_lag_window(n_curves: int, mean_count: float) -> int:
    """Bartlett window width floor((J * Nbar)^(1/4)), clamped to [1, J-1]."""
    if n_curves < 1:
        raise DimensionError("need at least one curve")
    if mean_count <= 0:
        raise ValueError("mean observation count must be positive")
    h = int(math.floor((n_curves * mean_count) ** 0.25))
    return max(1, min(h, max(n_curves - 1, 1)))


def _bartlett_single(surfaces: np.ndarray, h_max: int, omegas: np.ndarray) -> np.ndarray:
    """Windowed transform for one subject on the given frequencies.

    surfaces : (H+1, M, M) lag surfaces 0..H with H >= h_max - 1.
    """
    c0 = surfaces[0]
    out = np.broadcast_to(c0, (omegas.size,) + c0.shape).astype(complex).copy()
    for h in range(1, h_max):
        w_h = 1.0 - h / h_max
        ph = np.exp(1j * h * omegas)
        out += w_h * (ph[:, None, None] * surfaces[h][None] +
                      np.conj(ph)[:, None, None] * surfaces[h].T[None])
    out /= 2.0 * math.pi
    return out


def bartlett_spectra(
    acov: AutocovField, h_max: int, fgrid: FrequencyGrid
) -> list[SpectralField]:
    """Subject spectral density kernels under a Bartlett lag window.

    Lag h carries weight 1 - |h|/h_max; the weight-zero lags |h| = h_max
    may be absent from ``acov``.  Negative frequencies are filled by
    conjugation, so reflection symmetry is exact, and Hermitian symmetry
    follows from the symmetrized lag-0 surface.
    """
    if h_max < 1:
        raise ValueError("h_max must be >= 1")
    if acov.max_lag < h_max - 1:
        raise DimensionError(
            f"lags 0..{h_max - 1} required, have 0..{acov.max_lag}"
        )
    pos = fgrid.points >= 0.0
    omg = fgrid.points[pos]
    mirror = fgrid.negation_indices()
    fields = []
    for i in range(acov.n_subjects):
        half = _bartlett_single(acov.values[i], h_max, omg)
        full = np.empty((fgrid.size,) + half.shape[1:], complex)
        full[pos] = half
        neg = ~pos
        full[neg] = np.conj(full[mirror[neg]])
        full = 0.5 * (full + full.conj().transpose(0, 2, 1))
        fields.append(SpectralField(fgrid, acov.grid, full, scope="subject"))
    return fields


def marginal_spectrum(fields: list[SpectralField]) -> SpectralField:
    """Average the subject kernels into the marginal kernel."""
    if not fields:
        raise DimensionError("no subject fields given")
    g0, t0 = fields[0].freq_grid, fields[0].time_grid
    for f in fields[1:]:
        if f.freq_grid != g0 or f.time_grid != t0:
            raise DimensionError("subject fields must share grids")
    vals = np.mean([f.values for f in fields], axis=0)
    return SpectralField(g0, t0, vals, scope="marginal")


@dataclass(frozen=True)
class EigenSystem:
    """Frequency-indexed eigenpairs of the marginal kernel.

    ``eigenfunctions[w, k]`` has unit quadrature norm; eigenvalues are
    sorted descending and clipped at zero.  The stored functions satisfy
    psi(.|-w) = conj(psi(.|w)) exactly; the within-frequency phase is
    arbitrary and is resolved later by the filter construction.
    """

    freq_grid: FrequencyGrid
    time_grid: TimeGrid
    eigenvalues: np.ndarray  # (Mw, K) real >= 0
    eigenfunctions: np.ndarray  # (Mw, K, Mt) complex

    @property
    def n_components(self) -> int:
        return self.eigenvalues.shape[1]

    def integrated_eigenvalues(self) -> np.ndarray:
        """Frequency integrals of each eigenvalue curve."""
        return self.eigenvalues.T @ self.freq_grid.weights

    def reconstruction(self) -> np.ndarray:
        """Sum_k eta_k conj(psi_k) x psi_k^T, the rank-K kernel field."""
        return np.einsum(
            "wk,wka,wkb->wab",
            self.eigenvalues,
            np.conj(self.eigenfunctions),
            self.eigenfunctions,
        )


def eigendecompose(field: SpectralField, k_max: int) -> EigenSystem:
    """Leading eigenpairs of the kernel at every frequency.

    The kernel matrix at each frequency is symmetrized in the quadrature
    inner product (via a sqrt-weight similarity transform) and passed to
    a Hermitian eigensolver.  Orientation follows the kernel expansion
    f(t, s) = sum_k eta_k conj(psi_k(t)) psi_k(s), which is what makes
    the lagged filter transform reconstruct curves in forward time.
    """
    Mt = field.time_grid.size
    if not 1 <= k_max <= Mt:
        raise DimensionError(f"k_max must be in [1, {Mt}]")
    w_sqrt = np.sqrt(field.time_grid.weights)
    pos = field.freq_grid.points >= 0.0
    stack = field.values[pos]
    B = w_sqrt[None, :, None] * stack * w_sqrt[None, None, :]
    B = 0.5 * (B + B.conj().transpose(0, 2, 1))
    vals, vecs = np.linalg.eigh(B)
    vals = vals[:, ::-1][:, :k_max]
    vecs = vecs[:, :, ::-1][:, :, :k_max]
    zero_at = np.flatnonzero(field.freq_grid.points[pos] == 0.0)
    for z in zero_at:
        rv, rvec = np.linalg.eigh(B[z].real)
        vals[z] = rv[::-1][:k_max]
        vecs[z] = rvec[:, ::-1][:, :k_max].astype(complex)
    vals = np.clip(vals, 0.0, None)
    # back to coordinate functions with unit quadrature norm
    funcs = np.conj(vecs / w_sqrt[None, :, None]).transpose(0, 2, 1)
    n_all = field.freq_grid.size
    eigvals = np.empty((n_all, k_max))
    eigfuns = np.empty((n_all, k_max, Mt), complex)
    eigvals[pos] = vals
    eigfuns[pos] = funcs
    mirror = field.freq_grid.negation_indices()
    neg = ~pos
    eigvals[neg] = eigvals[mirror[neg]]
    eigfuns[neg] = np.conj(eigfuns[mirror[neg]])
    return EigenSystem(field.freq_grid, field.time_grid, eigvals, eigfuns)


def select_n_components(integrated: np.ndarray) -> int:
    """Ratio criterion on integrated eigenvalues.

    Picks argmax over k < K_max of integrated[k] / integrated[k+1]
    (1-based k), favoring the smaller k on ties.
    """
    integrated = np.asarray(integrated, float)
    if integrated.size < 2:
        raise DimensionError("need at least two integrated eigenvalues")
    if np.max(integrated) < 1e-12:
        raise NumericalError("degenerate spectrum: all integrated eigenvalues ~ 0")
    num = integrated[:-1]
    den = integrated[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(den > 0, num / den, np.where(num > 0, np.inf, 0.0))
    return int(np.argmax(r)) + 1


def score_spectral_density(
    eigsys: EigenSystem,
    subject_fields: list[SpectralField],
    n_curves: int,
    n_components: int | None = None,
) -> np.ndarray:
    """Score spectral densities eta_ik at the curve-count frequencies.

    Evaluates the quadratic form psi_k^T W f_ii W conj(psi_k) at
    omega_j = 2*pi*j/n_curves for j = 1..n_curves (principal values),
    the evaluation set of the Whittle prior.  Returns (p, K, J) real,
    clipped at zero; ordering in j follows the frequencies as given.
    """
    K = n_components or eigsys.n_components
    if K > eigsys.n_components:
        raise DimensionError("more components requested than decomposed")
    fg = eigsys.freq_grid
    idx = np.array(
        [fg.index_of(principal_frequency(2.0 * math.pi * j / n_curves))
         for j in range(1, n_curves + 1)]
    )
    w = eigsys.time_grid.weights
    psi = eigsys.eigenfunctions[idx][:, :K, :]  # (J, K, Mt)
    out = np.empty((len(subject_fields), K, n_curves))
    for i, f in enumerate(subject_fields):
        if f.freq_grid != fg or f.time_grid != eigsys.time_grid:
            raise DimensionError("subject field grids do not match eigensystem")
        F = f.values[idx]  # (J, Mt, Mt)
        quad = np.einsum("a,jka,jab,b,jkb->jk", w + 0j, psi, F, w + 0j,
                         np.conj(psi))
        scale = np.max(np.abs(quad)) or 1.0
        if np.max(np.abs(quad.imag)) > 1e-10 * scale:
            raise NumericalError("score spectral density not real; broken symmetry")
        out[i] = quad.real.T
    return np.clip(out, 0.0, None)
