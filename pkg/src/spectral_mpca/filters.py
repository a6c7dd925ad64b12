"""Phase-multiplier optimization and real lagged filter construction.

Eigenfunctions carry an arbitrary phase at each frequency.  Multiplying
by a unit-modulus, conjugate-symmetric phase field nu(w) before the
inverse Fourier transform changes how the resulting lagged filters
concentrate across lags without changing the spanned model.  The phase
field is chosen to maximize the lag-0 filter mass

    (1/4 pi^2) integral integral Psi_k(w1, w2) conj(nu(w1)) nu(w2),

a Hermitian positive semidefinite quadratic form in nu built from the
cross-frequency eigenfunction overlaps, which equals ||phi_k0||^2.  A
generalized power method with monotone safeguarding solves it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DimensionError, NumericalError, TimeGrid
from .spectral import EigenSystem

__all__ = [
    "FilterBank",
    "align_eigen_phases",
    "overlap_kernel",
    "optimize_phase",
    "build_filters",
    "select_max_lag",
    "build_filter_bank",
]


@dataclass(frozen=True)
class FilterBank:
    """Real lagged filters phi_kl for k = 1..K, |l| <= L_k.

    ``filters[k]`` has shape (2 L_k + 1, Mt) ordered l = -L_k..L_k.
    """

    time_grid: TimeGrid
    filters: tuple
    max_lags: tuple

    def __post_init__(self):
        if len(self.filters) != len(self.max_lags):
            raise DimensionError("one lag bound per component required")
        casted = []
        for arr, L in zip(self.filters, self.max_lags):
            arr = np.asarray(arr, float)
            if arr.shape != (2 * L + 1, self.time_grid.size):
                raise DimensionError("filter array shape must be (2L+1, Mt)")
            casted.append(arr)
        object.__setattr__(self, "filters", tuple(casted))
        object.__setattr__(self, "max_lags", tuple(int(L) for L in self.max_lags))

    @property
    def n_components(self) -> int:
        return len(self.filters)

    def filter(self, k: int, lag: int) -> np.ndarray:
        L = self.max_lags[k]
        if abs(lag) > L:
            raise DimensionError(f"lag {lag} outside [-{L}, {L}]")
        return self.filters[k][lag + L]

    def lag_norms_sq(self, k: int) -> np.ndarray:
        w = self.time_grid.weights
        return np.array([np.sum(w * f * f) for f in self.filters[k]])


def _phase(z: np.ndarray) -> np.ndarray:
    a = np.abs(z)
    return np.where(a > 1e-300, z / np.where(a > 1e-300, a, 1.0), 1.0 + 0.0j)


def align_eigen_phases(eigsys: EigenSystem) -> EigenSystem:
    """Rotate eigenfunctions so adjacent frequencies overlap positively.

    Walking up the nonnegative half of the grid, each eigenfunction is
    multiplied by the unit phase making its inner product with the
    previous frequency's function real and nonnegative; the negative
    half mirrors by conjugation.  This removes spurious phase jitter
    before the phase-field optimization and changes nothing the
    optimization could not absorb.
    """
    fg = eigsys.freq_grid
    pos_idx = np.flatnonzero(fg.points >= 0.0)
    w = eigsys.time_grid.weights
    funcs = eigsys.eigenfunctions.copy()
    for k in range(eigsys.n_components):
        for a_prev, a in zip(pos_idx[:-1], pos_idx[1:]):
            c = np.sum(w * np.conj(funcs[a_prev, k]) * funcs[a, k])
            if abs(c) > 1e-12:
                funcs[a, k] = funcs[a, k] * np.conj(c / abs(c))
    mirror = fg.negation_indices()
    neg = fg.points < 0.0
    funcs[neg] = np.conj(funcs[mirror[neg]])
    return EigenSystem(fg, eigsys.time_grid, eigsys.eigenvalues, funcs)


def overlap_kernel(eigsys: EigenSystem, k: int) -> np.ndarray:
    """Cross-frequency overlap Psi_k(w1, w2) = <psi_k(.|w1), psi_k(.|w2)>.

    A Gram matrix in the quadrature inner product: Hermitian, positive
    semidefinite, with unit diagonal.
    """
    U = eigsys.eigenfunctions[:, k, :]  # (Mw, Mt)
    G = (np.conj(U) * eigsys.time_grid.weights[None, :]) @ U.T
    return 0.5 * (G + G.conj().T)


def _mirror_unit_field(nu: np.ndarray, fg) -> np.ndarray:
    """Canonicalize: define the negative half as the conjugate of the
    positive half and pin nu(0) to a real sign."""
    out = nu.copy()
    mirror = fg.negation_indices()
    neg = fg.points < 0.0
    out[neg] = np.conj(out[mirror[neg]])
    zero = fg.points == 0.0
    if zero.any():
        z = out[zero][0]
        out[zero] = 1.0 if z.real >= 0 else -1.0
    return out


@dataclass(frozen=True)
class PhaseResult:
    values: np.ndarray  # (Mw,) unit modulus, conjugate symmetric
    objective: float  # equals ||phi_k0||^2 at the optimum
    history: np.ndarray
    iterations: int


def optimize_phase(
    kernel: np.ndarray,
    fg,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> PhaseResult:
    """Maximize the lag-0 mass functional over unit phase fields.

    Power iteration on G = diag(w) Psi diag(w): u = G nu, then a step
    toward phase(u) with projection back to unit modulus; the full step
    is halved whenever the objective would decrease, which cannot happen
    for an exact power step on a PSD form but guards quadrature ripple.
    Terminates on relative objective change below ``tol``.
    """
    n = fg.size
    if kernel.shape != (n, n):
        raise DimensionError("kernel must be square on the frequency grid")
    wf = fg.weights
    G = wf[:, None] * kernel * wf[None, :]
    scale = 1.0 / (4.0 * math.pi * math.pi)

    pos_idx = np.flatnonzero(fg.points >= 0.0)
    nu = np.ones(n, complex)
    for a_prev, a in zip(pos_idx[:-1], pos_idx[1:]):
        step = kernel[a_prev, a] * np.conj(nu[a_prev])
        nu[a] = np.conj(_phase(np.atleast_1d(step)))[0]
    nu = _mirror_unit_field(nu, fg)

    def objective(v):
        return float(np.real(np.conj(v) @ (G @ v))) * scale

    obj = objective(nu)
    history = [obj]
    it = 0
    for it in range(1, max_iter + 1):
        u = G @ nu
        target = _phase(u)
        alpha = 1.0
        accepted = False
        for _ in range(40):
            cand = _phase((1.0 - alpha) * nu + alpha * target)
            cand = _mirror_unit_field(cand, fg)
            cand_obj = objective(cand)
            if cand_obj >= obj - 1e-12 * max(abs(obj), 1.0):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        delta = cand_obj - obj
        nu, obj = cand, cand_obj
        history.append(obj)
        if abs(delta) < tol * max(abs(obj), 1e-300):
            break
    return PhaseResult(nu, obj, np.array(history), it)


def build_filters(
    eigsys: EigenSystem, nu: np.ndarray, k: int, max_abs_lag: int
) -> np.ndarray:
    """Real filters phi_kl(t) = (1/2pi) integral psi_k(t|w) nu(w) e^{-ilw} dw
    for l = -L..L, via quadrature on the frequency grid.

    Conjugate symmetry of psi_k nu makes the integrand's imaginary part
    cancel between mirrored frequencies; a residue above 1e-6 of the
    filter scale signals broken symmetry and raises.
    """
    fg = eigsys.freq_grid
    L = int(max_abs_lag)
    if L < 0:
        raise ValueError("max_abs_lag must be >= 0")
    U = eigsys.eigenfunctions[:, k, :]  # (Mw, Mt)
    lags = np.arange(-L, L + 1)
    E = np.exp(-1j * lags[:, None] * fg.points[None, :]) * (fg.weights * nu)[None, :]
    phi = (E @ U) / (2.0 * math.pi)
    scale = float(np.max(np.abs(phi))) or 1.0
    residue = float(np.max(np.abs(phi.imag)))
    if residue > 1e-6 * scale:
        raise NumericalError(
            f"filter imaginary residue {residue:.2e} exceeds 1e-6 of scale"
        )
    return phi.real


def select_max_lag(lag_norms_sq: np.ndarray, epsilon: float = 0.1) -> int:
    """Smallest L whose centered lag window holds mass >= 1 - epsilon.

    ``lag_norms_sq`` is ordered l = -L_max..L_max.  Mass is measured
    against the unit total implied by Parseval, not renormalized; if no
    window reaches the bound, L_max is returned.
    """
    q = np.asarray(lag_norms_sq, float)
    if q.ndim != 1 or q.size % 2 != 1:
        raise DimensionError("lag norms must be an odd-length vector")
    L_max = q.size // 2
    c = q[L_max]
    for L in range(L_max + 1):
        if L > 0:
            c += q[L_max - L] + q[L_max + L]
        if c >= 1.0 - epsilon:
            return L
    return L_max


def build_filter_bank(
    eigsys: EigenSystem,
    n_components: int,
    max_abs_lag: int = 5,
    epsilon: float = 0.1,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> tuple[FilterBank, list]:
    """Run alignment, phase optimization, and lag truncation per component.

    Returns the bank and the per-component :class:`PhaseResult` list.
    The phase field's global sign is pinned by making the largest-entry
    of the lag-0 filter positive, so repeated runs agree exactly.
    """
    if n_components > eigsys.n_components:
        raise DimensionError("more components than eigensystem provides")
    aligned = align_eigen_phases(eigsys)
    filters, lags, phases = [], [], []
    for k in range(n_components):
        psik = overlap_kernel(aligned, k)
        res = optimize_phase(psik, aligned.freq_grid, tol=tol, max_iter=max_iter)
        nu = res.values
        phi = build_filters(aligned, nu, k, max_abs_lag)
        center = phi[max_abs_lag]
        lead = center[int(np.argmax(np.abs(center)))]
        if lead < 0:
            nu = _mirror_unit_field(-nu, aligned.freq_grid)
            phi = -phi
            res = PhaseResult(nu, res.objective, res.history, res.iterations)
        w = eigsys.time_grid.weights
        norms = np.array([np.sum(w * f * f) for f in phi])
        L_k = select_max_lag(norms, epsilon)
        filters.append(phi[max_abs_lag - L_k: max_abs_lag + L_k + 1])
        lags.append(L_k)
        phases.append(res)
    bank = FilterBank(eigsys.time_grid, tuple(filters), tuple(lags))
    return bank, phases
