"""Score extraction: sparse design matrix, Whittle spectral prior, and
the MAP normal-equations solve.

Each reading Y_ijz is modeled as mu_i(t_ijz) + sum_k sum_l
phi_kl(t_ijz) xi_{i,j+l,k} + noise, so a curve's readings load on score
columns up to L_k steps away.  Scores are ordered component-major, then
score time j' = 1-L_k..J+L_k, then subject; each component contributes
p*(J + 2 L_k) columns.

The prior treats each subject-component score series as stationary with
spectral density eta_ik, giving precision Q = sum_k (F_k (x) I_p)^H D_k
(F_k (x) I_p) with F_k the unitary-style transform at frequencies
2 pi j / J and D_k the inverse spectral densities.  The MAP estimate
solves (A^T W A + Re Q) xi = A^T W y by Jacobi-preconditioned CG.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import DimensionError, ObservationSet, SolverError, TimeGrid
from .filters import FilterBank

__all__ = [
    "ScoreLayout",
    "ScoreArray",
    "WhittlePrecision",
    "build_design",
    "build_whittle_precision",
    "map_scores",
    "posterior_value",
    "posterior_gradient",
]


@dataclass(frozen=True)
class ScoreLayout:
    """Index layout of the flattened score vector."""

    n_subjects: int
    n_curves: int
    max_lags: tuple

    def __post_init__(self):
        object.__setattr__(self, "max_lags", tuple(int(L) for L in self.max_lags))

    @property
    def n_components(self) -> int:
        return len(self.max_lags)

    def series_length(self, k: int) -> int:
        return self.n_curves + 2 * self.max_lags[k]

    def offset(self, k: int) -> int:
        return self.n_subjects * sum(self.series_length(q) for q in range(k))

    @property
    def dim(self) -> int:
        return self.offset(self.n_components) if self.n_components else 0

    def column(self, i: int, j_time: int, k: int) -> int:
        """Column of score xi_{i, j_time, k}; j_time is 1-based and runs
        1-L_k..J+L_k."""
        L = self.max_lags[k]
        pos = j_time - (1 - L)
        if not 0 <= pos < self.series_length(k):
            raise DimensionError(f"score time {j_time} outside range for component {k}")
        return self.offset(k) + pos * self.n_subjects + i


@dataclass(frozen=True)
class ScoreArray:
    """Flattened scores with layout-aware accessors."""

    layout: ScoreLayout
    flat: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.flat, float)
        if v.shape != (self.layout.dim,):
            raise DimensionError("flat score vector has wrong length")
        object.__setattr__(self, "flat", v)

    def component(self, k: int) -> np.ndarray:
        """Score series for component k, shape (J + 2 L_k, p): row =
        score time, column = subject."""
        lo = self.layout.offset(k)
        hi = self.layout.offset(k + 1) if k + 1 < self.layout.n_components else (
            lo + self.layout.series_length(k) * self.layout.n_subjects
        )
        return self.flat[lo:hi].reshape(self.layout.series_length(k),
                                        self.layout.n_subjects)

    def value(self, i: int, j_time: int, k: int) -> float:
        return float(self.flat[self.layout.column(i, j_time, k)])

    @staticmethod
    def from_components(layout: ScoreLayout, comps: list) -> "ScoreArray":
        flat = np.concatenate([np.asarray(c, float).reshape(-1) for c in comps])
        return ScoreArray(layout, flat)


def build_design(
    obs: ObservationSet,
    bank: FilterBank,
    means: np.ndarray,
    noise_variances: np.ndarray,
    grid: TimeGrid,
) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray, ScoreLayout]:
    """Assemble the MAP linear model (A, y, W, layout).

    Rows are readings ordered subject-major, then curve, then
    within-curve index.  y holds demeaned readings; W holds the inverse
    noise variances.  Filter values at reading times come from linear
    interpolation of the grid-sampled filters.
    """
    p, J = obs.n_subjects, obs.n_curves
    layout = ScoreLayout(p, J, bank.max_lags)
    nv = np.asarray(noise_variances, float)
    if nv.shape != (p,) or np.any(nv <= 0):
        raise DimensionError("need one positive noise variance per subject")
    t_parts, v_parts, subj_parts, curve_parts = [], [], [], []
    for i in range(p):
        for j in range(J):
            t = obs.times[i][j]
            if t.size == 0:
                continue
            if np.any((t < 0.0) | (t > 1.0)):
                raise DimensionError(
                    f"subject {i + 1} curve {j + 1}: time outside [0, 1]"
                )
            t_parts.append(t)
            v_parts.append(obs.values[i][j])
            subj_parts.append(np.full(t.size, i))
            curve_parts.append(np.full(t.size, j))
    if not t_parts:
        raise DimensionError("no readings in panel")
    t_all = np.concatenate(t_parts)
    v_all = np.concatenate(v_parts)
    subj = np.concatenate(subj_parts)
    curve = np.concatenate(curve_parts)
    n = t_all.size
    y = np.empty(n)
    for i in range(p):
        m = subj == i
        y[m] = v_all[m] - np.interp(t_all[m], grid.points, means[i])
    w_vec = 1.0 / nv[subj]
    rows_ = np.arange(n)
    row_blocks, col_blocks, val_blocks = [], [], []
    for k in range(bank.n_components):
        L = bank.max_lags[k]
        off = layout.offset(k)
        for lag in range(-L, L + 1):
            vals = np.interp(t_all, grid.points, bank.filter(k, lag))
            pos = curve + lag + L  # (j+1+lag) - (1-L) with 0-based curve
            col_blocks.append(off + pos * p + subj)
            row_blocks.append(rows_)
            val_blocks.append(vals)
    A = sp.coo_matrix(
        (np.concatenate(val_blocks),
         (np.concatenate(row_blocks), np.concatenate(col_blocks))),
        shape=(n, layout.dim),
    ).tocsr()
    return A, y, w_vec, layout


class WhittlePrecision:
    """Prior precision from score spectral densities.

    Parameters
    ----------
    eta : (p, K, J) spectral densities at frequencies 2 pi j / J,
        j = 1..J in order.  Values are floored at 1e-8 of the global
        maximum before inversion.
    layout : score layout the precision acts on.
    """

    def __init__(self, eta: np.ndarray, layout: ScoreLayout):
        eta = np.asarray(eta, float)
        p, K, J = layout.n_subjects, layout.n_components, layout.n_curves
        if eta.shape != (p, K, J):
            raise DimensionError(f"eta must be shape {(p, K, J)}")
        self.layout = layout
        top = float(eta.max())
        if top <= 0:
            raise ValueError("all spectral densities are zero")
        self.eta = np.maximum(eta, 1e-8 * top)
        self.inv_eta = 1.0 / self.eta
        omega = 2.0 * math.pi * np.arange(1, J + 1) / J
        self._F = []
        for k in range(K):
            T_k = layout.series_length(k)
            r = np.arange(1, T_k + 1)
            self._F.append(
                np.exp(1j * np.outer(omega, r)) / math.sqrt(2.0 * math.pi * T_k)
            )

    @property
    def dim(self) -> int:
        return self.layout.dim

    def matvec_complex(self, xi: np.ndarray) -> np.ndarray:
        """Q xi for a real or complex score vector."""
        lay = self.layout
        out = np.zeros(lay.dim, complex)
        for k in range(lay.n_components):
            lo = lay.offset(k)
            T_k = lay.series_length(k)
            X = xi[lo: lo + T_k * lay.n_subjects].reshape(T_k, lay.n_subjects)
            Z = self._F[k] @ X  # (J, p)
            Z = Z * self.inv_eta[:, k, :].T
            out[lo: lo + T_k * lay.n_subjects] = (
                self._F[k].conj().T @ Z
            ).reshape(-1)
        return out

    def matvec(self, xi: np.ndarray) -> np.ndarray:
        """Re(Q) xi for real xi."""
        return self.matvec_complex(xi).real

    def quad_form(self, xi: np.ndarray) -> float:
        """Real quadratic form xi^H Q xi (xi^T Re(Q) xi for real xi)."""
        return float(np.real(np.vdot(xi, self.matvec_complex(xi))))

    def diagonal(self) -> np.ndarray:
        """Diagonal of Re(Q)."""
        lay = self.layout
        out = np.empty(lay.dim)
        for k in range(lay.n_components):
            lo = lay.offset(k)
            T_k = lay.series_length(k)
            mag = np.abs(self._F[k]) ** 2  # (J, T_k)
            d = self.inv_eta[:, k, :] @ mag  # (p, T_k)
            out[lo: lo + T_k * lay.n_subjects] = d.T.reshape(-1)
        return out

    def dense(self) -> np.ndarray:
        """Complex Q as a dense Hermitian matrix."""
        lay = self.layout
        Q = np.zeros((lay.dim, lay.dim), complex)
        for k in range(lay.n_components):
            lo = lay.offset(k)
            T_k = lay.series_length(k)
            M = self._F[k]
            for i in range(lay.n_subjects):
                Qi = M.conj().T @ (self.inv_eta[i, k, :, None] * M)
                idx = lo + np.arange(T_k) * lay.n_subjects + i
                Q[np.ix_(idx, idx)] += Qi
        return Q

    def dense_real(self) -> np.ndarray:
        return self.dense().real


def build_whittle_precision(eta: np.ndarray, layout: ScoreLayout) -> WhittlePrecision:
    """Precision operator for the given spectral densities and layout."""
    return WhittlePrecision(eta, layout)


def _prior_apply(Q, xi):
    if Q is None:
        return np.zeros_like(xi)
    if isinstance(Q, WhittlePrecision):
        return Q.matvec(xi)
    return np.asarray(Q) @ xi


def _prior_diag(Q, dim):
    if Q is None:
        return np.zeros(dim)
    if isinstance(Q, WhittlePrecision):
        return Q.diagonal()
    return np.diag(np.asarray(Q)).copy()


@dataclass(frozen=True)
class MapResult:
    scores: np.ndarray
    iterations: int
    residual: float
    ridge_used: bool


def map_scores(
    A,
    y: np.ndarray,
    w_vec: np.ndarray,
    Q=None,
    rtol: float = 1e-8,
    max_iter_factor: int = 10,
) -> MapResult:
    """MAP score estimate via preconditioned conjugate gradients.

    Solves (A^T W A + Re Q) xi = A^T W y to a relative residual of
    ``rtol``, capped at ``max_iter_factor`` times the dimension.  A
    system with empty diagonal entries (features with neither data nor
    prior) gets a 1e-10 ridge and a warning.  Non-convergence raises
    :class:`SolverError` carrying the achieved residual.
    """
    A = sp.csr_matrix(A)
    n, d = A.shape
    y = np.asarray(y, float)
    w_vec = np.asarray(w_vec, float)
    if y.shape != (n,) or w_vec.shape != (n,):
        raise DimensionError("y and weights must match the rows of A")
    b = A.T @ (w_vec * y)
    data_diag = np.asarray(
        A.multiply(A).T @ w_vec
    ).reshape(-1)
    diag = data_diag + _prior_diag(Q, d)
    ridge = 0.0
    if np.any(diag <= 0):
        ridge = 1e-10
        diag = diag + ridge
        warnings.warn(
            "normal system has empty diagonal entries; adding 1e-10 ridge",
            RuntimeWarning,
        )

    def apply_normal(x):
        return A.T @ (w_vec * (A @ x)) + _prior_apply(Q, x) + ridge * x

    op = spla.LinearOperator((d, d), matvec=apply_normal, dtype=float)
    pre = spla.LinearOperator((d, d), matvec=lambda x: x / diag, dtype=float)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return MapResult(np.zeros(d), 0, 0.0, ridge > 0)
    count = {"n": 0}

    def cb(_):
        count["n"] += 1

    maxiter = max(max_iter_factor * d, 1)
    try:
        xi, info = spla.cg(op, b, rtol=rtol, atol=0.0, maxiter=maxiter,
                           M=pre, callback=cb)
    except TypeError:  # older scipy uses tol=
        xi, info = spla.cg(op, b, tol=rtol, atol=0.0, maxiter=maxiter,
                           M=pre, callback=cb)
    residual = float(np.linalg.norm(apply_normal(xi) - b) / b_norm)
    if info != 0 or residual > rtol:
        raise SolverError(
            f"CG failed to reach {rtol:.1e} (got {residual:.2e}, info={info})",
            residual=residual,
        )
    return MapResult(xi, count["n"], residual, ridge > 0)


def posterior_value(A, y, w_vec, Q, xi) -> float:
    """Log posterior up to an additive constant (higher is better)."""
    r = y - A @ xi
    val = -0.5 * float(np.sum(w_vec * r * r))
    if Q is not None:
        val -= 0.5 * (Q.quad_form(xi) if isinstance(Q, WhittlePrecision)
                      else float(xi @ (np.asarray(Q) @ xi)))
    return val


def posterior_gradient(A, y, w_vec, Q, xi) -> np.ndarray:
    """Gradient of :func:`posterior_value` at xi."""
    r = y - A @ xi
    return A.T @ (w_vec * r) - _prior_apply(Q, xi)
