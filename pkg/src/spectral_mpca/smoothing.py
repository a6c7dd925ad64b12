"""Local linear smoothing of irregular panels: means, autocovariance
surfaces, and observation-noise variances.

All smoothers use the Epanechnikov kernel and aggregate repeated design
points first, so panels sampled on a shared candidate site grid cost
O(sites) rather than O(readings).  Bandwidths default to generalized
cross-validation over a 10-point log-spaced grid with a fallback to
1.5x the median design spacing when GCV degenerates.  Local fits that
are singular at some evaluation points are retried there with doubled
bandwidths; results are never NaN.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DimensionError,
    InsufficientDataError,
    ObservationSet,
    TimeGrid,
)

__all__ = [
    "AutocovField",
    "estimate_mean",
    "estimate_means",
    "estimate_autocov",
    "autocov_surfaces",
    "estimate_noise_variance",
]

_K0 = 0.75  # Epanechnikov kernel at zero


def epanechnikov(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u)
    out = 0.75 * (1.0 - u * u)
    return np.where(np.abs(u) <= 1.0, out, 0.0)


def _bandwidth_grid(spacing_median: float, span: float) -> np.ndarray:
    lo = max(1.5 * spacing_median, 1e-3 * span)
    hi = span / 2.0
    if not lo < hi:
        lo, hi = 0.5 * hi, hi
    return np.geomspace(lo, hi, 10)


def _median_spacing(x: np.ndarray) -> float:
    if x.size < 2:
        return 1.0
    return float(np.median(np.diff(x)))


def _aggregate_1d(x: np.ndarray, y: np.ndarray):
    ux, inv = np.unique(x, return_inverse=True)
    cnt = np.bincount(inv, minlength=ux.size).astype(float)
    s = np.bincount(inv, weights=y, minlength=ux.size)
    ss = np.bincount(inv, weights=y * y, minlength=ux.size)
    return ux, cnt, s, ss


def _moments_1d(ux, cnt, s, ev, bw):
    d = ux[None, :] - ev[:, None]
    k = epanechnikov(d / bw)
    kc = k * cnt[None, :]
    s0 = kc.sum(axis=1)
    s1 = (kc * d).sum(axis=1)
    s2 = (kc * d * d).sum(axis=1)
    t0 = (k * s[None, :]).sum(axis=1)
    t1 = (k * d * s[None, :]).sum(axis=1)
    return s0, s1, s2, t0, t1


def _ll_solve_1d(s0, s1, s2, t0, t1):
    den = s0 * s2 - s1 * s1
    scale = np.maximum(s0 * s2, 1e-300)
    bad = ~(den > 1e-12 * scale)
    with np.errstate(divide="ignore", invalid="ignore"):
        fit = (s2 * t0 - s1 * t1) / den
        hat = _K0 * s2 / den
    return fit, hat, bad


def _local_linear_1d(ux, cnt, s, ev, bw, span):
    """Local linear fit of aggregated data at ``ev``; widens the
    bandwidth at evaluation points where the local design is singular."""
    s0, s1, s2, t0, t1 = _moments_1d(ux, cnt, s, ev, bw)
    fit, hat, bad = _ll_solve_1d(s0, s1, s2, t0, t1)
    b = bw
    while bad.any() and b < 4.0 * span:
        b *= 2.0
        f2, h2, bad2 = _ll_solve_1d(*_moments_1d(ux, cnt, s, ev, b))
        fill = bad & ~bad2
        fit[fill], hat[fill] = f2[fill], h2[fill]
        bad &= bad2
    if bad.any():
        # global weighted mean as a last resort
        gm = float(np.sum(s) / np.sum(cnt))
        fit[bad] = gm
        hat[bad] = np.mean(cnt) / np.sum(cnt)
    return fit, hat


def _gcv_1d(ux, cnt, s, ss, bw, span):
    fit, hat = _local_linear_1d(ux, cnt, s, ux, bw, span)
    n = float(cnt.sum())
    tr = float(np.sum(cnt * hat))
    rss = float(np.sum(ss - 2.0 * fit * s + cnt * fit * fit))
    if not np.isfinite(rss) or rss < 0 or n - tr <= 0:
        return np.inf
    return n * rss / (n - tr) ** 2


def _select_bandwidth_1d(ux, cnt, s, ss):
    span = float(ux[-1] - ux[0]) if ux.size > 1 else 1.0
    med = _median_spacing(ux)
    cands = _bandwidth_grid(med, span)
    scores = np.array([_gcv_1d(ux, cnt, s, ss, b, span) for b in cands])
    if np.all(~np.isfinite(scores)):
        return 1.5 * med
    return float(cands[int(np.argmin(scores))])


def estimate_mean(
    times: list,
    values: list,
    grid: TimeGrid,
    bandwidth: float | None = None,
) -> tuple[np.ndarray, float]:
    """Pooled local linear mean curve for one subject.

    Parameters
    ----------
    times, values : lists of per-curve arrays for a single subject.
    bandwidth : fixed bandwidth, or None for GCV selection.

    Returns
    -------
    (mu, bandwidth) : curve sampled on ``grid`` and the bandwidth used.
    """
    x = np.concatenate([np.asarray(t, float) for t in times]) if times else np.array([])
    y = np.concatenate([np.asarray(v, float) for v in values]) if values else np.array([])
    if np.unique(x).size < 3:
        raise InsufficientDataError("mean estimation needs >= 3 distinct times")
    ux, cnt, s, ss = _aggregate_1d(x, y)
    span = float(ux[-1] - ux[0])
    if bandwidth is None:
        bandwidth = _select_bandwidth_1d(ux, cnt, s, ss)
    elif bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    fit, _ = _local_linear_1d(ux, cnt, s, grid.points, bandwidth, span)
    return fit, float(bandwidth)


def estimate_means(
    obs: ObservationSet, grid: TimeGrid, bandwidth: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Mean curves for every subject; returns (p, M) array and bandwidths."""
    mus = np.empty((obs.n_subjects, grid.size))
    bws = np.empty(obs.n_subjects)
    for i in range(obs.n_subjects):
        mus[i], bws[i] = estimate_mean(obs.times[i], obs.values[i], grid, bandwidth)
    return mus, bws


@dataclass(frozen=True)
class AutocovField:
    """Autocovariance surfaces per subject for lags 0..max_lag.

    ``values[i, h]`` samples C_h(t, s) = cov(X_{j+h}(t), X_j(s)) on
    grid x grid.  Negative lags are served as the transpose, so the
    reflection identity C_{-h}(t, s) = C_h(s, t) holds exactly.
    """

    grid: TimeGrid
    values: np.ndarray  # (p, max_lag + 1, M, M)

    def __post_init__(self):
        v = np.asarray(self.values, float)
        if v.ndim != 4 or v.shape[2] != self.grid.size or v.shape[3] != self.grid.size:
            raise DimensionError("autocovariance values must be (p, H+1, M, M)")
        object.__setattr__(self, "values", v)

    @property
    def n_subjects(self) -> int:
        return self.values.shape[0]

    @property
    def max_lag(self) -> int:
        return self.values.shape[1] - 1

    def lag(self, i: int, h: int) -> np.ndarray:
        if abs(h) > self.max_lag:
            raise DimensionError(f"lag {h} not stored (max {self.max_lag})")
        surf = self.values[i, abs(h)]
        return surf.T if h < 0 else surf


def _demean(obs: ObservationSet, means: np.ndarray, grid: TimeGrid):
    out = []
    for i in range(obs.n_subjects):
        rows = []
        for t, v in zip(obs.times[i], obs.values[i]):
            rows.append(v - np.interp(t, grid.points, means[i]))
        out.append(rows)
    return out


def _pair_data(times_i, resid_i, h: int):
    """Raw product observations for lag h: x1 from curve j+h, x2 from
    curve j.  Same-index pairs are excluded at lag 0 (their expectation
    carries the noise variance)."""
    x1_all, x2_all, pr_all = [], [], []
    n_curves = len(times_i)
    for j in range(n_curves - h):
        t_hi, r_hi = times_i[j + h], resid_i[j + h]
        t_lo, r_lo = times_i[j], resid_i[j]
        if t_hi.size == 0 or t_lo.size == 0:
            continue
        x1 = np.repeat(t_hi, t_lo.size)
        x2 = np.tile(t_lo, t_hi.size)
        pr = np.repeat(r_hi, t_lo.size) * np.tile(r_lo, t_hi.size)
        if h == 0:
            z1 = np.repeat(np.arange(t_hi.size), t_lo.size)
            z2 = np.tile(np.arange(t_lo.size), t_hi.size)
            keep = z1 != z2
            x1, x2, pr = x1[keep], x2[keep], pr[keep]
        x1_all.append(x1)
        x2_all.append(x2)
        pr_all.append(pr)
    if not x1_all:
        return (np.array([]),) * 3
    return np.concatenate(x1_all), np.concatenate(x2_all), np.concatenate(pr_all)


def _aggregate_2d(x1, x2, pr):
    u1, i1 = np.unique(x1, return_inverse=True)
    u2, i2 = np.unique(x2, return_inverse=True)
    cnt = np.zeros((u1.size, u2.size))
    psum = np.zeros((u1.size, u2.size))
    psq = np.zeros((u1.size, u2.size))
    np.add.at(cnt, (i1, i2), 1.0)
    np.add.at(psum, (i1, i2), pr)
    np.add.at(psq, (i1, i2), pr * pr)
    return u1, u2, cnt, psum, psq


def _moments_2d(u1, u2, cnt, psum, ev1, ev2, bw):
    d1 = u1[None, :] - ev1[:, None]
    d2 = u2[None, :] - ev2[:, None]
    k1 = epanechnikov(d1 / bw)
    k2 = epanechnikov(d2 / bw)
    U = [k1, k1 * d1, k1 * d1 * d1]
    V = [k2, k2 * d2, k2 * d2 * d2]
    S = {}
    for q in range(3):
        for r in range(3 - q):
            S[q, r] = U[q] @ cnt @ V[r].T
    T = {
        (0, 0): U[0] @ psum @ V[0].T,
        (1, 0): U[1] @ psum @ V[0].T,
        (0, 1): U[0] @ psum @ V[1].T,
    }
    return S, T


def _ll_solve_2d(S, T):
    s00, s10, s01 = S[0, 0], S[1, 0], S[0, 1]
    s20, s11, s02 = S[2, 0], S[1, 1], S[0, 2]
    c00 = s20 * s02 - s11 * s11
    c01 = -(s10 * s02 - s11 * s01)
    c02 = s10 * s11 - s20 * s01
    det = s00 * c00 + s10 * c01 + s01 * c02
    scale = np.maximum(s00 * s20 * s02, 1e-300)
    bad = ~(det > 1e-12 * scale)
    with np.errstate(divide="ignore", invalid="ignore"):
        fit = (c00 * T[0, 0] + c01 * T[1, 0] + c02 * T[0, 1]) / det
        hat = _K0 * _K0 * c00 / det
    return fit, hat, bad


def _local_linear_2d(u1, u2, cnt, psum, ev1, ev2, bw, span):
    fit, hat, bad = _ll_solve_2d(*_moments_2d(u1, u2, cnt, psum, ev1, ev2, bw))
    b = bw
    while bad.any() and b < 4.0 * span:
        b *= 2.0
        f2, h2, bad2 = _ll_solve_2d(*_moments_2d(u1, u2, cnt, psum, ev1, ev2, b))
        fill = bad & ~bad2
        fit[fill], hat[fill] = f2[fill], h2[fill]
        bad &= bad2
    if bad.any():
        gm = float(psum.sum() / cnt.sum())
        fit[bad] = gm
        hat[bad] = cnt.mean() / cnt.sum()
    return fit, hat


def _gcv_2d(u1, u2, cnt, psum, psq, bw, span):
    fit, hat = _local_linear_2d(u1, u2, cnt, psum, u1, u2, bw, span)
    n = float(cnt.sum())
    tr = float(np.sum(cnt * hat))
    rss = float(np.sum(psq - 2.0 * fit * psum + cnt * fit * fit))
    if not np.isfinite(rss) or rss < 0 or n - tr <= 0:
        return np.inf
    return n * rss / (n - tr) ** 2


def _select_bandwidth_2d(u1, u2, cnt, psum, psq):
    span = float(max(u1[-1] - u1[0], u2[-1] - u2[0], 1e-12))
    med = float(np.median(np.concatenate([np.diff(u1), np.diff(u2)])) if
                u1.size + u2.size > 2 else 1.0)
    cands = _bandwidth_grid(med, span)
    scores = np.array([_gcv_2d(u1, u2, cnt, psum, psq, b, span) for b in cands])
    if np.all(~np.isfinite(scores)):
        return 1.5 * med
    return float(cands[int(np.argmin(scores))])


def autocov_surfaces(
    obs: ObservationSet,
    means: np.ndarray,
    max_lag: int,
    grid: TimeGrid,
    bandwidth: float | None = None,
) -> tuple[AutocovField, np.ndarray]:
    """Autocovariance surfaces for lags 0..max_lag, every subject.

    Cross products of demeaned readings from curve pairs (j+h, j) are
    smoothed onto grid x grid by a 2-d local linear fit.  At lag 0 the
    same-reading pairs are excluded so measurement noise does not bias
    the diagonal.  One bandwidth per subject, selected by GCV on the
    lag-0 products and reused across lags; pass ``bandwidth`` to pin it.

    Returns the field and the per-subject bandwidths.
    """
    if max_lag < 0:
        raise ValueError("max_lag must be >= 0")
    if max_lag >= obs.n_curves:
        raise InsufficientDataError(
            f"lag {max_lag} needs more than {obs.n_curves} curves"
        )
    resid = _demean(obs, means, grid)
    p, M = obs.n_subjects, grid.size
    out = np.empty((p, max_lag + 1, M, M))
    bws = np.empty(p)
    for i in range(p):
        x1, x2, pr = _pair_data(obs.times[i], resid[i], 0)
        if x1.size == 0:
            raise InsufficientDataError(f"subject {i + 1}: no usable lag-0 pairs")
        u1, u2, cnt, psum, psq = _aggregate_2d(x1, x2, pr)
        bw = bandwidth if bandwidth is not None else _select_bandwidth_2d(
            u1, u2, cnt, psum, psq
        )
        bws[i] = bw
        span = 1.0
        surf, _ = _local_linear_2d(u1, u2, cnt, psum, grid.points, grid.points, bw, span)
        out[i, 0] = 0.5 * (surf + surf.T)
        for h in range(1, max_lag + 1):
            x1, x2, pr = _pair_data(obs.times[i], resid[i], h)
            if x1.size == 0:
                raise InsufficientDataError(
                    f"subject {i + 1}: no usable pairs at lag {h}"
                )
            u1, u2, cnt, psum, _ = _aggregate_2d(x1, x2, pr)
            surf, _ = _local_linear_2d(
                u1, u2, cnt, psum, grid.points, grid.points, bw, span
            )
            out[i, h] = surf
    return AutocovField(grid, out), bws


def estimate_autocov(
    obs: ObservationSet,
    means: np.ndarray,
    h: int,
    grid: TimeGrid,
    bandwidth: float | None = None,
) -> np.ndarray:
    """Single-lag surfaces C_h for every subject, shape (p, M, M)."""
    field, _ = autocov_surfaces(obs, means, abs(h), grid, bandwidth)
    return np.stack([field.lag(i, h) for i in range(obs.n_subjects)])


def _ridge_diagonal(u1, u2, cnt, psum, ev, bu, bv, span, fallback):
    """Covariance values on the diagonal from off-diagonal pairs.

    A plane fit underestimates a peaked ridge, so the diagonal is
    refit in rotated coordinates u = (t1+t2)/2, v = t1-t2 with basis
    {1, u-t, v^2}: local linear along the ridge (bandwidth ``bu``),
    quadratic across it (bandwidth ``bv``).  Both pair orders are
    present, so odd-v moments vanish and the fit reduces to a 3x3
    solve per evaluation point.  ``bv`` must cover several distinct
    time offsets or the v^2 column collapses onto the constant.
    Singular fits widen both bandwidths; points that stay singular
    take ``fallback``.
    """
    U = 0.5 * (u1[:, None] + u2[None, :])
    V = u1[:, None] - u2[None, :]
    out = np.empty(ev.size)
    todo = np.ones(ev.size, dtype=bool)
    b, c = bu, bv
    v2 = V * V
    while todo.any() and b < 4.0 * span:
        kv = epanechnikov(V / c)
        du = U[None, :, :] - ev[todo, None, None]
        kern = epanechnikov(du / b) * kv[None, :, :]
        w = kern * cnt[None, :, :]
        wp = kern * psum[None, :, :]
        s00 = np.sum(w, axis=(1, 2))
        s10 = np.sum(w * du, axis=(1, 2))
        s20 = np.sum(w * du * du, axis=(1, 2))
        s0v = np.sum(w * v2, axis=(1, 2))
        s1v = np.sum(w * du * v2, axis=(1, 2))
        s0v4 = np.sum(w * v2 * v2, axis=(1, 2))
        t0 = np.sum(wp, axis=(1, 2))
        t1 = np.sum(wp * du, axis=(1, 2))
        tv = np.sum(wp * v2, axis=(1, 2))
        N = np.stack(
            [
                np.stack([s00, s10, s0v], axis=-1),
                np.stack([s10, s20, s1v], axis=-1),
                np.stack([s0v, s1v, s0v4], axis=-1),
            ],
            axis=-2,
        )
        rhs = np.stack([t0, t1, tv], axis=-1)
        det = np.linalg.det(N)
        scale = np.maximum(s00 * s20 * s0v4, 1e-300)
        good = det > 1e-12 * scale
        if good.any():
            beta = np.linalg.solve(N[good], rhs[good][..., None])[..., 0, 0]
            idx = np.flatnonzero(todo)[good]
            out[idx] = beta
            rem = todo.copy()
            rem[idx] = False
            todo = rem
        b *= 2.0
        c *= 2.0
    if todo.any():
        out[todo] = fallback[todo]
    return out


def estimate_noise_variance(
    obs: ObservationSet,
    means: np.ndarray,
    acov: AutocovField,
    grid: TimeGrid,
    bandwidth: float | None = None,
    cov_bandwidths: np.ndarray | None = None,
) -> np.ndarray:
    """Per-subject measurement-noise variances.

    Smooths squared demeaned readings into a raw variance curve V(t),
    subtracts the lag-0 covariance diagonal, and averages the gap over
    the central half of [0, 1] where boundary bias is mild.  The
    diagonal is re-estimated from the off-diagonal pair products by a
    ridge-aware rotated fit (see :func:`_ridge_diagonal`): the plane
    fit that produces the stored surface flattens the ridge and would
    inflate the gap.  Floored at 1e-8 times the subject's overall
    sample variance so downstream weights stay finite.

    ``cov_bandwidths`` supplies the per-subject pair-smoothing
    bandwidths (as returned by :func:`autocov_surfaces`); left unset,
    they are re-selected by GCV on the lag-0 products.
    """
    resid = _demean(obs, means, grid)
    t_pts = grid.points
    central = (t_pts >= 0.25) & (t_pts <= 0.75)
    w_c = grid.weights[central]
    out = np.empty(obs.n_subjects)
    for i in range(obs.n_subjects):
        x = np.concatenate(obs.times[i])
        r = np.concatenate(resid[i])
        if np.unique(x).size < 3:
            raise InsufficientDataError("noise estimation needs >= 3 distinct times")
        ux, cnt, s, ss = _aggregate_1d(x, r * r)
        bw = bandwidth if bandwidth is not None else _select_bandwidth_1d(ux, cnt, s, ss)
        span = float(ux[-1] - ux[0])
        v_curve, _ = _local_linear_1d(ux, cnt, s, t_pts, bw, span)
        x1, x2, pr = _pair_data(obs.times[i], resid[i], 0)
        surf_diag = np.diag(acov.values[i, 0])
        if x1.size:
            p1, p2, pc, ps, pq = _aggregate_2d(x1, x2, pr)
            if cov_bandwidths is not None:
                cb = float(cov_bandwidths[i])
            else:
                cb = _select_bandwidth_2d(p1, p2, pc, ps, pq)
            bv = max(0.15, cb)
            diag = _ridge_diagonal(p1, p2, pc, ps, t_pts, cb, bv, 1.0, surf_diag)
        else:
            diag = surf_diag
        diff = v_curve[central] - diag[central]
        est = float(np.sum(w_c * diff) / np.sum(w_c))
        var_all = float(np.var(r)) if r.size else 0.0
        floor = 1e-8 * var_all if var_all > 0 else 1e-30
        out[i] = max(est, floor)
    return out
