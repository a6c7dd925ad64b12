"""Grids, observation containers, and shared numerical primitives.

Curves live on a common time grid over [0, 1]; spectral objects live on a
symmetric frequency grid over [-pi, pi].  Both carry trapezoid quadrature
weights so that inner products and integrals reduce to weighted sums.
All container types are frozen dataclasses; treat the held arrays as
read-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DimensionError",
    "InsufficientDataError",
    "NumericalError",
    "SolverError",
    "TimeGrid",
    "FrequencyGrid",
    "ObservationSet",
    "PanelReport",
    "trapezoid_weights",
    "make_time_grid",
    "make_frequency_grid",
    "whittle_frequencies",
    "trapezoid_inner_product",
    "hermitian_defect",
    "validate_observations",
]


class DimensionError(ValueError):
    """Mismatched shapes or grids between interacting objects."""


class InsufficientDataError(ValueError):
    """Too few observations to carry out an estimation step."""


class NumericalError(RuntimeError):
    """A numerical invariant was violated beyond tolerance."""


class SolverError(NumericalError):
    """Iterative solver failed to reach its target residual."""

    def __init__(self, message: str, residual: float = math.nan):
        super().__init__(message)
        self.residual = residual


def trapezoid_weights(points: np.ndarray) -> np.ndarray:
    """Trapezoid quadrature weights for a sorted 1-d grid.

    Weights are positive and sum to the grid span.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 1 or points.size < 2:
        raise DimensionError("grid needs at least two points")
    if np.any(np.diff(points) <= 0):
        raise DimensionError("grid points must be strictly increasing")
    w = np.empty_like(points)
    w[0] = 0.5 * (points[1] - points[0])
    w[-1] = 0.5 * (points[-1] - points[-2])
    w[1:-1] = 0.5 * (points[2:] - points[:-2])
    return w


@dataclass(frozen=True)
class TimeGrid:
    """Uniform evaluation grid on [0, 1] with trapezoid weights."""

    points: np.ndarray
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if self.weights is None:
            object.__setattr__(self, "weights", trapezoid_weights(pts))
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != pts.shape:
                raise DimensionError("weights must match points")
            object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.points.size

    def __eq__(self, other) -> bool:
        return isinstance(other, TimeGrid) and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash((self.points.size, float(self.points[0]), float(self.points[-1])))


@dataclass(frozen=True)
class FrequencyGrid:
    """Symmetric frequency grid on [-pi, pi] with trapezoid weights.

    Closed under negation exactly: the grid is built by mirroring its
    nonnegative half, so ``-omega`` is a member bitwise whenever ``omega``
    is.  Frequencies outside (-pi, pi] are always stored as principal
    values, which leaves exp(i*l*omega) unchanged for integer lags l.
    """

    points: np.ndarray
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if self.weights is None:
            object.__setattr__(self, "weights", trapezoid_weights(pts))
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != pts.shape:
                raise DimensionError("weights must match points")
            object.__setattr__(self, "weights", w)
        if np.max(np.abs(np.sort(-pts) - pts)) > 1e-9:
            raise DimensionError("frequency grid must be closed under negation")

    @property
    def size(self) -> int:
        return self.points.size

    def index_of(self, value: float, tol: float = 1e-9) -> int:
        """Index of the grid point equal to ``value`` within ``tol``."""
        i = int(np.searchsorted(self.points, value))
        for j in (i - 1, i, i + 1):
            if 0 <= j < self.points.size and abs(self.points[j] - value) <= tol:
                return j
        raise DimensionError(f"frequency {value!r} is not a grid point")

    def negation_indices(self) -> np.ndarray:
        """Index map m with points[m[a]] == -points[a].

        A sorted negation-closed grid reverses under negation.
        """
        m = np.arange(self.points.size)[::-1].copy()
        if np.max(np.abs(self.points[m] + self.points)) > 1e-9:
            raise NumericalError("negation closure lookup failed")
        return m

    def __eq__(self, other) -> bool:
        return isinstance(other, FrequencyGrid) and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash((self.points.size, float(self.points[0]), float(self.points[-1])))


def principal_frequency(omega: float) -> float:
    """Map omega to its principal value in (-pi, pi]."""
    w = math.fmod(omega, 2.0 * math.pi)
    if w > math.pi:
        w -= 2.0 * math.pi
    elif w <= -math.pi:
        w += 2.0 * math.pi
    return w


def whittle_frequencies(n_curves: int) -> np.ndarray:
    """Evaluation frequencies 2*pi*j/n for j = 1..n, as principal values."""
    if n_curves < 1:
        raise DimensionError("need at least one curve")
    return np.array(
        [principal_frequency(2.0 * math.pi * j / n_curves) for j in range(1, n_curves + 1)]
    )


def make_time_grid(n_points: int) -> TimeGrid:
    """Uniform grid of ``n_points`` over [0, 1]."""
    if n_points < 2:
        raise DimensionError("time grid needs at least 2 points")
    return TimeGrid(np.linspace(0.0, 1.0, n_points))


def make_frequency_grid(n_points: int, n_curves: int | None = None) -> FrequencyGrid:
    """Symmetric grid on [-pi, pi]: a uniform base optionally merged with
    the curve-count evaluation set {2*pi*j/n_curves}.

    The union is deduplicated on the nonnegative half (tolerance 1e-9) and
    mirrored, so negation closure is exact and the evaluation set is
    representable via :meth:`FrequencyGrid.index_of`.
    """
    if n_points < 2:
        raise DimensionError("frequency grid needs at least 2 points")
    base = np.linspace(-math.pi, math.pi, n_points)
    half = base[base >= 0.0]
    if 0.0 not in half:
        half = np.concatenate(([0.0], half))
    if n_curves is not None:
        extra = whittle_frequencies(n_curves)
        half = np.concatenate((half, np.abs(extra)))
    half = np.sort(half)
    keep = np.concatenate(([True], np.diff(half) > 1e-9))
    half = half[keep]
    pts = np.concatenate((-half[half > 0.0][::-1], half))
    return FrequencyGrid(pts)


@dataclass(frozen=True)
class ObservationSet:
    """Irregular noisy panel: p subjects by J curves of scattered readings.

    ``times[i][j]`` and ``values[i][j]`` hold the within-curve sampling
    points and readings for subject i, curve j (0-based internally).
    Construction checks shape consistency only; data-quality issues are
    surfaced by :func:`validate_observations`.
    """

    times: list
    values: list

    def __post_init__(self):
        if len(self.times) != len(self.values) or not self.times:
            raise DimensionError("times and values must list the same subjects")
        n_curves = {len(tj) for tj in self.times}
        if len(n_curves) != 1 or len({len(vj) for vj in self.values}) != 1:
            raise DimensionError("all subjects must have the same number of curves")
        t_cast, v_cast = [], []
        for ti, vi in zip(self.times, self.values):
            ti_c, vi_c = [], []
            for t, v in zip(ti, vi):
                t = np.asarray(t, dtype=float)
                v = np.asarray(v, dtype=float)
                if t.shape != v.shape or t.ndim != 1:
                    raise DimensionError("each curve needs matching 1-d times and values")
                ti_c.append(t)
                vi_c.append(v)
            t_cast.append(ti_c)
            v_cast.append(vi_c)
        object.__setattr__(self, "times", t_cast)
        object.__setattr__(self, "values", v_cast)

    @property
    def n_subjects(self) -> int:
        return len(self.times)

    @property
    def n_curves(self) -> int:
        return len(self.times[0])

    def counts(self) -> np.ndarray:
        """Observation counts, shape (p, J)."""
        return np.array([[t.size for t in ti] for ti in self.times])

    def mean_count(self) -> float:
        """Average readings per curve across the whole panel."""
        return float(self.counts().mean())

    def subject(self, i: int) -> "ObservationSet":
        """Single-subject view (p = 1)."""
        return ObservationSet([self.times[i]], [self.values[i]])

    def restrict_curves(self, n_curves: int) -> "ObservationSet":
        """Keep the first ``n_curves`` curves of every subject."""
        if not 1 <= n_curves <= self.n_curves:
            raise DimensionError("curve restriction out of range")
        return ObservationSet(
            [ti[:n_curves] for ti in self.times],
            [vi[:n_curves] for vi in self.values],
        )


@dataclass(frozen=True)
class PanelReport:
    """Diagnostics from :func:`validate_observations`."""

    n_subjects: int
    n_curves: int
    mean_count: float
    subject_mean_counts: np.ndarray
    issues: list

    @property
    def ok(self) -> bool:
        return not self.issues


def validate_observations(obs: ObservationSet) -> PanelReport:
    """Report structural issues: out-of-range times, empty curves.

    Also computes the panel-wide and per-subject mean readings per curve,
    the sample-size summaries used when choosing the lag window.
    """
    issues = []
    counts = obs.counts()
    for i in range(obs.n_subjects):
        for j in range(obs.n_curves):
            t = obs.times[i][j]
            if t.size == 0:
                issues.append(f"subject {i + 1} curve {j + 1}: empty")
                continue
            if np.any((t < 0.0) | (t > 1.0)):
                issues.append(f"subject {i + 1} curve {j + 1}: time outside [0, 1]")
            if np.any(~np.isfinite(t)) or np.any(~np.isfinite(obs.values[i][j])):
                issues.append(f"subject {i + 1} curve {j + 1}: non-finite entry")
    return PanelReport(
        n_subjects=obs.n_subjects,
        n_curves=obs.n_curves,
        mean_count=float(counts.mean()),
        subject_mean_counts=counts.mean(axis=1),
        issues=issues,
    )


def trapezoid_inner_product(f: np.ndarray, g: np.ndarray, grid) -> complex:
    """Weighted inner product sum(w * conj(f) * g) on a common grid.

    Conjugate-linear in the first argument.  Returns a complex scalar;
    take ``.real`` for real arguments.
    """
    f = np.asarray(f)
    g = np.asarray(g)
    if f.shape != grid.points.shape or g.shape != grid.points.shape:
        raise DimensionError("functions must be sampled on the grid")
    return complex(np.sum(grid.weights * np.conj(f) * g))


def hermitian_defect(matrix: np.ndarray) -> float:
    """Max absolute deviation of a square array from its conjugate transpose."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionError("expected a square matrix")
    return float(np.max(np.abs(matrix - matrix.conj().T))) if matrix.size else 0.0
