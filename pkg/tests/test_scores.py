import numpy as np
import pytest

from spectral_mpca import scores
from spectral_mpca.core import DimensionError, ObservationSet, make_time_grid
from spectral_mpca.filters import FilterBank


GRID = make_time_grid(21)


def _bank(rng, max_lags):
    arrays = []
    for L in max_lags:
        arr = rng.normal(size=(2 * L + 1, GRID.size))
        arrays.append(arr)
    return FilterBank(GRID, tuple(arrays), tuple(max_lags))


def _panel(rng, p, J, n_per_curve):
    times = [
        [np.sort(rng.uniform(0, 1, n_per_curve)) for _ in range(J)]
        for _ in range(p)
    ]
    values = [
        [rng.normal(size=n_per_curve) for _ in range(J)] for _ in range(p)
    ]
    return ObservationSet(times, values)


def test_design_worked_example_pattern():
    # (p, J, K, L_1) = (2, 3, 1, 1) with two readings per curve: the
    # classic 12 x 10 design whose row (i, j, z) loads on score times
    # j-1, j, j+1 of subject i only
    rng = np.random.default_rng(0)
    bank = _bank(rng, (1,))
    obs = _panel(rng, 2, 3, 2)
    means = np.zeros((2, GRID.size))
    noise = np.array([0.5, 2.0])
    A, y, w_vec, layout = scores.build_design(obs, bank, means, noise, GRID)
    assert A.shape == (12, 10)
    assert layout.dim == 10 and layout.series_length(0) == 5
    expected = np.zeros((12, 10), bool)
    for i in range(2):
        for j in range(3):
            for z in range(2):
                row = i * 6 + j * 2 + z
                for jp in (j - 1, j, j + 1):
                    expected[row, (jp + 1) * 2 + i] = True
    assert np.array_equal(A.toarray() != 0, expected)
    assert np.allclose(w_vec[:6], 1 / 0.5) and np.allclose(w_vec[6:], 1 / 2.0)
    flat_vals = np.concatenate([np.concatenate(v) for v in obs.values])
    assert np.allclose(y, flat_vals)  # zero means: y is the raw readings


def test_design_matches_loop_oracle():
    rng = np.random.default_rng(1)
    bank = _bank(rng, (1, 0))
    obs = _panel(rng, 2, 4, 3)
    means = rng.normal(size=(2, GRID.size))
    noise = np.array([1.0, 1.5])
    A, y, w_vec, layout = scores.build_design(obs, bank, means, noise, GRID)
    xi = rng.normal(size=layout.dim)
    arr = scores.ScoreArray(layout, xi)
    out = A @ xi
    row = 0
    for i in range(2):
        for j in range(4):
            for t in obs.times[i][j]:
                acc = 0.0
                for k in range(2):
                    L = bank.max_lags[k]
                    for lag in range(-L, L + 1):
                        phi = np.interp(t, GRID.points, bank.filter(k, lag))
                        acc += phi * arr.value(i, j + 1 + lag, k)
                assert abs(out[row] - acc) < 1e-12
                row += 1
    # y is the demeaned reading
    mu0 = np.interp(obs.times[0][0][0], GRID.points, means[0])
    assert abs(y[0] - (obs.values[0][0][0] - mu0)) < 1e-12


def test_design_single_observation():
    rng = np.random.default_rng(2)
    bank = _bank(rng, (0,))
    times = [[np.array([0.37])], [np.array([])]]
    values = [[np.array([1.2])], [np.array([])]]
    obs = ObservationSet(times, values)
    means = np.zeros((2, GRID.size))
    A, y, _, layout = scores.build_design(obs, bank, means, np.ones(2), GRID)
    assert A.shape == (1, 2) and layout.dim == 2
    dense = A.toarray()
    assert dense[0, 1] == 0.0
    assert abs(dense[0, 0] - np.interp(0.37, GRID.points, bank.filter(0, 0))) < 1e-12


def test_design_rejects_out_of_range_time():
    rng = np.random.default_rng(3)
    bank = _bank(rng, (0,))
    obs = ObservationSet([[np.array([0.5, 1.2])]], [[np.array([1.0, 2.0])]])
    with pytest.raises(DimensionError):
        scores.build_design(obs, bank, np.zeros((1, GRID.size)), np.ones(1), GRID)


def _dft_quad_oracle(eta, layout, xi):
    """Per-frequency DFT sum for the prior quadratic form."""
    p, J = layout.n_subjects, layout.n_curves
    total = 0.0
    floor = 1e-8 * eta.max()
    eta_f = np.maximum(eta, floor)
    for k in range(layout.n_components):
        L = layout.max_lags[k]
        T_k = J + 2 * L
        for jf in range(1, J + 1):
            w = 2.0 * np.pi * jf / J
            tilde = np.zeros(p, complex)
            for r in range(1, T_k + 1):
                j_time = r - L  # scores run 1-L .. J+L
                for i in range(p):
                    tilde[i] += (
                        np.exp(1j * r * w)
                        * xi[layout.column(i, j_time, k)]
                    )
            tilde /= np.sqrt(2.0 * np.pi * T_k)
            total += float(np.sum(np.abs(tilde) ** 2 / eta_f[:, k, jf - 1]))
    return total


def test_whittle_quadratic_form_identity():
    rng = np.random.default_rng(4)
    layout = scores.ScoreLayout(2, 6, (1, 2))
    eta = rng.uniform(0.5, 2.0, size=(2, 2, 6))
    Q = scores.build_whittle_precision(eta, layout)
    for _ in range(5):
        xi = rng.normal(size=layout.dim)
        oracle = _dft_quad_oracle(eta, layout, xi)
        assert abs(Q.quad_form(xi) - oracle) < 1e-10 * max(oracle, 1.0)


def test_whittle_constant_density_single_subject():
    rng = np.random.default_rng(5)
    layout = scores.ScoreLayout(1, 8, (1,))
    eta = np.full((1, 1, 8), 1.7)
    Q = scores.build_whittle_precision(eta, layout)
    xi = rng.normal(size=layout.dim)
    oracle = _dft_quad_oracle(eta, layout, xi)
    assert abs(Q.quad_form(xi) - oracle) < 1e-10 * max(oracle, 1.0)


def test_whittle_doubling_halves_precision():
    rng = np.random.default_rng(6)
    layout = scores.ScoreLayout(2, 5, (1,))
    eta = rng.uniform(0.5, 2.0, size=(2, 1, 5))
    q1 = scores.build_whittle_precision(eta, layout).dense()
    q2 = scores.build_whittle_precision(2.0 * eta, layout).dense()
    assert np.array_equal(q2, 0.5 * q1)


def test_whittle_worked_example_hermitian_psd():
    rng = np.random.default_rng(7)
    layout = scores.ScoreLayout(2, 3, (1,))
    eta = rng.uniform(0.5, 2.0, size=(2, 1, 3))
    Q = scores.build_whittle_precision(eta, layout).dense()
    assert Q.shape == (10, 10)
    assert np.max(np.abs(Q - Q.conj().T)) < 1e-12
    ev = np.linalg.eigvalsh(Q)
    assert ev.min() >= -1e-10 * ev.max()


def test_whittle_flooring():
    layout = scores.ScoreLayout(1, 4, (0,))
    eta = np.array([[[1.0, 0.0, 1.0, 1.0]]])
    Q = scores.build_whittle_precision(eta, layout)
    assert Q.eta.min() == 1e-8
    with pytest.raises(ValueError):
        scores.build_whittle_precision(np.zeros((1, 1, 4)), layout)


def _random_map_instance(rng, p=2, J=5, max_lags=(1,), n_per_curve=4):
    bank = _bank(rng, max_lags)
    obs = _panel(rng, p, J, n_per_curve)
    means = rng.normal(size=(p, GRID.size))
    noise = rng.uniform(0.5, 2.0, size=p)
    A, y, w_vec, layout = scores.build_design(obs, bank, means, noise, GRID)
    eta = rng.uniform(0.5, 2.0, size=(p, len(max_lags), J))
    Q = scores.build_whittle_precision(eta, layout)
    return A, y, w_vec, Q, layout


def test_map_matches_dense_solve():
    rng = np.random.default_rng(8)
    for _ in range(3):
        A, y, w_vec, Q, layout = _random_map_instance(rng)
        assert layout.dim <= 60
        res = scores.map_scores(A, y, w_vec, Q)
        H = (A.toarray().T * w_vec) @ A.toarray() + Q.dense_real()
        direct = np.linalg.solve(H, A.toarray().T @ (w_vec * y))
        assert np.max(np.abs(res.scores - direct)) < 1e-8


def test_map_square_invertible_without_prior():
    rng = np.random.default_rng(9)
    n = 12
    A = rng.normal(size=(n, n)) + 3.0 * np.eye(n)
    y = rng.normal(size=n)
    res = scores.map_scores(A, y, np.ones(n), None)
    assert np.max(np.abs(res.scores - np.linalg.solve(A, y))) < 1e-8


def test_map_zero_data_gives_zero_scores():
    rng = np.random.default_rng(10)
    A, y, w_vec, Q, layout = _random_map_instance(rng)
    res = scores.map_scores(A, np.zeros_like(y), w_vec, Q)
    assert np.array_equal(res.scores, np.zeros(layout.dim))
    assert res.iterations == 0


def test_map_ridge_fallback_warns():
    # a column with neither data nor prior support triggers the ridge
    A = np.array([[1.0, 0.0], [2.0, 0.0]])
    y = np.array([1.0, 2.0])
    with pytest.warns(RuntimeWarning):
        res = scores.map_scores(A, y, np.ones(2), None)
    assert res.ridge_used


def test_posterior_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    A, y, w_vec, Q, layout = _random_map_instance(rng)
    A = A.toarray()
    xi = rng.normal(size=layout.dim)
    grad = scores.posterior_gradient(A, y, w_vec, Q, xi)
    h = 1e-6
    for idx in rng.choice(layout.dim, size=10, replace=False):
        e = np.zeros(layout.dim)
        e[idx] = h
        num = (
            scores.posterior_value(A, y, w_vec, Q, xi + e)
            - scores.posterior_value(A, y, w_vec, Q, xi - e)
        ) / (2 * h)
        assert abs(grad[idx] - num) < 1e-5 * max(1.0, abs(num))


def test_map_posterior_optimality():
    rng = np.random.default_rng(12)
    A, y, w_vec, Q, layout = _random_map_instance(rng)
    res = scores.map_scores(A, y, w_vec, Q)
    best = scores.posterior_value(A, y, w_vec, Q, res.scores)
    assert best >= scores.posterior_value(A, y, w_vec, Q, np.zeros(layout.dim))
    scale = np.max(np.abs(res.scores))
    for _ in range(100):
        noise = rng.normal(scale=0.01 * scale, size=layout.dim)
        assert best >= scores.posterior_value(A, y, w_vec, Q, res.scores + noise)


def test_map_residual_certificate():
    rng = np.random.default_rng(13)
    A, y, w_vec, Q, layout = _random_map_instance(rng)
    res = scores.map_scores(A, y, w_vec, Q)
    b = A.T @ (w_vec * y)
    lhs = A.T @ (w_vec * (A @ res.scores)) + Q.matvec(res.scores)
    assert np.linalg.norm(lhs - b) <= 1e-8 * np.linalg.norm(b)


def test_score_array_round_trip():
    rng = np.random.default_rng(14)
    layout = scores.ScoreLayout(3, 4, (1, 0))
    flat = rng.normal(size=layout.dim)
    arr = scores.ScoreArray(layout, flat)
    comps = [arr.component(k) for k in range(2)]
    assert comps[0].shape == (6, 3) and comps[1].shape == (4, 3)
    back = scores.ScoreArray.from_components(layout, comps)
    assert np.array_equal(back.flat, flat)
    assert arr.value(2, 0, 0) == flat[layout.column(2, 0, 0)]


def test_layout_bounds():
    layout = scores.ScoreLayout(2, 3, (1,))
    assert layout.dim == 10
    assert layout.column(0, 0, 0) == 0
    assert layout.column(1, 4, 0) == 9
    with pytest.raises(DimensionError):
        layout.column(0, 5, 0)
    with pytest.raises(DimensionError):
        layout.column(0, -1, 0)
