import numpy as np
import pytest

from spectral_mpca import core


def test_trapezoid_unit_constant():
    g = core.make_time_grid(51)
    one = np.ones(51)
    assert abs(core.trapezoid_inner_product(one, one, g).real - 1.0) < 1e-12


def test_trapezoid_t_squared():
    # int_0^1 t^2 dt = 1/3, composite trapezoid error O(h^2)
    g = core.make_time_grid(101)
    val = core.trapezoid_inner_product(g.points, g.points, g).real
    assert abs(val - 1.0 / 3.0) < 1e-4


def test_trapezoid_orthogonality_dense():
    g = core.make_time_grid(801)
    f = np.sin(2 * np.pi * g.points)
    h = np.cos(2 * np.pi * g.points)
    assert abs(core.trapezoid_inner_product(f, h, g)) < 1e-3


def test_inner_product_conjugate_symmetry():
    rng = np.random.default_rng(7)
    g = core.make_time_grid(33)
    for _ in range(20):
        f = rng.normal(size=33) + 1j * rng.normal(size=33)
        h = rng.normal(size=33) + 1j * rng.normal(size=33)
        a = core.trapezoid_inner_product(f, h, g)
        b = core.trapezoid_inner_product(h, f, g)
        assert abs(a - np.conj(b)) < 1e-15 * max(1.0, abs(a))


def test_quadrature_exact_linear():
    rng = np.random.default_rng(3)
    for n in (2, 5, 31, 64):
        g = core.make_time_grid(n)
        a, b = rng.normal(size=2)
        f = a * g.points + b
        exact = a / 2 + b
        assert abs(np.sum(g.weights * f) - exact) < 1e-12


def test_weights_positive_sum_to_span():
    for n in (2, 3, 31, 101):
        g = core.make_time_grid(n)
        assert np.all(g.weights > 0)
        assert abs(g.weights.sum() - 1.0) < 1e-12
    fg = core.make_frequency_grid(64)
    assert np.all(fg.weights > 0)
    assert abs(fg.weights.sum() - 2 * np.pi) < 1e-12


def test_time_grid_matches_linspace():
    g = core.make_time_grid(31)
    assert np.array_equal(g.points, np.linspace(0.0, 1.0, 31))


def test_minimal_grids_construct():
    tg = core.make_time_grid(2)
    fg = core.make_frequency_grid(2, 1)
    assert tg.size == 2 and fg.size >= 2


def test_frequency_grid_negation_closure_bitwise():
    for m, j in ((64, None), (128, 60), (33, 30), (100, 90)):
        g = core.make_frequency_grid(m, j)
        idx = g.negation_indices()
        assert np.array_equal(g.points[idx], -g.points)


def test_frequency_grid_contains_whittle_set():
    g = core.make_frequency_grid(101, 30)
    for w in core.whittle_frequencies(30):
        i = g.index_of(w)
        assert abs(g.points[i] - w) <= 1e-9


def test_whittle_frequencies_principal_values():
    w = core.whittle_frequencies(4)
    # 2*pi*j/4 for j=1..4 -> pi/2, pi, -pi/2, 0
    assert np.allclose(np.sort(w), [-np.pi / 2, 0.0, np.pi / 2, np.pi], atol=1e-12)
    assert np.all(w > -np.pi - 1e-12) and np.all(w <= np.pi + 1e-12)


def test_asymmetric_grid_rejected():
    with pytest.raises(core.DimensionError):
        core.FrequencyGrid(np.array([-1.0, 0.0, 2.0]))


def test_non_increasing_grid_rejected():
    with pytest.raises(core.DimensionError):
        core.TimeGrid(np.array([0.0, 0.5, 0.5, 1.0]))


def _panel(times, values):
    return core.ObservationSet(times, values)


def test_validate_clean_panel():
    rng = np.random.default_rng(0)
    times = [[np.sort(rng.uniform(0, 1, 5)) for _ in range(4)] for _ in range(2)]
    values = [[rng.normal(size=5) for _ in range(4)] for _ in range(2)]
    rep = core.validate_observations(_panel(times, values))
    assert rep.ok
    assert rep.mean_count == 5.0
    assert rep.n_subjects == 2 and rep.n_curves == 4


def test_validate_flags_out_of_range_time():
    times = [[np.array([0.1, 1.2])]]
    values = [[np.array([1.0, 2.0])]]
    rep = core.validate_observations(_panel(times, values))
    assert not rep.ok
    assert any("outside" in s for s in rep.issues)


def test_validate_flags_empty_curve():
    times = [[np.array([0.5]), np.array([])]]
    values = [[np.array([1.0]), np.array([])]]
    rep = core.validate_observations(_panel(times, values))
    assert any("empty" in s for s in rep.issues)
    assert rep.mean_count == 0.5


def test_observation_set_shape_mismatch():
    with pytest.raises(core.DimensionError):
        _panel([[np.array([0.1, 0.2])]], [[np.array([1.0])]])


def test_subject_view_and_restrict():
    rng = np.random.default_rng(1)
    times = [[np.sort(rng.uniform(0, 1, 3)) for _ in range(5)] for _ in range(3)]
    values = [[rng.normal(size=3) for _ in range(5)] for _ in range(3)]
    obs = _panel(times, values)
    sub = obs.subject(1)
    assert sub.n_subjects == 1 and sub.n_curves == 5
    assert np.array_equal(sub.times[0][2], times[1][2])
    cut = obs.restrict_curves(2)
    assert cut.n_curves == 2 and cut.n_subjects == 3


def test_hermitian_defect():
    a = np.array([[1.0, 2.0 + 1j], [2.0 - 1j, 3.0]])
    assert core.hermitian_defect(a) == 0.0
    b = a.copy()
    b[0, 1] += 0.5
    assert abs(core.hermitian_defect(b) - 0.5) < 1e-12
