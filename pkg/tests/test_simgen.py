import math

import numpy as np
import pytest

from spectral_mpca import simgen
from spectral_mpca.core import DimensionError


def test_precision_diagonal_value():
    rng = np.random.default_rng(0)
    th1 = simgen.generate_precision(5, 1, 3.0, (0.1, 0.35), rng)
    assert np.allclose(np.diag(th1), math.exp(0.1) / 5.0, atol=1e-12)
    assert abs(th1[0, 0] - 0.2210341836) < 1e-8
    th3 = simgen.generate_precision(5, 3, 3.0, (0.1, 0.35), rng)
    assert np.allclose(np.diag(th3), math.exp(0.3) / 5.0, atol=1e-12)


def test_precision_positive_definite_and_symmetric():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        th = simgen.generate_precision(5, 1, 3.0, (0.1, 0.35), rng)
        assert np.array_equal(th, th.T)
        assert np.linalg.eigvalsh(th)[0] > 0


def test_precision_edge_statistics():
    # edge probability 3/5 over 10 pairs: about 6 edges per draw, each
    # with magnitude inside the configured band relative to the diagonal
    rng = np.random.default_rng(33)
    base = math.exp(0.1) / 5.0
    counts = []
    for _ in range(1000):
        th = simgen.generate_precision(5, 1, 3.0, (0.1, 0.35), rng)
        off = th[np.triu_indices(5, 1)]
        edges = off[off != 0]
        counts.append(edges.size)
        mags = np.abs(edges) / base
        assert np.all((mags >= 0.1 - 1e-12) & (mags <= 0.35 + 1e-12))
    assert abs(np.mean(counts) - 6.0) < 0.5


def test_scores_iid_when_rho_zero():
    rng = np.random.default_rng(1)
    chol = np.linalg.cholesky(np.eye(3))
    x = simgen.generate_scores(chol, 0.0, 2000, 1, 100, rng)
    for i in range(3):
        a, b = x[:-1, i], x[1:, i]
        r = np.corrcoef(a, b)[0, 1]
        assert abs(r) < 0.1


def test_scores_ar_coefficient_recovered():
    rng = np.random.default_rng(2)
    chol = np.linalg.cholesky(np.eye(3))
    x = simgen.generate_scores(chol, 0.5, 2000, 1, 200, rng)
    a, b = x[:-1].ravel(), x[1:].ravel()
    rho_hat = (a @ b) / (a @ a)
    assert abs(rho_hat - 0.5) < 0.1


def test_scores_case3_differs_and_stays_bounded():
    chol = np.linalg.cholesky(np.eye(2))
    x1 = simgen.generate_scores(chol, 0.5, 500, 1, 200, np.random.default_rng(3))
    x3 = simgen.generate_scores(chol, 0.5, 500, 3, 200, np.random.default_rng(3))
    assert not np.allclose(x1, x3)
    assert np.max(np.abs(x3)) < 50.0


def test_lag_weights_normalized():
    for L in range(5):
        w = simgen.lag_weights(L)
        assert w.shape == (2 * L + 1,)
        assert abs(np.sum(w**2) - 1.0) < 1e-12
        assert np.array_equal(w, w[::-1])  # symmetric in the lag
        assert np.all(np.diff(w[L:]) <= 0)  # decaying away from center
    # center weight for L = 1: squared mass 1 / (1 + 2 e^{-1/2})
    assert abs(simgen.lag_weights(1)[1] ** 2 - 0.4518627) < 1e-6


def test_basis_functions_fourier_sequence():
    t = np.linspace(0.0, 1.0, 41)
    per_comp, fluct = simgen.basis_functions(4, (1, 0), t)
    root2 = math.sqrt(2.0)
    assert np.allclose(per_comp[0][0], root2 * np.sin(2 * np.pi * t), atol=1e-12)
    assert np.allclose(per_comp[0][1], root2 * np.cos(2 * np.pi * t), atol=1e-12)
    assert np.allclose(per_comp[0][2], root2 * np.sin(4 * np.pi * t), atol=1e-12)
    # second component continues the sequence
    assert np.allclose(per_comp[1][0], root2 * np.cos(4 * np.pi * t), atol=1e-12)
    # last subject's fluctuation is 1 + sin(t)
    assert np.allclose(fluct[3], 1.0 + np.sin(t), atol=1e-12)
    assert fluct.shape == (4, t.size)


def test_panel_site_contract():
    cfg = simgen.SimConfig(n_subjects=2, n_curves=10, n_range=(4, 5), seed=5)
    panel = simgen.generate_panel(cfg)
    sites = set(panel.site_grid.points)
    for i in range(2):
        for j in range(10):
            t = panel.obs.times[i][j]
            assert t.size in (4, 5)
            assert np.all(np.diff(t) > 0)
            assert all(x in sites for x in t)


def test_panel_mean_count_near_midpoint():
    cfg = simgen.SimConfig(n_subjects=5, n_curves=60, n_range=(5, 10), seed=6)
    panel = simgen.generate_panel(cfg)
    assert 7.0 <= panel.obs.mean_count() <= 8.0


def test_truth_reconstruction_self_consistent():
    cfg = simgen.SimConfig(seed=7)
    panel = simgen.generate_panel(cfg)
    redo = panel.curves_from_scores()
    assert np.max(np.abs(redo - panel.curves)) < 1e-12


def test_latent_process_invariant_to_density():
    sparse = simgen.generate_panel(simgen.SimConfig(n_range=(5, 10), seed=8))
    dense = simgen.generate_panel(simgen.SimConfig(n_range=(20, 31), seed=8))
    assert np.array_equal(sparse.curves, dense.curves)
    assert np.array_equal(sparse.noise_scale, dense.noise_scale)
    for a, b in zip(sparse.scores, dense.scores):
        assert np.array_equal(a, b)


def test_panel_deterministic():
    cfg = simgen.SimConfig(seed=9)
    a = simgen.generate_panel(cfg)
    b = simgen.generate_panel(cfg)
    assert np.array_equal(a.curves, b.curves)
    for i in range(cfg.n_subjects):
        for j in range(cfg.n_curves):
            assert np.array_equal(a.obs.times[i][j], b.obs.times[i][j])
            assert np.array_equal(a.obs.values[i][j], b.obs.values[i][j])


def test_extra_curves_extend_same_paths():
    cfg = simgen.SimConfig(seed=21)
    base = simgen.generate_panel(cfg)
    ext = simgen.generate_panel(cfg, n_extra_curves=5)
    assert ext.n_total_curves == 65
    assert np.array_equal(ext.curves[:, :60], base.curves)
    assert np.array_equal(ext.scores[0][:62], base.scores[0])


def _panel_residuals(panel):
    sites = panel.site_grid.points
    p, J = panel.config.n_subjects, panel.config.n_curves
    per_subject = []
    for i in range(p):
        res = [
            panel.obs.values[i][j]
            - panel.curves[i, j, np.searchsorted(sites, panel.obs.times[i][j])]
            for j in range(J)
        ]
        per_subject.append(np.concatenate(res))
    return per_subject


def test_noise_variance_calibration():
    cfg = simgen.SimConfig(n_subjects=3, n_curves=60, n_range=(10, 15), seed=11)
    panel = simgen.generate_panel(cfg)
    # realized residual variance tracks the stored scale
    for i, res in enumerate(_panel_residuals(panel)):
        ratio = np.var(res) / panel.noise_scale[i] ** 2
        assert 0.85 <= ratio <= 1.15
    # the scale itself is the target fraction of an independently
    # re-estimated long-run curve energy
    per_comp, fluct = simgen.basis_functions(3, cfg.max_lags, panel.site_grid.points)
    chols = [simgen._innovation_chol(th) for th in panel.precisions]
    energy = simgen._curve_energy(cfg, per_comp, fluct, chols, np.random.default_rng(99))
    ratio = panel.noise_scale**2 / (cfg.noise_fraction * energy)
    assert np.all((ratio >= 0.8) & (ratio <= 1.25))


def test_case2_heavy_tails_matched_variance():
    res1 = np.concatenate(
        _panel_residuals(
            simgen.generate_panel(
                simgen.SimConfig(n_subjects=3, n_curves=60, n_range=(10, 15), case=1, seed=11)
            )
        )
    )
    res2 = np.concatenate(
        _panel_residuals(
            simgen.generate_panel(
                simgen.SimConfig(n_subjects=3, n_curves=60, n_range=(10, 15), case=2, seed=11)
            )
        )
    )

    def kurt(x):
        return np.mean(x**4) / np.mean(x**2) ** 2 - 3.0

    assert kurt(res1) < 1.0  # Gaussian noise
    assert kurt(res2) > 2.5  # heavy-tailed noise
    assert 0.85 <= np.var(res2) / np.var(res1) <= 1.18  # same variance target


def test_config_validation():
    with pytest.raises(ValueError):
        simgen.SimConfig(case=4)
    with pytest.raises(DimensionError):
        simgen.SimConfig(max_lags=(1, 1))
    with pytest.raises(ValueError):
        simgen.SimConfig(n_range=(0, 5))
    with pytest.raises(ValueError):
        simgen.SimConfig(n_range=(5, 40))
