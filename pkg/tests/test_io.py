import json
import pathlib
import struct

import numpy as np
import pytest

from spectral_mpca import config, pipeline, serialize, simgen, tasks
from spectral_mpca.core import make_time_grid


@pytest.fixture(scope="module")
def panel():
    cfg = simgen.SimConfig(n_subjects=2, n_curves=20, n_range=(8, 12), seed=14)
    return simgen.generate_panel(cfg)


@pytest.fixture(scope="module")
def model(panel):
    return pipeline.fit(panel.obs, pipeline.FitConfig(n_components=1))


def test_container_round_trip(tmp_path):
    path = tmp_path / "box.bin"
    arrays = {
        "f": np.array([[1.5, -2.25], [0.1, 3.0]]),
        "c": np.array([1 + 2j, -0.5j]),
        "i": np.arange(6, dtype=np.int64).reshape(2, 3),
        "s": np.array(4.75),  # zero-dimensional
    }
    serialize.write_container(path, "demo", {"note": "x", "n": 3}, arrays)
    manifest, back = serialize.read_container(path, "demo")
    assert manifest["format"] == "demo"
    assert manifest["format_version"] == serialize.FORMAT_VERSION
    assert manifest["note"] == "x" and manifest["n"] == 3
    for name, arr in arrays.items():
        assert np.array_equal(back[name], arr)
        assert back[name].shape == arr.shape
    assert back["c"].dtype == np.complex128
    assert back["i"].dtype == np.int64


def test_container_resave_byte_identical(tmp_path):
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    rng = np.random.default_rng(0)
    arrays = {"x": rng.normal(size=(3, 4)), "z": rng.normal(size=5) * 1j}
    serialize.write_container(p1, "demo", {"k": 1}, arrays)
    manifest, back = serialize.read_container(p1)
    extras = {
        k: v
        for k, v in manifest.items()
        if k not in ("format", "format_version", "arrays")
    }
    serialize.write_container(p2, manifest["format"], extras, back)
    assert p1.read_bytes() == p2.read_bytes()


def test_container_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOTRIGHT" + b"\x00" * 32)
    with pytest.raises(serialize.DataFormatError):
        serialize.read_container(path)


def _raw_container(version):
    blob = json.dumps(
        {"format": "demo", "format_version": version, "arrays": []}
    ).encode()
    return serialize.MAGIC + struct.pack("<Q", len(blob)) + blob


def test_container_version_gate(tmp_path):
    ok = tmp_path / "minor.bin"
    ok.write_bytes(_raw_container("1.7"))
    manifest, arrays = serialize.read_container(ok)  # minor bump accepted
    assert arrays == {}
    bad = tmp_path / "major.bin"
    bad.write_bytes(_raw_container("2.0"))
    with pytest.raises(serialize.DataFormatError):
        serialize.read_container(bad)


def test_container_kind_mismatch(tmp_path):
    path = tmp_path / "kind.bin"
    serialize.write_container(path, "alpha", {}, {"x": np.zeros(2)})
    with pytest.raises(serialize.DataFormatError):
        serialize.read_container(path, "beta")


def test_container_truncation_and_trailing(tmp_path):
    path = tmp_path / "c.bin"
    serialize.write_container(path, "demo", {}, {"x": np.zeros(4)})
    data = path.read_bytes()
    short = tmp_path / "short.bin"
    short.write_bytes(data[:-8])
    with pytest.raises(serialize.DataFormatError):
        serialize.read_container(short)
    longer = tmp_path / "long.bin"
    longer.write_bytes(data + b"xyz")
    with pytest.raises(serialize.DataFormatError):
        serialize.read_container(longer)


def test_model_round_trip(tmp_path, model):
    path = tmp_path / "model.bin"
    serialize.save_model(model, path)
    back = serialize.load_model(path)
    assert np.array_equal(back.means, model.means)
    assert np.array_equal(back.eta, model.eta)
    assert np.array_equal(back.noise_variances, model.noise_variances)
    assert np.array_equal(back.scores.flat, model.scores.flat)
    assert back.bank.max_lags == model.bank.max_lags
    for k in range(model.n_components):
        for lag in range(-model.bank.max_lags[k], model.bank.max_lags[k] + 1):
            assert np.array_equal(back.bank.filter(k, lag), model.bank.filter(k, lag))
    assert back.lag_window == model.lag_window
    assert np.array_equal(back.time_grid.points, model.time_grid.points)
    assert np.array_equal(back.freq_grid.points, model.freq_grid.points)
    # reconstructions agree bit for bit
    assert np.array_equal(tasks.impute(back), tasks.impute(model))


def test_truth_round_trip(tmp_path, panel):
    path = tmp_path / "truth.bin"
    serialize.save_truth(panel, path)
    back = serialize.load_truth(path)
    assert back.config == panel.config
    assert back.n_total_curves == panel.n_total_curves
    assert np.array_equal(back.curves, panel.curves)
    assert np.array_equal(back.noise_scale, panel.noise_scale)
    assert np.array_equal(back.site_grid.points, panel.site_grid.points)


def test_panel_csv_round_trip(tmp_path, panel):
    path = tmp_path / "panel.csv"
    serialize.write_panel_csv(panel.obs, path)
    back = serialize.read_panel_csv(path)
    assert back.n_subjects == panel.obs.n_subjects
    assert back.n_curves == panel.obs.n_curves
    for i in range(back.n_subjects):
        for j in range(back.n_curves):
            # repr round-trips floats exactly
            assert np.array_equal(back.times[i][j], panel.obs.times[i][j])
            assert np.array_equal(back.values[i][j], panel.obs.values[i][j])


def test_panel_csv_errors(tmp_path):
    bad_header = tmp_path / "h.csv"
    bad_header.write_text("a,b,c,d\n1,1,0.5,1.0\n")
    with pytest.raises(serialize.DataFormatError):
        serialize.read_panel_csv(bad_header)
    bad_fields = tmp_path / "f.csv"
    bad_fields.write_text("subject,curve,time,value\n1,1,0.5\n")
    with pytest.raises(serialize.DataFormatError):
        serialize.read_panel_csv(bad_fields)
    zero_based = tmp_path / "z.csv"
    zero_based.write_text("subject,curve,time,value\n0,1,0.5,1.0\n")
    with pytest.raises(serialize.DataFormatError):
        serialize.read_panel_csv(zero_based)
    empty = tmp_path / "e.csv"
    empty.write_text("subject,curve,time,value\n")
    with pytest.raises(serialize.DataFormatError):
        serialize.read_panel_csv(empty)


def test_curves_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    grid = make_time_grid(31)
    curves = rng.normal(size=(2, 3, 31))
    path = tmp_path / "curves.csv"
    serialize.write_curves_csv(curves, grid, path)
    ids, back = serialize.read_curves_csv(path, grid)
    assert np.array_equal(ids, [1, 2, 3])
    assert np.array_equal(back, curves)
    # forecast naming: indices continue past the panel
    serialize.write_curves_csv(curves, grid, path, first_curve=61)
    ids, back = serialize.read_curves_csv(path, grid)
    assert np.array_equal(ids, [61, 62, 63])
    assert np.array_equal(back, curves)


def test_curves_csv_errors(tmp_path):
    grid = make_time_grid(11)
    off = tmp_path / "off.csv"
    off.write_text("subject,curve,time,value\n1,1,0.473,1.0\n")
    with pytest.raises(serialize.DataFormatError):
        serialize.read_curves_csv(off, grid)
    partial = tmp_path / "partial.csv"
    rows = ["subject,curve,time,value"]
    for a in range(10):  # one grid point missing
        rows.append(f"1,1,{grid.points[a]!r},0.0")
    partial.write_text("\n".join(rows) + "\n")
    with pytest.raises(serialize.DataFormatError):
        serialize.read_curves_csv(partial, grid)


FULL_DOC = {
    "fit": {"n_time_points": 31, "n_components": 1, "max_abs_lag": 3},
    "simulate": {"n_subjects": 3, "n_curves": 30, "n_range": [8, 12], "seed": 4},
    "benchmark": {
        "scenarios": [{"case": 1, "n_curves": 30, "n_range": [5, 10]}],
        "methods": ["spectral_mpca"],
        "metric": "nmse",
        "n_replicates": 2,
        "base_seed": 7,
    },
}


def test_config_accepts_and_builds():
    doc = config.validate_config(FULL_DOC)
    fc = config.fit_config_from(doc)
    assert fc.n_time_points == 31 and fc.n_components == 1 and fc.max_abs_lag == 3
    sc = config.sim_config_from(doc, seed=9)  # override wins
    assert sc.n_subjects == 3 and sc.n_range == (8, 12) and sc.seed == 9
    bc = config.benchmark_config_from(doc)
    assert bc.scenarios[0].n_range == (5, 10)
    assert bc.methods == ("spectral_mpca",)
    assert bc.n_replicates == 2 and bc.base_seed == 7
    assert bc.fit == fc  # per-replicate fits reuse the fit section


def test_config_rejects_bad_documents():
    cases = [
        {"unknown_section": {}},
        {"fit": {"bogus_key": 1}},
        {"fit": {"lag_epsilon": 1.5}},
        {"simulate": {"case": 4}},
        {"simulate": {"seed": -1}},
        {"benchmark": {"methods": ["nope"]}},
        {"benchmark": {"metric": "rmse"}},
    ]
    for doc in cases:
        with pytest.raises(config.ConfigError):
            config.validate_config(doc)


def test_load_config_errors(tmp_path):
    with pytest.raises(config.ConfigError):
        config.load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(config.ConfigError):
        config.load_config(bad)
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2, 3]")
    with pytest.raises(config.ConfigError):
        config.load_config(arr)
    good = tmp_path / "good.json"
    good.write_text(json.dumps(FULL_DOC))
    assert config.load_config(good) == FULL_DOC


def test_packaged_schema_in_sync():
    # config.schema.json ships with the wheel; regenerate with
    # python -m spectral_mpca.config if the schema constant changes
    assert config.packaged_schema_text() == config.schema_text()


def test_shipped_configs_validate():
    root = pathlib.Path(__file__).resolve().parent.parent / "configs"
    paths = sorted(root.glob("*.json"))
    assert paths, "no shipped configuration files found"
    for path in paths:
        doc = config.load_config(path)
        config.benchmark_config_from(doc)  # builds without error
