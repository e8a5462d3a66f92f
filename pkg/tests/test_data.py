import json
import warnings

import numpy as np
import pytest

from scqr.data import (
    CensoredDataset,
    CoefficientProcess,
    QuantileGrid,
    atomic_write_text,
    load_dataset,
    load_process,
    make_uniform_grid,
    save_process,
)
from scqr.exceptions import DataError


def write_csv(path, text):
    path.write_text(text)
    return path


def test_load_dataset_prepends_intercept(tmp_path):
    f = write_csv(tmp_path / "d.csv", "y,status,a,b\n1.5,1,0.1,2\n-0.3,0,0.4,1\n2.0,1,-1,0\n")
    d = load_dataset(f)
    assert d.n == 3 and d.p == 3
    assert d.columns == ("intercept", "a", "b")
    np.testing.assert_array_equal(d.X[:, 0], 1.0)
    np.testing.assert_array_equal(d.delta, [1, 0, 1])
    assert d.censoring_rate == pytest.approx(1 / 3)


def test_load_dataset_custom_columns(tmp_path):
    f = write_csv(tmp_path / "d.csv", "time,event,a,b\n1,1,0,5\n2,0,1,6\n3,1,2,8\n")
    d = load_dataset(f, y_col="time", status_col="event", covariates=["b"])
    assert d.columns == ("intercept", "b")
    np.testing.assert_array_equal(d.X[:, 1], [5, 6, 8])


@pytest.mark.parametrize("text, match", [
    ("y,status,a\n", "empty dataset"),
    ("", "empty dataset"),
    ("y,status,a\n1,2,0\n2,1,1\n", "invalid status"),
    ("y,status,a\n1,1,zz\n2,1,1\n", "non-numeric"),
    ("y,status,a\n1,1\n2,1,1\n", "expected 3 fields"),
    ("y,a\n1,1\n2,1\n", "status"),
])
def test_load_dataset_errors(tmp_path, text, match):
    f = write_csv(tmp_path / "d.csv", text)
    with pytest.raises(DataError, match=match):
        load_dataset(f)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "missing.csv")


def test_constant_covariate_warns(tmp_path):
    f = write_csv(tmp_path / "d.csv", "y,status,a,b\n1,1,3,0\n2,0,3,1\n3,1,3,2\n")
    with pytest.warns(UserWarning, match="constant"):
        load_dataset(f)


def test_dataset_validation():
    X = np.column_stack([np.ones(4), np.arange(4.0)])
    with pytest.raises(DataError, match="intercept"):
        CensoredDataset(np.zeros(4), np.ones(4), X[:, ::-1])
    with pytest.raises(DataError, match="non-finite"):
        CensoredDataset([0, np.nan, 0, 0], np.ones(4), X)
    with pytest.raises(DataError, match="length mismatch"):
        CensoredDataset(np.zeros(3), np.ones(4), X)
    d = CensoredDataset(np.arange(4.0), [1, 0, 1, 1], X)
    with pytest.raises(ValueError):
        d.y[0] = 3.0  # arrays are read-only
    assert d.subset([0, 2]).n == 2
    assert d.select([0]).p == 1
    with pytest.raises(DataError):
        d.select([1])


def test_uniform_grid_and_hazard_increments():
    g = make_uniform_grid(0.05, 0.8, 0.05)
    assert len(g) == 16 and g.m == 15
    assert g.tau_L == 0.05 and g.tau_U == 0.8
    H = -np.log(1 - g.taus)
    np.testing.assert_allclose(g.deltaH, np.diff(H), rtol=1e-13)
    assert g.max_spacing == pytest.approx(0.05)
    g2 = make_uniform_grid(0.1, 0.75, 0.05)
    assert len(g2) == 14 and g2.taus[-1] == 0.75
    g3 = make_uniform_grid(0.1, 0.5, 0.15)  # last step shorter
    np.testing.assert_allclose(g3.taus, [0.1, 0.25, 0.4, 0.5])


def test_grid_validation():
    for bad in ([0.5, 0.4], [0.0, 0.5], [0.2, 1.0], []):
        with pytest.raises(ValueError):
            QuantileGrid(bad)
    with pytest.raises(ValueError):
        make_uniform_grid(0.5, 0.4, 0.05)


def test_process_is_right_continuous_step_function():
    g = QuantileGrid([0.1, 0.2, 0.4])
    proc = CoefficientProcess(g, np.array([[0.0, 1.0], [1.0, 2.0], [2.0, 3.0]]))
    np.testing.assert_array_equal(proc(0.1), [0, 1])
    np.testing.assert_array_equal(proc(0.199), [0, 1])
    np.testing.assert_array_equal(proc(0.2), [1, 2])
    np.testing.assert_array_equal(proc(0.4), [2, 3])
    with pytest.raises(ValueError):
        proc(0.05)
    with pytest.raises(ValueError):
        CoefficientProcess(g, np.zeros((2, 2)))


@pytest.mark.parametrize("suffix", [".json", ".csv"])
def test_process_round_trip_is_exact(tmp_path, suffix):
    rng = np.random.default_rng(1)
    g = make_uniform_grid(0.05, 0.5, 0.05)
    proc = CoefficientProcess(g, rng.standard_normal((len(g), 4)) / 3.0)
    path = tmp_path / f"p{suffix}"
    save_process(proc, path)
    back = load_process(path)
    np.testing.assert_array_equal(back.betas, proc.betas)
    np.testing.assert_array_equal(back.grid.taus, g.taus)


def test_load_process_from_wrapped_json(tmp_path):
    path = tmp_path / "w.json"
    path.write_text(json.dumps({"process": {"taus": [0.1, 0.2], "betas": [[1.0], [2.0]]}}))
    assert load_process(path).betas[1, 0] == 2.0


def test_atomic_write_leaves_no_temp_files(tmp_path):
    target = tmp_path / "sub" / "out.txt"
    atomic_write_text(target, "abc")
    atomic_write_text(target, "def")
    assert target.read_text() == "def"
    assert [p.name for p in target.parent.iterdir()] == ["out.txt"]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        atomic_write_text(tmp_path / "x", "")
