import numpy as np
import pytest
from openpyxl import load_workbook

import checks
import hsic
import orthopoly
import pce
import report
import sobol
from conftest import gaussian_model, make_dataset


@pytest.fixture(scope="module")
def dataset():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(20, 2))
    times = np.array([0.0, 1.0, 2.0, 3.0])
    Y = np.column_stack([t * (X[:, 0] + 0.2 * X[:, 1]) for t in times])
    return make_dataset(X, Y, times=times)


@pytest.fixture(scope="module")
def series():
    basis = orthopoly.build_basis(gaussian_model(2), 1, 1.0)
    coefficients = np.array([[1.0, 0.0, 0.0], [1.0, 2.0, 1.0], [1.0, 1.0, 1.0], [1.0, 0.0, 3.0]])
    s = pce.SparsePceSurrogate(basis=basis, coefficients=coefficients, times=np.arange(4.0), input_names=("x1", "x2"))
    return sobol.sobol_timeseries(s)


@pytest.fixture(scope="module")
def tables(dataset, series):
    tables = {
        "trajectories": report.trajectory_table(dataset, sample_paths=2),
        "sobol": series.to_frame(),
        "variance_contribution": report.variance_contribution_table(series),
        "hsic_global": hsic.hsic_timeseries(dataset),
    }
    tables["checks"] = checks.run_checks(tables)
    return tables


def test_trajectory_table(dataset):
    frame = report.trajectory_table(dataset, sample_paths=2)
    assert list(frame.columns) == ["time", "mean", "min", "max", "q05", "q25", "q50", "q75", "q95",
                                   "path_0", "path_1"]
    row = frame.iloc[2]
    outputs = dataset.outputs[:, 2]
    assert row["mean"] == pytest.approx(outputs.mean())
    assert row["q50"] == pytest.approx(np.median(outputs))
    assert row["path_1"] == outputs[1]
    assert (frame["min"] <= frame["q05"]).all() and (frame["q95"] <= frame["max"]).all()


def test_variance_contribution_table(series):
    frame = report.variance_contribution_table(series)
    assert list(frame.columns) == ["time", "x1", "x2", "total_variance"]
    np.testing.assert_allclose(frame["x1"], [0.0, 4.0, 1.0, 0.0])
    np.testing.assert_allclose(frame["total_variance"], [0.0, 5.0, 2.0, 9.0])


def test_write_report_exports_every_table(tmp_path, tables):
    written = report.write_report(tables, tmp_path)
    names = {path.name for path in written}
    assert {f"{name}.csv" for name in tables} <= names
    assert report.WORKBOOK_NAME in names
    assert {"trajectories.svg", "sobol_first_order.svg", "sobol_total_order.svg",
            "variance_contribution.svg", "hsic_global.svg"} <= names
    assert all(path.is_file() for path in written)

    workbook = load_workbook(tmp_path / report.WORKBOOK_NAME, read_only=True)
    assert workbook.sheetnames == ["Trajectories", "Sobol", "Variance Contribution", "Hsic Global", "Checks"]
    sobol_sheet = list(workbook["Sobol"].iter_rows(values_only=True))
    assert sobol_sheet[0] == ("time", "input", "S1", "ST", "var_contrib")
    assert sobol_sheet[1][2] is None  # undefined index at the constant first timestep
    workbook.close()


def test_figures_are_byte_identical_across_runs(tmp_path, tables):
    first = report.write_report(tables, tmp_path / "a")
    second = report.write_report(tables, tmp_path / "b")
    for a, b in zip(first, second):
        if a.suffix in (".svg", ".csv"):
            assert a.read_bytes() == b.read_bytes(), a.name
