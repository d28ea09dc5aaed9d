import numpy as np
import pandas as pd
import pytest

import main
from sobol import INTERACTION_LABEL

pytestmark = pytest.mark.slow

DESIGNED_CHECKS = ("Q01", "S01", "S02", "S03", "K01", "K02")


@pytest.fixture(scope="module")
def report_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("report")
    status = main.main(["report", "-n", "1000", "--p", "4", "--q", "0.5", "--seed", "7", "--permutations", "100",
                        "--out", str(out)])
    assert status == 0
    return out


@pytest.fixture(scope="module")
def sobol_table(report_dir):
    return pd.read_csv(report_dir / "sobol.csv")


@pytest.fixture(scope="module")
def midpoints(report_dir):
    return pd.read_csv(report_dir / "midpoints.csv").set_index("regime")


def test_report_writes_the_full_bundle(report_dir):
    for name in ("dataset.csv", "report.xlsx", "checks.csv", "sobol.csv", "hsic_global.csv", "hsic_target.csv",
                 "hsic_conditional.csv", "q2_qnorm_grid.csv", "q2_degree_grid.csv", "trajectories.svg"):
        assert (report_dir / name).is_file(), name


@pytest.mark.parametrize("check_id", DESIGNED_CHECKS)
def test_designed_checks_hold(report_dir, check_id):
    table = pd.read_csv(report_dir / "checks.csv").set_index("check_id")
    assert table.loc[check_id, "passed"] == True, table.loc[check_id, "notes"]  # noqa: E712


def test_surrogate_is_predictive(report_dir):
    q2 = pd.read_csv(report_dir / "q2_timeseries.csv")["q2"]
    assert q2.mean(skipna=True) >= 0.9


def test_interaction_residual_is_small_almost_everywhere(sobol_table):
    residual = sobol_table.loc[sobol_table["input"] == INTERACTION_LABEL, "S1"].dropna()
    assert len(residual) >= 70
    assert (residual <= 0.1).mean() >= 0.9


def test_rankings_agree_at_every_midpoint(report_dir, sobol_table, midpoints):
    global_hsic = pd.read_csv(report_dir / "hsic_global.csv")
    for regime, time in midpoints["time"].items():
        by_sobol = sobol_table[np.isclose(sobol_table["time"], time) & (sobol_table["input"] != INTERACTION_LABEL)]
        by_hsic = global_hsic[np.isclose(global_hsic["time"], time)]
        top_sobol = set(by_sobol.nlargest(3, "S1")["input"])
        top_hsic = set(by_hsic.nlargest(3, "index")["input"])
        assert top_sobol == top_hsic, regime


def test_porosity_leads_after_the_species_change(sobol_table, midpoints):
    at_high = sobol_table[np.isclose(sobol_table["time"], midpoints.loc["chi2/high", "time"])
                          & (sobol_table["input"] != INTERACTION_LABEL)]
    assert "eps_c" in at_high.nlargest(2, "S1")["input"].tolist()

    porosity = sobol_table[sobol_table["input"] == "eps_c"].set_index("time")["ST"]
    assert porosity.loc[midpoints.loc["chi2/high", "time"]] > porosity.loc[midpoints.loc["chi1/low", "time"]]


def test_kinetics_slow_down_under_high_ph(report_dir):
    rates = pd.read_csv(report_dir / "kinetics.csv").set_index("regime")["mean_rate"]
    assert rates["chi2/high"] < rates["chi1/low"]


def test_dataset_is_reused_when_given(report_dir, tmp_path):
    status = main.main(["report", "--dataset", str(report_dir / "dataset.csv"), "--seed", "7",
                        "--permutations", "100", "--out", str(tmp_path)])
    assert status == 0
    assert not (tmp_path / "dataset.csv").exists()
    first = pd.read_csv(report_dir / "sobol.csv")
    second = pd.read_csv(tmp_path / "sobol.csv")
    np.testing.assert_array_equal(first["S1"].to_numpy(), second["S1"].to_numpy())
