import numpy as np
import pandas as pd

import checks
import sobol
from checks import kinetics, sensitivity, surrogate

MIDPOINTS = pd.DataFrame({"segment": [0, 1], "regime": ["chi1/low", "chi2/high"], "index": [1, 3],
                          "time": [1.0, 3.0]})


def sobol_table(rows):
    """rows: {time: ({input: S1}, S_star)}"""
    records = []
    for time, (first, residual) in rows.items():
        records += [{"time": time, "input": name, "S1": value, "ST": value, "var_contrib": value}
                    for name, value in first.items()]
        records.append({"time": time, "input": "_interaction", "S1": residual, "ST": np.nan, "var_contrib": 0.0})
    return pd.DataFrame(records)


def hsic_table(rows):
    return pd.DataFrame([{"time": time, "input": name, "index": value, "raw": value, "p_value": 0.01,
                          "method": "asymptotic", "target_set_size": pd.NA}
                         for time, values in rows.items() for name, value in values.items()])


LOW_LEADERS = {"d_p": 0.4, "a_v": 0.3, "gamma_p0": 0.2, "eps_c": 0.05, "alpha": 0.01}
HIGH_LEADERS = {"d_p": 0.1, "a_v": 0.1, "gamma_p0": 0.05, "eps_c": 0.6, "alpha": 0.1}


# ---------- Surrogate ----------

def test_q01_passes_on_a_predictive_surrogate():
    frame = pd.DataFrame({"time": [0.0, 1.0, 2.0], "q2": [np.nan, 0.95, 0.88]})
    assert surrogate.check_Q01({"q2_timeseries": frame}).empty


def test_q01_lists_weak_timesteps():
    frame = pd.DataFrame({"time": [0.0, 1.0, 2.0], "q2": [np.nan, 0.95, 0.5]})
    offending = surrogate.check_Q01({"q2_timeseries": frame})
    assert offending["time"].tolist() == [0.0, 2.0]


def test_q02_reports_failed_grid_cells():
    grid = pd.DataFrame({"p": [1, 6], "q": [1.0, 1.0], "split": [0, 0], "q2_mean": [0.9, np.nan],
                         "error": ["", "pce: ols needs at least 28 rows, got 20"]})
    offending = surrogate.check_Q02({"q2_degree_grid": grid})
    assert offending["p"].tolist() == [6]
    assert surrogate.check_Q02({}).empty


# ---------- Sensitivity ----------

def test_s02_tolerates_a_few_interacting_timesteps():
    rows = {float(t): ({"a": 0.9}, 0.02) for t in range(19)}
    rows[19.0] = ({"a": 0.5}, 0.5)
    assert sensitivity.check_S02({"sobol": sobol_table(rows)}).empty


def test_s02_flags_widespread_interaction():
    rows = {float(t): ({"a": 0.5}, 0.5 if t % 2 else 0.0) for t in range(10)}
    offending = sensitivity.check_S02({"sobol": sobol_table(rows)})
    assert offending["time"].tolist() == [1.0, 3.0, 5.0, 7.0, 9.0]


def test_regime_checks_pass_on_the_designed_pattern():
    tables = {"midpoints": MIDPOINTS,
              "sobol": sobol_table({1.0: (LOW_LEADERS, 0.0), 3.0: (HIGH_LEADERS, 0.0)}),
              "hsic_global": hsic_table({1.0: LOW_LEADERS, 3.0: HIGH_LEADERS})}
    for check in (sensitivity.check_S01, sensitivity.check_S03, sensitivity.check_S04):
        assert check(tables, {}).empty


def test_regime_checks_flag_a_swapped_pattern():
    tables = {"midpoints": MIDPOINTS,
              "sobol": sobol_table({1.0: (HIGH_LEADERS, 0.0), 3.0: (LOW_LEADERS, 0.0)}),
              "hsic_global": hsic_table({1.0: LOW_LEADERS, 3.0: HIGH_LEADERS})}
    assert len(sensitivity.check_S01(tables, {})) == 2
    assert sensitivity.check_S03(tables, {})["regime"].tolist() == ["chi2/high"]
    assert sensitivity.check_S04(tables, {})["ranking"].iloc[0].startswith("eps_c")


def test_sensitivity_checks_read_the_sobol_and_hsic_frames():
    series = sobol.SobolTimeSeries(input_names=("a", "b"), times=np.array([0.0, 1.0]),
                                   first=np.array([[0.9, 0.05], [0.5, 0.1]]), total=np.array([[0.95, 0.1], [0.9, 0.5]]),
                                   interaction=np.array([0.05, 0.4]), var_contrib=np.array([[0.9, 0.05], [0.5, 0.1]]),
                                   total_variance=np.ones(2))
    assert sensitivity.check_S02({"sobol": series.to_frame()})["time"].tolist() == [1.0]
    assert sensitivity.sobol_ranking({"sobol": series.to_frame()}, 1.0) == ["a", "b"]
    frame = hsic_table({1.0: {"a": np.nan, "b": 0.2, "c": 0.1}})
    assert sensitivity.hsic_ranking({"hsic_global": frame}, 1.0) == ["b", "c", "a"]


# ---------- Kinetics ----------

def kinetics_table(low, high):
    return pd.DataFrame({"segment": [0, 2], "regime": ["chi1/low", "chi2/high"], "mean_rate": [low, high]})


def test_k01_expects_deceleration():
    assert kinetics.check_K01({"kinetics": kinetics_table(4.0, 2.7)}).empty
    assert len(kinetics.check_K01({"kinetics": kinetics_table(2.0, 2.7)})) == 2


def test_k02_bounds_the_trajectories():
    frame = pd.DataFrame({"time": [0.0, 1.0], "min": [0.0, -1e-3], "max": [0.0, 100.0]})
    assert kinetics.check_K02({"trajectories": frame})["time"].tolist() == [1.0]


# ---------- Registry ----------

def test_describe_parses_the_headline():
    meta = checks.describe(surrogate.check_Q01)
    assert meta == {"description": "mean test-set Q2 below 0.9", "severity": "Error", "scope": "Timestep"}


def test_run_checks_skips_checks_with_missing_tables():
    table = checks.run_checks({"kinetics": kinetics_table(4.0, 2.7)})
    assert table["check_id"].tolist() == list(checks.CHECKS)
    by_id = table.set_index("check_id")
    assert by_id.loc["K01", "passed"]
    assert by_id.loc["Q01", "passed"] is None
    assert by_id.loc["Q01", "notes"].startswith("skipped:")
    assert by_id.loc["Q01", "weight"] == checks.SEVERITY_WEIGHTS["Error"]
