import json
import math

import numpy as np
import pytest
from scipy import integrate, stats

import probmodel
from probmodel import InputModel, Marginal
from utils import DataError

STANDARD_TRIANGLE = Marginal.triangular(0.0, 0.5, 1.0)


# ---------- Densities ----------

def test_pdf_examples():
    assert probmodel.pdf(Marginal.gaussian(0.0, 1.0), 0.0) == pytest.approx(1.0 / math.sqrt(2.0 * math.pi))
    assert probmodel.pdf(STANDARD_TRIANGLE, 0.5) == pytest.approx(2.0)
    assert probmodel.pdf(Marginal.triangular(0.2, 0.3, 0.5), 0.1) == 0.0


def test_cdf_examples():
    assert probmodel.cdf(STANDARD_TRIANGLE, 0.5) == pytest.approx(0.5)
    assert probmodel.cdf(Marginal.gaussian(2.0, 3.0), 2.0) == pytest.approx(0.5)
    assert probmodel.cdf(Marginal.triangular(0.0, 0.25, 1.0), 0.25) == pytest.approx(0.25)


def test_quantile_examples():
    assert probmodel.quantile(STANDARD_TRIANGLE, 0.5) == pytest.approx(0.5)
    assert probmodel.quantile(Marginal.gaussian(0.0, 1.0), stats.norm.cdf(2.0)) == pytest.approx(2.0, abs=1e-9)
    assert probmodel.quantile(Marginal.triangular(0.2, 0.3, 0.5), 0.0) == pytest.approx(0.2)
    assert probmodel.quantile(Marginal.gaussian(0.0, 1.0), 0.0) == -math.inf


def test_quantile_rejects_levels_outside_unit_interval():
    with pytest.raises(DataError):
        probmodel.quantile(STANDARD_TRIANGLE, 1.5)


def test_densities_integrate_to_one(preset_model):
    for name, m in preset_model.marginals:
        if m.kind == probmodel.GAUSSIAN:
            pieces = [(m.mean - 40 * m.std, m.mean), (m.mean, m.mean + 40 * m.std)]
        else:
            pieces = [(m.lower, m.mode), (m.mode, m.upper)]
        total = sum(integrate.quad(lambda x: probmodel.pdf(m, x), lo, hi, epsabs=1e-13, epsrel=1e-12)[0]
                    for lo, hi in pieces if hi > lo)
        assert total == pytest.approx(1.0, abs=1e-10), name


def test_cdf_inverts_quantile(preset_model):
    levels = np.linspace(1e-9, 1.0 - 1e-9, 101)
    for name, m in preset_model.marginals:
        np.testing.assert_allclose(probmodel.cdf(m, probmodel.quantile(m, levels)), levels, atol=1e-9, err_msg=name)


def test_triangular_b_is_the_mode():
    m = Marginal.triangular(0.01, 0.05, 0.3)
    assert probmodel.mean(m) == pytest.approx(0.12)
    assert probmodel.pdf(m, 0.05) == pytest.approx(2.0 / 0.29)


def test_invalid_marginals_rejected():
    with pytest.raises(DataError):
        Marginal.triangular(0.5, 0.2, 1.0)
    with pytest.raises(DataError):
        Marginal.gaussian_from_variance(0.0, 0.0)
    with pytest.raises(DataError):
        Marginal("uniform", lower=0.0, upper=1.0)


# ---------- Moments ----------

@pytest.mark.parametrize("m, k, expected", [
    (Marginal.gaussian(0.0, 1.0), 4, 3.0),
    (STANDARD_TRIANGLE, 1, 0.5),
    (STANDARD_TRIANGLE, 2, 1.0 / 24.0 + 0.25),
    (STANDARD_TRIANGLE, 0, 1.0),
])
def test_raw_moment_examples(m, k, expected):
    assert probmodel.raw_moment(m, k) == pytest.approx(expected, rel=1e-10)


def test_raw_moment_rejects_bad_orders():
    with pytest.raises(DataError):
        probmodel.raw_moment(STANDARD_TRIANGLE, -1)
    with pytest.raises(DataError):
        probmodel.raw_moment(STANDARD_TRIANGLE, probmodel.MAX_MOMENT_ORDER + 1)


def test_triangular_variance_formula_matches_moments():
    m = Marginal.triangular(0.2, 0.3, 0.5)
    mean = probmodel.raw_moment(m, 1)
    assert probmodel.raw_moment(m, 2) - mean ** 2 == pytest.approx(probmodel.variance(m), rel=1e-9)


# ---------- Sampling ----------

def test_single_sample_lies_in_support(preset_model):
    row = probmodel.sample(preset_model, 1, seed=11)[0]
    for value, (_, m) in zip(row, preset_model.marginals):
        lower, upper = m.support
        assert lower <= value <= upper


def test_triangular_sample_mean():
    model = InputModel((("u", STANDARD_TRIANGLE),))
    column = probmodel.sample(model, 10_000, seed=5)[:, 0]
    assert abs(column.mean() - 0.5) <= 3.0 * math.sqrt(1.0 / 24.0) / 100.0


def test_sampling_is_reproducible(preset_model):
    first = probmodel.sample(preset_model, 50, seed=42)
    second = probmodel.sample(preset_model, 50, seed=42)
    np.testing.assert_array_equal(first, second)
    assert not np.array_equal(first, probmodel.sample(preset_model, 50, seed=43))


def test_columns_do_not_depend_on_other_columns():
    narrow = InputModel((("a", STANDARD_TRIANGLE),))
    wide = InputModel((("a", STANDARD_TRIANGLE), ("b", Marginal.gaussian(1.0, 2.0))))
    np.testing.assert_array_equal(probmodel.sample(narrow, 30, 9)[:, 0], probmodel.sample(wide, 30, 9)[:, 0])


def test_sample_moments_match_analytic(preset_model):
    n = 100_000
    X = probmodel.sample(preset_model, n, seed=2024)
    for j, (name, m) in enumerate(preset_model.marginals):
        variance = probmodel.variance(m)
        assert abs(X[:, j].mean() - probmodel.mean(m)) <= 5.0 * math.sqrt(variance / n), name
        assert abs(X[:, j].var() - variance) <= 5.0 * variance * math.sqrt(2.0 / n), name


def test_sample_rejects_bad_sizes(preset_model):
    with pytest.raises(DataError):
        probmodel.sample(preset_model, 0, seed=1)


def test_rank_transform():
    np.testing.assert_allclose(probmodel.rank_transform([3.0, 1.0, 2.0]), [1.0, 1 / 3, 2 / 3])


# ---------- Model files ----------

def test_preset_model(preset_model):
    assert preset_model.names == ["alpha", "beta", "eps_e", "eps_c", "d_p", "gamma_p0", "a_v"]
    assert preset_model["beta"].std == pytest.approx(5e-4)
    assert preset_model["alpha"].std == pytest.approx(2.0)
    assert preset_model["eps_c"].mode == pytest.approx(0.05)


def test_model_file_round_trip(tmp_path, preset_model):
    path = tmp_path / "model.json"
    probmodel.save_model(preset_model, path)
    loaded = probmodel.load_model(path)
    payload = probmodel.model_to_dict(loaded)
    assert payload == probmodel.model_to_dict(preset_model)
    beta = next(entry for entry in payload["inputs"] if entry["name"] == "beta")
    assert beta["params"]["variance"] == pytest.approx(2.5e-7)
    assert loaded.fingerprint == preset_model.fingerprint


@pytest.mark.parametrize("entry", [
    {"name": "a", "kind": "lognormal", "params": {"mean": 0.0, "variance": 1.0}},
    {"name": "a", "kind": "gaussian", "params": {"mean": 0.0}},
    {"name": "a", "kind": "triangular"},
    {"name": "a", "kind": "triangular", "params": {"a": 1.0, "b": 0.5, "c": 2.0}},
])
def test_malformed_model_files_rejected(tmp_path, entry):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"inputs": [entry]}), encoding="utf-8")
    with pytest.raises(DataError):
        probmodel.load_model(path)


def test_duplicate_names_rejected():
    with pytest.raises(DataError, match="duplicate"):
        InputModel((("a", STANDARD_TRIANGLE), ("a", STANDARD_TRIANGLE)))


def test_unknown_preset():
    with pytest.raises(DataError, match="no model file or preset"):
        probmodel.load_model("no-such-preset")
