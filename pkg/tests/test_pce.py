import logging
from dataclasses import replace

import numpy as np
import pytest
from joblib import parallel_backend

import orthopoly
import pce
import probmodel
from conftest import gaussian_model, make_dataset
from utils import DataError, NumericalError


def coefficient_map(s, k=0):
    return dict(zip(s.basis.multi_indices(), s.coefficients[k]))


@pytest.fixture(scope="module")
def linear_data():
    model = gaussian_model(2)
    X = probmodel.sample(model, 200, seed=4)
    y = np.column_stack([2.0 * X[:, 0] + X[:, 1], -X[:, 0] + 0.5 * X[:, 1]])
    return model, make_dataset(X, y)


@pytest.fixture(scope="module")
def linear_surrogate(linear_data):
    model, dataset = linear_data
    return pce.fit(dataset, model, p=2, q=1.0)


# ---------- Fitting ----------

def test_constant_output_gives_constant_surrogate():
    model = gaussian_model(3)
    X = probmodel.sample(model, 40, seed=1)
    s = pce.fit(make_dataset(X, np.full((40, 4), 3.0)), model, p=2, q=1.0)
    assert s.basis.multi_indices() == [(0, 0, 0)]
    np.testing.assert_allclose(s.coefficients, 3.0)
    assert list(s.diagnostics["strategy"]) == ["constant"] * 4


def test_linear_model_recovered_exactly(linear_surrogate):
    expected = [{(1, 0): 2.0, (0, 1): 1.0}, {(1, 0): -1.0, (0, 1): 0.5}]
    for k, truth in enumerate(expected):
        for index, value in coefficient_map(linear_surrogate, k).items():
            assert value == pytest.approx(truth.get(index, 0.0), abs=1e-10), (k, index)


def test_sparse_polynomial_recovered_exactly_in_seven_inputs():
    model = gaussian_model(7)
    X = probmodel.sample(model, 300, seed=21)
    x1, x2, x3, x4, x5 = X[:, :5].T
    truth = {
        (0, 0, 0, 0, 0, 0, 0): 1.0,
        (1, 0, 0, 0, 0, 0, 0): 2.0,
        (0, 2, 0, 0, 0, 0, 0): -1.0,
        (0, 0, 1, 1, 0, 0, 0): 0.7,
        (0, 0, 0, 0, 3, 0, 0): 0.4,
    }
    y = (1.0 + 2.0 * x1 - (x2 ** 2 - 1.0) / np.sqrt(2.0) + 0.7 * x3 * x4
         + 0.4 * (x5 ** 3 - 3.0 * x5) / np.sqrt(6.0))
    s = pce.fit(make_dataset(X, y), model, p=3, q=1.0)
    error = max(abs(value - truth.get(index, 0.0)) for index, value in coefficient_map(s).items())
    assert error <= 1e-8
    assert set(truth) <= set(s.basis.multi_indices())


def test_ols_and_lars_agree_on_true_support(linear_data, linear_surrogate):
    model, dataset = linear_data
    ols = pce.fit(dataset, model, p=2, q=1.0, selection="ols")
    assert ols.basis.size == 6
    lars = coefficient_map(linear_surrogate)
    for index, value in coefficient_map(ols).items():
        assert value == pytest.approx(lars.get(index, 0.0), abs=1e-8)


def test_fit_is_deterministic_and_independent_of_jobs(linear_data, linear_surrogate):
    model, dataset = linear_data
    with parallel_backend("threading"):
        again = pce.fit(dataset, model, p=2, q=1.0, n_jobs=2)
    assert again.basis.multi_indices() == linear_surrogate.basis.multi_indices()
    np.testing.assert_array_equal(again.coefficients, linear_surrogate.coefficients)


def test_union_basis_is_canonically_ordered(linear_surrogate):
    indices = linear_surrogate.basis.multi_indices()
    assert indices[0] == (0, 0)
    full = orthopoly.hyperbolic_enumerate(2, 2, 1.0)
    assert sorted(indices, key=full.index) == indices


def test_zero_coefficient_equals_mean_prediction(preset_model, small_campaign):
    s = pce.fit(small_campaign, preset_model, p=2, q=0.5)
    X = probmodel.sample(preset_model, 20_000, seed=99)
    predicted = pce.predict(s, X)
    np.testing.assert_allclose(predicted.mean(axis=0), s.mean, atol=0.05 * (1.0 + np.abs(s.mean).max()))


def test_parseval_variance_identity(linear_surrogate):
    X = probmodel.sample(gaussian_model(2), 100_000, seed=12)
    sample_variance = pce.predict(linear_surrogate, X).var(axis=0)
    np.testing.assert_allclose(sample_variance, linear_surrogate.variance, rtol=0.02)


def test_fit_records_provenance(linear_data, linear_surrogate):
    model, _ = linear_data
    assert linear_surrogate.model_fingerprint == model.fingerprint
    assert linear_surrogate.provenance["p"] == 2
    assert linear_surrogate.provenance["n_train"] == 200
    assert list(linear_surrogate.diagnostics.columns) == ["time", "n_terms", "loo_error", "strategy"]


def test_rank_deficient_design_is_reported():
    model = gaussian_model(2)
    x = probmodel.sample(gaussian_model(1), 30, seed=2)[:, 0]
    X = np.column_stack([x, x])
    with pytest.raises(NumericalError, match="rank-deficient at timestep 0"):
        pce.fit(make_dataset(X, x), model, p=1, q=1.0, selection="ols")


def test_empty_dataset_rejected():
    model = gaussian_model(2)
    with pytest.raises(DataError, match="empty"):
        pce.fit(make_dataset(np.zeros((0, 2)), np.zeros((0, 3))), model, p=1, q=1.0)


def test_mismatched_model_rejected(linear_data):
    _, dataset = linear_data
    with pytest.raises(DataError, match="do not match"):
        pce.fit(dataset, gaussian_model(3), p=1, q=1.0)


def test_small_sample_warning(caplog):
    model = gaussian_model(3)
    X = probmodel.sample(model, 20, seed=3)
    with caplog.at_level(logging.WARNING, logger="pce"):
        pce.fit(make_dataset(X, X[:, 0]), model, p=1, q=1.0)
    assert "recommended 10 per input" in caplog.text


def test_ishigami_benchmark(ishigami_fit):
    surrogate, test = ishigami_fit
    assert pce.q2(surrogate, test).q2_mean >= 0.99


# ---------- Prediction ----------

def test_predict_examples(linear_surrogate):
    np.testing.assert_allclose(pce.predict(linear_surrogate, np.array([1.0, 0.0])), [2.0, -1.0], atol=1e-9)
    zero = replace(linear_surrogate, coefficients=np.zeros_like(linear_surrogate.coefficients))
    np.testing.assert_array_equal(pce.predict(zero, np.array([0.3, -1.2])), [0.0, 0.0])


def test_predict_is_linear_in_coefficients(linear_surrogate):
    rng = np.random.default_rng(5)
    a = replace(linear_surrogate, coefficients=rng.normal(size=linear_surrogate.coefficients.shape))
    b = replace(linear_surrogate, coefficients=rng.normal(size=linear_surrogate.coefficients.shape))
    both = replace(linear_surrogate, coefficients=a.coefficients + b.coefficients)
    X = rng.normal(size=(10, 2))
    np.testing.assert_allclose(pce.predict(both, X), pce.predict(a, X) + pce.predict(b, X), atol=1e-12)


def test_predict_rejects_wrong_dimension(linear_surrogate):
    with pytest.raises(DataError):
        pce.predict(linear_surrogate, np.zeros(3))


def test_surrogate_shape_validation(linear_surrogate):
    with pytest.raises(DataError, match="columns"):
        replace(linear_surrogate, coefficients=np.zeros((2, linear_surrogate.basis.size + 1)))


# ---------- Predictivity ----------

def _test_set(model, n=60, seed=8):
    X = probmodel.sample(model, n, seed)
    return make_dataset(X, np.column_stack([2.0 * X[:, 0] + X[:, 1], -X[:, 0] + 0.5 * X[:, 1]]))


def test_q2_of_exact_surrogate_is_one(linear_data, linear_surrogate):
    report = pce.q2(linear_surrogate, _test_set(linear_data[0]))
    np.testing.assert_allclose(report.q2, 1.0, atol=1e-12)
    assert report.q2_mean == pytest.approx(1.0, abs=1e-12)


def test_q2_of_mean_predictor_is_zero_and_worse_is_negative(linear_data, linear_surrogate):
    test = _test_set(linear_data[0])
    zero_term = linear_surrogate.zero_term
    coefficients = np.zeros_like(linear_surrogate.coefficients)
    coefficients[:, zero_term] = test.outputs.mean(axis=0)
    mean_only = replace(linear_surrogate, coefficients=coefficients)
    np.testing.assert_allclose(pce.q2(mean_only, test).q2, 0.0, atol=1e-12)

    flipped = replace(linear_surrogate, coefficients=-linear_surrogate.coefficients)
    assert np.all(pce.q2(flipped, test).q2 < 0)


def test_q2_undefined_on_constant_timestep(linear_data, linear_surrogate):
    model = linear_data[0]
    X = probmodel.sample(model, 30, seed=6)
    test = make_dataset(X, np.column_stack([2.0 * X[:, 0] + X[:, 1], np.full(30, 4.0)]))
    report = pce.q2(linear_surrogate, test)
    assert np.isnan(report.q2[1])
    assert report.q2_mean == pytest.approx(report.q2[0])


def test_q2_rejects_other_timesteps(linear_data, linear_surrogate):
    X = probmodel.sample(linear_data[0], 10, seed=1)
    with pytest.raises(DataError, match="timesteps"):
        pce.q2(linear_surrogate, make_dataset(X, np.zeros((10, 2)), times=[0.0, 5.0]))


# ---------- Cross-validation ----------

def test_cross_validation_grid(linear_data):
    model, dataset = linear_data
    grid = pce.cross_validate(dataset, model, [1, 2], [0.5, 1.0], splits=2, seed=3)
    assert list(grid.columns) == ["p", "q", "split", "q2_mean", "error"]
    assert len(grid) == 8
    assert (grid["error"] == "").all()
    assert grid["q2_mean"].min() > 0.999


def test_single_split_gives_one_score_per_cell(linear_data):
    model, dataset = linear_data
    grid = pce.cross_validate(dataset, model, [1], [1.0], splits=1, seed=0)
    assert len(grid) == 1


def test_failed_cells_are_recorded():
    model = gaussian_model(2)
    X = probmodel.sample(model, 20, seed=10)
    grid = pce.cross_validate(make_dataset(X, X[:, 0] - X[:, 1]), model, [1, 6], [1.0], splits=1,
                              seed=0, selection="ols")
    failed = grid[grid["p"] == 6].iloc[0]
    assert np.isnan(failed["q2_mean"])
    assert "ols needs at least" in failed["error"]
    assert grid[grid["p"] == 1].iloc[0]["error"] == ""


def test_cross_validation_is_reproducible(linear_data):
    model, dataset = linear_data
    first = pce.cross_validate(dataset, model, [2], [0.5], splits=2, seed=11)
    second = pce.cross_validate(dataset, model, [2], [0.5], splits=2, seed=11)
    np.testing.assert_array_equal(first["q2_mean"].to_numpy(), second["q2_mean"].to_numpy())
