"""Sparse polynomial chaos surrogates of trajectory outputs.

Each timestep is fitted on its own: least-angle regression orders the
hyperbolic candidate terms, every model along the path is refitted by least
squares and scored by the corrected leave-one-out error, and the best one is
kept. The per-timestep supports are then merged into one union basis with
zero coefficients where a term was not selected.
"""
import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.linalg import solve_triangular
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import lars_path

import dataio
from orthopoly import TensorBasis, build_basis, eval_basis
from probmodel import InputModel
from utils import ClogsaError, DataError, NumericalError, child_seed

logger = logging.getLogger(__name__)

DEFAULT_P = 4
DEFAULT_Q = 0.5
DEFAULT_SPLITS = 5
DEFAULT_TRAIN_FRACTION = 0.75
SELECTIONS = ("lars", "ols")
MAX_CONDITION = 1e12
# near-ties on the LOO error go to the smaller model
LOO_TIE_RTOL = 1e-6
LOO_TIE_ATOL = 1e-14
ZERO_VARIANCE_TOL = 1e-14
QNORM_GRID = (0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
DEGREE_GRID = (1, 2, 3, 4, 5)


@dataclass(frozen=True, eq=False)
class SparsePceSurrogate:
    basis: TensorBasis
    coefficients: np.ndarray
    times: np.ndarray
    input_names: tuple
    model_fingerprint: str = ""
    provenance: Dict[str, Any] = field(default_factory=dict)
    diagnostics: pd.DataFrame = None

    def __post_init__(self):
        coefficients = np.asarray(self.coefficients)
        if coefficients.ndim != 2:
            raise DataError("pce: coefficient matrix must be two-dimensional")
        if coefficients.shape[1] != self.basis.size:
            raise DataError(f"pce: coefficient matrix has {coefficients.shape[1]} columns "
                            f"but the basis has {self.basis.size} terms")
        if coefficients.shape[0] != len(self.times):
            raise DataError(f"pce: coefficient matrix has {coefficients.shape[0]} rows "
                            f"for {len(self.times)} timesteps")
        if len(self.input_names) != self.basis.dimension:
            raise DataError("pce: input names do not match the basis dimension")

    @property
    def zero_term(self) -> int:
        return int(np.flatnonzero(np.all(np.asarray(self.basis.indices) == 0, axis=1))[0])

    @property
    def mean(self) -> np.ndarray:
        return np.asarray(self.coefficients)[:, self.zero_term]

    @property
    def variance(self) -> np.ndarray:
        energy = np.asarray(self.coefficients) ** 2
        return energy.sum(axis=1) - energy[:, self.zero_term]


@dataclass(frozen=True, eq=False)
class FitReport:
    per_timestep: pd.DataFrame

    @property
    def q2(self) -> np.ndarray:
        return self.per_timestep["q2"].to_numpy()

    @property
    def q2_mean(self) -> float:
        values = self.q2[np.isfinite(self.q2)]
        return float(values.mean()) if len(values) else float("nan")


@dataclass
class _TimestepFit:
    rows: np.ndarray
    coefs: np.ndarray
    loo_error: float
    strategy: str


# ---------- Least squares ----------

def _least_squares(psi: np.ndarray, y: np.ndarray):
    """QR solve returning (coefficients, corrected LOO error, condition estimate)."""
    n, size = psi.shape
    q_mat, r_mat = np.linalg.qr(psi)
    diagonal = np.abs(np.diag(r_mat))
    condition = np.inf if diagonal.min() == 0 else diagonal.max() / diagonal.min()
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        return None, np.inf, condition
    coefs = solve_triangular(r_mat, q_mat.T @ y)
    if size >= n:
        return coefs, np.inf, condition
    residuals = y - psi @ coefs
    leverage = np.sum(q_mat ** 2, axis=1)
    if np.any(leverage >= 1.0 - 1e-12):
        return coefs, np.inf, condition
    variance = np.var(y)
    if variance <= 0:
        return coefs, 0.0, condition
    loo = np.mean((residuals / (1.0 - leverage)) ** 2) / variance
    r_inv = solve_triangular(r_mat, np.eye(size))
    correction = n / (n - size) * (1.0 + np.sum(r_inv ** 2))
    return coefs, float(loo * correction), condition


def _lars_order(psi: np.ndarray, y: np.ndarray, zero: int) -> np.ndarray:
    """Candidate rows in the order least-angle regression activates them."""
    candidates = np.flatnonzero(np.arange(psi.shape[1]) != zero)
    if len(candidates) == 0:
        return candidates
    columns = psi[:, candidates] - psi[:, candidates].mean(axis=0)
    norms = np.linalg.norm(columns, axis=0)
    usable = norms > 0
    candidates, columns = candidates[usable], columns[:, usable] / norms[usable]
    max_steps = min(len(candidates), psi.shape[0] - 2)
    if max_steps <= 0:
        return candidates[:0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        # unit-variance target: lars_path stops on an absolute correlation tolerance
        target = (y - y.mean()) / np.std(y)
        _, active, _ = lars_path(columns, target, method="lar", max_iter=max_steps, return_path=False)
    return candidates[np.asarray(active, dtype=int)]


def _path_errors(psi: np.ndarray, y: np.ndarray, rows: np.ndarray) -> List[float]:
    """Corrected LOO error of every nested model rows[:1], rows[:2], ...

    The QR factorization grows one column at a time (Gram-Schmidt, applied
    twice), so residuals, leverages and tr((Psi^T Psi)^-1) are all updated
    in O(n P) per step. The path stops at the first numerically dependent
    column.
    """
    n = len(y)
    size = len(rows)
    Q = np.zeros((n, size))
    R = np.zeros((size, size))
    R_inv = np.zeros((size, size))
    residual = np.array(y, dtype=float)
    leverage = np.zeros(n)
    variance = float(np.var(y))
    trace = 0.0
    errors = []
    for j, row in enumerate(rows.tolist()):
        column = psi[:, row]
        v = column.copy()
        for _ in range(2):
            projection = Q[:, :j].T @ v
            v -= Q[:, :j] @ projection
            R[:j, j] += projection
        norm = float(np.linalg.norm(v))
        if norm <= np.linalg.norm(column) / MAX_CONDITION:
            break
        R[j, j] = norm
        Q[:, j] = v / norm
        residual -= (Q[:, j] @ residual) * Q[:, j]
        leverage += Q[:, j] ** 2
        R_inv[j, j] = 1.0 / norm
        R_inv[:j, j] = -(R_inv[:j, :j] @ R[:j, j]) / norm
        trace += float(np.sum(R_inv[:j + 1, j] ** 2))

        terms = j + 1
        if terms >= n or np.any(leverage >= 1.0 - 1e-12):
            errors.append(np.inf)
            continue
        loo = np.mean((residual / (1.0 - leverage)) ** 2) / variance
        errors.append(float(loo * n / (n - terms) * (1.0 + trace)))
    return errors


def _fit_timestep(psi: np.ndarray, y: np.ndarray, k: int, selection: str, zero: int) -> _TimestepFit:
    if np.ptp(y) <= ZERO_VARIANCE_TOL * max(1.0, float(np.max(np.abs(y)))):
        logger.debug("timestep %d is degenerate, using the constant surrogate", k)
        return _TimestepFit(np.array([zero]), np.array([float(np.mean(y))]), 0.0, "constant")

    if selection == "ols":
        coefs, loo, condition = _least_squares(psi, y)
        if coefs is None:
            raise NumericalError(f"pce: design matrix rank-deficient at timestep {k} (cond={condition:.1e})")
        return _TimestepFit(np.arange(psi.shape[1]), coefs, loo, "ols")

    path = np.r_[zero, _lars_order(psi, y, zero)].astype(int)
    errors = np.asarray(_path_errors(psi, y, path))
    if not len(errors) or not np.isfinite(errors).any():
        raise NumericalError(f"pce: no well-conditioned model on the LARS path at timestep {k}")
    threshold = errors.min() * (1.0 + LOO_TIE_RTOL) + LOO_TIE_ATOL
    rows = path[:int(np.flatnonzero(errors <= threshold)[0]) + 1]
    coefs, loo, condition = _least_squares(psi[:, rows], y)
    if coefs is None:
        raise NumericalError(f"pce: selected model rank-deficient at timestep {k} (cond={condition:.1e})")
    return _TimestepFit(rows, coefs, loo, "lars")


# ---------- Public operations ----------

def fit(dataset: "dataio.TrajectoryDataset", model: InputModel = None, p: int = DEFAULT_P, q: float = DEFAULT_Q,
        selection: str = "lars", n_jobs: int = 1, basis: TensorBasis = None) -> SparsePceSurrogate:
    """Fit one sparse expansion per timestep and merge them over the union basis.

    The candidate basis comes from the input model and (p, q) unless an
    explicit ``basis`` is given.
    """
    if selection not in SELECTIONS:
        raise DataError(f"pce: unknown selection {selection!r}; expected one of {', '.join(SELECTIONS)}")
    data = dataset.valid()
    if data.n_samples == 0:
        raise DataError("pce: cannot fit on an empty dataset")
    if basis is None:
        if model is None:
            raise DataError("pce: an input model or an explicit basis is required")
        if list(model.names) != list(data.names):
            raise DataError(f"pce: dataset inputs {data.names} do not match model inputs {model.names}")
        basis = build_basis(model, p, q)
    if basis.dimension != len(data.names):
        raise DataError(f"pce: basis dimension {basis.dimension} does not match {len(data.names)} inputs")

    n = data.n_samples
    if selection == "ols" and n < basis.size:
        raise DataError(f"pce: ols needs at least {basis.size} rows, got {n}")
    if selection == "lars" and n < 10 * basis.dimension:
        logger.warning("pce: %d samples for %d inputs is below the recommended 10 per input", n, basis.dimension)

    psi = eval_basis(basis, data.inputs)
    zero = int(np.flatnonzero(np.all(np.asarray(basis.indices) == 0, axis=1))[0])
    outputs = data.outputs
    fits: List[_TimestepFit] = Parallel(n_jobs=n_jobs)(
        delayed(_fit_timestep)(psi, outputs[:, k], k, selection, zero) for k in range(outputs.shape[1])
    )

    used = sorted(set().union({zero}, *[set(f.rows.tolist()) for f in fits]))
    position = {row: j for j, row in enumerate(used)}
    coefficients = np.zeros((len(fits), len(used)))
    for k, timestep in enumerate(fits):
        coefficients[k, [position[row] for row in timestep.rows.tolist()]] = timestep.coefs

    diagnostics = pd.DataFrame({
        "time": data.times,
        "n_terms": [len(f.rows) for f in fits],
        "loo_error": [f.loo_error for f in fits],
        "strategy": [f.strategy for f in fits],
    })
    logger.info("pce: fitted %d timesteps, union basis of %d terms out of %d candidates",
                len(fits), len(used), basis.size)
    return SparsePceSurrogate(
        basis=basis.restrict(used),
        coefficients=coefficients,
        times=np.asarray(data.times, dtype=float),
        input_names=tuple(data.names),
        model_fingerprint=model.fingerprint if model is not None else "",
        provenance={"p": int(basis.p), "q": float(basis.q), "selection": selection,
                    "n_train": int(n), "dataset": dict(data.provenance)},
        diagnostics=diagnostics,
    )


def predict(s: SparsePceSurrogate, x) -> np.ndarray:
    """Trajectory prediction: an N-vector for one point, n x N for a matrix of points."""
    points = np.asarray(x, dtype=float)
    if points.shape[-1] != s.basis.dimension:
        raise DataError(f"pce: expected {s.basis.dimension} inputs, got {points.shape[-1]}")
    return eval_basis(s.basis, points) @ np.asarray(s.coefficients).T


def q2(s: SparsePceSurrogate, test: "dataio.TrajectoryDataset") -> FitReport:
    data = test.valid()
    if data.n_samples == 0:
        raise DataError("pce: cannot score on an empty test set")
    if len(data.times) != len(s.times) or not np.allclose(data.times, s.times, rtol=0, atol=1e-9):
        raise DataError("pce: test timesteps do not match the surrogate timesteps")
    observed = data.outputs
    predicted = predict(s, data.inputs).reshape(observed.shape)
    sse = np.sum((observed - predicted) ** 2, axis=0)
    sst = np.sum((observed - observed.mean(axis=0)) ** 2, axis=0)
    defined = sst > ZERO_VARIANCE_TOL * len(observed)
    values = np.full(len(sst), np.nan)
    values[defined] = 1.0 - sse[defined] / sst[defined]

    frame = pd.DataFrame({"time": np.asarray(s.times, dtype=float), "q2": values})
    if s.diagnostics is not None:
        frame.insert(1, "n_terms", s.diagnostics["n_terms"].to_numpy())
        frame.insert(2, "loo_error", s.diagnostics["loo_error"].to_numpy())
    return FitReport(per_timestep=frame)


def cross_validate(dataset: "dataio.TrajectoryDataset", model: InputModel, p_grid: Sequence[int],
                   q_grid: Sequence[float], splits: int = DEFAULT_SPLITS,
                   train_fraction: float = DEFAULT_TRAIN_FRACTION, seed: int = 0,
                   selection: str = "lars", n_jobs: int = 1) -> pd.DataFrame:
    """Mean Q2 of every (p, q, split) cell; failed cells keep their message and a NaN score."""
    if splits < 1:
        raise DataError("pce: splits must be >= 1")
    if not 0 < train_fraction < 1:
        raise DataError("pce: train_fraction must lie strictly between 0 and 1")

    partitions = [dataio.split(dataset, train_fraction, child_seed(seed, s)) for s in range(splits)]
    rows = []
    for p in p_grid:
        for q in q_grid:
            for s, (train, test) in enumerate(partitions):
                try:
                    report = q2(fit(train, model, int(p), float(q), selection=selection, n_jobs=n_jobs), test)
                    rows.append({"p": int(p), "q": float(q), "split": s, "q2_mean": report.q2_mean, "error": ""})
                except ClogsaError as exc:
                    logger.warning("cross-validation cell p=%s q=%s split=%d failed: %s", p, q, s, exc)
                    rows.append({"p": int(p), "q": float(q), "split": s, "q2_mean": float("nan"), "error": str(exc)})
    return pd.DataFrame(rows, columns=["p", "q", "split", "q2_mean", "error"])
