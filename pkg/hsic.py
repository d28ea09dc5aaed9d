"""HSIC dependence measures between scalar inputs and per-timestep outputs.

All estimators are V-statistics on Gaussian RBF Gram matrices:

- global HSIC and its R2 normalization,
- target HSIC on the filtered output f(Y) that weights the critical region
  [bound, inf) by 1 and decays outside,
- conditional HSIC under the output-reweighted empirical measure with weights
  proportional to f(Y).

p-values come from a Gamma approximation of the permutation null or from an
explicit permutation test.
"""
import logging
import math
from collections import namedtuple
from dataclasses import dataclass
from typing import List, Sequence, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import stats
from scipy.spatial.distance import pdist

import dataio
from utils import ClogsaError, DataError, child_seed

logger = logging.getLogger(__name__)

GAUSSIAN_RBF = "gaussian_rbf"
MEDIAN_HEURISTIC = "median_heuristic"
GLOBAL, TARGET, CONDITIONAL = "global", "target", "conditional"
VARIANTS = (GLOBAL, TARGET, CONDITIONAL)
PERMUTATION, ASYMPTOTIC = "permutation", "asymptotic"
PVALUE_METHODS = (PERMUTATION, ASYMPTOTIC)
PVALUE_ALIASES = {"perm": PERMUTATION, "asymp": ASYMPTOTIC}
EXPONENTIAL, INDICATOR = "exponential", "indicator"
FILTERS = (EXPONENTIAL, INDICATOR)

DEFAULT_BOUND = 70.0
DEFAULT_FILTER_SCALE = 0.2
DEFAULT_PERMUTATIONS = 500
MIN_PERMUTATIONS = 100
PVALUE_THRESHOLD = 0.05
FILTERED_BANDWIDTH_FLOOR = 1e-3
DEGENERATE_FILTER_TOL = 1e-12
# permuted statistics within this relative distance of the observed one count as ties
EXCEEDANCE_RTOL = 1e-12

TargetFilter = namedtuple("TargetFilter", ["weights", "target_set_size"])


@dataclass(frozen=True)
class KernelSpec:
    kind: str = GAUSSIAN_RBF
    bandwidth: Union[float, str] = MEDIAN_HEURISTIC

    def __post_init__(self):
        if self.kind != GAUSSIAN_RBF:
            raise DataError(f"hsic: unsupported kernel {self.kind!r}; only {GAUSSIAN_RBF} is available")
        if isinstance(self.bandwidth, str):
            if self.bandwidth != MEDIAN_HEURISTIC:
                raise DataError(f"hsic: bandwidth must be a positive number or {MEDIAN_HEURISTIC!r}")
        elif not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise DataError(f"hsic: bandwidth must be > 0 (got {self.bandwidth})")

    @property
    def is_median(self) -> bool:
        return isinstance(self.bandwidth, str)


@dataclass(frozen=True)
class HsicResult:
    raw: float
    normalized: float
    p_value: float
    method: str
    target_set_size: int = None

    @property
    def independent(self) -> bool:
        return bool(self.p_value > PVALUE_THRESHOLD)


def normalize_method(method: str) -> str:
    method = PVALUE_ALIASES.get(method, method)
    if method not in PVALUE_METHODS:
        raise DataError(f"hsic: unknown p-value method {method!r}; expected one of {', '.join(PVALUE_METHODS)}")
    return method


# ---------- Kernels ----------

def _as_sample(x, name: str) -> np.ndarray:
    values = np.asarray(x, dtype=float).ravel()
    if len(values) < 2:
        raise DataError(f"hsic: {name} needs at least 2 samples (got {len(values)})")
    if not np.all(np.isfinite(values)):
        raise DataError(f"hsic: {name} contains non-finite values")
    return values


def _weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    order = np.argsort(values, kind="stable")
    cumulative = np.cumsum(weights[order])
    return float(values[order][np.searchsorted(cumulative, 0.5 * cumulative[-1])])


def median_bandwidth(x, name: str = "x", weights=None) -> float:
    """Median pairwise distance; zero medians fall back to the median of the nonzero distances.

    With non-uniform weights every pair (p, q) counts with weight w_p * w_q.
    """
    values = _as_sample(x, name)
    distances = pdist(values[:, None])
    nonzero = distances > 0
    if not nonzero.any():
        raise DataError(f"hsic: median heuristic needs at least two distinct values of {name}")
    if weights is None or np.ptp(weights) == 0:
        median = float(np.median(distances))
        return median if median > 0 else float(np.median(distances[nonzero]))

    weights = np.asarray(weights, dtype=float)
    rows, cols = np.triu_indices(len(values), k=1)
    pair_weights = weights[rows] * weights[cols]
    usable = pair_weights > 0
    if not usable.any():
        raise DataError(f"hsic: weighted median of {name} is undefined (single weighted sample)")
    median = _weighted_median(distances[usable], pair_weights[usable])
    if median > 0:
        return median
    keep = usable & nonzero
    if not keep.any():
        raise DataError(f"hsic: weighted median heuristic needs two distinct weighted values of {name}")
    return _weighted_median(distances[keep], pair_weights[keep])


def resolve_bandwidth(x, k: KernelSpec, name: str = "x", weights=None, floor: float = 0.0) -> float:
    if not k.is_median:
        return float(k.bandwidth)
    return max(median_bandwidth(x, name, weights), floor)


def _rbf(values: np.ndarray, bandwidth: float) -> np.ndarray:
    differences = values[:, None] - values[None, :]
    return np.exp(-(differences * differences) / (2.0 * bandwidth * bandwidth))


def gram(x, k: KernelSpec = KernelSpec(), name: str = "x") -> np.ndarray:
    """Gaussian RBF Gram matrix exp(-(u - v)^2 / (2 h^2))."""
    values = _as_sample(x, name)
    return _rbf(values, resolve_bandwidth(values, k, name))


def _center(K: np.ndarray) -> np.ndarray:
    return K - K.mean(axis=0)[None, :] - K.mean(axis=1)[:, None] + K.mean()


def _weighted_center(K: np.ndarray, w: np.ndarray) -> np.ndarray:
    Kw = K @ w
    return K - Kw[:, None] - Kw[None, :] + w @ Kw


def _pair(x, y):
    x_values, y_values = _as_sample(x, "x"), _as_sample(y, "y")
    if len(x_values) != len(y_values):
        raise DataError(f"hsic: length mismatch between x ({len(x_values)}) and y ({len(y_values)})")
    return x_values, y_values


# ---------- Global HSIC ----------

def hsic_v(x, y, kx: KernelSpec = KernelSpec(), ky: KernelSpec = KernelSpec()) -> float:
    """Trace V-statistic Tr(K H L H) / n^2."""
    x_values, y_values = _pair(x, y)
    Kc, Lc = _center(gram(x_values, kx, "x")), _center(gram(y_values, ky, "y"))
    return max(float(np.sum(Kc * Lc)) / len(x_values) ** 2, 0.0)


def _r2(cross: float, self_x: float, self_y: float) -> float:
    denominator = math.sqrt(self_x * self_y) if self_x > 0 and self_y > 0 else 0.0
    if denominator == 0.0:
        return float("nan")
    return min(max(cross / denominator, 0.0), 1.0)


def r2_hsic(x, y, kx: KernelSpec = KernelSpec(), ky: KernelSpec = KernelSpec()) -> float:
    x_values, y_values = _pair(x, y)
    n2 = len(x_values) ** 2
    Kc, Lc = _center(gram(x_values, kx, "x")), _center(gram(y_values, ky, "y"))
    return _r2(float(np.sum(Kc * Lc)) / n2, float(np.sum(Kc * Kc)) / n2, float(np.sum(Lc * Lc)) / n2)


def _gamma_pvalue(K: np.ndarray, L: np.ndarray) -> float:
    """Gamma approximation of n * HSIC under independence, moments from the Gram matrices."""
    n = K.shape[0]
    if n < 6:
        raise DataError(f"hsic: asymptotic p-value needs at least 6 samples (got {n})")
    Kc, Lc = _center(K), _center(L)
    statistic = float(np.sum(Kc * Lc)) / n

    spread = (Kc * Lc / 6.0) ** 2
    variance = (spread.sum() - np.trace(spread)) / n / (n - 1)
    variance *= 72.0 * (n - 4) * (n - 5) / n / (n - 1) / (n - 2) / (n - 3)
    mu_x = (K.sum() - np.trace(K)) / n / (n - 1)
    mu_y = (L.sum() - np.trace(L)) / n / (n - 1)
    expected = (1.0 + mu_x * mu_y - mu_x - mu_y) / n
    if not (variance > 0 and expected > 0):
        return float("nan")
    shape, scale = expected ** 2 / variance, variance * n / expected
    return float(stats.gamma.sf(statistic, shape, scale=scale))


def _permutation_pvalues(grams: np.ndarray, M: np.ndarray, permutations: int, seed: int) -> np.ndarray:
    """(1 + #{b : S_b >= S_obs}) / (1 + B) for S = sum(K_i * M), every K_i against the same permutations.

    Permuting the rows and columns of M relabels the output side, which has the
    same null distribution as permuting each input.
    """
    if permutations < MIN_PERMUTATIONS:
        raise DataError(f"hsic: permutation test needs at least {MIN_PERMUTATIONS} permutations (got {permutations})")
    rng = np.random.default_rng(seed)
    n = M.shape[0]
    flat = grams.reshape(len(grams), n * n)
    observed = flat @ M.ravel()
    threshold = observed - EXCEEDANCE_RTOL * np.abs(observed)
    exceed = np.zeros(len(flat))
    for _ in range(permutations):
        order = rng.permutation(n)
        exceed += (flat @ M[np.ix_(order, order)].ravel()) >= threshold
    return (1.0 + exceed) / (1.0 + permutations)


def pvalue(x, y, kx: KernelSpec = KernelSpec(), ky: KernelSpec = KernelSpec(), method: str = ASYMPTOTIC,
           permutations: int = DEFAULT_PERMUTATIONS, seed: int = 0) -> float:
    x_values, y_values = _pair(x, y)
    method = normalize_method(method)
    K, L = gram(x_values, kx, "x"), gram(y_values, ky, "y")
    if method == ASYMPTOTIC:
        return _gamma_pvalue(K, L)
    M = _center(L) / len(y_values) ** 2
    return float(_permutation_pvalues(K[None], M, permutations, seed)[0])


def global_hsic(x, y, kx: KernelSpec = KernelSpec(), ky: KernelSpec = KernelSpec(), method: str = ASYMPTOTIC,
                permutations: int = DEFAULT_PERMUTATIONS, seed: int = 0) -> HsicResult:
    method = normalize_method(method)
    return HsicResult(
        raw=hsic_v(x, y, kx, ky),
        normalized=r2_hsic(x, y, kx, ky),
        p_value=pvalue(x, y, kx, ky, method, permutations, seed),
        method=method,
    )


# ---------- Target and conditional HSIC ----------

def target_filter(y, bound: float = DEFAULT_BOUND, s: float = DEFAULT_FILTER_SCALE,
                  kind: str = EXPONENTIAL) -> TargetFilter:
    """Weights exp(-dist(y, [bound, inf)) / (s * std(y))), or the indicator of y >= bound."""
    values = _as_sample(y, "y")
    if kind not in FILTERS:
        raise DataError(f"hsic: unknown filter {kind!r}; expected one of {', '.join(FILTERS)}")
    inside = values >= bound
    size = int(inside.sum())
    if kind == INDICATOR:
        return TargetFilter(inside.astype(float), size)
    if not s > 0:
        raise DataError(f"hsic: filter scale must be > 0 (got {s})")
    sigma = float(np.std(values, ddof=1))
    if sigma == 0.0:
        raise DataError("hsic: target filter needs a non-constant output (sample std is 0)")
    distance = np.maximum(bound - values, 0.0)
    return TargetFilter(np.exp(-distance / (s * sigma)), size)


def _filtered_degenerate(weights: np.ndarray) -> bool:
    return float(np.ptp(weights)) <= DEGENERATE_FILTER_TOL


def t_hsic(x, y, bound: float = DEFAULT_BOUND, kx: KernelSpec = KernelSpec(), ky: KernelSpec = KernelSpec(),
           s: float = DEFAULT_FILTER_SCALE, method: str = PERMUTATION, permutations: int = DEFAULT_PERMUTATIONS,
           seed: int = 0, kind: str = EXPONENTIAL) -> HsicResult:
    """Global HSIC between x and the filtered output; a flat filtered output scores 0 with p = 1."""
    x_values, y_values = _pair(x, y)
    method = normalize_method(method)
    weights, size = target_filter(y_values, bound, s, kind)
    if _filtered_degenerate(weights):
        return HsicResult(0.0, 0.0, 1.0, method, size)

    n2 = len(x_values) ** 2
    K = gram(x_values, kx, "x")
    L = _rbf(weights, resolve_bandwidth(weights, ky, "filtered y", floor=FILTERED_BANDWIDTH_FLOOR))
    Kc, Lc = _center(K), _center(L)
    raw = max(float(np.sum(Kc * Lc)) / n2, 0.0)
    normalized = _r2(raw, float(np.sum(Kc * Kc)) / n2, float(np.sum(Lc * Lc)) / n2)
    if method == ASYMPTOTIC:
        p_value = _gamma_pvalue(K, L)
    else:
        p_value = float(_permutation_pvalues(K[None], Lc / n2, permutations, seed)[0])
    return HsicResult(raw, normalized, p_value, method, size)


def _normalized_weights(weights: np.ndarray) -> np.ndarray:
    total = float(weights.sum())
    if not total > 0:
        raise DataError("hsic: conditional HSIC needs a positive total filter weight")
    return weights / total


def _single_support(w: np.ndarray) -> bool:
    return int(np.count_nonzero(w)) < 2


def c_hsic(x, y, bound: float = DEFAULT_BOUND, kx: KernelSpec = KernelSpec(), ky: KernelSpec = KernelSpec(),
           s: float = DEFAULT_FILTER_SCALE, permutations: int = DEFAULT_PERMUTATIONS, seed: int = 0,
           kind: str = EXPONENTIAL) -> HsicResult:
    """HSIC of (x, y) under the empirical measure reweighted by the target filter.

    A filter that leaves weight on a single sample gives the one-point
    measure, whose HSIC is 0 (p = 1).
    """
    x_values, y_values = _pair(x, y)
    weights, size = target_filter(y_values, bound, s, kind)
    w = _normalized_weights(weights)
    if _single_support(w):
        return HsicResult(0.0, 0.0, 1.0, PERMUTATION, size)
    K = _rbf(x_values, resolve_bandwidth(x_values, kx, "x", weights=w))
    L = _rbf(y_values, resolve_bandwidth(y_values, ky, "y", weights=w))
    Kt, Lt = _weighted_center(K, w), _weighted_center(L, w)
    raw = max(float(w @ (Kt * Lt) @ w), 0.0)
    normalized = _r2(raw, float(w @ (Kt * Kt) @ w), float(w @ (Lt * Lt) @ w))
    M = np.outer(w, w) * Lt
    p_value = float(_permutation_pvalues(K[None], M, permutations, seed)[0])
    return HsicResult(raw, normalized, p_value, PERMUTATION, size)


# ---------- Time series ----------

def _input_grams(X: np.ndarray, names: Sequence[str], kx: KernelSpec, weights=None) -> List[np.ndarray]:
    grams = []
    for j, name in enumerate(names):
        try:
            grams.append(_rbf(X[:, j], resolve_bandwidth(X[:, j], kx, name, weights=weights)))
        except ClogsaError as exc:
            logger.warning("hsic: input %s skipped: %s", name, exc)
            grams.append(None)
    return grams


def _timestep_rows(k: int, time: float, X: np.ndarray, names: Sequence[str], y: np.ndarray, grams, variant: str,
                   bound: float, s: float, kx: KernelSpec, ky: KernelSpec, method: str, permutations: int,
                   seed: int, kind: str) -> List[dict]:
    n = len(y)
    base = {"time": time, "method": method, "target_set_size": None}
    rows = [dict(base, input=name, index=float("nan"), raw=float("nan"), p_value=float("nan")) for name in names]
    try:
        if variant == GLOBAL:
            L = _rbf(y, resolve_bandwidth(y, ky, f"y(t={time:g})"))
            M = _center(L) / n ** 2
        else:
            weights, size = target_filter(y, bound, s, kind)
            for row in rows:
                row["target_set_size"] = size
            if variant == TARGET:
                if _filtered_degenerate(weights):
                    for row in rows:
                        row.update(index=0.0, raw=0.0, p_value=1.0)
                    return rows
                L = _rbf(weights, resolve_bandwidth(weights, ky, "filtered y", floor=FILTERED_BANDWIDTH_FLOOR))
                M = _center(L) / n ** 2
            else:
                w = _normalized_weights(weights)
                if _single_support(w):
                    for row in rows:
                        row.update(index=0.0, raw=0.0, p_value=1.0)
                    return rows
                grams = _input_grams(X, names, kx, weights=w)
                L = _rbf(y, resolve_bandwidth(y, ky, f"y(t={time:g})", weights=w))
                Lt = _weighted_center(L, w)
                M = np.outer(w, w) * Lt
                self_y = float(np.sum(M * Lt))
    except ClogsaError as exc:
        logger.warning("hsic: timestep %d (t=%g) left undefined: %s", k, time, exc)
        return rows

    usable = [j for j, K in enumerate(grams) if K is not None]
    if not usable:
        return rows
    stack = np.stack([grams[j] for j in usable])
    if variant == CONDITIONAL:
        for position, j in enumerate(usable):
            Kt = _weighted_center(stack[position], w)
            raw = max(float(np.sum(stack[position] * M)), 0.0)
            rows[j].update(raw=raw, index=_r2(raw, float(w @ (Kt * Kt) @ w), self_y))
    else:
        Lc = M * n ** 2
        self_y = float(np.sum(Lc * Lc)) / n ** 2
        for position, j in enumerate(usable):
            Kc = _center(stack[position])
            raw = max(float(np.sum(Kc * Lc)) / n ** 2, 0.0)
            rows[j].update(raw=raw, index=_r2(raw, float(np.sum(Kc * Kc)) / n ** 2, self_y))

    if method == ASYMPTOTIC:
        for position, j in enumerate(usable):
            rows[j]["p_value"] = _gamma_pvalue(stack[position], L)
    else:
        p_values = _permutation_pvalues(stack, M, permutations, child_seed(seed, k))
        for position, j in enumerate(usable):
            rows[j]["p_value"] = float(p_values[position])
    return rows


def hsic_timeseries(dataset: "dataio.TrajectoryDataset", variant: str = GLOBAL, bound: float = DEFAULT_BOUND,
                    s: float = DEFAULT_FILTER_SCALE, kx: KernelSpec = KernelSpec(), ky: KernelSpec = KernelSpec(),
                    method: str = None, permutations: int = DEFAULT_PERMUTATIONS, seed: int = 0, n_jobs: int = 1,
                    kind: str = EXPONENTIAL) -> pd.DataFrame:
    """One row per (time, input): normalized index, raw value, p-value and target-set size.

    Global HSIC defaults to asymptotic p-values, target and conditional HSIC to
    permutation p-values. Cells that cannot be evaluated stay NaN.
    """
    if variant not in VARIANTS:
        raise DataError(f"hsic: unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}")
    method = normalize_method(method or (ASYMPTOTIC if variant == GLOBAL else PERMUTATION))
    if variant == CONDITIONAL and method == ASYMPTOTIC:
        raise DataError("hsic: conditional HSIC supports permutation p-values only")
    if method == PERMUTATION and permutations < MIN_PERMUTATIONS:
        raise DataError(f"hsic: permutation test needs at least {MIN_PERMUTATIONS} permutations (got {permutations})")

    data = dataset.valid()
    if data.n_samples < 2:
        raise DataError("hsic: dataset needs at least 2 valid samples")
    X, Y = data.inputs, data.outputs
    grams = _input_grams(X, data.names, kx) if variant != CONDITIONAL else None

    cells = Parallel(n_jobs=n_jobs)(
        delayed(_timestep_rows)(k, float(t), X, data.names, Y[:, k], grams, variant, bound, s, kx, ky,
                                method, permutations, seed, kind)
        for k, t in enumerate(data.times)
    )
    frame = pd.DataFrame([row for cell in cells for row in cell],
                         columns=["time", "input", "index", "raw", "p_value", "method", "target_set_size"])
    frame["target_set_size"] = frame["target_set_size"].astype("Int64")
    logger.info("hsic: %s variant over %d timesteps x %d inputs (%s p-values)",
                variant, len(data.times), len(data.names), method)
    return frame


def ranking_at(frame: pd.DataFrame, time: float) -> List[str]:
    """Inputs at one timestep ordered by decreasing normalized index, undefined last."""
    rows = frame[np.isclose(frame["time"].to_numpy(dtype=float), time)]
    ordered = rows.sort_values("index", ascending=False, na_position="last", kind="mergesort")
    return ordered["input"].tolist()
