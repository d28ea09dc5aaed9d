"""Independent input probabilistic model: Gaussian and triangular marginals.

An InputModel is an ordered list of named marginals whose joint law is the
product of the marginals. Models are read from JSON files of the form

    {"inputs": [{"name": "alpha", "kind": "gaussian", "params": {"mean": 101.6, "variance": 4.0}},
                {"name": "eps_c", "kind": "triangular", "params": {"a": 0.01, "b": 0.05, "c": 0.3}}]}

or from a built-in preset name (see presets/). Gaussian laws are written with
their variance and held with their standard deviation; the triangular "b" is
the mode. In the sg-clogging-7d preset, alpha N(101.6, 4) is taken as a
variance while beta N(0.0233, 0.0005) is taken as a standard deviation, so
the file stores beta with variance 2.5e-7.
"""
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np
from scipy import integrate, stats

from utils import DataError, NumericalError, fingerprint

logger = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).resolve().parent / "presets"
DEFAULT_PRESET = "sg-clogging-7d"
DEFAULT_MAX_DEGREE = 20
MAX_MOMENT_ORDER = 2 * DEFAULT_MAX_DEGREE + 2
MOMENT_RTOL = 1e-12

GAUSSIAN = "gaussian"
TRIANGULAR = "triangular"
KINDS = (GAUSSIAN, TRIANGULAR)


@dataclass(frozen=True)
class Marginal:
    kind: str
    mean: float = None
    std: float = None
    lower: float = None
    mode: float = None
    upper: float = None

    def __post_init__(self):
        if self.kind == GAUSSIAN:
            if self.mean is None or self.std is None or not math.isfinite(self.mean):
                raise DataError("probmodel: gaussian marginal needs a finite mean and a std")
            if not (self.std > 0 and math.isfinite(self.std)):
                raise DataError(f"probmodel: gaussian std must be > 0 (got {self.std})")
        elif self.kind == TRIANGULAR:
            bounds = (self.lower, self.mode, self.upper)
            if any(v is None or not math.isfinite(v) for v in bounds):
                raise DataError("probmodel: triangular marginal needs finite a, b, c")
            if not (self.lower <= self.mode <= self.upper and self.lower < self.upper):
                raise DataError(
                    f"probmodel: triangular needs a <= b <= c and a < c (got {self.lower}, {self.mode}, {self.upper})"
                )
        else:
            raise DataError(f"probmodel: unknown marginal kind {self.kind!r}; expected one of {', '.join(KINDS)}")

    @classmethod
    def gaussian(cls, mean: float, std: float) -> "Marginal":
        return cls(GAUSSIAN, mean=float(mean), std=float(std))

    @classmethod
    def gaussian_from_variance(cls, mean: float, variance: float) -> "Marginal":
        if not variance > 0:
            raise DataError(f"probmodel: gaussian variance must be > 0 (got {variance})")
        return cls.gaussian(mean, math.sqrt(variance))

    @classmethod
    def triangular(cls, a: float, b: float, c: float) -> "Marginal":
        return cls(TRIANGULAR, lower=float(a), mode=float(b), upper=float(c))

    @property
    def support(self) -> Tuple[float, float]:
        if self.kind == GAUSSIAN:
            return (-math.inf, math.inf)
        return (self.lower, self.upper)

    def to_dict(self) -> Dict[str, Any]:
        if self.kind == GAUSSIAN:
            return {"kind": GAUSSIAN, "params": {"mean": self.mean, "variance": self.std ** 2}}
        return {"kind": TRIANGULAR, "params": {"a": self.lower, "b": self.mode, "c": self.upper}}


@dataclass(frozen=True)
class InputModel:
    marginals: Tuple[Tuple[str, Marginal], ...]

    def __post_init__(self):
        names = [name for name, _ in self.marginals]
        if not names:
            raise DataError("probmodel: input model has no inputs")
        if any(not isinstance(name, str) or not name.strip() for name in names):
            raise DataError("probmodel: input names must be non-empty strings")
        duplicates = sorted({name for name in names if names.count(name) > 1})
        if duplicates:
            raise DataError(f"probmodel: duplicate input names: {', '.join(duplicates)}")

    @property
    def names(self) -> List[str]:
        return [name for name, _ in self.marginals]

    @property
    def dimension(self) -> int:
        return len(self.marginals)

    def __getitem__(self, key) -> Marginal:
        if isinstance(key, str):
            return dict(self.marginals)[key]
        return self.marginals[key][1]

    def nominal(self) -> np.ndarray:
        return np.array([mean(m) for _, m in self.marginals])

    def to_dict(self) -> Dict[str, Any]:
        return {"inputs": [{"name": name, **m.to_dict()} for name, m in self.marginals]}

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.to_dict())


def _frozen(m: Marginal):
    if m.kind == GAUSSIAN:
        return stats.norm(loc=m.mean, scale=m.std)
    width = m.upper - m.lower
    return stats.triang((m.mode - m.lower) / width, loc=m.lower, scale=width)


def pdf(m: Marginal, x):
    return _frozen(m).pdf(x)


def cdf(m: Marginal, x):
    return _frozen(m).cdf(x)


def quantile(m: Marginal, p):
    """Inverse CDF. p=0 maps to the lower support bound (-inf for Gaussian)."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p_arr)) or np.any(p_arr < 0.0) or np.any(p_arr > 1.0):
        raise DataError("probmodel: quantile level outside [0, 1]")
    return _frozen(m).ppf(p)


def mean(m: Marginal) -> float:
    if m.kind == GAUSSIAN:
        return m.mean
    return (m.lower + m.mode + m.upper) / 3.0


def variance(m: Marginal) -> float:
    if m.kind == GAUSSIAN:
        return m.std ** 2
    a, b, c = m.lower, m.mode, m.upper
    return (a * a + b * b + c * c - a * b - a * c - b * c) / 18.0


def _triangular_pieces(m: Marginal):
    """Linear density pieces (lo, hi, density) covering the support."""
    a, b, c = m.lower, m.mode, m.upper
    pieces = []
    if b > a:
        pieces.append((a, b, lambda x: 2.0 * (x - a) / ((c - a) * (b - a))))
    if c > b:
        pieces.append((b, c, lambda x: 2.0 * (c - x) / ((c - a) * (c - b))))
    return pieces


def raw_moment(m: Marginal, k: int, max_order: int = MAX_MOMENT_ORDER) -> float:
    """E[X^k]: analytic for Gaussian, adaptive Gauss-Kronrod quadrature for triangular."""
    if int(k) != k or k < 0:
        raise DataError(f"probmodel: moment order must be a non-negative integer (got {k})")
    if k > max_order:
        raise DataError(f"probmodel: moment order {k} exceeds the configured maximum {max_order}")
    k = int(k)
    if k == 0:
        return 1.0
    if m.kind == GAUSSIAN:
        return float(stats.norm(loc=m.mean, scale=m.std).moment(k))

    total = 0.0
    for lo, hi, density in _triangular_pieces(m):
        value, abserr = integrate.quad(lambda x: x ** k * density(x), lo, hi,
                                       epsabs=0.0, epsrel=MOMENT_RTOL, limit=200)
        if abserr > 1e-10 * max(abs(value), np.finfo(float).tiny):
            raise NumericalError(f"probmodel: moment of order {k} did not converge (abserr={abserr:.2e})")
        total += value
    return total


def _uniform_stream(seed: int, column: int, n: int) -> np.ndarray:
    # one Philox stream per column; draws lie strictly inside (0, 1)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(column,))))
    draws = rng.integers(0, 1 << 53, size=n, dtype=np.uint64)
    return (draws.astype(np.float64) + 0.5) * 2.0 ** -53


def sample(model: InputModel, n: int, seed: int) -> np.ndarray:
    """n x d inverse-transform Monte Carlo design, bit-reproducible for a fixed seed."""
    if int(n) != n or n < 1:
        raise DataError(f"probmodel: sample size must be a positive integer (got {n})")
    n = int(n)
    columns = [_frozen(m).ppf(_uniform_stream(seed, j, n)) for j, (_, m) in enumerate(model.marginals)]
    return np.column_stack(columns)


def to_unit(model: InputModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.dimension:
        raise DataError(f"probmodel: expected {model.dimension} columns, got {X.shape[1]}")
    return np.column_stack([cdf(m, X[:, j]) for j, (_, m) in enumerate(model.marginals)])


def rank_transform(matrix) -> np.ndarray:
    values = np.asarray(matrix, dtype=float)
    squeeze = values.ndim == 1
    values = values.reshape(len(values), -1)
    ranks = stats.rankdata(values, axis=0) / values.shape[0]
    return ranks[:, 0] if squeeze else ranks


# ---------- Model files ----------

def _marginal_from_entry(entry: Dict[str, Any], position: int) -> Tuple[str, Marginal]:
    missing = [field for field in ("name", "kind", "params") if field not in entry]
    if missing:
        raise DataError(f"probmodel: input #{position} is missing {', '.join(missing)}")
    name = entry["name"]
    kind = str(entry["kind"]).lower()
    params = entry["params"]
    try:
        if kind == GAUSSIAN:
            return name, Marginal.gaussian_from_variance(params["mean"], params["variance"])
        if kind == TRIANGULAR:
            return name, Marginal.triangular(params["a"], params["b"], params["c"])
    except KeyError as exc:
        raise DataError(f"probmodel: input {name!r} is missing parameter {exc.args[0]!r}") from None
    except TypeError:
        raise DataError(f"probmodel: input {name!r} has non-numeric parameters") from None
    raise DataError(f"probmodel: input {name!r} has unknown kind {entry['kind']!r}")


def model_from_dict(payload: Dict[str, Any]) -> InputModel:
    if not isinstance(payload, dict) or not isinstance(payload.get("inputs"), list):
        raise DataError('probmodel: model file must be an object with an "inputs" list')
    return InputModel(tuple(_marginal_from_entry(entry, i) for i, entry in enumerate(payload["inputs"])))


def model_to_dict(model: InputModel) -> Dict[str, Any]:
    """The model file layout; Gaussian entries carry the variance."""
    return model.to_dict()


def load_model(source=DEFAULT_PRESET) -> InputModel:
    """Load an input model from a JSON file path or a preset name."""
    path = Path(source)
    if not path.is_file():
        preset = PRESET_DIR / f"{source}.json"
        if not preset.is_file():
            raise DataError(f"probmodel: no model file or preset named {str(source)!r}")
        path = preset
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"probmodel: {path.name} is not valid JSON (line {exc.lineno})") from None
    model = model_from_dict(payload)
    logger.debug("loaded input model %s with %d inputs", path.name, model.dimension)
    return model


def save_model(model: InputModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n", encoding="utf-8")
