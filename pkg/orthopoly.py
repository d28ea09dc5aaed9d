"""Univariate orthonormal families and sparse tensorized bases.

Every family is stored as the three-term recurrence of its monic polynomials
in a standardized variable z = (x - shift) / scale:

    pi_{k+1}(z) = (z - alpha_k) pi_k(z) - beta_k pi_{k-1}(z),   beta_0 = mass

and evaluated in orthonormal form phi_k = pi_k / sqrt(beta_1 ... beta_k).
Gaussian marginals use the probabilists' Hermite recurrence on the z-score,
triangular marginals use a Stieltjes procedure on the affine image [-1, 1]
with every inner product computed by adaptive Gauss-Kronrod quadrature.
"""
import logging
import math
import warnings
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Any, Callable, Dict, List, Sequence, Tuple

import numpy as np
from scipy import integrate

from probmodel import GAUSSIAN, TRIANGULAR, InputModel, Marginal
from utils import DataError, NumericalError

logger = logging.getLogger(__name__)

QUAD_RTOL = 1e-12
QUAD_LIMIT = 200
QUASI_NORM_TOL = 1e-9
# standard normal mass outside [-40, 40] is below double precision
HERMITE_EDGES = (-40.0, -10.0, -5.0, 0.0, 5.0, 10.0, 40.0)

HERMITE = "hermite"
STIELTJES = "stieltjes"
CUSTOM = "custom"

MultiIndex = Tuple[int, ...]


@dataclass(frozen=True, eq=False)
class Recurrence:
    alpha: np.ndarray
    beta: np.ndarray
    shift: float = 0.0
    scale: float = 1.0
    kind: str = CUSTOM
    mode: float = 0.0

    def __post_init__(self):
        if len(self.alpha) != len(self.beta):
            raise DataError("orthopoly: alpha and beta must have the same length")
        if not self.scale > 0:
            raise DataError(f"orthopoly: standardization scale must be > 0 (got {self.scale})")
        if len(self.beta) > 1 and not np.all(self.beta[1:] > 0):
            bad = int(np.argmax(~(self.beta[1:] > 0))) + 1
            raise NumericalError(f"orthopoly: recurrence coefficient beta_{bad} is not positive")

    @property
    def max_degree(self) -> int:
        return len(self.beta) - 1

    @property
    def norms(self) -> np.ndarray:
        """L2 norms of the monic polynomials pi_0..pi_D."""
        return np.sqrt(np.cumprod(np.r_[1.0, self.beta[1:]]))

    def standardize(self, x):
        return (np.asarray(x, dtype=float) - self.shift) / self.scale

    def evaluate_standardized(self, z, degree: int = None) -> np.ndarray:
        degree = self.max_degree if degree is None else int(degree)
        if degree > self.max_degree:
            raise DataError(f"orthopoly: degree {degree} exceeds the family's maximum {self.max_degree}")
        z = np.asarray(z, dtype=float)
        out = np.empty(z.shape + (degree + 1,))
        out[..., 0] = 1.0
        if degree >= 1:
            out[..., 1] = (z - self.alpha[0]) / math.sqrt(self.beta[1])
        for k in range(2, degree + 1):
            out[..., k] = ((z - self.alpha[k - 1]) * out[..., k - 1]
                           - math.sqrt(self.beta[k - 1]) * out[..., k - 2]) / math.sqrt(self.beta[k])
        return out

    def evaluate(self, x, degree: int = None) -> np.ndarray:
        """Orthonormal values phi_0..phi_degree at physical points x, stacked on the last axis."""
        return self.evaluate_standardized(self.standardize(x), degree)

    def in_physical_units(self) -> Tuple[np.ndarray, np.ndarray]:
        """Monic recurrence coefficients of the family expressed in x rather than z."""
        alpha = self.shift + self.scale * self.alpha
        beta = np.r_[self.beta[0], self.scale ** 2 * self.beta[1:]]
        return alpha, beta

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "shift": float(self.shift),
            "scale": float(self.scale),
            "mode": float(self.mode),
            "alpha": [float(v) for v in self.alpha],
            "beta": [float(v) for v in self.beta],
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "Recurrence":
        try:
            return cls(
                alpha=np.asarray(payload["alpha"], dtype=float),
                beta=np.asarray(payload["beta"], dtype=float),
                shift=float(payload["shift"]),
                scale=float(payload["scale"]),
                kind=str(payload.get("kind", CUSTOM)),
                mode=float(payload.get("mode", 0.0)),
            )
        except KeyError as exc:
            raise DataError(f"orthopoly: recurrence entry is missing {exc.args[0]!r}") from None


@dataclass(frozen=True, eq=False)
class TensorBasis:
    recurrences: Tuple[Recurrence, ...]
    indices: np.ndarray
    p: int
    q: float

    def __post_init__(self):
        indices = np.asarray(self.indices)
        if indices.ndim != 2 or indices.shape[1] != len(self.recurrences):
            raise DataError(f"orthopoly: multi-indices must have length {len(self.recurrences)}")
        if len({tuple(row) for row in indices.tolist()}) != len(indices):
            raise DataError("orthopoly: duplicate multi-indices in basis")
        if not np.any(np.all(indices == 0, axis=1)):
            raise DataError("orthopoly: basis must contain the zero multi-index")
        for i, rec in enumerate(self.recurrences):
            if indices[:, i].max() > rec.max_degree:
                raise DataError(f"orthopoly: input {i} needs degree {indices[:, i].max()} "
                                f"but its family stops at {rec.max_degree}")

    @property
    def dimension(self) -> int:
        return len(self.recurrences)

    @property
    def size(self) -> int:
        return len(self.indices)

    def multi_indices(self) -> List[MultiIndex]:
        return [tuple(int(a) for a in row) for row in self.indices]

    def restrict(self, rows) -> "TensorBasis":
        return replace(self, indices=np.asarray(self.indices)[np.asarray(rows, dtype=int)])


# ---------- Quadrature ----------

def _quadrature(f: Callable[[float], float], pieces, epsabs: float, what: str) -> float:
    total = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        for lo, hi in pieces:
            try:
                value, _ = integrate.quad(f, lo, hi, epsabs=epsabs, epsrel=QUAD_RTOL, limit=QUAD_LIMIT)
            except integrate.IntegrationWarning as exc:
                raise NumericalError(f"orthopoly: quadrature did not converge for {what} ({exc})") from None
            total += value
    return total


def _pieces(lower: float, upper: float, breakpoints: Sequence[float] = ()) -> List[Tuple[float, float]]:
    edges = sorted({float(lower), float(upper), *[float(b) for b in breakpoints if lower < b < upper]})
    return [(lo, hi) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]


def _monic(z: float, k: int, alpha: np.ndarray, beta: np.ndarray) -> float:
    previous, current = 0.0, 1.0
    for j in range(k):
        previous, current = current, (z - alpha[j]) * current - beta[j] * previous
    return current


def stieltjes_from_density(density: Callable[[float], float], lower: float, upper: float,
                           max_degree: int, breakpoints: Sequence[float] = ()) -> Tuple[np.ndarray, np.ndarray]:
    """Recurrence coefficients of a density on a finite interval by the Stieltjes procedure.

    Returns (alpha, beta) of length max_degree + 1 with beta[0] the total mass.
    Integrals over each smooth piece are done separately; supply the kinks of
    the density as breakpoints.
    """
    if max_degree < 0:
        raise DataError("orthopoly: max_degree must be >= 0")
    pieces = _pieces(lower, upper, breakpoints)
    alpha = np.zeros(max_degree + 1)
    beta = np.zeros(max_degree + 1)
    previous_norm = None
    for k in range(max_degree + 1):
        norm = _quadrature(lambda z: _monic(z, k, alpha, beta) ** 2 * density(z), pieces, 0.0,
                           f"degree {k} norm")
        if not norm > 0:
            raise NumericalError(f"orthopoly: Stieltjes norm vanished at degree {k}")
        beta[k] = norm if previous_norm is None else norm / previous_norm
        # |alpha_k| <= max(|lower|, |upper|), so the numerator is bounded by that times norm
        bound = max(abs(lower), abs(upper), 1.0)
        numerator = _quadrature(lambda z: z * _monic(z, k, alpha, beta) ** 2 * density(z), pieces,
                                1e-14 * bound * norm, f"degree {k} shift")
        alpha[k] = numerator / norm
        previous_norm = norm
    return alpha, beta


def _triangular_density(mode: float) -> Callable[[float], float]:
    def density(z: float) -> float:
        if z < -1.0 or z > 1.0:
            return 0.0
        if z <= mode:
            return (z + 1.0) / (mode + 1.0) if mode > -1.0 else 0.0
        return (1.0 - z) / (1.0 - mode) if mode < 1.0 else 0.0
    return density


@lru_cache(maxsize=64)
def _stieltjes_triangular(mode: float, max_degree: int) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    alpha, beta = stieltjes_from_density(_triangular_density(mode), -1.0, 1.0, max_degree, breakpoints=(mode,))
    return tuple(alpha), tuple(beta)


# ---------- Families ----------

def hermite_family(max_degree: int) -> Recurrence:
    """Orthonormal probabilists' Hermite family for the standard normal measure."""
    if max_degree < 0:
        raise DataError("orthopoly: max_degree must be >= 0")
    beta = np.arange(max_degree + 1, dtype=float)
    beta[0] = 1.0
    return Recurrence(alpha=np.zeros(max_degree + 1), beta=beta, kind=HERMITE)


def stieltjes_family(m: Marginal, max_degree: int) -> Recurrence:
    if m.kind != TRIANGULAR:
        raise DataError(f"orthopoly: Stieltjes families are built for triangular marginals, not {m.kind}")
    shift = 0.5 * (m.lower + m.upper)
    scale = 0.5 * (m.upper - m.lower)
    mode = min(1.0, max(-1.0, (m.mode - shift) / scale))
    alpha, beta = _stieltjes_triangular(mode, int(max_degree))
    return Recurrence(alpha=np.array(alpha), beta=np.array(beta), shift=shift, scale=scale,
                      kind=STIELTJES, mode=mode)


def family_for(m: Marginal, max_degree: int) -> Recurrence:
    if m.kind == GAUSSIAN:
        return replace(hermite_family(max_degree), shift=m.mean, scale=m.std)
    return stieltjes_family(m, max_degree)


def _standard_measure(rec: Recurrence):
    if rec.kind == HERMITE:
        return (lambda z: math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)), list(zip(HERMITE_EDGES[:-1], HERMITE_EDGES[1:]))
    if rec.kind == STIELTJES:
        return _triangular_density(rec.mode), _pieces(-1.0, 1.0, (rec.mode,))
    raise DataError(f"orthopoly: no reference measure known for a {rec.kind} recurrence")


def orthonormality_defect(rec: Recurrence, max_degree: int = 10) -> float:
    """max_jk |<phi_j, phi_k> - delta_jk| over j, k <= max_degree, by adaptive quadrature."""
    density, pieces = _standard_measure(rec)
    size = max_degree + 1

    def integrand(z):
        values = rec.evaluate_standardized(z, max_degree)
        return np.outer(values, values).ravel() * density(z)

    gram = np.zeros(size * size)
    for lo, hi in pieces:
        value, err = integrate.quad_vec(integrand, lo, hi, epsabs=1e-13, epsrel=QUAD_RTOL, norm="max",
                                        limit=QUAD_LIMIT)
        if err > 1e-10:
            raise NumericalError(f"orthopoly: Gram quadrature did not converge on [{lo}, {hi}] (err={err:.1e})")
        gram += value
    return float(np.max(np.abs(gram.reshape(size, size) - np.eye(size))))


# ---------- Multi-indices ----------

def _bounded_sum(d: int, budget: int):
    if d == 1:
        for a in range(budget + 1):
            yield (a,)
        return
    for a in range(budget + 1):
        for rest in _bounded_sum(d - 1, budget - a):
            yield (a,) + rest


def quasi_norm(alpha: Sequence[int], q: float) -> float:
    values = np.asarray(alpha, dtype=float)
    return float(np.sum(values ** q) ** (1.0 / q))


def hyperbolic_enumerate(d: int, p: int, q: float) -> List[MultiIndex]:
    """{alpha in N^d : (sum alpha_i^q)^(1/q) <= p}, sorted by total degree then descending lexicographic."""
    if d < 1 or p < 0 or not 0 < q <= 1:
        raise DataError(f"orthopoly: need d >= 1, p >= 0 and 0 < q <= 1 (got d={d}, p={p}, q={q})")
    # the q-quasi-norm dominates the 1-norm, so the total-degree set is a superset
    kept = [alpha for alpha in _bounded_sum(d, p) if quasi_norm(alpha, q) <= p + QUASI_NORM_TOL]
    return sorted(kept, key=lambda alpha: (sum(alpha), tuple(-a for a in alpha)))


def build_basis(model: InputModel, p: int, q: float) -> TensorBasis:
    indices = np.array(hyperbolic_enumerate(model.dimension, p, q), dtype=int)
    recurrences = tuple(family_for(m, max(int(p), 1)) for _, m in model.marginals)
    return TensorBasis(recurrences=recurrences, indices=indices, p=int(p), q=float(q))


def eval_basis(basis: TensorBasis, x) -> np.ndarray:
    """phi_alpha(x) for every multi-index: a vector for one point, an n x |J| matrix for n points."""
    points = np.asarray(x, dtype=float)
    single = points.ndim == 1
    points = np.atleast_2d(points)
    if points.shape[1] != basis.dimension:
        raise DataError(f"orthopoly: expected points of dimension {basis.dimension}, got {points.shape[1]}")
    indices = np.asarray(basis.indices)
    psi = np.ones((points.shape[0], len(indices)))
    for i, rec in enumerate(basis.recurrences):
        degree = int(indices[:, i].max())
        if degree == 0:
            continue
        values = rec.evaluate(points[:, i], degree)
        psi *= values[:, indices[:, i]]
    return psi[0] if single else psi
