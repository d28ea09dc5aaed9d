"""Time-dependent Sobol' indices read straight off sparse PCE coefficients.

Orthonormality turns every variance share into a ratio of sums of squared
coefficients, so nothing here samples: the total variance at timestep k is
the energy of the non-constant terms, and a group's share is the energy of
the terms whose support is exactly that group.
"""
import logging
from dataclasses import dataclass
from typing import Iterator, List, Sequence, Tuple

import numpy as np
import pandas as pd

from pce import SparsePceSurrogate
from utils import DataError, resolve_input

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-14
INTERACTION_LABEL = "_interaction"


def _energy(s: SparsePceSurrogate, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """(squared coefficients, boolean active-input mask) at timestep k."""
    coefficients = np.asarray(s.coefficients)
    if not 0 <= k < coefficients.shape[0]:
        raise DataError(f"sobol: timestep {k} outside 0..{coefficients.shape[0] - 1}")
    return coefficients[k] ** 2, np.asarray(s.basis.indices) > 0


def _total_variance(energy: np.ndarray, active: np.ndarray) -> float:
    return float(energy[active.any(axis=1)].sum())


def _ratio(part: float, total: float) -> float:
    if total <= VARIANCE_FLOOR:
        return float("nan")
    return part / total


def group_index(s: SparsePceSurrogate, group: Sequence, k: int) -> float:
    """Closed Sobol' share of the terms depending on exactly the inputs in ``group``.

    Inputs may be given by name or by 0-based position. NaN when the total
    variance at k is below VARIANCE_FLOOR.
    """
    members = sorted({resolve_input(s.input_names, g) for g in group})
    if not members:
        raise DataError("sobol: group must not be empty")
    energy, active = _energy(s, k)
    wanted = np.zeros(active.shape[1], dtype=bool)
    wanted[members] = True
    exact = np.all(active == wanted, axis=1)
    return _ratio(float(energy[exact].sum()), _total_variance(energy, active))


def iter_group_indices(s: SparsePceSurrogate, k: int) -> Iterator[Tuple[Tuple[str, ...], float]]:
    """Yield (group names, S_group) for every group carrying coefficient energy at k."""
    energy, active = _energy(s, k)
    total = _total_variance(energy, active)
    groups = {}
    for row, mask in enumerate(active):
        if mask.any() and energy[row] > 0:
            key = tuple(np.flatnonzero(mask).tolist())
            groups[key] = groups.get(key, 0.0) + float(energy[row])
    for key in sorted(groups, key=lambda g: (len(g), g)):
        yield tuple(s.input_names[i] for i in key), _ratio(groups[key], total)


def variance_contribution(s: SparsePceSurrogate, i, k: int) -> float:
    """Unnormalized Var of the first-order component of input i (output units squared)."""
    column = resolve_input(s.input_names, i)
    energy, active = _energy(s, k)
    alone = active[:, column] & (active.sum(axis=1) == 1)
    return float(energy[alone].sum())


def first_order(s: SparsePceSurrogate, i, k: int) -> float:
    energy, active = _energy(s, k)
    return _ratio(variance_contribution(s, i, k), _total_variance(energy, active))


def total_order(s: SparsePceSurrogate, i, k: int) -> float:
    column = resolve_input(s.input_names, i)
    energy, active = _energy(s, k)
    return _ratio(float(energy[active[:, column]].sum()), _total_variance(energy, active))


def interaction_residual(s: SparsePceSurrogate, k: int) -> float:
    """S_* = 1 - sum of first-order indices, i.e. the energy share of multi-input terms."""
    energy, active = _energy(s, k)
    mixed = active.sum(axis=1) > 1
    return _ratio(float(energy[mixed].sum()), _total_variance(energy, active))


@dataclass(frozen=True, eq=False)
class SobolTimeSeries:
    input_names: Tuple[str, ...]
    times: np.ndarray
    first: np.ndarray
    total: np.ndarray
    interaction: np.ndarray
    var_contrib: np.ndarray
    total_variance: np.ndarray

    @property
    def defined(self) -> np.ndarray:
        return np.isfinite(self.interaction)

    def first_order_ranking(self, k: int) -> List[str]:
        order = np.argsort(-np.nan_to_num(self.first[k], nan=-np.inf), kind="stable")
        return [self.input_names[i] for i in order]

    def to_frame(self) -> pd.DataFrame:
        """Long format: one row per (time, input) plus one "_interaction" row per time holding S_* in S1."""
        n_times, d = self.first.shape
        frame = pd.DataFrame({
            "time": np.repeat(self.times, d),
            "input": np.tile(np.asarray(self.input_names, dtype=object), n_times),
            "S1": self.first.ravel(),
            "ST": self.total.ravel(),
            "var_contrib": self.var_contrib.ravel(),
        })
        residual = pd.DataFrame({
            "time": self.times,
            "input": INTERACTION_LABEL,
            "S1": self.interaction,
            "ST": np.nan,
            "var_contrib": self.total_variance - self.var_contrib.sum(axis=1),
        })
        order = np.r_[np.arange(len(frame)), np.arange(len(residual)) * d + d - 0.5]
        combined = pd.concat([frame, residual], ignore_index=True)
        return combined.iloc[np.argsort(order, kind="stable")].reset_index(drop=True)


def sobol_timeseries(s: SparsePceSurrogate) -> SobolTimeSeries:
    coefficients = np.asarray(s.coefficients)
    active = np.asarray(s.basis.indices) > 0
    energy = coefficients ** 2
    n_active = active.sum(axis=1)

    total_variance = energy[:, n_active > 0].sum(axis=1)
    alone = active & (n_active == 1)[:, None]
    var_contrib = energy @ alone.astype(float)
    total_energy = energy @ active.astype(float)
    mixed = energy[:, n_active > 1].sum(axis=1)

    defined = total_variance > VARIANCE_FLOOR
    with np.errstate(invalid="ignore", divide="ignore"):
        first = np.where(defined[:, None], var_contrib / total_variance[:, None], np.nan)
        total = np.where(defined[:, None], total_energy / total_variance[:, None], np.nan)
        interaction = np.where(defined, mixed / total_variance, np.nan)
    if not defined.all():
        logger.info("sobol: %d of %d timesteps have total variance below %.0e, indices undefined",
                    int((~defined).sum()), len(defined), VARIANCE_FLOOR)
    return SobolTimeSeries(
        input_names=tuple(s.input_names),
        times=np.asarray(s.times, dtype=float),
        first=first,
        total=total,
        interaction=interaction,
        var_contrib=var_contrib,
        total_variance=total_variance,
    )
