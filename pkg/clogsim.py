"""Lumped clogging simulator for the hot-leg tube support plate.

The deposit mass follows dm_c/dt = Phi_p + Phi_s: a vena-contracta particle
flux proportional to the relaxed particle fraction, plus a regime-constant
soluble (flashing) flux. Cleanings scale m_c at grid points; the clogging
rate is the saturating correlation tau_c = alpha (1 - exp(-beta V_c)) of the
deposit bulk volume, clamped to [0, 100].

The particle state is the dimensionless theta = Gamma~_p / (rho_l Gamma_p(0)),
starting at 1 and relaxing as dtheta/dt = lambda (Gamma_eq - theta). Gamma_eq is
therefore a fraction of the sampled initial concentration Gamma_p(0), not an
absolute concentration, and the particle flux is Phi_p(theta = 1) * theta.

Inputs are ordered as INPUT_NAMES. Schedules and constants come from a JSON
file (see presets/default-schedule.json):

    {"t_f": 50, "n_steps": 75,
     "segments": [{"t_start": 0, "species": "chi1", "ph": "low"}, ...],
     "cleanings": [{"t": 20, "kind": "curative"}, ...],
     "constants": {"k_v": ..., "gamma_eq": {"chi1/low": 0.05, ...}, ...}}
"""
import json
import logging
import math
from collections import namedtuple
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.optimize import brentq

import dataio
import probmodel
from probmodel import InputModel
from utils import TOOL_VERSION, DataError, NumericalError, fingerprint

logger = logging.getLogger(__name__)

INPUT_NAMES = ("alpha", "beta", "eps_e", "eps_c", "d_p", "gamma_p0", "a_v")
SPECIES = ("chi1", "chi2")
PH_LEVELS = ("low", "high")
CLEANING_KINDS = ("curative", "preventive")

DEFAULT_CONFIG = "default-schedule"
DEFAULT_T_F = 50.0
DEFAULT_N_STEPS = 75
DEFAULT_N = 1000
SUBSTEPS = 4
CHUNK_ROWS = 200
TAU_MAX = 100.0
EPS_E_DRAG = 0.05
M3_TO_CM3 = 1e6
CALIBRATION_TARGET = 91.65

BatchResult = namedtuple("BatchResult", ["tau_c", "m_c", "failures"])


def regime_key(species: str, ph: str) -> str:
    return f"{species}/{ph}"


@dataclass(frozen=True)
class Segment:
    t_start: float
    species: str
    ph: str

    def __post_init__(self):
        if self.species not in SPECIES:
            raise DataError(f"clogsim: unknown species {self.species!r}; expected one of {', '.join(SPECIES)}")
        if self.ph not in PH_LEVELS:
            raise DataError(f"clogsim: unknown pH level {self.ph!r}; expected one of {', '.join(PH_LEVELS)}")

    @property
    def regime(self) -> str:
        return regime_key(self.species, self.ph)


@dataclass(frozen=True)
class CleaningEvent:
    t: float
    kind: str

    def __post_init__(self):
        if self.kind not in CLEANING_KINDS:
            raise DataError(f"clogsim: unknown cleaning kind {self.kind!r}; expected one of {', '.join(CLEANING_KINDS)}")


@dataclass(frozen=True)
class RegimeSchedule:
    segments: Tuple[Segment, ...]
    cleanings: Tuple[CleaningEvent, ...] = ()
    t_f: float = DEFAULT_T_F

    def __post_init__(self):
        if not self.t_f > 0:
            raise DataError(f"clogsim: t_f must be > 0 (got {self.t_f})")
        if not self.segments or self.segments[0].t_start != 0.0:
            raise DataError("clogsim: the first segment must start at t=0")
        starts = [seg.t_start for seg in self.segments]
        if any(b <= a for a, b in zip(starts, starts[1:])) or starts[-1] >= self.t_f:
            raise DataError("clogsim: segment starts must be strictly increasing and below t_f")
        times = [event.t for event in self.cleanings]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise DataError("clogsim: cleaning times must be strictly increasing")
        if times and (times[0] <= 0.0 or times[-1] > self.t_f):
            raise DataError(f"clogsim: cleaning times must lie in (0, {self.t_f}]")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t_f": self.t_f,
            "segments": [{"t_start": s.t_start, "species": s.species, "ph": s.ph} for s in self.segments],
            "cleanings": [{"t": c.t, "kind": c.kind} for c in self.cleanings],
        }


@dataclass(frozen=True)
class PhysicalConstants:
    k_v: float
    rho_p: float
    rho_l: float
    U_z: float
    mu_l: float
    relaxation_rate: float
    gamma_eq: Mapping[str, float]
    soluble_flux_scale: float
    soluble_flux_factor: Mapping[str, float] = field(default_factory=dict)
    r_curative: float = 0.2
    r_preventive: float = 0.6

    def __post_init__(self):
        for name in ("k_v", "rho_p", "rho_l", "U_z", "mu_l", "relaxation_rate"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise DataError(f"clogsim: constant {name} must be > 0 (got {value})")
        if self.rho_p <= self.rho_l:
            raise DataError("clogsim: particle density rho_p must exceed liquid density rho_l")
        if self.soluble_flux_scale < 0:
            raise DataError("clogsim: soluble_flux_scale must be >= 0")
        for table in ("gamma_eq", "soluble_flux_factor"):
            for key, value in getattr(self, table).items():
                if value < 0:
                    raise DataError(f"clogsim: {table}[{key!r}] must be >= 0 (got {value})")
        if not 0 < self.r_curative < self.r_preventive <= 1:
            raise DataError("clogsim: cleaning factors need 0 < r_curative < r_preventive <= 1")

    def equilibrium(self, regime: str) -> float:
        try:
            return float(self.gamma_eq[regime])
        except KeyError:
            raise DataError(f"clogsim: no equilibrium particle fraction for regime {regime!r}") from None

    def soluble_flux(self, regime: str) -> float:
        return self.soluble_flux_scale * float(self.soluble_flux_factor.get(regime, 1.0))

    def cleaning_factor(self, kind: str) -> float:
        return self.r_curative if kind == "curative" else self.r_preventive

    def to_dict(self) -> Dict[str, Any]:
        payload = {name: getattr(self, name) for name in self.__dataclass_fields__}
        payload["gamma_eq"] = dict(self.gamma_eq)
        payload["soluble_flux_factor"] = dict(self.soluble_flux_factor)
        return payload


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    tau_c: np.ndarray
    m_c: np.ndarray


# ---------- Closed-form pieces ----------

def vena_contracta_flux(a_v, k_v, rho_p, rho_l, U_z, d_p, mu_l, gamma_tilde_p):
    """Particle deposition flux a_v k_v (rho_p - rho_l) U_z^2 d_p^2 / mu_l * Gamma~_p."""
    if np.any(np.asarray(mu_l) == 0):
        raise DataError("clogsim: dynamic viscosity mu_l must be nonzero")
    return a_v * k_v * (rho_p - rho_l) * U_z ** 2 * d_p ** 2 / mu_l * gamma_tilde_p


def clogging_rate(alpha, beta, V_c):
    """alpha (1 - exp(-beta V_c)), V_c in cm^3. Unclamped; simulate() clamps to [0, 100]."""
    return alpha * -np.expm1(-beta * V_c)


def deposit_volume(m_c, rho_p, eps_c):
    """Bulk deposit volume in cm^3 of a porous deposit of mass m_c (kg)."""
    return M3_TO_CM3 * m_c / (rho_p * (1.0 - eps_c))


# ---------- Grid and schedule ----------

def time_grid(t_f: float = DEFAULT_T_F, n_steps: int = DEFAULT_N_STEPS) -> np.ndarray:
    if int(n_steps) != n_steps or n_steps < 2:
        raise DataError(f"clogsim: need at least 2 timesteps (got {n_steps})")
    return np.linspace(0.0, float(t_f), int(n_steps))


def snap_index(t: float, times) -> int:
    return int(np.argmin(np.abs(np.asarray(times, dtype=float) - t)))


def _check_grid(times, schedule: RegimeSchedule) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) < 2 or np.any(np.diff(times) <= 0):
        raise DataError("clogsim: time grid must be strictly increasing with at least 2 points")
    if times[0] != 0.0 or not math.isclose(times[-1], schedule.t_f, rel_tol=1e-12):
        raise DataError(f"clogsim: time grid must run from 0 to t_f={schedule.t_f}")
    return times


def segment_bounds(schedule: RegimeSchedule, times) -> List[Tuple[int, int]]:
    """(first, last) grid index of every segment once its start is snapped to the grid."""
    starts = [snap_index(seg.t_start, times) for seg in schedule.segments]
    if any(b <= a for a, b in zip(starts, starts[1:])):
        raise DataError("clogsim: two segments snap to the same grid point; refine the time grid")
    ends = starts[1:] + [len(times) - 1]
    return list(zip(starts, ends))


def _interval_regimes(schedule: RegimeSchedule, times) -> List[str]:
    """Regime driving each grid interval [t_k, t_{k+1}]."""
    regimes = []
    for segment, (start, end) in zip(schedule.segments, segment_bounds(schedule, times)):
        regimes.extend([segment.regime] * (end - start))
    return regimes


def _cleaning_factors(schedule: RegimeSchedule, constants: PhysicalConstants, times) -> np.ndarray:
    factors = np.ones(len(times))
    seen = set()
    for event in schedule.cleanings:
        k = snap_index(event.t, times)
        if k in seen or k == 0:
            raise DataError(f"clogsim: cleaning at t={event.t} does not map to its own grid point after t=0")
        seen.add(k)
        factors[k] = constants.cleaning_factor(event.kind)
    return factors


def regime_midpoints(schedule: RegimeSchedule, times) -> pd.DataFrame:
    rows = []
    for position, (segment, (start, end)) in enumerate(zip(schedule.segments, segment_bounds(schedule, times))):
        index = (start + end + 1) // 2
        rows.append({"segment": position, "regime": segment.regime, "index": index, "time": float(times[index])})
    return pd.DataFrame(rows, columns=["segment", "regime", "index", "time"])


# ---------- Integration ----------

def outside_domain(X) -> np.ndarray:
    """Rows whose inputs cannot be simulated: non-finite, beta <= 0, porosities outside [0, 1), negative sizes."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _, beta, eps_e, eps_c, d_p, gamma_p0, a_v = X.T
    return (~np.all(np.isfinite(X), axis=1) | (beta <= 0) | (eps_c < 0) | (eps_c >= 1)
            | (eps_e < 0) | (d_p < 0) | (gamma_p0 < 0) | (a_v < 0))


def _derivatives(theta, lam, equilibrium, particle, soluble):
    return lam * (equilibrium - theta), particle * theta + soluble


def _rk4_step(theta, mass, h, *rates):
    a_t, a_m = _derivatives(theta, *rates)
    b_t, b_m = _derivatives(theta + 0.5 * h * a_t, *rates)
    c_t, c_m = _derivatives(theta + 0.5 * h * b_t, *rates)
    d_t, d_m = _derivatives(theta + h * c_t, *rates)
    return (theta + h / 6.0 * (a_t + 2.0 * b_t + 2.0 * c_t + d_t),
            mass + h / 6.0 * (a_m + 2.0 * b_m + 2.0 * c_m + d_m))


def simulate_batch(X, schedule: RegimeSchedule, constants: PhysicalConstants, times=None,
                   substeps: int = SUBSTEPS) -> BatchResult:
    """Integrate every row of X (columns in INPUT_NAMES order) on the same grid.

    Rows with invalid inputs or a non-finite state get NaN outputs and an
    entry in the returned failures dict (row -> message); the others are
    unaffected.
    """
    times = _check_grid(time_grid(schedule.t_f) if times is None else times, schedule)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != len(INPUT_NAMES):
        raise DataError(f"clogsim: expected {len(INPUT_NAMES)} input columns, got {X.shape[1]}")
    if int(substeps) != substeps or substeps < 1:
        raise DataError(f"clogsim: substeps must be a positive integer (got {substeps})")

    alpha, beta, eps_e, eps_c, d_p, gamma_p0, a_v = X.T
    failures: Dict[int, str] = {}
    invalid = outside_domain(X)
    for row in np.flatnonzero(invalid):
        failures[int(row)] = f"clogsim: input row outside the physical domain ({X[row].tolist()})"

    # particle flux at theta = 1, i.e. Gamma~_p = rho_l * Gamma_p(0)
    particle = vena_contracta_flux(a_v, constants.k_v, constants.rho_p, constants.rho_l,
                                   constants.U_z * (1.0 - EPS_E_DRAG * eps_e), d_p, constants.mu_l,
                                   constants.rho_l * gamma_p0)
    regimes = _interval_regimes(schedule, times)
    factors = _cleaning_factors(schedule, constants, times)

    theta = np.ones(len(X))
    mass = np.zeros(len(X))
    m_c = np.zeros((len(X), len(times)))
    with np.errstate(over="ignore", invalid="ignore"):
        for k, regime in enumerate(regimes):
            h = (times[k + 1] - times[k]) / substeps
            rates = (constants.relaxation_rate, constants.equilibrium(regime), particle,
                     constants.soluble_flux(regime))
            for _ in range(substeps):
                theta, mass = _rk4_step(theta, mass, h, *rates)
            mass = mass * factors[k + 1]
            broken = ~(np.isfinite(theta) & np.isfinite(mass))
            for row in np.flatnonzero(broken & ~invalid):
                if int(row) not in failures:
                    failures[int(row)] = f"clogsim: non-finite state at t={times[k + 1]:.6g}"
            m_c[:, k + 1] = mass

        volume = deposit_volume(m_c, constants.rho_p, eps_c[:, None])
        tau_c = np.clip(clogging_rate(alpha[:, None], beta[:, None], volume), 0.0, TAU_MAX)
    if failures:
        rows = sorted(failures)
        tau_c[rows] = np.nan
        m_c[rows] = np.nan
    return BatchResult(tau_c=tau_c, m_c=m_c, failures=failures)


def simulate(x, schedule: RegimeSchedule, constants: PhysicalConstants, times=None,
             substeps: int = SUBSTEPS) -> Trajectory:
    times = _check_grid(time_grid(schedule.t_f) if times is None else times, schedule)
    x = np.asarray(x, dtype=float)
    if x.shape != (len(INPUT_NAMES),):
        raise DataError(f"clogsim: expected a {len(INPUT_NAMES)}-vector ordered as {', '.join(INPUT_NAMES)}")
    if outside_domain(x[None, :])[0]:
        raise DataError(f"clogsim: input vector outside the physical domain ({x.tolist()})")
    result = simulate_batch(x[None, :], schedule, constants, times, substeps)
    if result.failures:
        raise NumericalError(result.failures[0])
    return Trajectory(times=times, tau_c=result.tau_c[0], m_c=result.m_c[0])


# ---------- Campaigns ----------

def simulation_order(model: InputModel) -> List[int]:
    """Model columns rearranged into INPUT_NAMES order."""
    if sorted(model.names) != sorted(INPUT_NAMES):
        raise DataError(f"clogsim: input model must define exactly {', '.join(INPUT_NAMES)} (got {', '.join(model.names)})")
    return [model.names.index(name) for name in INPUT_NAMES]


def nominal_vector(model: InputModel) -> np.ndarray:
    return model.nominal()[simulation_order(model)]


def config_to_dict(schedule: RegimeSchedule, constants: PhysicalConstants, times=None) -> Dict[str, Any]:
    payload = schedule.to_dict()
    payload["n_steps"] = DEFAULT_N_STEPS if times is None else len(times)
    payload["constants"] = constants.to_dict()
    return payload


def monte_carlo(model: InputModel, schedule: RegimeSchedule, constants: PhysicalConstants, n: int, seed: int,
                times=None, n_jobs: int = 1, substeps: int = SUBSTEPS) -> "dataio.TrajectoryDataset":
    """Crude Monte Carlo campaign: n trajectories on inputs drawn from the model.

    Rows are simulated in fixed-size chunks so the result does not depend on
    n_jobs; failed rows are kept as NaN and listed in the failure ledger.
    """
    times = _check_grid(time_grid(schedule.t_f) if times is None else times, schedule)
    order = simulation_order(model)
    X = probmodel.sample(model, n, seed)
    ordered = X[:, order]
    chunks = [slice(start, min(start + CHUNK_ROWS, len(X))) for start in range(0, len(X), CHUNK_ROWS)]
    results = Parallel(n_jobs=n_jobs)(
        delayed(simulate_batch)(ordered[chunk], schedule, constants, times, substeps) for chunk in chunks
    )

    failures = []
    for chunk, result in zip(chunks, results):
        for row, message in sorted(result.failures.items()):
            failures.append({"row": chunk.start + row, "error": message})
    if failures:
        logger.warning("clogsim: %d of %d simulations failed; first: row %d, %s",
                       len(failures), len(X), failures[0]["row"], failures[0]["error"])
    provenance = {
        "model_fingerprint": model.fingerprint,
        "config_fingerprint": fingerprint(config_to_dict(schedule, constants, times)),
        "seed": int(seed),
        "n": int(n),
        "substeps": int(substeps),
        "tool_version": TOOL_VERSION,
    }
    return dataio.TrajectoryDataset(
        names=tuple(model.names),
        times=times,
        inputs=X,
        outputs=np.vstack([result.tau_c for result in results]),
        provenance=provenance,
        failures=tuple(failures),
    )


def calibrate_k_v(schedule: RegimeSchedule, constants: PhysicalConstants, model: InputModel,
                  target: float = CALIBRATION_TARGET, with_cleanings: bool = True, times=None) -> float:
    """k_v putting the nominal trajectory at tau_c(t_f) = target."""
    run = schedule if with_cleanings else replace(schedule, cleanings=())
    x = nominal_vector(model)

    def gap(k_v: float) -> float:
        return float(simulate(x, run, replace(constants, k_v=k_v), times).tau_c[-1]) - target

    lower, upper = constants.k_v * 1e-6, constants.k_v * 1e6
    if gap(lower) > 0 or gap(upper) < 0:
        raise NumericalError(f"clogsim: target tau_c={target} is not reachable by tuning k_v "
                             f"({'with' if with_cleanings else 'without'} cleanings)")
    return float(brentq(gap, lower, upper, xtol=1e-12, rtol=1e-10, maxiter=200))


# ---------- Derived views ----------

def clogging_increment(source, t_from: float, t_to: float):
    """tau_c(t_to) - tau_c(t_from) on the nearest grid points; one value per row for a dataset."""
    if isinstance(source, Trajectory):
        return float(source.tau_c[snap_index(t_to, source.times)] - source.tau_c[snap_index(t_from, source.times)])
    outputs = np.asarray(source.outputs)
    return outputs[:, snap_index(t_to, source.times)] - outputs[:, snap_index(t_from, source.times)]


def _cleaning_free_pieces(start: int, end: int, cleaning_indices) -> List[Tuple[int, int]]:
    """Sub-intervals of [start, end] whose endpoints are both free of a cleaning jump."""
    cuts = sorted(k for k in cleaning_indices if start < k <= end)
    pieces, left = [], start
    for cut in cuts:
        if cut - 1 > left:
            pieces.append((left, cut - 1))
        left = cut
    if end > left and end not in cuts:
        pieces.append((left, end))
    return pieces


def regime_kinetics(dataset: "dataio.TrajectoryDataset", schedule: RegimeSchedule) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Per-segment clogging speed (tau_c % per year) over cleaning-free intervals.

    Returns (summary with one row per segment, per-sample rates in long format).
    """
    data = dataset.valid()
    times = np.asarray(data.times, dtype=float)
    cleaning_indices = {snap_index(event.t, times) for event in schedule.cleanings}
    summary, samples = [], []
    for position, (segment, (start, end)) in enumerate(zip(schedule.segments, segment_bounds(schedule, times))):
        pieces = _cleaning_free_pieces(start, end, cleaning_indices)
        if not pieces:
            continue
        duration = sum(times[b] - times[a] for a, b in pieces)
        growth = sum(data.outputs[:, b] - data.outputs[:, a] for a, b in pieces)
        rates = growth / duration
        summary.append({
            "segment": position, "regime": segment.regime, "t_start": float(times[start]),
            "t_end": float(times[end]), "mean_rate": float(np.mean(rates)),
            "std_rate": float(np.std(rates, ddof=1)) if len(rates) > 1 else float("nan"), "n": int(len(rates)),
        })
        samples.append(pd.DataFrame({"segment": position, "regime": segment.regime,
                                     "row": np.arange(len(rates)), "rate": rates}))
    samples_frame = (pd.concat(samples, ignore_index=True) if samples
                     else pd.DataFrame(columns=["segment", "regime", "row", "rate"]))
    return pd.DataFrame(summary), samples_frame


# ---------- Config files ----------

def _load_json(source, kind: str) -> Tuple[Path, Dict[str, Any]]:
    path = Path(source)
    if not path.is_file():
        preset = probmodel.PRESET_DIR / f"{source}.json"
        if not preset.is_file():
            raise DataError(f"clogsim: no {kind} file or preset named {str(source)!r}")
        path = preset
    try:
        return path, json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"clogsim: {path.name} is not valid JSON (line {exc.lineno})") from None


def config_from_dict(payload: Dict[str, Any]) -> Tuple[RegimeSchedule, PhysicalConstants, np.ndarray]:
    try:
        schedule = RegimeSchedule(
            segments=tuple(Segment(float(s["t_start"]), s["species"], s["ph"]) for s in payload["segments"]),
            cleanings=tuple(CleaningEvent(float(c["t"]), c["kind"]) for c in payload.get("cleanings", [])),
            t_f=float(payload.get("t_f", DEFAULT_T_F)),
        )
        raw = dict(payload["constants"])
        constants = PhysicalConstants(
            gamma_eq={str(k): float(v) for k, v in raw.pop("gamma_eq").items()},
            soluble_flux_factor={str(k): float(v) for k, v in raw.pop("soluble_flux_factor", {}).items()},
            **{k: float(v) for k, v in raw.items()},
        )
    except KeyError as exc:
        raise DataError(f"clogsim: config is missing {exc.args[0]!r}") from None
    except TypeError as exc:
        raise DataError(f"clogsim: malformed constants ({exc})") from None
    for segment in schedule.segments:
        constants.equilibrium(segment.regime)
    times = time_grid(schedule.t_f, payload.get("n_steps", DEFAULT_N_STEPS))
    return schedule, constants, times


def load_config(source=DEFAULT_CONFIG) -> Tuple[RegimeSchedule, PhysicalConstants, np.ndarray]:
    """Schedule, constants and time grid from a JSON file path or a preset name."""
    path, payload = _load_json(source, "config")
    config = config_from_dict(payload)
    logger.debug("loaded config %s: %d segments, %d cleanings", path.name,
                 len(config[0].segments), len(config[0].cleanings))
    return config
