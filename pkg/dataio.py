"""Trajectory datasets and surrogate files.

A dataset is one CSV with a header of ``x:<name>`` input columns followed by
``y:t=<time>`` output columns, every float written as its shortest round-trip
decimal, plus a ``<stem>.provenance.json`` sidecar holding the provenance and
the failure ledger. A surrogate is a single canonical JSON document.
"""
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

import pce
from orthopoly import Recurrence, TensorBasis
from probmodel import InputModel
from utils import DataError, canonical_json, file_sha256

logger = logging.getLogger(__name__)

INPUT_PREFIX = "x:"
OUTPUT_PREFIX = "y:t="
PROVENANCE_SUFFIX = ".provenance.json"
SURROGATE_FORMAT = "clogsa-surrogate"
SURROGATE_VERSION = "1.0"


@dataclass(frozen=True, eq=False)
class TrajectoryDataset:
    names: Tuple[str, ...]
    times: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    provenance: Dict[str, Any] = field(default_factory=dict)
    failures: Tuple[Dict[str, Any], ...] = ()
    provenance_missing: bool = False

    def __post_init__(self):
        inputs, outputs = np.asarray(self.inputs), np.asarray(self.outputs)
        times = np.asarray(self.times, dtype=float)
        if inputs.ndim != 2 or inputs.shape[1] != len(self.names):
            raise DataError(f"dataio: inputs must be n x {len(self.names)} (got {inputs.shape})")
        if outputs.ndim != 2 or outputs.shape != (inputs.shape[0], len(times)):
            raise DataError(f"dataio: outputs must be {inputs.shape[0]} x {len(times)} (got {outputs.shape})")
        if len(times) and (not np.all(np.isfinite(times)) or np.any(np.diff(times) <= 0)):
            raise DataError("dataio: timesteps must be finite and strictly increasing")
        failed = self.failed_rows
        if any(not 0 <= row < inputs.shape[0] for row in failed):
            raise DataError("dataio: failure ledger refers to rows outside the dataset")
        for label, matrix, columns in (("input", inputs, list(self.names)),
                                       ("output", outputs, [f"t={t!r}" for t in times.tolist()])):
            bad = np.argwhere(~np.isfinite(matrix))
            bad = [(r, c) for r, c in bad.tolist() if r not in failed]
            if bad:
                row, col = bad[0]
                raise DataError(f"dataio: non-finite {label} value at row {row}, column {columns[col]} "
                                f"not listed in the failure ledger")

    @property
    def n_samples(self) -> int:
        return int(np.asarray(self.inputs).shape[0])

    @property
    def failed_rows(self) -> set:
        return {int(entry["row"]) for entry in self.failures}

    def subset(self, rows: Sequence[int]) -> "TrajectoryDataset":
        rows = np.asarray(rows, dtype=int)
        position = {int(old): new for new, old in enumerate(rows.tolist())}
        failures = tuple(dict(entry, row=position[int(entry["row"])])
                         for entry in self.failures if int(entry["row"]) in position)
        return replace(self, inputs=np.asarray(self.inputs)[rows], outputs=np.asarray(self.outputs)[rows],
                       failures=failures)

    def valid(self) -> "TrajectoryDataset":
        """The rows absent from the failure ledger."""
        if not self.failures:
            return self
        failed = self.failed_rows
        return self.subset([row for row in range(self.n_samples) if row not in failed])


# ---------- Datasets ----------

def _format_float(value: float) -> str:
    return repr(float(value))


def provenance_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + PROVENANCE_SUFFIX)


def save_dataset(dataset: TrajectoryDataset, path) -> List[Path]:
    """Write the CSV and its provenance sidecar; returns both paths."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ([INPUT_PREFIX + name for name in dataset.names]
              + [OUTPUT_PREFIX + _format_float(t) for t in np.asarray(dataset.times).tolist()])
    values = np.hstack([np.asarray(dataset.inputs, dtype=float), np.asarray(dataset.outputs, dtype=float)])
    body = pd.DataFrame(values, columns=header)
    body = body.apply(lambda column: column.map(_format_float))
    body.to_csv(path, index=False, lineterminator="\n")

    sidecar = provenance_path(path)
    sidecar.write_text(canonical_json({"provenance": dataset.provenance, "failures": list(dataset.failures)},
                                      indent=2) + "\n", encoding="utf-8")
    return [path, sidecar]


def _parse_header(columns: List[str], path: Path) -> Tuple[List[str], np.ndarray]:
    names, times = [], []
    for position, column in enumerate(columns):
        if column.startswith(INPUT_PREFIX):
            if times:
                raise DataError(f"dataio: {path.name} column {position + 1} ({column!r}) is an input after the outputs")
            names.append(column[len(INPUT_PREFIX):])
        elif column.startswith(OUTPUT_PREFIX):
            try:
                times.append(float(column[len(OUTPUT_PREFIX):]))
            except ValueError:
                raise DataError(f"dataio: {path.name} column {position + 1} has a malformed time {column!r}") from None
        else:
            raise DataError(f"dataio: {path.name} column {position + 1} ({column!r}) is neither x:<name> nor y:t=<time>")
    if not names or not times:
        raise DataError(f"dataio: {path.name} needs at least one input and one output column")
    return names, np.array(times)


def load_dataset(path) -> TrajectoryDataset:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataio: dataset {str(path)!r} not found")
    try:
        frame = pd.read_csv(path, float_precision="round_trip", dtype=float)
    except pd.errors.ParserError as exc:
        raise DataError(f"dataio: {path.name} has a row whose column count differs from the header ({exc})") from None
    except ValueError as exc:
        raise DataError(f"dataio: {path.name} holds a non-numeric cell ({exc})") from None
    names, times = _parse_header([str(c) for c in frame.columns], path)
    values = frame.to_numpy(dtype=float)

    sidecar = provenance_path(path)
    provenance, failures, missing = {}, (), False
    if sidecar.is_file():
        try:
            payload = json.loads(sidecar.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"dataio: {sidecar.name} is not valid JSON (line {exc.lineno})") from None
        provenance = dict(payload.get("provenance") or {})
        failures = tuple(payload.get("failures") or ())
    else:
        missing = True
        logger.warning("dataio: %s has no provenance sidecar; loading without provenance", path.name)

    return TrajectoryDataset(
        names=tuple(names),
        times=times,
        inputs=values[:, :len(names)],
        outputs=values[:, len(names):],
        provenance=provenance,
        failures=failures,
        provenance_missing=missing,
    )


def dataset_hash(path) -> str:
    """sha256 of the CSV bytes."""
    return file_sha256(path)


def split(dataset: TrajectoryDataset, train_fraction: float, seed: int) -> Tuple[TrajectoryDataset, TrajectoryDataset]:
    """Random train/test partition of the valid rows: ceil(f n) training rows."""
    if not 0 < train_fraction < 1:
        raise DataError(f"dataio: train_fraction must lie strictly between 0 and 1 (got {train_fraction})")
    data = dataset.valid()
    n = data.n_samples
    if n < 2:
        raise DataError(f"dataio: cannot split {n} sample(s)")
    order = np.random.default_rng(seed).permutation(n)
    n_train = math.ceil(round(train_fraction * n, 9))
    return data.subset(np.sort(order[:n_train])), data.subset(np.sort(order[n_train:]))


# ---------- Surrogates ----------

def surrogate_to_dict(s: "pce.SparsePceSurrogate") -> Dict[str, Any]:
    diagnostics = None
    if s.diagnostics is not None:
        diagnostics = {column: s.diagnostics[column].tolist() for column in ("n_terms", "loo_error", "strategy")}
    return {
        "format": SURROGATE_FORMAT,
        "version": SURROGATE_VERSION,
        "input_names": list(s.input_names),
        "times": [float(t) for t in np.asarray(s.times)],
        "p": int(s.basis.p),
        "q": float(s.basis.q),
        "recurrences": [rec.to_dict() for rec in s.basis.recurrences],
        "multi_indices": np.asarray(s.basis.indices).tolist(),
        "coefficients": np.asarray(s.coefficients, dtype=float).tolist(),
        "model_fingerprint": s.model_fingerprint,
        "provenance": s.provenance,
        "diagnostics": diagnostics,
    }


def save_surrogate(s: "pce.SparsePceSurrogate", path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(surrogate_to_dict(s), indent=2) + "\n", encoding="utf-8")
    return path


def surrogate_from_dict(payload: Dict[str, Any]) -> "pce.SparsePceSurrogate":
    if payload.get("format") != SURROGATE_FORMAT:
        raise DataError(f"dataio: not a {SURROGATE_FORMAT} document")
    version = str(payload.get("version", ""))
    if version.split(".")[0] != SURROGATE_VERSION.split(".")[0]:
        raise DataError(f"dataio: surrogate version {version!r} is incompatible with {SURROGATE_VERSION}")
    try:
        indices = np.asarray(payload["multi_indices"], dtype=int)
        times = np.asarray(payload["times"], dtype=float)
        rows = payload["coefficients"]
        for k, row in enumerate(rows):
            if len(row) != len(indices):
                raise DataError(f"dataio: coefficient row {k} has {len(row)} entries for {len(indices)} basis terms")
        basis = TensorBasis(
            recurrences=tuple(Recurrence.from_dict(rec) for rec in payload["recurrences"]),
            indices=indices,
            p=int(payload["p"]),
            q=float(payload["q"]),
        )
        diagnostics = payload.get("diagnostics")
        frame = None
        if diagnostics:
            frame = pd.DataFrame({"time": times, **{key: diagnostics[key] for key in ("n_terms", "loo_error", "strategy")}})
        return pce.SparsePceSurrogate(
            basis=basis,
            coefficients=np.asarray(rows, dtype=float).reshape(len(rows), len(indices)),
            times=times,
            input_names=tuple(payload["input_names"]),
            model_fingerprint=str(payload.get("model_fingerprint", "")),
            provenance=dict(payload.get("provenance") or {}),
            diagnostics=frame,
        )
    except KeyError as exc:
        raise DataError(f"dataio: surrogate document is missing {exc.args[0]!r}") from None


def load_surrogate(path, model: InputModel = None) -> "pce.SparsePceSurrogate":
    """Read a surrogate; with a model, warn when it was fitted under a different one."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataio: surrogate {str(path)!r} not found")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"dataio: {path.name} is not valid JSON (line {exc.lineno})") from None
    surrogate = surrogate_from_dict(payload)
    if model is not None:
        check_fingerprint(surrogate, model)
    return surrogate


def check_fingerprint(s: "pce.SparsePceSurrogate", model: InputModel) -> bool:
    if s.model_fingerprint and s.model_fingerprint != model.fingerprint:
        logger.warning("dataio: surrogate was fitted under a different input model (fingerprint %s..., now %s...)",
                       s.model_fingerprint[:12], model.fingerprint[:12])
        return False
    return True
