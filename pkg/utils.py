import hashlib
import json
from typing import Any, Sequence

import numpy as np
import pandas as pd

TOOL_VERSION = "0.3.0"
EXCEL_SHEET_NAME_MAX = 31


class ClogsaError(RuntimeError):
    """Base class for every failure the toolkit reports to the command line."""


class DataError(ClogsaError, ValueError):
    """Malformed files, inconsistent shapes, or arguments outside their domain."""


class NumericalError(ClogsaError, ArithmeticError):
    """Quadrature non-convergence, rank-deficient designs, non-finite ODE states."""


def _json_default(value: Any):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def canonical_json(payload: Any, indent: int = None) -> str:
    """Serialize with sorted keys and shortest round-trip floats.

    Identical payloads always produce identical text, which is what the
    fingerprints and byte-stable artifact files rely on.
    """
    return json.dumps(payload, sort_keys=True, indent=indent, separators=(",", ": ") if indent else (",", ":"),
                      default=_json_default, allow_nan=True)


def fingerprint(payload: Any) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def child_seed(seed: int, *keys: int) -> int:
    """Deterministic 32-bit seed for a sub-task (batch, split, grid cell)."""
    return int(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]).generate_state(1)[0])


def resolve_input(names: Sequence[str], key) -> int:
    """Map an input name or a 0-based position to its column index."""
    if isinstance(key, (int, np.integer)) and not isinstance(key, bool):
        if not 0 <= int(key) < len(names):
            raise DataError(f"input index {key} outside 0..{len(names) - 1}")
        return int(key)
    try:
        return list(names).index(str(key))
    except ValueError:
        raise DataError(f"unknown input {key!r}; expected one of {', '.join(names)}") from None


def sanitize_for_export(df: pd.DataFrame, drop_columns=None, max_text_chars: int = 8000) -> pd.DataFrame:
    """Return a DataFrame safe for the xlsx workbook.

    Diagnostic columns listed in drop_columns are removed, long text fields
    (failure messages, offending-row dumps) are shortened, and non-finite
    floats become empty cells since xlsxwriter refuses NaN/inf.
    """
    export_df = df.copy()
    drop_columns = set(drop_columns or [])

    for column in list(drop_columns):
        if column in export_df.columns:
            export_df = export_df.drop(columns=[column])

    for column in export_df.columns:
        if pd.api.types.is_float_dtype(export_df[column]):
            export_df[column] = export_df[column].replace([np.inf, -np.inf], np.nan).astype(object)
            export_df.loc[export_df[column].isna(), column] = None
            continue
        if not pd.api.types.is_object_dtype(export_df[column]):
            continue

        def _shorten(value):
            if isinstance(value, str) and len(value) > max_text_chars:
                return value[:max_text_chars] + "… [truncated]"
            return value

        export_df[column] = export_df[column].apply(_shorten)

    return export_df


def sheet_name(name: str) -> str:
    return name.replace("_", " ").title()[:EXCEL_SHEET_NAME_MAX]
