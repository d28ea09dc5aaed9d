"""Checks on surrogate predictivity.

See checks/__init__.py for the check signature.
"""
from typing import Any, Dict

import pandas as pd

Q2_THRESHOLD = 0.9


def check_Q01(tables: Dict[str, pd.DataFrame], ctx: Dict[str, Any] = None) -> pd.DataFrame:
    """mean test-set Q2 below 0.9 (Error · Timestep)
    Averaged over the timesteps where Q2 is defined. When the mean falls
    short, every timestep under the threshold is reported.
    """
    frame = tables["q2_timeseries"]
    values = frame["q2"].astype(float)
    if values.notna().any() and values.mean(skipna=True) >= Q2_THRESHOLD:
        return frame.iloc[0:0][["time", "q2"]]
    return frame.loc[~(values >= Q2_THRESHOLD), ["time", "q2"]].reset_index(drop=True)


def check_Q02(tables: Dict[str, pd.DataFrame], ctx: Dict[str, Any] = None) -> pd.DataFrame:
    """cross-validation cells that failed to fit (Warning · Cell)"""
    frames = [tables[name] for name in ("q2_qnorm_grid", "q2_degree_grid") if name in tables]
    if not frames:
        return pd.DataFrame(columns=["p", "q", "split", "error"])
    grid = pd.concat(frames, ignore_index=True)
    failed = grid["error"].fillna("").astype(str).str.len() > 0
    return grid.loc[failed, ["p", "q", "split", "error"]].reset_index(drop=True)


CHECKS = {
    "Q01": check_Q01,
    "Q02": check_Q02,
}
