"""Checks on the simulated trajectories and their per-regime kinetics.

See checks/__init__.py for the check signature.
"""
from typing import Any, Dict

import pandas as pd

FAST_REGIME = "chi1/low"
SLOW_REGIME = "chi2/high"
TAU_RANGE = (0.0, 100.0)


def check_K01(tables: Dict[str, pd.DataFrame], ctx: Dict[str, Any] = None) -> pd.DataFrame:
    """no clogging deceleration in the high-pH regime (Warning · Segment)
    Mean clogging speed over cleaning-free intervals must be lower in the
    chi2/high-pH segment than in the chi1/low-pH segment.
    """
    kinetics = tables["kinetics"]
    fast = kinetics[kinetics["regime"] == FAST_REGIME]
    slow = kinetics[kinetics["regime"] == SLOW_REGIME]
    if fast.empty or slow.empty:
        raise KeyError(f"kinetics table lacks {FAST_REGIME} or {SLOW_REGIME}")
    if slow["mean_rate"].mean() < fast["mean_rate"].mean():
        return kinetics.iloc[0:0][["regime", "mean_rate"]]
    return pd.concat([fast, slow])[["regime", "mean_rate"]].reset_index(drop=True)


def check_K02(tables: Dict[str, pd.DataFrame], ctx: Dict[str, Any] = None) -> pd.DataFrame:
    """clogging rate outside [0, 100] (Error · Timestep)"""
    frame = tables["trajectories"]
    low, high = TAU_RANGE
    mask = (frame["min"] < low) | (frame["max"] > high)
    return frame.loc[mask, ["time", "min", "max"]].reset_index(drop=True)


CHECKS = {
    "K01": check_K01,
    "K02": check_K02,
}
