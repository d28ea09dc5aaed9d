"""Checks on the Sobol' and HSIC sensitivity tables at the regime midpoints.

See checks/__init__.py for the check signature.
"""
from typing import Any, Dict, List

import numpy as np
import pandas as pd

import hsic
from sobol import INTERACTION_LABEL

TOP_K = 3
INTERACTION_LIMIT = 0.1
ADDITIVE_SHARE = 0.9
LOW_PH_REGIME = "chi1/low"
LOW_PH_LEADERS = {"d_p", "a_v", "gamma_p0"}
HIGH_PH_REGIME = "chi2/high"
POROSITY = "eps_c"


def _at(frame: pd.DataFrame, time: float) -> pd.DataFrame:
    return frame[np.isclose(frame["time"].to_numpy(dtype=float), time)]


def sobol_ranking(tables: Dict[str, pd.DataFrame], time: float) -> List[str]:
    rows = _at(tables["sobol"], time)
    rows = rows[rows["input"] != INTERACTION_LABEL]
    return rows.sort_values("S1", ascending=False, na_position="last", kind="mergesort")["input"].tolist()


def hsic_ranking(tables: Dict[str, pd.DataFrame], time: float, variant: str = "global") -> List[str]:
    return hsic.ranking_at(tables[f"hsic_{variant}"], time)


def _midpoint(tables: Dict[str, pd.DataFrame], regime: str) -> pd.Series:
    midpoints = tables["midpoints"]
    match = midpoints[midpoints["regime"] == regime]
    if match.empty:
        raise KeyError(f"no segment with regime {regime}")
    return match.iloc[0]


def check_S01(tables: Dict[str, pd.DataFrame], ctx: Dict[str, Any] = None) -> pd.DataFrame:
    """Sobol' and HSIC top-3 inputs disagree (Warning · Midpoint)
    Compares the first-order Sobol' ranking with the global R2-HSIC ranking
    as sets of the three leading inputs at every segment midpoint.
    """
    rows = []
    for _, mid in tables["midpoints"].iterrows():
        by_sobol = sobol_ranking(tables, mid["time"])[:TOP_K]
        by_hsic = hsic_ranking(tables, mid["time"])[:TOP_K]
        if set(by_sobol) != set(by_hsic):
            rows.append({"regime": mid["regime"], "time": mid["time"],
                         "sobol_top": ",".join(by_sobol), "hsic_top": ",".join(by_hsic)})
    return pd.DataFrame(rows, columns=["regime", "time", "sobol_top", "hsic_top"])


def check_S02(tables: Dict[str, pd.DataFrame], ctx: Dict[str, Any] = None) -> pd.DataFrame:
    """interaction residual above 0.1 at more than 10% of timesteps (Warning · Timestep)
    Only timesteps with a defined residual count. When the share of
    near-additive timesteps is too low, the offending timesteps are listed.
    """
    frame = tables["sobol"]
    residual = frame[frame["input"] == INTERACTION_LABEL][["time", "S1"]].rename(columns={"S1": "S_star"})
    defined = residual["S_star"].notna()
    if not defined.any():
        return residual.iloc[0:0]
    additive = (residual.loc[defined, "S_star"] <= INTERACTION_LIMIT).mean()
    if additive >= ADDITIVE_SHARE:
        return residual.iloc[0:0]
    return residual[defined & (residual["S_star"] > INTERACTION_LIMIT)].reset_index(drop=True)


def check_S03(tables: Dict[str, pd.DataFrame], ctx: Dict[str, Any] = None) -> pd.DataFrame:
    """deposit porosity outside the first-order top-2 after the species change (Notice · Midpoint)"""
    mid = _midpoint(tables, HIGH_PH_REGIME)
    ranking = sobol_ranking(tables, mid["time"])
    if POROSITY in ranking[:2]:
        return pd.DataFrame(columns=["regime", "time", "ranking"])
    return pd.DataFrame([{"regime": mid["regime"], "time": mid["time"], "ranking": ",".join(ranking)}])


def check_S04(tables: Dict[str, pd.DataFrame], ctx: Dict[str, Any] = None) -> pd.DataFrame:
    """particle-flux inputs not leading in the low-pH regime (Notice · Midpoint)
    Expects d_p, a_v and gamma_p0 as the three leading first-order inputs.
    """
    mid = _midpoint(tables, LOW_PH_REGIME)
    ranking = sobol_ranking(tables, mid["time"])
    if set(ranking[:TOP_K]) == LOW_PH_LEADERS:
        return pd.DataFrame(columns=["regime", "time", "ranking"])
    return pd.DataFrame([{"regime": mid["regime"], "time": mid["time"], "ranking": ",".join(ranking)}])


CHECKS = {
    "S01": check_S01,
    "S02": check_S02,
    "S03": check_S03,
    "S04": check_S04,
}
