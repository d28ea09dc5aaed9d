"""Registry of designed-scenario diagnostics run on the report tables.

Every check has the signature (tables, ctx) -> DataFrame and returns the
offending rows (timesteps, midpoints, segments or grid cells), empty when the
check passes. ``tables`` is the dict built by report.build_report(); ``ctx``
carries run-level facts (input names, the target bound). The first docstring
line of a check reads "<description> (<Severity> · <Scope>)"; run_checks()
turns it into the description and severity columns of the checks table.

The checks encode what the shipped default preset is designed to show:
a predictive surrogate, near-additive behaviour, agreement between the
variance-based and kernel-based rankings, the transfer of influence to the
deposit porosity after the species change, and slower clogging under high pH.
They are diagnostics, not failures: the report is written either way.

To add a check: write check_<ID> in the relevant category module and list
it in that module's CHECKS dict.
"""
import logging
import re
from typing import Any, Dict

import pandas as pd

from utils import ClogsaError

from . import kinetics, sensitivity, surrogate

logger = logging.getLogger(__name__)

CHECKS = {
    **surrogate.CHECKS,
    **sensitivity.CHECKS,
    **kinetics.CHECKS,
}

SEVERITY_WEIGHTS = {
    "Error": 3,
    "Warning": 2,
    "Notice": 1,
}

_HEADLINE = re.compile(r"^(?P<description>.*?)\s*\((?P<severity>\w+) · (?P<scope>[\w ]+)\)\s*$")


def describe(check) -> Dict[str, str]:
    lines = (check.__doc__ or "").strip().splitlines()
    headline = lines[0] if lines else ""
    match = _HEADLINE.match(headline)
    if not match:
        return {"description": headline, "severity": "Notice", "scope": ""}
    return match.groupdict()


def run_checks(tables: Dict[str, pd.DataFrame], ctx: Dict[str, Any] = None) -> pd.DataFrame:
    """One row per registered check: passed flag, offending row count and a short note."""
    ctx = ctx or {}
    rows = []
    for check_id, check in CHECKS.items():
        meta = describe(check)
        try:
            offending = check(tables, ctx)
            passed, count = offending.empty, int(len(offending))
            notes = "" if passed else "; ".join(str(row) for row in offending.head(5).to_dict("records"))
        except (KeyError, ClogsaError) as exc:
            logger.warning("check %s skipped: %s", check_id, exc)
            passed, count, notes = None, 0, f"skipped: {exc}"
        rows.append({
            "check_id": check_id,
            "description": meta["description"],
            "severity": meta["severity"],
            "passed": passed,
            "offending": count,
            "weight": SEVERITY_WEIGHTS.get(meta["severity"], 1),
            "notes": notes,
        })
    return pd.DataFrame(rows, columns=["check_id", "description", "severity", "passed", "offending", "weight", "notes"])
