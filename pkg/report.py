"""Figure tables for one pipeline run, and their CSV / xlsx / SVG export."""
import datetime
import logging
from pathlib import Path
from typing import Dict, List

import matplotlib
import numpy as np
import pandas as pd
from matplotlib.figure import Figure

import checks
import clogsim
import dataio
import hsic
import pce
import probmodel
import sobol
from utils import DataError, child_seed, sanitize_for_export, sheet_name

logger = logging.getLogger(__name__)

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
SAMPLE_PATHS = 10
WORKBOOK_NAME = "report.xlsx"
WORKBOOK_CREATED = datetime.datetime(2000, 1, 1)
SVG_HASH_SALT = "clogsa"


# ---------- Tables ----------

def trajectory_table(dataset: dataio.TrajectoryDataset, sample_paths: int = SAMPLE_PATHS) -> pd.DataFrame:
    outputs = dataset.outputs
    frame = pd.DataFrame({"time": dataset.times, "mean": outputs.mean(axis=0),
                          "min": outputs.min(axis=0), "max": outputs.max(axis=0)})
    for level in QUANTILES:
        frame[f"q{int(round(level * 100)):02d}"] = np.quantile(outputs, level, axis=0)
    for row in range(min(sample_paths, dataset.n_samples)):
        frame[f"path_{row}"] = outputs[row]
    return frame


def rank_scatter_table(dataset: dataio.TrajectoryDataset, model: probmodel.InputModel,
                       midpoints: pd.DataFrame) -> pd.DataFrame:
    """Inputs in probability space against output ranks at every segment midpoint."""
    unit = probmodel.to_unit(model, dataset.inputs)
    frames = []
    for _, mid in midpoints.iterrows():
        y_rank = probmodel.rank_transform(dataset.outputs[:, int(mid["index"])])
        for j, name in enumerate(dataset.names):
            frames.append(pd.DataFrame({"segment": mid["segment"], "regime": mid["regime"], "time": mid["time"],
                                        "input": name, "x_rank": unit[:, j], "y_rank": y_rank}))
    return pd.concat(frames, ignore_index=True)


def variance_contribution_table(series: sobol.SobolTimeSeries) -> pd.DataFrame:
    frame = pd.DataFrame(series.var_contrib, columns=list(series.input_names))
    frame.insert(0, "time", series.times)
    frame["total_variance"] = series.total_variance
    return frame


def build_report(dataset: dataio.TrajectoryDataset, model: probmodel.InputModel, schedule: clogsim.RegimeSchedule,
                 seed: int, p: int = pce.DEFAULT_P, q: float = pce.DEFAULT_Q, bound: float = hsic.DEFAULT_BOUND,
                 permutations: int = hsic.DEFAULT_PERMUTATIONS, pvalue: str = None, n_jobs: int = 1,
                 splits: int = pce.DEFAULT_SPLITS,
                 train_fraction: float = pce.DEFAULT_TRAIN_FRACTION) -> Dict[str, pd.DataFrame]:
    """Every figure table of the pipeline, keyed by table name.

    The surrogate behind the Sobol' tables is fitted on one train/test split
    and scored on the held-out rows; the Q2 grids repeat that over `splits`
    random splits. ``pvalue`` overrides the p-value method of the global and
    target HSIC tables (conditional HSIC is always permutation-based).
    """
    data = dataset.valid()
    if list(model.names) != list(data.names):
        raise DataError(f"report: dataset inputs {data.names} do not match model inputs {model.names}")
    tables: Dict[str, pd.DataFrame] = {}
    midpoints = clogsim.regime_midpoints(schedule, data.times)
    tables["midpoints"] = midpoints
    tables["trajectories"] = trajectory_table(data)
    tables["kinetics"], tables["kinetics_samples"] = clogsim.regime_kinetics(data, schedule)
    tables["rank_scatter"] = rank_scatter_table(data, model, midpoints)

    train, test = dataio.split(data, train_fraction, child_seed(seed, 0))
    surrogate = pce.fit(train, model, p, q, n_jobs=n_jobs)
    fit_report = pce.q2(surrogate, test)
    tables["q2_timeseries"] = fit_report.per_timestep
    logger.info("report: surrogate mean Q2 %.4f on %d test rows", fit_report.q2_mean, test.n_samples)
    tables["q2_qnorm_grid"] = pce.cross_validate(data, model, [2], pce.QNORM_GRID, splits, train_fraction,
                                                 child_seed(seed, 1), n_jobs=n_jobs)
    tables["q2_degree_grid"] = pce.cross_validate(data, model, pce.DEGREE_GRID, [pce.DEFAULT_Q], splits,
                                                  train_fraction, child_seed(seed, 1), n_jobs=n_jobs)

    series = sobol.sobol_timeseries(surrogate)
    tables["sobol"] = series.to_frame()
    tables["variance_contribution"] = variance_contribution_table(series)

    hsic_options = dict(bound=bound, permutations=permutations, n_jobs=n_jobs)
    tables["hsic_global"] = hsic.hsic_timeseries(data, hsic.GLOBAL, method=pvalue, seed=child_seed(seed, 2),
                                                 **hsic_options)
    tables["hsic_target"] = hsic.hsic_timeseries(data, hsic.TARGET, method=pvalue, seed=child_seed(seed, 3),
                                                 **hsic_options)
    tables["hsic_conditional"] = hsic.hsic_timeseries(data, hsic.CONDITIONAL, seed=child_seed(seed, 4),
                                                      **hsic_options)

    tables["checks"] = checks.run_checks(tables, {"names": list(data.names), "bound": bound})
    return tables


# ---------- Export ----------

def _save_svg(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def _line_plot(frame: pd.DataFrame, x: str, columns: List[str], title: str, ylabel: str, path: Path) -> Path:
    fig = Figure(figsize=(8, 4.5))
    ax = fig.subplots()
    for column in columns:
        ax.plot(frame[x], frame[column], label=column, linewidth=1.2)
    ax.set_title(title)
    ax.set_xlabel("time (yr)")
    ax.set_ylabel(ylabel)
    if len(columns) > 1:
        ax.legend(fontsize="small", ncol=2)
    fig.tight_layout()
    return _save_svg(fig, path)


def _box_plot(groups: Dict[str, np.ndarray], title: str, ylabel: str, path: Path) -> Path:
    labels = [label for label, values in groups.items() if len(values)]
    fig = Figure(figsize=(8, 4.5))
    ax = fig.subplots()
    if labels:
        ax.boxplot([groups[label] for label in labels])
        ax.set_xticks(range(1, len(labels) + 1), labels)
    ax.set_title(title)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    return _save_svg(fig, path)


def _long_to_wide(frame: pd.DataFrame, value: str) -> pd.DataFrame:
    wide = frame.pivot_table(index="time", columns="input", values=value, aggfunc="first", dropna=False, sort=False)
    return wide.reset_index()


def write_figures(tables: Dict[str, pd.DataFrame], out_dir: Path) -> List[Path]:
    matplotlib.rcParams["svg.hashsalt"] = SVG_HASH_SALT
    written = []
    if "trajectories" in tables:
        frame = tables["trajectories"]
        paths = [c for c in frame.columns if c.startswith("path_")]
        written.append(_line_plot(frame, "time", ["q05", "q50", "q95", *paths], "Clogging trajectories",
                                  "clogging rate (%)", out_dir / "trajectories.svg"))
    if "kinetics_samples" in tables and not tables["kinetics_samples"].empty:
        samples = tables["kinetics_samples"]
        groups = {regime: samples.loc[samples["regime"] == regime, "rate"].to_numpy()
                  for regime in samples["regime"].drop_duplicates()}
        written.append(_box_plot(groups, "Clogging kinetics per regime", "clogging %/yr", out_dir / "kinetics.svg"))
    for name, key in (("q2_qnorm_grid", "q"), ("q2_degree_grid", "p")):
        if name in tables and not tables[name].empty:
            grid = tables[name]
            groups = {f"{key}={value:g}": grid.loc[grid[key] == value, "q2_mean"].dropna().to_numpy()
                      for value in grid[key].drop_duplicates()}
            written.append(_box_plot(groups, f"Mean Q2 over splits ({key} grid)", "Q2", out_dir / f"{name}.svg"))
    if "q2_timeseries" in tables:
        written.append(_line_plot(tables["q2_timeseries"], "time", ["q2"], "Test-set Q2", "Q2",
                                  out_dir / "q2_timeseries.svg"))
    if "sobol" in tables:
        wide = _long_to_wide(tables["sobol"], "S1")
        columns = [c for c in wide.columns if c != "time"]
        written.append(_line_plot(wide, "time", columns, "First-order Sobol' indices", "S1",
                                  out_dir / "sobol_first_order.svg"))
        total = _long_to_wide(tables["sobol"][tables["sobol"]["input"] != sobol.INTERACTION_LABEL], "ST")
        written.append(_line_plot(total, "time", [c for c in total.columns if c != "time"],
                                  "Total-order Sobol' indices", "ST", out_dir / "sobol_total_order.svg"))
    if "variance_contribution" in tables:
        frame = tables["variance_contribution"]
        columns = [c for c in frame.columns if c not in ("time", "total_variance")]
        written.append(_line_plot(frame, "time", columns, "Variance contribution per input", "clogging %^2",
                                  out_dir / "variance_contribution.svg"))
    for variant in hsic.VARIANTS:
        name = f"hsic_{variant}"
        if name in tables and not tables[name].empty:
            wide = _long_to_wide(tables[name], "index")
            written.append(_line_plot(wide, "time", [c for c in wide.columns if c != "time"],
                                      f"Normalized {variant} HSIC", "R2 HSIC", out_dir / f"{name}.svg"))
    return written


def write_report(tables: Dict[str, pd.DataFrame], out_dir) -> List[Path]:
    """One CSV per table, report.xlsx with one sheet per table, SVG figures."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, frame in tables.items():
        path = out_dir / f"{name}.csv"
        frame.to_csv(path, index=False, lineterminator="\n")
        written.append(path)

    workbook = out_dir / WORKBOOK_NAME
    with pd.ExcelWriter(workbook, engine="xlsxwriter") as writer:
        writer.book.set_properties({"title": "Clogging sensitivity report", "created": WORKBOOK_CREATED})
        for name, frame in tables.items():
            export_df = sanitize_for_export(frame, max_text_chars=4000)
            export_df.to_excel(writer, sheet_name=sheet_name(name), index=False)
    written.append(workbook)

    written.extend(write_figures(tables, out_dir))
    logger.info("report: wrote %d files to %s", len(written), out_dir)
    return written
