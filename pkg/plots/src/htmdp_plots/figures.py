"""Deterministic static figures for ``htmdp`` CLI output files.

Each figure kind consumes the documented files only::

    certify  certify_pairs.csv + certify_summary.json
    tubes    tubes.csv
    gap      geometry_profile.csv
    regret   one or more trace_*.csv
    hyper    one or more trace_*.csv

:func:`render` draws the requested figure and writes a PNG.  Rendering is
deterministic: the style is pinned through an explicit rc context, the PNG
metadata is fixed, and nothing time- or host-dependent is drawn, so
identical inputs produce identical image bytes.

Figures display data, they do not recompute science.  The only derived
statistic shown — the median bound/true ratio over regular pairs on the
certify figure — is plain arithmetic over CSV cells (select rows with a
non-empty ``ratio`` whose segment avoids every kink window, take the
median) and is asserted against the summary JSON value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.figure import Figure

from .schema import (
    CERTIFY_PAIR_COLUMNS,
    PROFILE_COLUMNS,
    TRACE_COLUMNS,
    TUBE_COLUMNS,
    column,
    read_certify_summary,
    read_table,
)

__all__ = ["FigureSpec", "PlotError", "FIGURE_KINDS", "render", "certify_ratio_stats"]

FIGURE_KINDS = ("certify", "tubes", "gap", "regret", "hyper")

#: Tolerance for the displayed-vs-summary ratio cross-check.
RATIO_TOL = 1e-9

_DPI = 100
_METADATA = {"Software": "htmdp-plots"}
_STYLE = {
    "figure.figsize": (8.0, 6.0),
    "figure.dpi": _DPI,
    "savefig.dpi": _DPI,
    "font.family": "DejaVu Sans",
    "font.size": 9.0,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "lines.markersize": 4.0,
    "legend.fontsize": 8.0,
    "legend.framealpha": 0.9,
    "svg.hashsalt": "htmdp-plots",
}


class PlotError(ValueError):
    """A figure request that cannot be satisfied (bad kind, paths, inputs)."""


@dataclass(frozen=True)
class FigureSpec:
    """One figure request: input files, figure kind, output image path."""

    kind: str
    inputs: tuple[Path, ...]
    output: Path

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", tuple(Path(p) for p in self.inputs))
        object.__setattr__(self, "output", Path(self.output))
        if self.kind not in FIGURE_KINDS:
            raise PlotError(f"unknown figure kind {self.kind!r} (choose from {FIGURE_KINDS})")
        if not self.inputs:
            raise PlotError("spec has no input files")
        if self.output.suffix.lower() != ".png":
            raise PlotError(f"output must be a .png path, got {self.output}")


def certify_ratio_stats(
    rows: Sequence[Mapping[str, Any]], summary: Mapping[str, Any]
) -> dict[str, float | int]:
    """Recompute the regular-pair ratio statistic from CSV cells.

    A pair row is *measurable* when its ``ratio`` cell is non-empty and
    *regular* when, additionally, the segment ``[tau0, tau1]`` does not
    straddle any kink window from the summary (``tau0 <= hi and tau1 >= lo``).
    Returns the count of regular pairs and the median of their ratios
    (NaN when there are none).
    """
    windows = [tuple(kink["window"]) for kink in summary["kinks"]]
    values = [
        row["ratio"]
        for row in rows
        if not math.isnan(row["ratio"])
        and not any(row["tau0"] <= hi and row["tau1"] >= lo for lo, hi in windows)
    ]
    median = float(np.median(values)) if values else math.nan
    return {"regular_pairs": len(values), "median_ratio_regular": median}


def _finish(fig: Figure, axes: Sequence[plt.Axes], meta: dict[str, Any]) -> dict[str, Any]:
    meta["legends"] = []
    for ax in axes:
        handles, labels = ax.get_legend_handles_labels()
        if labels:
            ax.legend(loc="best")
        meta["legends"].append(labels)
    fig.tight_layout()
    return meta


def _warn_empty(ax: plt.Axes, message: str, meta: dict[str, Any]) -> None:
    ax.text(
        0.5,
        0.5,
        f"warning: {message}",
        transform=ax.transAxes,
        ha="center",
        va="center",
        color="darkred",
    )
    meta["warning"] = message


def _split_certify_inputs(inputs: Sequence[Path]) -> tuple[Path, Path]:
    csvs = [p for p in inputs if p.suffix == ".csv"]
    jsons = [p for p in inputs if p.suffix == ".json"]
    if len(csvs) != 1 or len(jsons) != 1 or len(inputs) != 2:
        raise PlotError(
            "certify figures need exactly one pairs CSV and one summary JSON, got "
            f"{[str(p) for p in inputs]}"
        )
    return csvs[0], jsons[0]


def _build_certify(inputs: Sequence[Path]) -> tuple[Figure, dict[str, Any]]:
    pairs_path, summary_path = _split_certify_inputs(inputs)
    rows = read_table(pairs_path, CERTIFY_PAIR_COLUMNS)
    summary = read_certify_summary(summary_path)
    meta: dict[str, Any] = {"kind": "certify", "rows": len(rows)}

    fig, ax = plt.subplots()
    ax.set_xlabel("tau1")
    ax.set_ylabel("drift from first tau0")
    ax.set_title("true drift vs certified bound (pairs anchored at the first tau0)")

    if not rows:
        _warn_empty(ax, f"no data rows in {pairs_path.name}", meta)
        return fig, _finish(fig, [ax], meta)

    tau0 = np.array(column(rows, "tau0"))
    anchor = tau0.min()
    at_anchor = [row for row in rows if row["tau0"] == anchor]
    x = np.array(column(at_anchor, "tau1"))
    for name in ("true_drift", "bound", "pl_term", "curv_term", "phi_term"):
        ax.plot(x, np.array(column(at_anchor, name)), label=name)
    for kink in summary["kinks"]:
        lo, hi = kink["window"]
        ax.axvspan(lo, hi, color="0.85", zorder=0)

    stats = certify_ratio_stats(rows, summary)
    reported = summary["median_ratio_regular"]
    if reported is not None and not math.isclose(
        stats["median_ratio_regular"], reported, rel_tol=0.0, abs_tol=RATIO_TOL
    ):
        raise PlotError(
            f"ratio recomputed from {pairs_path.name} is {stats['median_ratio_regular']!r} "
            f"but {summary_path.name} reports {reported!r}"
        )
    note = (
        f"median_ratio_regular = {stats['median_ratio_regular']!r} "
        f"over {stats['regular_pairs']} regular pairs"
    )
    fig.text(0.01, 0.01, note, fontsize=8)
    meta["stats"] = stats
    meta["note"] = note
    return fig, _finish(fig, [ax], meta)


def _build_tubes(inputs: Sequence[Path]) -> tuple[Figure, dict[str, Any]]:
    if len(inputs) != 1:
        raise PlotError(f"tubes figures take exactly one CSV, got {len(inputs)}")
    rows = read_table(inputs[0], TUBE_COLUMNS)
    meta: dict[str, Any] = {"kind": "tubes", "rows": len(rows)}

    fig, (ax_iv, ax_dev) = plt.subplots(2, 1, sharex=True)
    ax_iv.set_ylabel("tube interval endpoints")
    ax_iv.set_title("feasible tubes per (tau0, eps) row")
    ax_dev.set_ylabel("deviation / radius")
    ax_dev.set_xlabel("row index (tau0, eps)")

    if not rows:
        _warn_empty(ax_iv, f"no data rows in {inputs[0].name}", meta)
        return fig, _finish(fig, [ax_iv, ax_dev], meta)

    x = np.arange(len(rows))
    for name in ("first_lo", "first_hi", "second_lo", "second_hi"):
        ax_iv.plot(x, np.array(column(rows, name)), marker="o", label=name)
    for name in ("first_dev", "second_dev", "eps"):
        ax_dev.plot(x, np.array(column(rows, name)), marker="o", label=name)
    labels = [f"{row['tau0']:g}\n{row['eps']:g}" for row in rows]
    ax_dev.set_xticks(x, labels=labels)

    statuses = column(rows, "status")
    counts = {name: statuses.count(name) for name in sorted(set(statuses))}
    note = "status: " + ", ".join(f"{k}={v}" for k, v in counts.items())
    fig.text(0.01, 0.01, note, fontsize=8)
    meta["status_counts"] = counts
    return fig, _finish(fig, [ax_iv, ax_dev], meta)


def _build_gap(inputs: Sequence[Path]) -> tuple[Figure, dict[str, Any]]:
    if len(inputs) != 1:
        raise PlotError(f"gap figures take exactly one CSV, got {len(inputs)}")
    rows = read_table(inputs[0], PROFILE_COLUMNS)
    meta: dict[str, Any] = {"kind": "gap", "rows": len(rows)}

    fig, (ax_gap, ax_den) = plt.subplots(2, 1, sharex=True)
    ax_gap.set_ylabel("action gap")
    ax_gap.set_title("minimum action gap and geometry densities along the path")
    ax_den.set_ylabel("density")
    ax_den.set_xlabel("tau")

    if not rows:
        _warn_empty(ax_gap, f"no data rows in {inputs[0].name}", meta)
        return fig, _finish(fig, [ax_gap, ax_den], meta)

    tau = np.array(column(rows, "tau"))
    ax_gap.plot(tau, np.array(column(rows, "min_gap")), label="min_gap")
    for name in ("pl_density", "curv_density"):
        ax_den.plot(tau, np.array(column(rows, name)), label=name)
    return fig, _finish(fig, [ax_gap, ax_den], meta)


def _trace_label(name: str, path: Path, many: bool) -> str:
    return f"{name} ({path.stem})" if many else name


def _build_regret(inputs: Sequence[Path]) -> tuple[Figure, dict[str, Any]]:
    meta: dict[str, Any] = {"kind": "regret", "rows": 0}
    fig, (ax_reg, ax_err) = plt.subplots(2, 1, sharex=True)
    ax_reg.set_ylabel("cumulative sum of regret_inc")
    ax_reg.set_title("dynamic regret and tracking error per trace")
    ax_err.set_ylabel("e_t")
    ax_err.set_xlabel("step")

    many = len(inputs) > 1
    drew = False
    for path in inputs:
        rows = read_table(path, TRACE_COLUMNS)
        meta["rows"] += len(rows)
        if not rows:
            continue
        drew = True
        steps = np.array(column(rows, "step"))
        ax_reg.plot(
            steps,
            np.cumsum(np.array(column(rows, "regret_inc"))),
            label=_trace_label("regret_inc", path, many),
        )
        ax_err.plot(steps, np.array(column(rows, "e_t")), label=_trace_label("e_t", path, many))
    if not drew:
        _warn_empty(ax_reg, f"no data rows in {', '.join(p.name for p in inputs)}", meta)
    return fig, _finish(fig, [ax_reg, ax_err], meta)


def _build_hyper(inputs: Sequence[Path]) -> tuple[Figure, dict[str, Any]]:
    meta: dict[str, Any] = {"kind": "hyper", "rows": 0}
    fig, (ax_rate, ax_disc) = plt.subplots(2, 1, sharex=True)
    ax_rate.set_ylabel("rate / mixing / penalty")
    ax_rate.set_title("scheduled hyper-parameters per trace")
    ax_disc.set_ylabel("search size")
    ax_disc.set_xlabel("step")

    many = len(inputs) > 1
    drew = False
    for path in inputs:
        rows = read_table(path, TRACE_COLUMNS)
        meta["rows"] += len(rows)
        if not rows:
            continue
        drew = True
        steps = np.array(column(rows, "step"))
        for name in ("eta", "nu", "lambda"):
            ax_rate.plot(steps, np.array(column(rows, name)), label=_trace_label(name, path, many))
        for name in ("depth", "budget"):
            ax_disc.plot(
                steps,
                np.array(column(rows, name)),
                drawstyle="steps-post",
                label=_trace_label(name, path, many),
            )
    if not drew:
        _warn_empty(ax_rate, f"no data rows in {', '.join(p.name for p in inputs)}", meta)
    return fig, _finish(fig, [ax_rate, ax_disc], meta)


_BUILDERS: dict[str, Callable[[Sequence[Path]], tuple[Figure, dict[str, Any]]]] = {
    "certify": _build_certify,
    "tubes": _build_tubes,
    "gap": _build_gap,
    "regret": _build_regret,
    "hyper": _build_hyper,
}


def build_figure(spec: FigureSpec) -> tuple[Figure, dict[str, Any]]:
    """Draw the figure for ``spec`` without writing it (caller closes it)."""
    for path in spec.inputs:
        if not path.is_file():
            raise PlotError(f"input not found: {path}")
    with matplotlib.rc_context(_STYLE):
        return _BUILDERS[spec.kind](spec.inputs)


def render(spec: FigureSpec) -> Path:
    """Render ``spec`` to its output PNG and return the output path."""
    fig, _ = build_figure(spec)
    try:
        spec.output.parent.mkdir(parents=True, exist_ok=True)
        with matplotlib.rc_context(_STYLE):
            fig.savefig(spec.output, format="png", dpi=_DPI, metadata=dict(_METADATA))
    finally:
        plt.close(fig)
    return spec.output
