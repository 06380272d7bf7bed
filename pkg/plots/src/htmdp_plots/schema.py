"""Readers for the delimited/JSON files produced by the ``htmdp`` CLI.

This package never imports the library that produced the files; the CSV
headers and JSON keys below are the whole contract.  Each reader validates
the header before parsing and raises :class:`SchemaError` naming every
missing column, so a figure request against the wrong file fails with an
actionable message instead of a half-drawn axes.

Cell conventions mirror the writer: floats round-trip through ``repr`` so
``float(cell)`` reproduces the original value exactly, an empty cell means
"not defined for this row" (it parses to NaN), and interval-list cells are
``lo:hi`` pairs joined by ``|``.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Mapping, Sequence

__all__ = [
    "SchemaError",
    "CERTIFY_PAIR_COLUMNS",
    "PROFILE_COLUMNS",
    "TUBE_COLUMNS",
    "TRACE_COLUMNS",
    "CERTIFY_SUMMARY_KEYS",
    "read_table",
    "read_certify_summary",
    "column",
    "parse_intervals",
]

CERTIFY_PAIR_COLUMNS = (
    "tau0",
    "tau1",
    "true_drift",
    "bound",
    "pl_term",
    "curv_term",
    "phi_term",
    "ratio",
)
PROFILE_COLUMNS = ("tau", "pl_density", "curv_density", "min_gap")
TUBE_COLUMNS = (
    "tau0",
    "eps",
    "status",
    "first_lo",
    "first_hi",
    "first_dev",
    "second_lo",
    "second_hi",
    "second_dev",
    "gap_safe_measured",
    "gap_safe_certified",
)
TRACE_COLUMNS = (
    "step",
    "tau",
    "e_t",
    "regret_inc",
    "geo_load",
    "eta",
    "nu",
    "lambda",
    "depth",
    "budget",
    "return",
)
CERTIFY_SUMMARY_KEYS = ("median_ratio_regular", "regular_pairs", "kinks")

#: Columns that stay as raw strings instead of being parsed to floats.
_TEXT_COLUMNS = frozenset({"status", "gap_safe_measured", "gap_safe_certified"})


class SchemaError(ValueError):
    """An input file does not match the documented column/key contract."""


def _parse_cell(name: str, text: str, path: Path) -> Any:
    if name in _TEXT_COLUMNS:
        return text
    if text == "":
        return math.nan
    try:
        return float(text)
    except ValueError as exc:
        raise SchemaError(f"{path}: column {name!r} has non-numeric cell {text!r}") from exc


def read_table(path: Path, columns: Sequence[str]) -> list[dict[str, Any]]:
    """Read a CSV file and check it contains every column in ``columns``.

    Returns one dict per data row with numeric cells parsed to floats
    (empty numeric cells become NaN).  Extra columns are tolerated and
    passed through; missing ones raise :class:`SchemaError` listing them.
    """
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        present = reader.fieldnames or []
        missing = sorted(set(columns) - set(present))
        if missing:
            raise SchemaError(
                f"{path}: missing columns: {missing} (expected at least {list(columns)})"
            )
        return [
            {name: _parse_cell(name, row[name], path) for name in present}
            for row in reader
        ]


def read_certify_summary(path: Path) -> dict[str, Any]:
    """Read a certify summary JSON file and check the keys used by figures."""
    try:
        summary = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(summary, Mapping):
        raise SchemaError(f"{path}: expected a JSON object at the top level")
    missing = sorted(set(CERTIFY_SUMMARY_KEYS) - set(summary))
    if missing:
        raise SchemaError(
            f"{path}: missing keys: {missing} (expected at least {list(CERTIFY_SUMMARY_KEYS)})"
        )
    for kink in summary["kinks"]:
        if "window" not in kink:
            raise SchemaError(f"{path}: kink entry without a 'window' key")
    return dict(summary)


def column(rows: Sequence[Mapping[str, Any]], name: str) -> list[Any]:
    """Extract one column from parsed rows, preserving row order."""
    return [row[name] for row in rows]


def parse_intervals(cell: str) -> list[tuple[float, float]]:
    """Parse an interval-list cell (``lo:hi`` pairs joined by ``|``)."""
    if cell == "":
        return []
    out: list[tuple[float, float]] = []
    for part in cell.split("|"):
        lo_text, _, hi_text = part.partition(":")
        out.append((float(lo_text), float(hi_text)))
    return out
