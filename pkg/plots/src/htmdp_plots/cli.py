"""Command line entry point: ``htmdp-plots``.

Two invocation forms, rendered sequentially in a single process::

    htmdp-plots figures.yaml              # one positional config file
    htmdp-plots --kind certify --in OUTDIR --out fig.png

The YAML config is either one mapping or a list of mappings, each with
keys ``kind``, ``in`` (a directory or explicit file list), and ``out``.
When ``--in``/``in`` is a directory, the input files are resolved by
kind: ``certify`` reads ``certify_pairs.csv`` and ``certify_summary.json``,
``tubes`` reads ``tubes.csv``, ``gap`` reads ``geometry_profile.csv``, and
``regret``/``hyper`` read every ``trace_*.csv`` (sorted by name).

Exit status is 0 on success and 2 on any usage, config, input, or schema
error; error messages go to stderr prefixed with ``error:``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Any, Sequence

import yaml

from .figures import FIGURE_KINDS, FigureSpec, PlotError, render
from .schema import SchemaError

__all__ = ["main", "resolve_inputs", "specs_from_config"]

_CONFIG_KEYS = frozenset({"kind", "in", "out"})

_DIR_FILES = {
    "certify": ("certify_pairs.csv", "certify_summary.json"),
    "tubes": ("tubes.csv",),
    "gap": ("geometry_profile.csv",),
}


def resolve_inputs(kind: str, source: Sequence[str | Path] | str | Path) -> tuple[Path, ...]:
    """Turn an ``in`` value (directory or file list) into concrete files."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        if path.is_dir():
            if kind in _DIR_FILES:
                return tuple(path / name for name in _DIR_FILES[kind])
            traces = tuple(sorted(path.glob("trace_*.csv")))
            if not traces:
                raise PlotError(f"no trace_*.csv files in {path}")
            return traces
        return (path,)
    return tuple(Path(p) for p in source)


def specs_from_config(path: Path) -> list[FigureSpec]:
    """Load one or more figure specs from a YAML config file."""
    try:
        loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise PlotError(f"{path}: not valid YAML ({exc})") from exc
    entries = loaded if isinstance(loaded, list) else [loaded]
    specs = []
    for index, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise PlotError(f"{path}: entry {index} is not a mapping")
        unknown = sorted(set(entry) - _CONFIG_KEYS)
        if unknown:
            raise PlotError(f"{path}: entry {index}: unknown keys {unknown}")
        missing = sorted(_CONFIG_KEYS - set(entry))
        if missing:
            raise PlotError(f"{path}: entry {index}: missing keys {missing}")
        specs.append(
            FigureSpec(
                kind=entry["kind"],
                inputs=resolve_inputs(entry["kind"], entry["in"]),
                output=Path(entry["out"]),
            )
        )
    return specs


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="htmdp-plots",
        description="Render static figures from htmdp CLI output files.",
    )
    parser.add_argument("config", nargs="?", help="YAML file of figure specs")
    parser.add_argument("--kind", choices=FIGURE_KINDS, help="figure kind")
    parser.add_argument(
        "--in",
        dest="inputs",
        nargs="+",
        metavar="PATH",
        help="input directory or explicit input files",
    )
    parser.add_argument("--out", help="output PNG path")
    return parser


def _specs_from_args(args: argparse.Namespace, parser: argparse.ArgumentParser) -> list[FigureSpec]:
    if args.config is not None:
        if args.kind or args.inputs or args.out:
            parser.error("pass either a config file or --kind/--in/--out, not both")
        config = Path(args.config)
        if not config.is_file():
            raise PlotError(f"config not found: {config}")
        return specs_from_config(config)
    if not (args.kind and args.inputs and args.out):
        parser.error("need a config file or all of --kind, --in, --out")
    source: Any = args.inputs[0] if len(args.inputs) == 1 else args.inputs
    return [
        FigureSpec(kind=args.kind, inputs=resolve_inputs(args.kind, source), output=Path(args.out))
    ]


def main(argv: Sequence[str] | None = None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    try:
        specs = _specs_from_args(args, parser)
        for spec in specs:
            out = render(spec)
            print(f"wrote {out}")
    except (PlotError, SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
