"""Static figure rendering for ``htmdp`` CLI output files.

The package consumes only the documented CSV/JSON files — it never imports
the library that produced them.  Build a :class:`FigureSpec` and call
:func:`render`, or use the ``htmdp-plots`` script.
"""

from .figures import FIGURE_KINDS, FigureSpec, PlotError, build_figure, certify_ratio_stats, render
from .schema import SchemaError

__all__ = [
    "FIGURE_KINDS",
    "FigureSpec",
    "PlotError",
    "SchemaError",
    "build_figure",
    "certify_ratio_stats",
    "render",
]

__version__ = "0.1.0"
