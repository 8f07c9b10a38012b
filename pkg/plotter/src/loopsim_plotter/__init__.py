"""Figure rendering for loopsim trajectory CSVs."""

__version__ = "0.1.0"

from .figures import FigureSpec, MissingMetricError, PlotterError, render_figure

__all__ = ["FigureSpec", "MissingMetricError", "PlotterError", "render_figure"]
