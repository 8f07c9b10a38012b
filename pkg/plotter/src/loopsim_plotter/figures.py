"""Trajectory figures from long-format metrics CSVs.

Input contract: CSV with header ``iteration,algorithm,metric,value``, one row
per population-level metric per iteration, as written by the simulator's
report step. The renderer draws one line per algorithm (per input file when
several are overlaid), one panel per requested metric, and an optional dashed
horizontal baseline. Output bytes are deterministic for identical inputs:
fixed style, bundled fonts, pinned metadata, headless Agg backend.
"""

from __future__ import annotations

import csv
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

TRAJECTORY_HEADER = ("iteration", "algorithm", "metric", "value")
SUPPORTED_SUFFIXES = (".png", ".svg")

_STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "font.family": "DejaVu Sans",
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.6,
    "legend.fontsize": 9,
    "svg.hashsalt": "loopsim-plotter",
}


class PlotterError(Exception):
    """Unusable figure request or malformed trajectory CSV."""


class MissingMetricError(PlotterError):
    """Requested metric absent from every input CSV."""

    def __init__(self, metric: str, available):
        self.metric = metric
        self.available = tuple(sorted(set(available)))
        names = ", ".join(self.available) if self.available else "none"
        super().__init__(
            f"metric {metric!r} not found; available metrics: {names}"
        )


@dataclass(frozen=True)
class FigureSpec:
    """One figure: input CSVs, metric panels, optional baselines, target file."""

    inputs: tuple[str, ...]
    metrics: tuple[str, ...]
    baselines: tuple[float | None, ...]
    out_path: str

    def __post_init__(self):
        if not self.inputs:
            raise PlotterError("at least one input CSV is required")
        if not self.metrics:
            raise PlotterError("at least one metric is required")
        if len(self.baselines) != len(self.metrics):
            raise PlotterError(
                f"{len(self.metrics)} metrics but {len(self.baselines)} baselines"
            )
        suffix = Path(self.out_path).suffix.lower()
        if suffix not in SUPPORTED_SUFFIXES:
            raise PlotterError(
                f"unsupported output format {suffix!r}; "
                f"use one of: {', '.join(SUPPORTED_SUFFIXES)}"
            )


def read_trajectories(path: str | Path) -> list[tuple[int, str, str, float]]:
    """Parse one CSV into (iteration, algorithm, metric, value) rows."""
    path = Path(path)
    if not path.exists():
        raise PlotterError(f"input CSV not found: {path}")
    rows: list[tuple[int, str, str, float]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(TRAJECTORY_HEADER):
            raise PlotterError(
                f"{path}: expected header {','.join(TRAJECTORY_HEADER)!r}, "
                f"got {header!r}"
            )
        for line_no, fields in enumerate(reader, start=2):
            if not fields:
                continue
            if len(fields) != 4:
                raise PlotterError(f"{path}:{line_no}: expected 4 fields")
            try:
                rows.append((int(fields[0]), fields[1], fields[2], float(fields[3])))
            except ValueError:
                raise PlotterError(
                    f"{path}:{line_no}: bad iteration or value"
                ) from None
    return rows


def _series_for_metric(spec: FigureSpec, metric: str):
    """label -> [(iteration, value), ...] sorted; labels carry the file stem
    only when several inputs are overlaid."""
    series: dict[str, list[tuple[int, float]]] = {}
    for input_path in spec.inputs:
        stem = Path(input_path).stem
        for iteration, algorithm, row_metric, value in read_trajectories(input_path):
            if row_metric != metric:
                continue
            label = algorithm if len(spec.inputs) == 1 else f"{algorithm} ({stem})"
            series.setdefault(label, []).append((iteration, value))
    return {label: sorted(points) for label, points in sorted(series.items())}


def available_metrics(spec: FigureSpec):
    names = set()
    for input_path in spec.inputs:
        names.update(row[2] for row in read_trajectories(input_path))
    return sorted(names)


@contextmanager
def _fixed_style():
    with plt.rc_context(_STYLE):
        yield


def build_figure(spec: FigureSpec):
    """Assemble the figure without saving it; callers own closing it."""
    per_metric = {m: _series_for_metric(spec, m) for m in spec.metrics}
    for metric, series in per_metric.items():
        if not series:
            raise MissingMetricError(metric, available_metrics(spec))

    n_panels = len(spec.metrics)
    with _fixed_style():
        fig, axes = plt.subplots(
            1, n_panels, figsize=(6.0 * n_panels, 4.0), squeeze=False
        )
        for ax, metric, baseline in zip(axes[0], spec.metrics, spec.baselines):
            for label, points in per_metric[metric].items():
                iterations = [p[0] for p in points]
                values = [p[1] for p in points]
                ax.plot(iterations, values, marker="o", markersize=3, label=label)
            if baseline is not None:
                ax.axhline(
                    baseline, linestyle="--", color="black", linewidth=1.0,
                    label=f"baseline = {baseline:g}",
                )
            ax.set_xlabel("iteration")
            ax.set_ylabel(metric)
            ax.legend()
        fig.tight_layout()
    return fig


def plot_trajectories(spec: FigureSpec) -> Path:
    """Render the figure to spec.out_path and return that path."""
    out = Path(spec.out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig = build_figure(spec)
    suffix = out.suffix.lower()
    # pinned metadata: no timestamps or library versions in the output bytes
    if suffix == ".png":
        metadata = {"Software": "loopsim-plotter"}
    else:
        metadata = {"Date": None, "Creator": "loopsim-plotter"}
    try:
        with _fixed_style():
            fig.savefig(out, format=suffix.lstrip("."), metadata=metadata)
    finally:
        plt.close(fig)
    return out


def render_figure(inputs, metrics, baselines, out_path) -> Path:
    """Convenience seam for callers holding plain lists."""
    spec = FigureSpec(
        inputs=tuple(str(p) for p in inputs),
        metrics=tuple(metrics),
        baselines=tuple(baselines),
        out_path=str(out_path),
    )
    return plot_trajectories(spec)
