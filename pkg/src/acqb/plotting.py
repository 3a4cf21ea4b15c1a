"""Regret curves with one-standard-deviation bands.

Figures are built with the object-oriented API (no pyplot global state) and
saved with fixed metadata so identical inputs produce identical files.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .errors import AggregationError
from .metrics import read_aggregate_csv

PANELS = (
    ("qregret", "Queue length regret"),
    ("cum_regret", "Cumulative regret"),
)

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "svg.hashsalt": "acqb",
    "svg.fonttype": "path",
}


def build_figure(data: dict) -> Figure:
    """Two panels of mean curves with +/- 1 std bands; ``data`` as from :func:`read_aggregate_csv`."""
    if not data or all(len(cols["t"]) == 0 for cols in data.values()):
        raise AggregationError("nothing to plot")
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(8.0, 3.0))
        FigureCanvasAgg(fig)
        axes = fig.subplots(1, 2)
        for ax, (key, title) in zip(axes, PANELS):
            for name, cols in data.items():
                t = cols["t"]
                mean, std = cols[f"mean_{key}"], cols[f"std_{key}"]
                line, = ax.plot(t, mean, lw=1.2, label=name if name is not None else None,
                                marker="o" if len(t) == 1 else None)
                ax.fill_between(t, mean - std, mean + std, color=line.get_color(), alpha=0.2, lw=0)
            ax.set_title(title)
            ax.set_xlabel("round t")
        if any(name is not None for name in data):
            axes[1].legend(loc="upper left", frameon=False)
        fig.tight_layout()
    return fig


def emit_plot(csv_path, out_path) -> Path:
    """Render an aggregate CSV to a vector figure; the format follows the suffix (svg or pdf)."""
    out_path = Path(out_path)
    fig = build_figure(read_aggregate_csv(csv_path))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fmt = out_path.suffix.lstrip(".").lower() or "svg"
    metadata = {"Date": None} if fmt == "svg" else {"CreationDate": None, "ModDate": None}
    with matplotlib.rc_context(STYLE):
        fig.savefig(out_path, format=fmt, metadata=metadata)
    return out_path
