"""Static SVG line charts with byte-reproducible output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

MAX_POINTS = 4000


def _decimate(t, y, max_points=MAX_POINTS):
    step = max(1, int(np.ceil(len(t) / max_points)))
    return t[::step], y[::step]


def line_chart(path, panels, title: str = "", max_points: int = MAX_POINTS):
    """Write a stacked time-series chart.

    ``panels`` is a list of ``(ylabel, [(label, t, y, style), ...])``; ``style``
    is a matplotlib format string or ``None``.
    """
    with plt.rc_context({"svg.hashsalt": "sdlpv", "svg.fonttype": "none",
                         "font.family": "DejaVu Sans"}):
        fig, axes = plt.subplots(len(panels), 1, sharex=True,
                                 figsize=(8, 2.4 * len(panels)), squeeze=False)
        for ax, (ylabel, series) in zip(axes[:, 0], panels):
            for label, t, y, style in series:
                td, yd = _decimate(np.asarray(t), np.asarray(y), max_points)
                if style:
                    ax.plot(td, yd, style, label=label, linewidth=1.0)
                else:
                    ax.plot(td, yd, label=label, linewidth=1.0)
            ax.set_ylabel(ylabel)
            ax.grid(True, linewidth=0.3)
            if len(series) > 1:
                ax.legend(loc="best", fontsize=8)
        axes[-1, 0].set_xlabel("time [s]")
        if title:
            axes[0, 0].set_title(title)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def trace_chart(path, trace, title: str = ""):
    t = trace["t"]
    line_chart(path, [
        ("lambda", [("reference", t, trace["r"], "--"), ("output", t, trace["y_track"], None)]),
        ("u", [("u", t, trace["u1"], None)]),
        ("dm_O2", [("dm_O2", t, trace["dm_o2"], None)]),
        ("speed [rpm]", [("speed", t, trace["omega"], None)]),
    ], title)


def overlay_chart(path, traces: dict, title: str = ""):
    """Overlay the tracked output and input of several named traces."""
    first = next(iter(traces.values()))
    out = [("reference", first["t"], first["r"], "k--")]
    inp = []
    for name, tr in traces.items():
        out.append((name, tr["t"], tr["y_track"], None))
        inp.append((name, tr["t"], tr["u1"], None))
    line_chart(path, [("lambda", out), ("u", inp)], title)
