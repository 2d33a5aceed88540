import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .exceptions import InputError  # noqa: E402

logger = logging.getLogger(__name__)

# fixed salt and no Date metadata keep the SVG bytes stable across runs
SVG_STYLE = {
    "svg.hashsalt": "difftd-lab",
    "svg.fonttype": "path",
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.figsize": (7.0, 4.5),
}


def series_label(key, ns, etas):
    n, eta = key
    if len(etas) > 1 and len(ns) == 1:
        return f"η = {eta:g}"
    if len(ns) > 1 and len(etas) == 1:
        return f"n = {n}"
    return f"n = {n}, η = {eta:g}"


def draw_figure(summary, title=None):
    """One RMSVE(TVR) curve per (n, eta) with a shaded +/-1 standard-error band."""
    if summary is None or len(summary) == 0:
        raise InputError("cannot plot an empty summary")
    keys = summary.keys()
    ns = sorted({n for n, _ in keys})
    etas = sorted({eta for _, eta in keys})
    fig, ax = plt.subplots()
    try:
        for key in keys:
            points = summary.series[key]
            steps = [point.step for point in points]
            means = [point.mean for point in points]
            (line,) = ax.plot(steps, means, linewidth=1.2, label=series_label(key, ns, etas))
            if all(point.stderr is not None for point in points):
                lower = [point.mean - point.stderr for point in points]
                upper = [point.mean + point.stderr for point in points]
                ax.fill_between(steps, lower, upper, color=line.get_color(), alpha=0.2, linewidth=0)
        ax.set_xlabel("environment steps")
        ax.set_ylabel("RMSVE (TVR)")
        if title:
            ax.set_title(title)
        ax.legend(loc="upper right", frameon=False)
        fig.tight_layout()
    except Exception:
        plt.close(fig)
        raise
    return fig


def emit_plot(summary, out_path, title=None):
    """Render `summary` with draw_figure and write it to `out_path` as SVG."""
    out_path = Path(out_path)
    with plt.rc_context(SVG_STYLE):
        fig = draw_figure(summary, title=title)
        try:
            out_path.parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(out_path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    logger.info("Wrote plot with %d series to %s", len(summary), out_path)
    return out_path
