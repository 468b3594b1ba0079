"""Deterministic SVG figures from a result table.

Matplotlib is imported lazily so the numeric modules never pay for it.
SVG output is made reproducible by pinning the hash salt and stripping
the date metadata: the same table yields the same bytes.
"""

import pathlib
import warnings

import numpy as np

# fixed drawing order and styles so legends and colors never depend on dict order
_SERIES_STYLE = {
    "ista": {"color": "#888888", "marker": "", "linestyle": "--"},
    "fista": {"color": "#444444", "marker": "", "linestyle": ":"},
    "linear_ista": {"color": "#2ca02c", "marker": "^", "linestyle": "-."},
    "linear": {"color": "#2ca02c", "marker": "v", "linestyle": "none"},
    "lista": {"color": "#1f77b4", "marker": "o", "linestyle": "-"},
    "lfista": {"color": "#9467bd", "marker": "s", "linestyle": "-"},
    "facnet": {"color": "#d62728", "marker": "d", "linestyle": "-"},
}
_FALLBACK_STYLE = {"color": "#7f7f7f", "marker": "x", "linestyle": "-"}

_FLOOR = 1e-16  # log axis cannot take zero or negative gaps


def _series(table):
    """model -> (depths, median-over-seeds gap) with empty series dropped."""
    known = [m for m in _SERIES_STYLE if any(r.model == m for r in table.rows)]
    extra = sorted({r.model for r in table.rows} - set(_SERIES_STYLE))
    out = {}
    for name in known + extra:
        depths = sorted({r.depth_or_iter for r in table.rows if r.model == name})
        xs, ys = [], []
        for d in depths:
            vals = [r.f_gap_median for r in table.rows
                    if r.model == name and r.depth_or_iter == d]
            med = float(np.median(vals))
            if not np.isfinite(med):
                continue
            xs.append(d)
            ys.append(max(med, _FLOOR))
        if not xs:
            warnings.warn(f"series {name!r} has no finite points, skipping")
            continue
        out[name] = (xs, ys)
    return out


def emit_plots(table, out_dir):
    """Write a gap-versus-depth SVG figure; returns the list of paths."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = table.experiment_id
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    series = _series(table)
    if not series:
        raise ValueError("result table has no plottable rows")

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for name, (xs, ys) in series.items():
        style = _SERIES_STYLE.get(name, _FALLBACK_STYLE)
        ax.plot(xs, ys, label=name, markersize=5, **style)
    ax.set_yscale("log")
    ax.set_xlabel("iterations / layers")
    ax.set_ylabel("objective above optimum (median)")
    ax.set_title(table.experiment_id)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(loc="best", fontsize=9)
    path = out / f"gap_{table.experiment_id}.svg"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return [path]
