"""Reward and cost curves as hand-written SVG.

Runs are grouped by filter mode; each mode gets its mean curve plus a shaded
band spanning the per-seed min/max at every iteration.
"""
import os
import warnings
from xml.sax.saxutils import escape

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")

WIDTH = 640
HEIGHT = 400
MARGIN = (60, 20, 30, 50)  # left, right, top, bottom


def _fmt(v):
    return f"{v:.2f}"


class Axes:
    """Maps data coordinates onto the plotting rectangle (y grows downward)."""

    def __init__(self, xlim, ylim, width=WIDTH, height=HEIGHT, margin=MARGIN):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            pad = max(abs(self.y0), 1.0) * 0.05
            self.y0, self.y1 = self.y0 - pad, self.y1 + pad
        left, right, top, bottom = margin
        self.left = left
        self.right = width - right
        self.top = top
        self.bottom = height - bottom

    def px(self, x):
        return self.left + (x - self.x0) / (self.x1 - self.x0) * (self.right - self.left)

    def py(self, y):
        return self.bottom - (y - self.y0) / (self.y1 - self.y0) * (self.bottom - self.top)


def _group(runs, metric):
    """``runs`` is a list of ``(mode, records)``; returns mode -> (iters, matrix)."""
    grouped = {}
    for mode, records in runs:
        rows = [r for r in records if "error" not in r]
        if not rows:
            raise ValueError(f"run for mode {mode!r} has no completed iterations")
        series = []
        for r in rows:
            if metric not in r:
                raise ValueError(f"log record is missing {metric!r}")
            v = r[metric]
            series.append(np.nan if v is None else float(v))
        grouped.setdefault(mode, []).append(np.array(series))
    out = {}
    for mode, curves in grouped.items():
        n = min(len(c) for c in curves)
        out[mode] = (np.arange(n), np.stack([c[:n] for c in curves]))
    return out


def curve_svg(runs, metric, title=None):
    """SVG text with one mean polyline and min/max band per mode."""
    grouped = _group(runs, metric)
    xs = [it for it, _ in grouped.values()]
    ys = [m[np.isfinite(m)] for _, m in grouped.values()]
    ys = np.concatenate(ys) if ys else np.zeros(1)
    if ys.size == 0:
        ys = np.zeros(1)
    ax = Axes((0.0, float(max(x[-1] for x in xs))), (float(ys.min()), float(ys.max())))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle" font-size="14">'
        f"{escape(title or metric)}</text>",
        f'<line x1="{ax.left}" y1="{ax.bottom}" x2="{ax.right}" y2="{ax.bottom}" stroke="black"/>',
        f'<line x1="{ax.left}" y1="{ax.top}" x2="{ax.left}" y2="{ax.bottom}" stroke="black"/>',
    ]
    for y in np.linspace(ax.y0, ax.y1, 5):
        parts.append(f'<text x="{ax.left - 6}" y="{_fmt(ax.py(y) + 4)}" text-anchor="end" '
                     f'font-size="10">{y:.3g}</text>')
    for x in np.linspace(ax.x0, ax.x1, 5):
        parts.append(f'<text x="{_fmt(ax.px(x))}" y="{ax.bottom + 16}" text-anchor="middle" '
                     f'font-size="10">{x:.3g}</text>')
    parts.append(f'<text x="{(ax.left + ax.right) / 2:.1f}" y="{HEIGHT - 8}" text-anchor="middle" '
                 f'font-size="11">iteration</text>')

    for k, (mode, (it, mat)) in enumerate(grouped.items()):
        color = COLORS[k % len(COLORS)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN columns
            mean = np.nanmean(mat, axis=0)
            lo = np.nanmin(mat, axis=0)
            hi = np.nanmax(mat, axis=0)
        ok = np.isfinite(mean)
        if mat.shape[0] > 1 and ok.sum() > 1:
            upper = [f"{_fmt(ax.px(x))},{_fmt(ax.py(y))}" for x, y in zip(it[ok], hi[ok])]
            lower = [f"{_fmt(ax.px(x))},{_fmt(ax.py(y))}" for x, y in zip(it[ok][::-1], lo[ok][::-1])]
            parts.append(f'<polygon class="band" points="{" ".join(upper + lower)}" fill="{color}" '
                         f'fill-opacity="0.2" stroke="none"/>')
        pts = " ".join(f"{_fmt(ax.px(x))},{_fmt(ax.py(y))}" for x, y in zip(it[ok], mean[ok]))
        parts.append(f'<polyline class="mean" data-mode="{escape(mode)}" points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        ly = ax.top + 14 * (k + 1)
        parts.append(f'<rect x="{ax.right - 130}" y="{ly - 8}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text class="legend" x="{ax.right - 115}" y="{ly + 1}" font-size="11">'
                     f"{escape(mode)}</text>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def plot_runs(runs, out_dir, metrics=("mean_episode_reward", "mean_episode_cost")):
    """Write one SVG per metric into ``out_dir``; returns the written paths."""
    if not runs:
        raise ValueError("plot needs at least one run log")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for metric in metrics:
        path = os.path.join(out_dir, f"{metric}.svg")
        with open(path, "w") as fh:
            fh.write(curve_svg(runs, metric))
        paths.append(path)
    return paths
