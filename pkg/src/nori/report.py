"""Report assembly: CSV tables, SVG plots, summary.json.

Plots are written by a tiny built-in SVG backend with fixed-precision
number formatting, so report bundles are byte-identical across runs.
"""

import csv
import json
from pathlib import Path

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#17becf", "#7f7f7f")


def _fmt(v):
    return f"{v:.3f}".rstrip("0").rstrip(".")


class SvgCanvas:
    def __init__(self, width=640, height=420, margin=60):
        self.width = width
        self.height = height
        self.margin = margin
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
        ]

    def _x(self, v, lo, hi):
        span = (hi - lo) or 1.0
        return self.margin + (v - lo) / span * (self.width - 2 * self.margin)

    def _y(self, v, lo, hi):
        span = (hi - lo) or 1.0
        return self.height - self.margin - (v - lo) / span * (self.height - 2 * self.margin)

    def text(self, x, y, s, size=12, anchor="middle", rotate=None):
        transform = f' transform="rotate({rotate} {_fmt(x)} {_fmt(y)})"' if rotate else ""
        self.parts.append(
            f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" '
            f'font-family="sans-serif" text-anchor="{anchor}"{transform}>{s}</text>'
        )

    def axes(self, xlim, ylim, xlabel, ylabel, title, xticks, yticks):
        m, w, h = self.margin, self.width, self.height
        self.parts.append(
            f'<rect x="{m}" y="{m}" width="{w - 2 * m}" height="{h - 2 * m}" '
            'fill="none" stroke="black"/>'
        )
        for v in xticks:
            x = self._x(v, *xlim)
            self.parts.append(
                f'<line x1="{_fmt(x)}" y1="{h - m}" x2="{_fmt(x)}" y2="{h - m + 5}" stroke="black"/>'
            )
            self.text(x, h - m + 18, _fmt(v), size=10)
        for v in yticks:
            y = self._y(v, *ylim)
            self.parts.append(
                f'<line x1="{m - 5}" y1="{_fmt(y)}" x2="{m}" y2="{_fmt(y)}" stroke="black"/>'
            )
            self.text(m - 8, y + 4, _fmt(v), size=10, anchor="end")
        self.text(w / 2, h - m + 36, xlabel)
        self.text(m - 40, h / 2, ylabel, rotate=-90)
        self.text(w / 2, m - 14, title, size=14)

    def polyline(self, xs, ys, xlim, ylim, color, label=None, idx=0):
        pts = " ".join(
            f"{_fmt(self._x(x, *xlim))},{_fmt(self._y(y, *ylim))}" for x, y in zip(xs, ys)
        )
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for x, y in zip(xs, ys):
            self.parts.append(
                f'<circle cx="{_fmt(self._x(x, *xlim))}" cy="{_fmt(self._y(y, *ylim))}" '
                f'r="2.5" fill="{color}"/>'
            )
        if label:
            lx = self.width - self.margin - 110
            ly = self.margin + 16 + 14 * idx
            self.parts.append(
                f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" '
                f'stroke="{color}" stroke-width="2"/>'
            )
            self.text(lx + 24, ly, label, size=10, anchor="start")

    def bars(self, labels, values, ylim, color_cycle=True, ylabel="", title=""):
        m, w, h = self.margin, self.width, self.height
        n = len(values)
        slot = (w - 2 * m) / max(n, 1)
        lo, hi = ylim
        yticks = [lo + (hi - lo) * i / 5 for i in range(6)]
        self.axes((0, n), ylim, "", ylabel, title, [], yticks)
        for i, (lab, val) in enumerate(zip(labels, values)):
            x0 = m + i * slot + 0.15 * slot
            y0 = self._y(val, lo, hi)
            color = PALETTE[i % len(PALETTE)] if color_cycle else PALETTE[0]
            self.parts.append(
                f'<rect x="{_fmt(x0)}" y="{_fmt(y0)}" width="{_fmt(0.7 * slot)}" '
                f'height="{_fmt(h - m - y0)}" fill="{color}"/>'
            )
            self.text(m + (i + 0.5) * slot, h - m + 18, lab, size=10)
            self.text(m + (i + 0.5) * slot, y0 - 4, _fmt(val), size=9)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.parts) + "\n</svg>\n")


def _ticks(lo, hi, n=6):
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def plot_lines(path, series, xlabel, ylabel, title):
    """series: list of (label, xs, ys)."""
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    if not xs_all:
        xs_all, ys_all = [0.0, 1.0], [0.0, 1.0]
    xlim = (min(xs_all), max(xs_all))
    pad = 0.05 * ((max(ys_all) - min(ys_all)) or 1.0)
    ylim = (min(ys_all) - pad, max(ys_all) + pad)
    canvas = SvgCanvas()
    canvas.axes(xlim, ylim, xlabel, ylabel, title, _ticks(*xlim), _ticks(*ylim))
    for i, (label, xs, ys) in enumerate(series):
        canvas.polyline(xs, ys, xlim, ylim, PALETTE[i % len(PALETTE)], label=label, idx=i)
    canvas.save(path)


def plot_bars(path, labels, values, ylabel, title, ylim=None):
    if ylim is None:
        lo = min([0.0] + list(values))
        hi = max([1.0] + list(values))
        ylim = (lo, hi * 1.1 if hi > 0 else 1.0)
    canvas = SvgCanvas()
    canvas.bars(list(labels), list(values), ylim, ylabel=ylabel, title=title)
    canvas.save(path)


def write_table(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([
                repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row
            ])


def build_report(out_dir, summary, tables, line_plots, bar_plots):
    """Write the bundle: tables/*.csv, plots/*.svg and summary.json.

    tables: {name: (header, rows)}; line_plots: {name: (series, xlabel,
    ylabel, title)}; bar_plots: {name: (labels, values, ylabel, title)}.
    Deterministic bytes for identical inputs.
    """
    out = Path(out_dir)
    (out / "tables").mkdir(parents=True, exist_ok=True)
    (out / "plots").mkdir(parents=True, exist_ok=True)
    for name in sorted(tables):
        header, rows = tables[name]
        write_table(out / "tables" / f"{name}.csv", header, rows)
    for name in sorted(line_plots):
        series, xlabel, ylabel, title = line_plots[name]
        plot_lines(out / "plots" / f"{name}.svg", series, xlabel, ylabel, title)
    for name in sorted(bar_plots):
        labels, values, ylabel, title = bar_plots[name]
        plot_bars(out / "plots" / f"{name}.svg", labels, values, ylabel, title)
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
    return out
